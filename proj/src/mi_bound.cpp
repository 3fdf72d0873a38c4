#include "patchdef/mi_bound.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace patchdef {

void DiscreteJoint::validate() const {
  if (n_b < 1 || n_b > 16 || n_o < 1 || n_o > 16 || n_y < 1 || n_y > 8)
    throw std::invalid_argument("joint: sizes outside 16 x 16 x 8");
  if (p.size() != std::size_t(n_b * n_o * n_y))
    throw std::invalid_argument("joint: table size mismatch");
  double sum = 0;
  for (double v : p) {
    if (v < 0) throw std::invalid_argument("joint: negative probability");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("joint: mass sums to " + std::to_string(sum) +
                                ", expected 1");
}

double conditional_mutual_information(const DiscreteJoint& j) {
  j.validate();
  double mi = 0;
  for (int b = 0; b < j.n_b; ++b) {
    double pb = 0;
    std::vector<double> po(std::size_t(j.n_o), 0.0), py(std::size_t(j.n_y), 0.0);
    for (int o = 0; o < j.n_o; ++o)
      for (int y = 0; y < j.n_y; ++y) {
        double v = j.at(b, o, y);
        pb += v;
        po[std::size_t(o)] += v;
        py[std::size_t(y)] += v;
      }
    if (pb <= 0) continue;
    for (int o = 0; o < j.n_o; ++o)
      for (int y = 0; y < j.n_y; ++y) {
        double v = j.at(b, o, y);
        if (v <= 0) continue;
        // I += p(b,o,y) * log[ p(o,y|b) / (p(o|b) p(y|b)) ]
        mi += v * std::log(v * pb / (po[std::size_t(o)] * py[std::size_t(y)]));
      }
  }
  return mi;
}

InfoNceBoundReport verify_infonce_bound(const DiscreteJoint& joint, int K,
                                        int n_batches, std::uint64_t seed) {
  joint.validate();
  if (K < 2) throw std::invalid_argument("verify_infonce_bound: K must be >= 2");
  if (n_batches < 2)
    throw std::invalid_argument("verify_infonce_bound: need >= 2 batches");

  // atom CDF for sampling and the optimal critic q(y | b, o) = p(y | b, o)
  std::size_t n_atoms = joint.p.size();
  std::vector<double> cdf(n_atoms);
  double acc = 0;
  for (std::size_t i = 0; i < n_atoms; ++i) {
    acc += joint.p[i];
    cdf[i] = acc;
  }
  int n_bo = joint.n_b * joint.n_o;
  std::vector<double> critic(n_atoms, 0.0);  // critic[(b*n_o+o)*n_y + y]
  for (int bo = 0; bo < n_bo; ++bo) {
    double pbo = 0;
    for (int y = 0; y < joint.n_y; ++y)
      pbo += joint.p[std::size_t(bo * joint.n_y + y)];
    if (pbo <= 0) continue;
    for (int y = 0; y < joint.n_y; ++y)
      critic[std::size_t(bo * joint.n_y + y)] =
          joint.p[std::size_t(bo * joint.n_y + y)] / pbo;
  }

  Rng rng(derive_seed(seed, 61));
  std::vector<int> sample_bo(std::size_t(K), 0), sample_y(std::size_t(K), 0);
  double sum = 0, sumsq = 0;
  for (int n = 0; n < n_batches; ++n) {
    for (int k = 0; k < K; ++k) {
      // upper_bound never selects a zero-mass atom: their cdf entries repeat
      // the previous value, so no u < acc maps onto them
      double u = rng.uniform() * acc;
      std::size_t i =
          std::size_t(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
      if (i >= n_atoms) i = n_atoms - 1;
      sample_bo[std::size_t(k)] = int(i) / joint.n_y;
      sample_y[std::size_t(k)] = int(i) % joint.n_y;
    }
    double lhs = 0;
    for (int jj = 0; jj < K; ++jj) {
      double denom = 0;
      for (int k = 0; k < K; ++k)
        denom +=
            critic[std::size_t(sample_bo[std::size_t(k)] * joint.n_y +
                               sample_y[std::size_t(jj)])];
      double num = critic[std::size_t(sample_bo[std::size_t(jj)] * joint.n_y +
                                      sample_y[std::size_t(jj)])];
      lhs += std::log(num / denom);
    }
    lhs /= double(K);
    sum += lhs;
    sumsq += lhs * lhs;
  }

  InfoNceBoundReport rep;
  rep.K = K;
  rep.n_batches = n_batches;
  rep.mi = conditional_mutual_information(joint);
  rep.mean_lhs = sum / n_batches;
  double var = (sumsq - sum * sum / n_batches) / (n_batches - 1);
  rep.std_error = std::sqrt(std::max(0.0, var) / n_batches);
  rep.bound_rhs = rep.mi - std::log(double(K)) / double(K);
  rep.holds = rep.mean_lhs <= rep.bound_rhs + 3.0 * rep.std_error;
  return rep;
}

}  // namespace patchdef
