#pragma once

// Numerical check that the contrastive batch objective lower-bounds mutual
// information: on a small discrete joint p(b, o, y) the conditional mutual
// information I(o; y | b) is computed by exact summation, while the batch
// objective is evaluated with the optimal critic q(y | b, o) = p(y | b, o)
// over sampled batches. The asserted inequality is
//   mean batch objective <= I - log(K)/K + 3 * standard error.

#include <cstdint>
#include <vector>

#include "patchdef/rng.hpp"

namespace patchdef {

struct DiscreteJoint {
  int n_b = 0;
  int n_o = 0;
  int n_y = 0;
  std::vector<double> p;  // p[(b*n_o + o)*n_y + y]

  double at(int b, int o, int y) const {
    return p[std::size_t((b * n_o + o) * n_y + y)];
  }
  void validate() const;  // sizes within 16 x 16 x 8, normalized, nonnegative
};

// exact I(o; y | b) in nats by direct summation
double conditional_mutual_information(const DiscreteJoint& joint);

struct InfoNceBoundReport {
  int K = 0;
  int n_batches = 0;
  double mi = 0;         // exact I(o; y | b)
  double mean_lhs = 0;   // Monte Carlo mean of the batch objective
  double std_error = 0;  // standard error of that mean
  double bound_rhs = 0;  // mi - log(K)/K
  bool holds = false;    // mean_lhs <= bound_rhs + 3*std_error
};

// samples n_batches batches of K iid triples and evaluates the objective with
// the optimal critic; deterministic under the seed
InfoNceBoundReport verify_infonce_bound(const DiscreteJoint& joint, int K,
                                        int n_batches, std::uint64_t seed);

}  // namespace patchdef
