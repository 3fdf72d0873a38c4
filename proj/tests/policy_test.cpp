#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "patchdef/policy.hpp"

using namespace patchdef;

namespace {

PolicyConfig small_cfg() {
  PolicyConfig cfg;  // caps default to the quarter-range step bounds
  return cfg;
}

double ref_logprob(const std::array<double, 2>& x, const std::array<double, 2>& mu,
                   const std::array<double, 2>& s) {
  double lp = 0;
  for (int i = 0; i < 2; ++i) {
    double z = (x[i] - mu[i]) / s[i];
    lp += -0.5 * z * z - std::log(s[i] * std::sqrt(2.0 * M_PI));
  }
  return lp;
}

}  // namespace

TEST_CASE("zero output-layer weights give a zero action mean") {
  Rng rng(1);
  PolicyModel<double> m(small_cfg(), rng);
  auto zero = [&](const char* n) {
    auto& t = m.params().find(n)->value;
    std::fill(t.data.begin(), t.data.end(), 0.0);
  };
  zero("pi.fc2.w");
  zero("pi.fc2.b");
  auto d = m.forward(Tensor<double>::uniform({1, 64}, rng, -1, 1));
  CHECK(d.mean[0] == 0.0);
  CHECK(d.mean[1] == 0.0);
}

TEST_CASE("action means stay inside the per-step caps") {
  Rng rng(2);
  PolicyConfig cfg = small_cfg();
  PolicyModel<double> m(cfg, rng);
  for (int c = 0; c < 100; ++c) {
    auto d = m.forward(Tensor<double>::uniform({1, 64}, rng, -10, 10));
    CHECK(std::abs(d.mean[0]) <= cfg.caps.dh_max);
    CHECK(std::abs(d.mean[1]) <= cfg.caps.dv_max);
    CHECK(d.std_[0] == doctest::Approx(0.1 * cfg.caps.dh_max));
    CHECK(d.std_[1] == doctest::Approx(0.1 * cfg.caps.dv_max));
  }
}

TEST_CASE("forward mean is deterministic under fixed parameters") {
  Rng rng(3);
  PolicyModel<double> m(small_cfg(), rng);
  Tensor<double> b = Tensor<double>::uniform({1, 64}, rng, -1, 1);
  auto d1 = m.forward(b);
  auto d2 = m.forward(b);
  CHECK(d1.mean[0] == d2.mean[0]);
  CHECK(d1.mean[1] == d2.mean[1]);
}

TEST_CASE("sampling: seeds reproduce, tiny sigma collapses to the mean") {
  Rng rng(4);
  PolicyModel<double> m(small_cfg(), rng);
  auto d = m.forward(Tensor<double>::uniform({1, 64}, rng, -1, 1));
  Rng s1(777), s2(777);
  auto a1 = m.sample(d, s1);
  auto a2 = m.sample(d, s2);
  CHECK(a1.raw == a2.raw);
  CHECK(a1.clamped.dh == a2.clamped.dh);

  PolicyConfig tiny = small_cfg();
  tiny.sigma_frac = 1e-12;
  Rng rng2(4);
  PolicyModel<double> mt(tiny, rng2);
  auto dt = mt.forward(Tensor<double>::uniform({1, 64}, rng2, -1, 1));
  Rng s3(5);
  auto at = mt.sample(dt, s3);
  CHECK(at.raw[0] == doctest::Approx(dt.mean[0]).epsilon(1e-9));
  CHECK(at.raw[1] == doctest::Approx(dt.mean[1]).epsilon(1e-9));
}

TEST_CASE("empirical sample mean over 1e5 draws matches the distribution mean") {
  Rng rng(5);
  PolicyModel<double> m(small_cfg(), rng);
  auto d = m.forward(Tensor<double>::uniform({1, 64}, rng, -1, 1));
  const int n = 100000;
  double s0 = 0, s1 = 0;
  Rng draws(4242);
  for (int i = 0; i < n; ++i) {
    auto a = m.sample(d, draws);
    s0 += a.raw[0];
    s1 += a.raw[1];
  }
  double tol0 = 3.0 * d.std_[0] / std::sqrt(double(n));
  double tol1 = 3.0 * d.std_[1] / std::sqrt(double(n));
  CHECK(std::abs(s0 / n - d.mean[0]) <= tol0);
  CHECK(std::abs(s1 / n - d.mean[1]) <= tol1);
}

TEST_CASE("log-prob matches the diagonal-Gaussian density") {
  Rng rng(6);
  PolicyConfig cfg = small_cfg();
  PolicyModel<double> m(cfg, rng);
  Tensor<double> b = Tensor<double>::uniform({1, 64}, rng, -1, 1);
  auto d = m.forward(b);
  auto sig = cfg.sigma();

  // at the mean: -sum log(sigma*sqrt(2*pi))
  double at_mean = m.log_prob(b, {d.mean[0], d.mean[1]});
  double expect = -std::log(sig[0] * std::sqrt(2.0 * M_PI)) -
                  std::log(sig[1] * std::sqrt(2.0 * M_PI));
  CHECK(at_mean == doctest::Approx(expect).epsilon(1e-12));

  // symmetric about the mean
  std::array<double, 2> delta{0.013, -0.007};
  double plus = m.log_prob(b, {d.mean[0] + delta[0], d.mean[1] + delta[1]});
  double minus = m.log_prob(b, {d.mean[0] - delta[0], d.mean[1] - delta[1]});
  CHECK(plus == doctest::Approx(minus).epsilon(1e-12));

  // independent formula oracle on random actions
  Rng r2(7);
  for (int c = 0; c < 50; ++c) {
    std::array<double, 2> x{r2.uniform(-0.2, 0.2), r2.uniform(-0.2, 0.2)};
    CHECK(m.log_prob(b, x) ==
          doctest::Approx(ref_logprob(x, d.mean, sig)).epsilon(1e-9));
  }
}

TEST_CASE("value head: zero weights give zero, output is deterministic") {
  Rng rng(8);
  PolicyModel<double> m(small_cfg(), rng);
  auto zero = [&](const char* n) {
    auto& t = m.params().find(n)->value;
    std::fill(t.data.begin(), t.data.end(), 0.0);
  };
  zero("v.fc2.w");
  zero("v.fc2.b");
  Tensor<double> b = Tensor<double>::uniform({1, 64}, rng, -1, 1);
  CHECK(m.value(b) == 0.0);

  Rng rng2(9);
  PolicyModel<double> m2(small_cfg(), rng2);
  CHECK(m2.value(b) == m2.value(b));
}

TEST_CASE("likelihood ratio is exactly one when parameters are unchanged") {
  auto run = [](auto tag) {
    using T = decltype(tag);
    Rng rng(10);
    PolicyConfig cfg;
    PolicyModel<T> m(cfg, rng);
    Tensor<T> b = Tensor<T>::uniform({1, 64}, rng, T(-1), T(1));
    ActionDistribution d = m.forward(b);
    Rng s(11);
    ActionSample a = m.sample(d, s);
    double logp_old = m.log_prob(b, a.raw);

    // update-style recomputation through the identical op sequence
    Graph<T> g;
    Var<T> lp = gaussian_logprob(g, m.mean_var(g, g.value(b)), a.raw, cfg.sigma());
    Var<T> ratio = exp_(add_const(lp, T(-logp_old)));
    CHECK(g.val(ratio).data[0] == T(1));
  };
  run(float{});
  run(double{});
}
