#pragma once

// Finite-difference gradient oracle. Runs in double precision with central
// differences and compares against the tape's analytic gradients. This is the
// independent reference for every autodiff operation.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "patchdef/graph.hpp"
#include "patchdef/rng.hpp"

namespace fdcheck {

using patchdef::Graph;
using patchdef::Rng;
using patchdef::Tensor;
using patchdef::Var;

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsFloor = 1e-8;

using MakeInputs = std::function<std::vector<Tensor<double>>(Rng&)>;
using BuildLoss =
    std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

struct FdFailure {
  std::string detail;
  bool ok() const { return detail.empty(); }
};

inline bool grad_close(double analytic, double numeric) {
  double diff = std::abs(analytic - numeric);
  double scale = std::max(std::abs(analytic), std::abs(numeric));
  return diff <= std::max(kRelTol * scale, kAbsFloor);
}

// Checks one randomized case: analytic gradient of every input element vs
// central differences. Returns a failure description, or empty on success.
inline FdFailure check_case(const MakeInputs& make_inputs, const BuildLoss& build,
                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor<double>> inputs = make_inputs(rng);

  auto eval = [&](const std::vector<Tensor<double>>& ins) {
    Graph<double> g;
    std::vector<Var<double>> vars;
    vars.reserve(ins.size());
    for (const auto& t : ins) vars.push_back(g.leaf(t, false));
    Var<double> loss = build(g, vars);
    return g.val(loss).data[0];
  };

  Graph<double> g;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.push_back(g.leaf(t, true));
  Var<double> loss = build(g, vars);
  if (g.val(loss).numel() != 1) return {"loss is not scalar"};
  g.backward(loss);

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<double>& grad = g.leaf_grad(vars[i]);
    for (std::size_t k = 0; k < inputs[i].numel(); ++k) {
      std::vector<Tensor<double>> pert = inputs;
      pert[i].data[k] += kStep;
      double fp = eval(pert);
      pert[i].data[k] -= 2.0 * kStep;
      double fm = eval(pert);
      double numeric = (fp - fm) / (2.0 * kStep);
      double analytic = grad.data[k];
      if (!grad_close(analytic, numeric)) {
        return {"input " + std::to_string(i) + " elem " + std::to_string(k) +
                ": analytic " + std::to_string(analytic) + " vs numeric " +
                std::to_string(numeric) + " (seed " + std::to_string(seed) + ")"};
      }
    }
  }
  return {};
}

struct FdCase {
  std::string name;
  MakeInputs make_inputs;
  BuildLoss build;
  int n_cases = 20;
};

// Runs all randomized cases for one op; empty result string means pass.
inline FdFailure run_case(const FdCase& c, std::uint64_t base_seed = 1234) {
  for (int k = 0; k < c.n_cases; ++k) {
    FdFailure f = check_case(c.make_inputs, c.build,
                             patchdef::derive_seed(base_seed, std::uint64_t(k)));
    if (!f.ok()) return {c.name + ": " + f.detail};
  }
  return {};
}

}  // namespace fdcheck
