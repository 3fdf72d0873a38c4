#include "patchdef/pomdp.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace patchdef {

namespace {

constexpr double kProbTol = 1e-12;
constexpr double kZeroProb = 1e-15;

void check_prob_row(const double* p, int n, const char* what) {
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    if (p[i] < 0)
      throw std::invalid_argument(std::string(what) + ": negative probability");
    sum += p[i];
  }
  if (std::abs(sum - 1.0) > kProbTol)
    throw std::invalid_argument(std::string(what) + ": row sums to " +
                                std::to_string(sum) + ", expected 1");
}

}  // namespace

void DiscretePomdp::validate() const {
  if (n_states < 1 || n_states > 8 || n_actions < 1 || n_actions > 4 ||
      n_obs < 1 || n_obs > 8 || n_hyp < 1 || n_hyp > 4)
    throw std::invalid_argument("pomdp: sizes outside |S|<=8, |A|<=4, |O|<=8, |Y|<=4");
  if (horizon < 1 || horizon > 4)
    throw std::invalid_argument("pomdp: horizon outside [1,4]");
  if (trans.size() != std::size_t(n_states * n_actions))
    throw std::invalid_argument("pomdp: transition table size mismatch");
  for (int v : trans)
    if (v < 0 || v >= n_states)
      throw std::invalid_argument("pomdp: transition target out of range");
  if (obs_prob.size() != std::size_t(n_states * n_hyp * n_obs))
    throw std::invalid_argument("pomdp: observation table size mismatch");
  for (int s = 0; s < n_states; ++s)
    for (int y = 0; y < n_hyp; ++y)
      check_prob_row(&obs_prob[std::size_t((s * n_hyp + y) * n_obs)], n_obs,
                     "pomdp observation row");
  if (prior.size() != std::size_t(n_states * n_hyp))
    throw std::invalid_argument("pomdp: prior size mismatch");
  check_prob_row(prior.data(), n_states * n_hyp, "pomdp prior");
}

ExactBelief ExactBelief::from_prior(const DiscretePomdp& p) {
  ExactBelief b;
  b.n_states = p.n_states;
  b.n_hyp = p.n_hyp;
  b.joint = p.prior;
  return b;
}

std::vector<double> ExactBelief::hyp_marginal() const {
  std::vector<double> m(std::size_t(n_hyp), 0.0);
  for (int s = 0; s < n_states; ++s)
    for (int y = 0; y < n_hyp; ++y)
      m[std::size_t(y)] += joint[std::size_t(s * n_hyp + y)];
  return m;
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

double posterior_entropy(const ExactBelief& b) { return entropy(b.hyp_marginal()); }

namespace {

// joint over (s', y) after the deterministic transition
std::vector<double> propagate(const DiscretePomdp& p, const ExactBelief& b, int a) {
  std::vector<double> pred(b.joint.size(), 0.0);
  for (int s = 0; s < p.n_states; ++s) {
    int sn = p.next_state(s, a);
    for (int y = 0; y < p.n_hyp; ++y)
      pred[std::size_t(sn * p.n_hyp + y)] += b.joint[std::size_t(s * p.n_hyp + y)];
  }
  return pred;
}

double obs_prob_from_pred(const DiscretePomdp& p, const std::vector<double>& pred,
                          int o) {
  double q = 0;
  for (int s = 0; s < p.n_states; ++s)
    for (int y = 0; y < p.n_hyp; ++y)
      q += pred[std::size_t(s * p.n_hyp + y)] * p.z(s, y, o);
  return q;
}

ExactBelief condition(const DiscretePomdp& p, const std::vector<double>& pred, int o) {
  ExactBelief out;
  out.n_states = p.n_states;
  out.n_hyp = p.n_hyp;
  out.joint.assign(pred.size(), 0.0);
  double norm = 0;
  for (int s = 0; s < p.n_states; ++s)
    for (int y = 0; y < p.n_hyp; ++y) {
      double v = pred[std::size_t(s * p.n_hyp + y)] * p.z(s, y, o);
      out.joint[std::size_t(s * p.n_hyp + y)] = v;
      norm += v;
    }
  if (norm <= kZeroProb)
    throw std::invalid_argument(
        "bayes_update: observation " + std::to_string(o) +
        " has zero predicted probability under the chosen action");
  for (double& v : out.joint) v /= norm;
  return out;
}

}  // namespace

double observation_prob(const DiscretePomdp& p, const ExactBelief& b, int a, int o) {
  return obs_prob_from_pred(p, propagate(p, b, a), o);
}

ExactBelief bayes_update(const DiscretePomdp& p, const ExactBelief& b, int a, int o) {
  return condition(p, propagate(p, b, a), o);
}

namespace {

// expected y-entropy after taking a from b and observing
double expected_posterior_entropy(const DiscretePomdp& p, const ExactBelief& b,
                                  int a) {
  std::vector<double> pred = propagate(p, b, a);
  double e = 0;
  for (int o = 0; o < p.n_obs; ++o) {
    double q = obs_prob_from_pred(p, pred, o);
    if (q <= kZeroProb) continue;
    e += q * posterior_entropy(condition(p, pred, o));
  }
  return e;
}

int greedy_action(const DiscretePomdp& p, const ExactBelief& b) {
  int best = 0;
  double best_e = expected_posterior_entropy(p, b, 0);
  for (int a = 1; a < p.n_actions; ++a) {
    double e = expected_posterior_entropy(p, b, a);
    if (e < best_e - kZeroProb) {  // strictly better only: ties keep lowest index
      best = a;
      best_e = e;
    }
  }
  return best;
}

// expected final y-entropy following the greedy choice at every reached belief
double greedy_final_entropy(const DiscretePomdp& p, const ExactBelief& b, int steps) {
  if (steps == 0) return posterior_entropy(b);
  int a = greedy_action(p, b);
  std::vector<double> pred = propagate(p, b, a);
  double e = 0;
  for (int o = 0; o < p.n_obs; ++o) {
    double q = obs_prob_from_pred(p, pred, o);
    if (q <= kZeroProb) continue;
    e += q * greedy_final_entropy(p, condition(p, pred, o), steps - 1);
  }
  return e;
}

}  // namespace

GreedyResult greedy_rollout(const DiscretePomdp& p, const ExactBelief& start) {
  p.validate();
  GreedyResult res;
  res.gain = posterior_entropy(start) - greedy_final_entropy(p, start, p.horizon);

  // modal branch: follow the most probable observation (ties -> lowest index)
  ExactBelief b = start;
  for (int t = 0; t < p.horizon; ++t) {
    int a = greedy_action(p, b);
    res.actions.push_back(a);
    std::vector<double> pred = propagate(p, b, a);
    int modal = 0;
    double modal_q = -1;
    for (int o = 0; o < p.n_obs; ++o) {
      double q = obs_prob_from_pred(p, pred, o);
      if (q > modal_q + kZeroProb) {
        modal = o;
        modal_q = q;
      }
    }
    b = condition(p, pred, modal);
  }
  return res;
}

namespace {

struct SearchResult {
  std::unique_ptr<PolicyTree> tree;
  double final_entropy = 0;
};

SearchResult best_tree(const DiscretePomdp& p, const ExactBelief& b, int steps) {
  if (steps == 0) return {nullptr, posterior_entropy(b)};
  SearchResult best;
  for (int a = 0; a < p.n_actions; ++a) {
    std::vector<double> pred = propagate(p, b, a);
    auto node = std::make_unique<PolicyTree>();
    node->action = a;
    node->children.resize(std::size_t(p.n_obs));
    double e = 0;
    for (int o = 0; o < p.n_obs; ++o) {
      double q = obs_prob_from_pred(p, pred, o);
      if (q <= kZeroProb) continue;
      SearchResult sub = best_tree(p, condition(p, pred, o), steps - 1);
      e += q * sub.final_entropy;
      node->children[std::size_t(o)] = std::move(sub.tree);
    }
    if (!best.tree || e < best.final_entropy - kZeroProb) {
      best.tree = std::move(node);
      best.final_entropy = e;
    }
  }
  return best;
}

}  // namespace

OptimalResult accumulative_optimal(const DiscretePomdp& p, const ExactBelief& start) {
  p.validate();
  double nodes = std::pow(double(p.n_actions) * double(p.n_obs), double(p.horizon));
  if (nodes > kEnumerationBudget)
    throw std::runtime_error(
        "accumulative_optimal: (|A|*|O|)^H = " + std::to_string(nodes) +
        " enumeration nodes exceeds the budget of 1000000 (|A|=" +
        std::to_string(p.n_actions) + ", |O|=" + std::to_string(p.n_obs) +
        ", H=" + std::to_string(p.horizon) + ")");
  SearchResult best = best_tree(p, start, p.horizon);
  OptimalResult res;
  res.tree = std::move(best.tree);
  res.gain = posterior_entropy(start) - best.final_entropy;
  return res;
}

DiscretePomdp random_pomdp(Rng& rng, int max_states, int max_actions, int max_obs,
                           int max_hyp, int max_horizon) {
  DiscretePomdp p;
  p.n_states = 2 + rng.uniform_int(max_states - 1);
  p.n_actions = 1 + rng.uniform_int(max_actions);
  p.n_obs = 2 + rng.uniform_int(max_obs - 1);
  p.n_hyp = 2 + rng.uniform_int(max_hyp - 1);
  p.horizon = 1 + rng.uniform_int(max_horizon);

  p.trans.resize(std::size_t(p.n_states * p.n_actions));
  for (int& v : p.trans) v = rng.uniform_int(p.n_states);

  p.obs_prob.assign(std::size_t(p.n_states * p.n_hyp * p.n_obs), 0.0);
  for (int s = 0; s < p.n_states; ++s)
    for (int y = 0; y < p.n_hyp; ++y) {
      double* row = &p.obs_prob[std::size_t((s * p.n_hyp + y) * p.n_obs)];
      if (rng.uniform() < 0.5) {
        row[rng.uniform_int(p.n_obs)] = 1.0;  // deterministic observation
      } else {
        double sum = 0;
        for (int o = 0; o < p.n_obs; ++o) {
          row[o] = rng.uniform(0.01, 1.0);
          sum += row[o];
        }
        for (int o = 0; o < p.n_obs; ++o) row[o] /= sum;
      }
    }

  // known start state, random hypothesis prior (uniform half the time)
  p.prior.assign(std::size_t(p.n_states * p.n_hyp), 0.0);
  int s0 = rng.uniform_int(p.n_states);
  std::vector<double> py(std::size_t(p.n_hyp), 1.0 / p.n_hyp);
  if (rng.uniform() < 0.5) {
    double sum = 0;
    for (double& v : py) {
      v = rng.uniform(0.05, 1.0);
      sum += v;
    }
    for (double& v : py) v /= sum;
  }
  for (int y = 0; y < p.n_hyp; ++y)
    p.prior[std::size_t(s0 * p.n_hyp + y)] = py[std::size_t(y)];
  return p;
}

EfficacyReport verify_efficacy_inequality(int n_instances, std::uint64_t seed) {
  EfficacyReport rep;
  Rng rng(derive_seed(seed, 3737));
  for (int i = 0; i < n_instances; ++i) {
    DiscretePomdp p = random_pomdp(rng);
    ExactBelief b0 = ExactBelief::from_prior(p);
    GreedyResult g = greedy_rollout(p, b0);
    OptimalResult opt = accumulative_optimal(p, b0);
    double gap = opt.gain - g.gain;
    ++rep.instances;
    if (gap < -1e-9) {
      ++rep.violations;
      if (-gap > rep.worst_violation) rep.worst_violation = -gap;
      if (rep.first_violation.empty()) rep.first_violation = pomdp_to_text(p);
    } else if (gap > 1e-9) {
      ++rep.strict_gaps;
    }
    if (gap > rep.max_gap) rep.max_gap = gap;
  }
  return rep;
}

std::string pomdp_to_text(const DiscretePomdp& p) {
  std::ostringstream os;
  os << "pomdp " << p.n_states << " " << p.n_actions << " " << p.n_obs << " "
     << p.n_hyp << " " << p.horizon << "\n";
  os << "transitions\n";
  for (int s = 0; s < p.n_states; ++s) {
    for (int a = 0; a < p.n_actions; ++a)
      os << (a ? " " : "") << p.next_state(s, a);
    os << "\n";
  }
  char buf[32];
  os << "observations\n";
  for (int s = 0; s < p.n_states; ++s)
    for (int y = 0; y < p.n_hyp; ++y) {
      for (int o = 0; o < p.n_obs; ++o) {
        std::snprintf(buf, sizeof buf, "%.17g", p.z(s, y, o));
        os << (o ? " " : "") << buf;
      }
      os << "\n";
    }
  os << "prior\n";
  for (std::size_t i = 0; i < p.prior.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p.prior[i]);
    os << (i ? " " : "") << buf;
  }
  os << "\n";
  return os.str();
}

DiscretePomdp pomdp_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string tag;
  DiscretePomdp p;
  if (!(is >> tag) || tag != "pomdp")
    throw std::invalid_argument("pomdp_from_text: missing 'pomdp' header");
  if (!(is >> p.n_states >> p.n_actions >> p.n_obs >> p.n_hyp >> p.horizon))
    throw std::invalid_argument("pomdp_from_text: malformed size header");
  auto expect = [&](const char* word) {
    if (!(is >> tag) || tag != word)
      throw std::invalid_argument(std::string("pomdp_from_text: expected '") +
                                  word + "' section");
  };
  expect("transitions");
  p.trans.resize(std::size_t(p.n_states * p.n_actions));
  for (int& v : p.trans)
    if (!(is >> v)) throw std::invalid_argument("pomdp_from_text: short transition table");
  expect("observations");
  p.obs_prob.resize(std::size_t(p.n_states * p.n_hyp * p.n_obs));
  for (double& v : p.obs_prob)
    if (!(is >> v)) throw std::invalid_argument("pomdp_from_text: short observation table");
  expect("prior");
  p.prior.resize(std::size_t(p.n_states * p.n_hyp));
  for (double& v : p.prior)
    if (!(is >> v)) throw std::invalid_argument("pomdp_from_text: short prior");
  p.validate();
  return p;
}

DiscretePomdp foreclosure_fixture() {
  DiscretePomdp p;
  p.n_states = 4;
  p.n_actions = 2;
  p.n_obs = 4;
  p.n_hyp = 4;
  p.horizon = 2;
  // state 1 reveals the hypothesis parity forever; state 2 reveals it fully
  // but is only reachable through the silent state 3
  p.trans = {1, 3,   // from 0: a0 -> parity room, a1 -> silent corridor
             1, 1,   // parity room is absorbing
             2, 2,   // full-reveal room is absorbing
             2, 3};  // corridor: a0 -> full-reveal room, a1 -> stay
  p.obs_prob.assign(std::size_t(4 * 4 * 4), 0.0);
  auto point = [&](int s, int y, int o) {
    p.obs_prob[std::size_t((s * 4 + y) * 4 + o)] = 1.0;
  };
  for (int y = 0; y < 4; ++y) {
    point(0, y, 0);      // silent
    point(1, y, y % 2);  // parity only
    point(2, y, y);      // full reveal
    point(3, y, 0);      // silent
  }
  p.prior.assign(16, 0.0);
  for (int y = 0; y < 4; ++y) p.prior[std::size_t(0 * 4 + y)] = 0.25;
  return p;
}

}  // namespace patchdef
