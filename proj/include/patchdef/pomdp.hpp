#pragma once

// Exact-belief planning oracle on tiny discrete POMDPs: a hidden hypothesis y
// and a controlled state s with deterministic transitions, observations drawn
// from per-(state, hypothesis) tables. Supports an exact Bayes filter over the
// joint (s, y), a one-step-greedy entropy-reduction policy, and the
// exhaustively enumerated best observation-adaptive policy tree, so the two
// can be compared on equal footing.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "patchdef/rng.hpp"

namespace patchdef {

struct DiscretePomdp {
  int n_states = 0;
  int n_actions = 0;
  int n_obs = 0;
  int n_hyp = 0;
  int horizon = 0;
  std::vector<int> trans;       // trans[s*n_actions + a] -> next state
  std::vector<double> obs_prob; // obs_prob[(s*n_hyp + y)*n_obs + o]
  std::vector<double> prior;    // prior[s*n_hyp + y]

  int next_state(int s, int a) const { return trans[std::size_t(s * n_actions + a)]; }
  double z(int s, int y, int o) const {
    return obs_prob[std::size_t((s * n_hyp + y) * n_obs + o)];
  }
  void validate() const;  // sizes in range, rows normalized to 1e-12
};

struct ExactBelief {
  int n_states = 0;
  int n_hyp = 0;
  std::vector<double> joint;  // joint[s*n_hyp + y]

  static ExactBelief from_prior(const DiscretePomdp& p);
  std::vector<double> hyp_marginal() const;
};

// Shannon entropy in nats; zero entries contribute zero
double entropy(const std::vector<double>& p);

// entropy of the hypothesis marginal
double posterior_entropy(const ExactBelief& b);

// probability of seeing o after taking a from belief b
double observation_prob(const DiscretePomdp& p, const ExactBelief& b, int a, int o);

// propagate through the transition table, condition on the observation;
// rejects observations with zero predicted probability
ExactBelief bayes_update(const DiscretePomdp& p, const ExactBelief& b, int a, int o);

struct GreedyResult {
  std::vector<int> actions;  // actions along the modal observation branch
  double gain = 0;           // expected entropy reduction over all branches
};

// at every reached belief take the action maximizing the expected one-step
// entropy reduction (ties -> lowest action index)
GreedyResult greedy_rollout(const DiscretePomdp& p, const ExactBelief& start);

struct PolicyTree {
  int action = -1;
  // children[o] is the subtree after observing o; null when p(o) = 0 or at
  // the final step
  std::vector<std::unique_ptr<PolicyTree>> children;
};

struct OptimalResult {
  std::unique_ptr<PolicyTree> tree;
  double gain = 0;
};

// exhaustive search over observation-adaptive policy trees; rejects instances
// whose (|A|*|O|)^H enumeration exceeds the node budget
inline constexpr double kEnumerationBudget = 1e6;
OptimalResult accumulative_optimal(const DiscretePomdp& p, const ExactBelief& start);

// random instance with |S| in [2,max_states], |A| in [1,max_actions],
// |O| in [2,max_obs], |Y| in [2,max_hyp], H in [1,max_horizon]; known start
// state, random hypothesis prior, a mix of deterministic and diffuse
// observation rows
DiscretePomdp random_pomdp(Rng& rng, int max_states = 6, int max_actions = 3,
                           int max_obs = 6, int max_hyp = 4, int max_horizon = 3);

struct EfficacyReport {
  int instances = 0;
  int violations = 0;      // optimal gain below greedy gain by more than 1e-9
  int strict_gaps = 0;     // optimal gain above greedy gain by more than 1e-9
  double max_gap = 0;      // largest optimal-minus-greedy gain
  double worst_violation = 0;
  std::string first_violation;  // serialized offending instance, empty if none
};

// draws random instances and checks that the best adaptive policy never
// reduces entropy less than the greedy one
EfficacyReport verify_efficacy_inequality(int n_instances, std::uint64_t seed);

// structured-text round trip (full tables) for regression replay
std::string pomdp_to_text(const DiscretePomdp& p);
DiscretePomdp pomdp_from_text(const std::string& text);

// frozen two-step instance where the greedy first action forecloses the
// informative second step: greedy gains ln 2, the best tree gains ln 4
DiscretePomdp foreclosure_fixture();

}  // namespace patchdef
