#pragma once

// Evaluation protocol: deterministic (mean-action) episodes over a scene set,
// clean and under each named patch bank, with paired seeds so every patched
// episode has an identical-setup clean counterpart. Reports standard accuracy,
// attack success rate over clean-correct episodes (undefined when no episode
// qualifies), and per-step loss/accuracy curves; per-episode outcomes can be
// dumped as CSV so every aggregate is recomputable externally.

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "patchdef/attacks.hpp"
#include "patchdef/rollout.hpp"

namespace patchdef {

struct AttackEval {
  std::string name;
  double accuracy = 0;     // percent over patched episodes
  double asr = 0;          // percent; meaningful only when asr_defined
  bool asr_defined = false;
  int eligible = 0;        // clean-correct episodes (the ASR denominator)
  int successes = 0;       // eligible episodes the patch flips to a wrong answer
  std::vector<double> loss_curve;  // length H+1, mean over patched episodes
  std::vector<double> acc_curve;   // length H+1, percent
};

struct EvalReport {
  int episodes = 0;
  int horizon = 0;
  std::uint64_t seed = 0;
  bool uniform_steps = false;
  int invalid_episodes = 0;
  double clean_accuracy = 0;  // percent
  std::vector<double> clean_loss_curve;
  std::vector<double> clean_acc_curve;
  std::vector<AttackEval> attacks;
  std::string checkpoint_hash;  // metadata, set by the caller
  std::string config_hash;
};

namespace detail {

struct EpisodeOutcome {
  bool valid = false;
  int prediction = -1;          // final-step argmax
  double correct = 0;           // 1/0 final-step, fraction in uniform mode
  std::vector<double> losses;   // per step
  std::vector<double> correct_steps;
  double final_loss = 0;
  double final_entropy = 0;
};

template <typename T>
EpisodeOutcome eval_episode(PerceptionModel<T>& perception, PolicyModel<T>& policy,
                            const EnvConfig& env, const Scene& scene,
                            const Tensor<float>* patch, int patch_index, int H,
                            std::uint64_t seed, bool uniform_steps) {
  Trajectory tr =
      rollout(perception, policy, env, scene, patch, patch_index, H, seed, false);
  EpisodeOutcome out;
  out.valid = tr.valid;
  if (!tr.valid) return out;
  for (const StepRecord& s : tr.steps) {
    out.losses.push_back(s.loss);
    out.correct_steps.push_back(s.prediction == tr.label ? 1.0 : 0.0);
  }
  out.prediction = tr.steps.back().prediction;
  out.final_loss = tr.steps.back().loss;
  out.final_entropy = tr.steps.back().entropy;
  if (uniform_steps) {
    double sum = 0;
    for (double c : out.correct_steps) sum += c;
    out.correct = sum / double(out.correct_steps.size());
  } else {
    out.correct = out.correct_steps.back();
  }
  return out;
}

inline void append_csv_row(std::ofstream& f, const std::string& attack, int episode,
                           int scene, int label, int patch,
                           const EpisodeOutcome& o) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s,%d,%d,%d,%d,%d,%.10g,%.10g,%.10g",
                attack.c_str(), episode, scene, label, patch, o.prediction,
                o.correct, o.final_loss, o.final_entropy);
  f << buf << "\n";
}

}  // namespace detail

inline constexpr const char* kEpisodeCsvHeader =
    "attack,episode,scene,label,patch,prediction,correct,final_loss,final_entropy";

// Episodes cycle through the scene list; episode i always uses the same seed
// for the clean run and each patched run (paired evaluation). A patched run
// uses bank patch i mod bank size. `uniform_steps` switches the episode score
// from the final-step prediction to the fraction of correct steps (with a 0.5
// threshold standing in for "correctly classified" in the ASR bookkeeping).
template <typename T>
EvalReport evaluate(PerceptionModel<T>& perception, PolicyModel<T>& policy,
                    const EnvConfig& env, const std::vector<Scene>& scenes,
                    const std::vector<std::pair<std::string, const PatchBank*>>& attacks,
                    int H, int n_episodes, std::uint64_t seed,
                    bool uniform_steps = false,
                    const std::string& episode_csv_path = "") {
  if (scenes.empty()) throw std::invalid_argument("evaluate: no scenes");
  if (n_episodes < 1) throw std::invalid_argument("evaluate: need >= 1 episodes");
  if (H < 0 || H > kMaxHorizon)
    throw std::invalid_argument("evaluate: horizon outside [0," +
                                std::to_string(kMaxHorizon) + "]");

  EvalReport rep;
  rep.episodes = n_episodes;
  rep.horizon = H;
  rep.seed = seed;
  rep.uniform_steps = uniform_steps;
  rep.clean_loss_curve.assign(std::size_t(H) + 1, 0.0);
  rep.clean_acc_curve.assign(std::size_t(H) + 1, 0.0);
  for (const auto& [name, bank] : attacks) {
    AttackEval ae;
    ae.name = name;
    ae.loss_curve.assign(std::size_t(H) + 1, 0.0);
    ae.acc_curve.assign(std::size_t(H) + 1, 0.0);
    rep.attacks.push_back(std::move(ae));
    (void)bank;
  }

  std::ofstream csv;
  if (!episode_csv_path.empty()) {
    csv.open(episode_csv_path);
    if (!csv)
      throw std::runtime_error("evaluate: cannot open " + episode_csv_path);
    csv << kEpisodeCsvHeader << "\n";
  }

  int clean_n = 0;
  double clean_correct = 0;
  std::vector<int> patched_n(attacks.size(), 0);
  std::vector<double> patched_correct(attacks.size(), 0.0);

  for (int i = 0; i < n_episodes; ++i) {
    const Scene& scene = scenes[std::size_t(i) % scenes.size()];
    std::uint64_t es = derive_seed(seed, 90000 + std::uint64_t(i));
    detail::EpisodeOutcome clean = detail::eval_episode(
        perception, policy, env, scene, nullptr, -1, H, es, uniform_steps);
    if (!clean.valid) {
      ++rep.invalid_episodes;
      continue;
    }
    ++clean_n;
    clean_correct += clean.correct;
    for (int t = 0; t <= H; ++t) {
      rep.clean_loss_curve[std::size_t(t)] += clean.losses[std::size_t(t)];
      rep.clean_acc_curve[std::size_t(t)] += clean.correct_steps[std::size_t(t)];
    }
    if (csv.is_open())
      detail::append_csv_row(csv, "clean", i, int(std::size_t(i) % scenes.size()),
                             scene.label, -1, clean);
    bool clean_ok = clean.correct > 0.5;

    for (std::size_t a = 0; a < attacks.size(); ++a) {
      const PatchBank* bank = attacks[a].second;
      const Tensor<float>* patch = nullptr;
      int pidx = -1;
      if (bank && !bank->patches.empty()) {
        pidx = int(std::size_t(i) % bank->patches.size());
        patch = &bank->patches[std::size_t(pidx)];
      }
      detail::EpisodeOutcome po = detail::eval_episode(
          perception, policy, env, scene, patch, pidx, H, es, uniform_steps);
      if (!po.valid) {
        ++rep.invalid_episodes;
        continue;
      }
      ++patched_n[a];
      patched_correct[a] += po.correct;
      AttackEval& ae = rep.attacks[a];
      for (int t = 0; t <= H; ++t) {
        ae.loss_curve[std::size_t(t)] += po.losses[std::size_t(t)];
        ae.acc_curve[std::size_t(t)] += po.correct_steps[std::size_t(t)];
      }
      if (clean_ok) {
        ++ae.eligible;
        if (po.correct <= 0.5) ++ae.successes;
      }
      if (csv.is_open())
        detail::append_csv_row(csv, attacks[a].first, i,
                               int(std::size_t(i) % scenes.size()), scene.label,
                               pidx, po);
    }
  }

  if (clean_n > 0) {
    rep.clean_accuracy = 100.0 * clean_correct / clean_n;
    for (double& v : rep.clean_loss_curve) v /= clean_n;
    for (double& v : rep.clean_acc_curve) v = 100.0 * v / clean_n;
  }
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    AttackEval& ae = rep.attacks[a];
    if (patched_n[a] > 0) {
      ae.accuracy = 100.0 * patched_correct[a] / patched_n[a];
      for (double& v : ae.loss_curve) v /= patched_n[a];
      for (double& v : ae.acc_curve) v = 100.0 * v / patched_n[a];
    }
    ae.asr_defined = ae.eligible > 0;
    ae.asr = ae.asr_defined ? 100.0 * ae.successes / ae.eligible : 0.0;
  }
  return rep;
}

// flat structured-text rendering (one key=value per line)
inline std::string report_to_text(const EvalReport& r) {
  std::string out;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  auto curve = [&](const std::vector<double>& c) {
    std::string s;
    for (std::size_t i = 0; i < c.size(); ++i) {
      if (i) s += ",";
      s += num(c[i]);
    }
    return s;
  };
  out += "episodes=" + std::to_string(r.episodes) + "\n";
  out += "horizon=" + std::to_string(r.horizon) + "\n";
  out += "seed=" + std::to_string(r.seed) + "\n";
  out += std::string("mode=") + (r.uniform_steps ? "uniform_steps" : "final_step") +
         "\n";
  out += "invalid_episodes=" + std::to_string(r.invalid_episodes) + "\n";
  out += "clean.accuracy=" + num(r.clean_accuracy) + "\n";
  out += "clean.loss_curve=" + curve(r.clean_loss_curve) + "\n";
  out += "clean.acc_curve=" + curve(r.clean_acc_curve) + "\n";
  for (const AttackEval& a : r.attacks) {
    std::string p = "attack." + a.name + ".";
    out += p + "accuracy=" + num(a.accuracy) + "\n";
    out += p + "asr=" + (a.asr_defined ? num(a.asr) : std::string("undefined")) +
           "\n";
    out += p + "eligible=" + std::to_string(a.eligible) + "\n";
    out += p + "successes=" + std::to_string(a.successes) + "\n";
    out += p + "loss_curve=" + curve(a.loss_curve) + "\n";
    out += p + "acc_curve=" + curve(a.acc_curve) + "\n";
  }
  if (!r.checkpoint_hash.empty())
    out += "checkpoint_hash=" + r.checkpoint_hash + "\n";
  if (!r.config_hash.empty()) out += "config_hash=" + r.config_hash + "\n";
  return out;
}

}  // namespace patchdef
