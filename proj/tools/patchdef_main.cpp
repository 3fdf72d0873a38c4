// command-line driver: dataset generation, the offline->bank->online training
// pipeline, attacks, evaluation, numerical-oracle verification, and debug
// renders. Every run is reproducible from (config, seed).
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "patchdef/config.hpp"
#include "patchdef/evaluate.hpp"
#include "patchdef/image_io.hpp"
#include "patchdef/mi_bound.hpp"
#include "patchdef/pomdp.hpp"
#include "patchdef/trainer.hpp"

namespace fs = std::filesystem;
using namespace patchdef;

namespace {

struct Options {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty()
                             ? parse_config_text("", o.overrides)
                             : load_config(o.config_path, o.overrides);
  if (o.seed_given) cfg.seed = o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

// every checkpoint carries both models plus provenance metadata
void save_agent(const std::string& path, const ExperimentConfig& cfg,
                PerceptionModel<float>& per, PolicyModel<float>& pol,
                const std::string& kind) {
  Archive a;
  a.set_meta("kind", kind);
  a.set_meta("config_hash", hex64(config_hash(cfg)));
  a.set_meta("seed", std::to_string(cfg.seed));
  params_to_archive(per.params(), a);
  params_to_archive(pol.params(), a);
  save_archive(path, a);
  std::printf("wrote checkpoint %s (%s)\n", path.c_str(), kind.c_str());
}

void load_agent(const std::string& path, const ExperimentConfig& cfg,
                PerceptionModel<float>& per, PolicyModel<float>& pol) {
  Archive a = load_archive(path);
  if (const std::string* h = a.meta_value("config_hash"))
    if (*h != hex64(config_hash(cfg)))
      std::fprintf(stderr,
                   "warning: checkpoint %s was written under config hash %s, "
                   "current config hashes to %s\n",
                   path.c_str(), h->c_str(), hex64(config_hash(cfg)).c_str());
  params_from_archive(a, per.params());
  if (a.find("pi.fc1.w")) params_from_archive(a, pol.params());
}

// models are always constructed from the same derived stream so that an
// absent checkpoint still yields a reproducible initialization
struct Agent {
  Rng init_rng;
  PerceptionModel<float> perception;
  PolicyModel<float> policy;

  explicit Agent(const ExperimentConfig& cfg)
      : init_rng(derive_seed(cfg.seed, 5)),
        perception(cfg.perception(), init_rng),
        policy(cfg.policy(), init_rng) {}
};

std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return fnv1a(ss.str());
}

AttackResult<float> run_attack(const std::string& method, const Scene& scene,
                               PerceptionModel<float>& model,
                               const EnvConfig& env, const AttackConfig& ac) {
  if (method == "pgd") return pgd_patch(scene, model, env, ac);
  if (method == "fgsm") return fgsm_patch(scene, model, env, ac);
  if (method == "mim") return mim_patch(scene, model, env, ac);
  if (method == "eot") return eot_patch(scene, model, env, ac);
  if (method == "uniform_policy") return uniform_policy_patch(scene, model, env, ac);
  throw std::invalid_argument("unknown attack method '" + method + "'");
}

// held-out bank: same geometry/budget as the training bank but freshly
// crafted patches under an independent seed stream
PatchBank build_method_bank(const std::string& method,
                            const std::vector<Scene>& scenes,
                            PerceptionModel<float>& model, const EnvConfig& env,
                            const ExperimentConfig& cfg, std::uint64_t seed) {
  PatchBank bank;
  for (int i = 0; i < cfg.bank.bank_size; ++i) {
    const Scene& sc = scenes[std::size_t(i) % scenes.size()];
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(seed, std::uint64_t(i));
    AttackResult<float> r = run_attack(method, sc, model, env, ac);
    bank.patches.push_back(std::move(r.patch));
    bank.provenance.push_back(
        {method, ac.seed, config_hash(cfg), int(i % scenes.size())});
  }
  return bank;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t a = item.find_first_not_of(" \t");
    std::size_t b = item.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_dataset(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  std::string dir = out_path(cfg, "dataset");
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/dataset.txt");
  manifest << "# index label seed anchor_r0 anchor_c0 anchor_h anchor_w\n";
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    char name[64];
    std::snprintf(name, sizeof name, "scene_%03zu_class%d.ppm", i, s.label);
    write_ppm(dir + "/" + name, s.texture);
    manifest << i << " " << s.label << " " << s.seed << " " << s.anchor.r0
             << " " << s.anchor.c0 << " " << s.anchor.h << " " << s.anchor.w
             << "\n";
  }
  std::printf("wrote %zu scene textures and dataset.txt to %s\n", scenes.size(),
              dir.c_str());
  return 0;
}

int cmd_train_offline(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  PatchBank no_bank;  // offline uses noise patches only; the bank needs a backbone
  OfflineResult res = offline_pretrain(agent.perception, scenes, no_bank,
                                       cfg.env(), cfg.train_config());
  std::ofstream csv(out_path(cfg, "offline_loss.csv"));
  csv << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e)
    csv << e << "," << res.epoch_loss[e] << "\n";
  save_agent(out_path(cfg, "offline.ckpt"), cfg, agent.perception, agent.policy,
             "offline");
  std::printf("offline pretraining: %d episodes, %zu epochs, final loss %.4f\n",
              res.episodes_collected, res.epoch_loss.size(),
              res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back());
  return 0;
}

int cmd_build_patch_bank(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::string ckpt =
      o.checkpoint.empty() ? out_path(cfg, "offline.ckpt") : o.checkpoint;
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  load_agent(ckpt, cfg, agent.perception, agent.policy);
  PatchBank bank = build_patch_bank(scenes, agent.perception, cfg.env(),
                                   cfg.bank_config(), derive_seed(cfg.seed, 31));
  std::string path = out_path(cfg, "patch_bank.bin");
  save_patch_bank(path, bank);
  int n_noise = 0;
  for (const auto& p : bank.provenance) n_noise += p.kind == "noise";
  std::printf("wrote %zu patches (%zu attack, %d noise) to %s\n", bank.size(),
              bank.size() - std::size_t(n_noise), n_noise, path.c_str());
  return 0;
}

int cmd_train_online(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::string ckpt =
      o.checkpoint.empty() ? out_path(cfg, "offline.ckpt") : o.checkpoint;
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  load_agent(ckpt, cfg, agent.perception, agent.policy);

  std::string bank_path = out_path(cfg, "patch_bank.bin");
  PatchBank bank;
  if (fs::exists(bank_path)) {
    bank = load_patch_bank(bank_path);
  } else if (cfg.train.r_patch > 0) {
    throw std::runtime_error("no patch bank at " + bank_path +
                             "; run build-patch-bank first (or set "
                             "train.r_patch=0 for clean-only training)");
  }

  std::string metrics_path = out_path(cfg, "metrics.csv");
  std::remove(metrics_path.c_str());
  TrainConfig tc = cfg.train_config();
  OnlineResult res = online_train(
      agent.perception, agent.policy, scenes, bank, cfg.env(), tc,
      /*offline_done=*/true, /*allow_without_offline=*/false, metrics_path,
      [&](int it) {
        if (it % 5 == 0 || it == tc.iterations)
          std::fprintf(stderr, "  iteration %d/%d\n", it, tc.iterations);
      });
  save_agent(out_path(cfg, "agent.ckpt"), cfg, agent.perception, agent.policy,
             "agent");
  if (!res.metrics.empty()) {
    const IterationMetrics& m = res.metrics.back();
    std::printf(
        "online training done: %zu iterations, return %.4f, clean acc %.1f%%, "
        "patched acc %.1f%%, final loss %.4f (metrics: %s)\n",
        res.metrics.size(), m.mean_return, 100 * m.clean_acc,
        100 * m.patched_acc, m.mean_final_loss, metrics_path.c_str());
  }
  if (res.invalid_episodes || res.dropped_elements)
    std::printf("  degenerate episodes skipped: %d, dropped batch elements: %d\n",
                res.invalid_episodes, res.dropped_elements);
  return 0;
}

int cmd_attack(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  load_agent(o.checkpoint, cfg, agent.perception, agent.policy);

  std::string dir = out_path(cfg, "patches");
  fs::create_directories(dir);
  std::ofstream csv(out_path(cfg, "attack_summary.csv"));
  csv << "scene,label,method,clean_correct,patched_correct,objective_start,"
         "objective_final,zero_gradient\n";

  int n = std::min<int>(cfg.eval_episodes, int(scenes.size()));
  int clean_ok = 0, patched_ok = 0, zero_grad = 0;
  double delta = 0;
  for (int i = 0; i < n; ++i) {
    const Scene& sc = scenes[std::size_t(i)];
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(cfg.seed, 40000 + std::uint64_t(i));
    AttackResult<float> r =
        run_attack(cfg.attack_method, sc, agent.perception, cfg.env(), ac);
    std::uint64_t view_seed = derive_seed(cfg.seed, 41000 + std::uint64_t(i));
    Trajectory clean = uniform_rollout(agent.perception, cfg.env(), sc, nullptr,
                                       -1, 0, view_seed);
    Trajectory patched = uniform_rollout(agent.perception, cfg.env(), sc,
                                         &r.patch, i, 0, view_seed);
    bool c_ok = clean.steps[0].prediction == sc.label;
    bool p_ok = patched.steps[0].prediction == sc.label;
    clean_ok += c_ok;
    patched_ok += p_ok;
    zero_grad += r.zero_gradient;
    delta += r.objective.back() - r.objective.front();
    char name[64];
    std::snprintf(name, sizeof name, "patch_%03d.ppm", i);
    write_ppm(dir + "/" + name, r.patch);
    csv << i << "," << sc.label << "," << cfg.attack_method << "," << c_ok
        << "," << p_ok << "," << r.objective.front() << ","
        << r.objective.back() << "," << r.zero_gradient << "\n";
  }
  std::printf(
      "%s attack on %d scenes: clean acc %.1f%%, patched acc %.1f%%, mean "
      "objective gain %.4f, zero-gradient runs %d\n",
      cfg.attack_method.c_str(), n, 100.0 * clean_ok / n, 100.0 * patched_ok / n,
      delta / n, zero_grad);
  return 0;
}

int cmd_evaluate(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  load_agent(o.checkpoint, cfg, agent.perception, agent.policy);

  // held-out banks per configured method, plus the stored training bank when
  // one exists (it is the non-held-out reference)
  std::vector<PatchBank> banks;
  std::vector<std::string> names;
  for (const std::string& m : split_list(cfg.eval_attacks)) {
    std::fprintf(stderr, "crafting held-out %s bank (%d patches)...\n",
                 m.c_str(), cfg.bank.bank_size);
    banks.push_back(build_method_bank(m, scenes, agent.perception, cfg.env(),
                                      cfg, derive_seed(cfg.seed, 777)));
    names.push_back(m);
  }
  std::string bank_path = out_path(cfg, "patch_bank.bin");
  if (fs::exists(bank_path)) {
    banks.push_back(load_patch_bank(bank_path));
    names.push_back("bank");
  }
  std::vector<std::pair<std::string, const PatchBank*>> attacks;
  for (std::size_t i = 0; i < banks.size(); ++i)
    attacks.emplace_back(names[i], &banks[i]);

  int H = cfg.eval_horizon >= 0 ? cfg.eval_horizon : cfg.train.horizon;
  EvalReport rep = evaluate(agent.perception, agent.policy, cfg.env(), scenes,
                            attacks, H, cfg.eval_episodes,
                            cfg.seed, cfg.eval_mode == "uniform_steps",
                            out_path(cfg, "eval_episodes.csv"));
  rep.checkpoint_hash = hex64(file_hash(o.checkpoint));
  rep.config_hash = hex64(config_hash(cfg));

  std::string text = report_to_text(rep);
  std::ofstream(out_path(cfg, "eval_report.txt")) << text;
  std::fputs(text.c_str(), stdout);
  std::printf("wrote %s and %s\n", out_path(cfg, "eval_report.txt").c_str(),
              out_path(cfg, "eval_episodes.csv").c_str());
  return 0;
}

// --- numerical oracle suites ----------------------------------------------

DiscreteJoint independent_joint() {
  DiscreteJoint j;
  j.n_b = 2;
  j.n_o = 3;
  j.n_y = 3;
  j.p.assign(std::size_t(j.n_b * j.n_o * j.n_y), 1.0 / 18.0);
  return j;
}

DiscreteJoint correlated_joint(int n) {
  DiscreteJoint j;
  j.n_b = 2;
  j.n_o = n;
  j.n_y = n;
  j.p.assign(std::size_t(j.n_b * n * n), 0.0);
  for (int b = 0; b < 2; ++b)
    for (int o = 0; o < n; ++o) j.p[std::size_t((b * n + o) * n + o)] = 0.5 / n;
  return j;
}

DiscreteJoint random_joint(Rng& rng) {
  DiscreteJoint j;
  j.n_b = 2 + rng.uniform_int(3);
  j.n_o = 2 + rng.uniform_int(3);
  j.n_y = 2 + rng.uniform_int(3);
  j.p.resize(std::size_t(j.n_b * j.n_o * j.n_y));
  double sum = 0;
  for (double& v : j.p) sum += v = rng.uniform(0.01, 1.0);
  for (double& v : j.p) v /= sum;
  return j;
}

int cmd_verify_oracles(const Options& o) {
  ExperimentConfig cfg = load(o);
  int failures = 0;
  auto row = [&](bool ok, const char* name, const std::string& note) {
    std::printf("  [%s] %-42s %s\n", ok ? " OK " : "FAIL", name, note.c_str());
    failures += !ok;
  };
  char note[256];

  std::printf("greedy-vs-optimal information gain (discrete POMDPs)\n");
  EfficacyReport er =
      verify_efficacy_inequality(1000, derive_seed(cfg.seed, 3737));
  std::snprintf(note, sizeof note,
                "%d instances, %d violations, %d strict gaps, max gap %.4f",
                er.instances, er.violations, er.strict_gaps, er.max_gap);
  row(er.violations == 0, "optimal >= greedy over random instances", note);
  if (er.violations)
    std::printf("    first offending instance:\n%s\n",
                er.first_violation.c_str());

  DiscretePomdp fx = foreclosure_fixture();
  ExactBelief prior = ExactBelief::from_prior(fx);
  double h0 = entropy(prior.hyp_marginal());
  GreedyResult g = greedy_rollout(fx, prior);
  OptimalResult opt = accumulative_optimal(fx, prior);
  std::snprintf(note, sizeof note, "greedy gain %.4f, optimal gain %.4f",
                g.gain, opt.gain);
  row(opt.gain - g.gain > 1e-3 && opt.gain <= h0 + 1e-9,
      "frozen foreclosure fixture has a strict gap", note);

  std::printf("contrastive lower bound on conditional information\n");
  InfoNceBoundReport ind =
      verify_infonce_bound(independent_joint(), 8, 400, derive_seed(cfg.seed, 61));
  std::snprintf(note, sizeof note, "mi %.4f, mean lhs %.4f, rhs %.4f", ind.mi,
                ind.mean_lhs, ind.bound_rhs);
  row(ind.holds && std::abs(ind.mi) < 1e-12, "independent joint", note);

  double prev_gap = 1e9;
  bool trend_ok = true;
  std::string gaps;
  for (int K : {2, 8, 32, 64}) {
    InfoNceBoundReport r = verify_infonce_bound(correlated_joint(4), K, 3000,
                                                derive_seed(cfg.seed, 61));
    double gap = (r.mi - std::log(double(K))) - r.mean_lhs;
    trend_ok = trend_ok && r.holds && gap <= prev_gap + 1e-3;
    prev_gap = gap;
    char g2[48];
    std::snprintf(g2, sizeof g2, "K=%d:%.4f ", K, gap);
    gaps += g2;
  }
  row(trend_ok, "bound gap non-increasing in batch size", gaps);

  Rng rng(derive_seed(cfg.seed, 62));
  int bad = 0;
  for (int i = 0; i < 20; ++i) {
    InfoNceBoundReport r =
        verify_infonce_bound(random_joint(rng), 32, 200, derive_seed(cfg.seed, std::uint64_t(100 + i)));
    bad += !r.holds;
  }
  std::snprintf(note, sizeof note, "20 joints, K=32, %d violations", bad);
  row(bad == 0, "random joints", note);

  std::printf("%s: %d check(s) failed\n", failures ? "FAILURE" : "all oracles passed",
              failures);
  return failures ? 1 : 0;
}

int cmd_render_debug(const Options& o) {
  ExperimentConfig cfg = load(o);
  std::vector<Scene> scenes = make_dataset(cfg.dataset, cfg.dataset_seed);
  Agent agent(cfg);
  if (!o.checkpoint.empty())
    load_agent(o.checkpoint, cfg, agent.perception, agent.policy);
  else
    std::fprintf(stderr, "note: no checkpoint given, rendering with freshly "
                         "initialized models\n");

  const Scene& sc = scenes.front();
  PatchBank bank;
  std::string bank_path = out_path(cfg, "patch_bank.bin");
  const Tensor<float>* patch = nullptr;
  if (fs::exists(bank_path)) {
    bank = load_patch_bank(bank_path);
    if (bank.size()) patch = &bank.patches[0];
  }

  Trajectory traj =
      rollout(agent.perception, agent.policy, cfg.env(), sc, patch,
              patch ? 0 : -1, cfg.train.horizon, derive_seed(cfg.seed, 90000),
              /*stochastic=*/false);
  std::string dir = out_path(cfg, "render");
  fs::create_directories(dir);
  write_ppm(dir + "/texture.ppm", sc.texture);
  if (patch) write_ppm(dir + "/patch.ppm", *patch);
  std::printf("scene 0, label %d, %s; horizon %d%s\n", sc.label,
              patch ? "patch 0 from the stored bank" : "no patch",
              traj.horizon(), traj.valid ? "" : " (degenerate views)");
  std::printf("  t  pred  loss     entropy  p(true)  action\n");
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    const StepRecord& s = traj.steps[t];
    char name[32];
    std::snprintf(name, sizeof name, "step_%02zu.ppm", t);
    write_ppm(dir + "/" + name, s.obs);
    std::printf("  %zu  %4d  %7.4f  %7.4f  %7.4f  (%+.3f, %+.3f)\n", t,
                s.prediction, s.loss, s.entropy, s.correct_prob, s.action[0],
                s.action[1]);
  }
  std::printf("wrote %zu views to %s\n", traj.steps.size(), dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale active-defense lab: adversarial patches vs. a "
               "multi-view recurrent agent"};
  app.require_subcommand(1);

  Options o;
  std::function<int()> action;
  auto add_common = [&](CLI::App* s, bool require_ckpt) {
    s->add_option("--config", o.config_path, "structured-text config file");
    s->add_option("--seed", o.seed, "override the run seed");
    auto* c = s->add_option("--checkpoint", o.checkpoint, "checkpoint archive");
    if (require_ckpt) c->required();
    s->add_option("--out", o.out_dir, "output directory (overrides run.out_dir)");
    s->add_option("--override", o.overrides,
                  "config override section.key=value (repeatable)");
    return s;
  };
  auto bind = [&](CLI::App* s, int (*fn)(const Options&)) {
    s->callback([&o, fn, s, &action] {
      o.seed_given = s->count("--seed") > 0;
      action = [&o, fn] { return fn(o); };
    });
  };

  bind(add_common(app.add_subcommand("gen-dataset",
                                     "write the procedural scene dataset"),
                  false),
       cmd_gen_dataset);
  bind(add_common(app.add_subcommand("train-offline",
                                     "supervised pretraining on random views"),
                  false),
       cmd_train_offline);
  bind(add_common(app.add_subcommand(
                      "build-patch-bank",
                      "craft the offline adversarial patch bank"),
                  false),
       cmd_build_patch_bank);
  bind(add_common(app.add_subcommand(
                      "train-online", "policy + perception training with PPO"),
                  false),
       cmd_train_online);
  bind(add_common(app.add_subcommand(
                      "attack", "craft per-scene patches against a checkpoint"),
                  true),
       cmd_attack);
  bind(add_common(app.add_subcommand("evaluate",
                                     "accuracy / attack-success evaluation"),
                  true),
       cmd_evaluate);
  bind(add_common(app.add_subcommand("verify-oracles",
                                     "run the numerical oracle suites"),
                  false),
       cmd_verify_oracles);
  bind(add_common(app.add_subcommand("render-debug",
                                     "dump views along one trajectory"),
                  false),
       cmd_render_debug);

  CLI11_PARSE(app, argc, argv);
  try {
    return action();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
