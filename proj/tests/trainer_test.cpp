#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "patchdef/trainer.hpp"

using namespace patchdef;

namespace {

EnvConfig small_env() {
  EnvConfig env;
  env.intr.res = 16;
  env.intr.cx = env.intr.cy = 8.0;
  env.intr.fx = env.intr.fy = 22.4;
  return env;
}

PerceptionConfig small_pcfg() {
  PerceptionConfig cfg;
  cfg.image_size = 16;
  return cfg;
}

std::vector<Scene> small_dataset(std::uint64_t seed) {
  DatasetOptions opt;
  opt.per_class = 2;
  return make_dataset(opt, seed);
}

// synthetic trajectory carrying only the recorded scalars the reward and
// advantage code reads
Trajectory synth(const std::vector<double>& losses, const std::vector<double>& ents,
                 const std::vector<double>& probs) {
  Trajectory t;
  t.label = 0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    StepRecord s;
    s.loss = losses[i];
    s.entropy = i < ents.size() ? ents[i] : 0.0;
    s.correct_prob = i < probs.size() ? probs[i] : 0.0;
    t.steps.push_back(std::move(s));
  }
  return t;
}

// brute-force GAE: direct double loop over the definition
Advantages gae_bruteforce(const std::vector<double>& r, const std::vector<double>& v,
                          double gamma, double lam) {
  std::size_t H = r.size();
  Advantages out;
  for (std::size_t t = 0; t < H; ++t) {
    double a = 0;
    for (std::size_t k = 0; t + k < H; ++k) {
      double delta = r[t + k] + gamma * v[t + k + 1] - v[t + k];
      a += std::pow(gamma * lam, double(k)) * delta;
    }
    out.adv.push_back(a);
    out.target.push_back(a + v[t]);
  }
  return out;
}

}  // namespace

TEST_CASE("uncertainty-shaped rewards reproduce the worked example") {
  Trajectory t = synth({1.0, 0.6, 0.2}, {}, {});
  auto r = compute_rewards(t, RewardMode::UncertaintyShaped, 0.5);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == doctest::Approx(0.7));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(discounted_return(r, 0.5) == doctest::Approx(0.95));
  CHECK(discounted_return(r, 0.5) == doctest::Approx(1.0 - 0.25 * 0.2));
}

TEST_CASE("constant losses give (1-gamma)*L rewards, zero at gamma=1") {
  Trajectory t = synth({0.8, 0.8, 0.8, 0.8}, {}, {});
  for (double g : {0.5, 0.9}) {
    auto r = compute_rewards(t, RewardMode::UncertaintyShaped, g);
    for (double v : r) CHECK(v == doctest::Approx((1 - g) * 0.8));
  }
  auto r1 = compute_rewards(t, RewardMode::UncertaintyShaped, 1.0);
  for (double v : r1) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("entropy-deduction rewards follow the same difference law") {
  Trajectory t = synth({0, 0, 0}, {1.2, 0.9, 0.1}, {});
  auto r = compute_rewards(t, RewardMode::EntropyDeduction, 0.5);
  CHECK(r[0] == doctest::Approx(1.2 - 0.5 * 0.9));
  CHECK(r[1] == doctest::Approx(0.9 - 0.5 * 0.1));
}

TEST_CASE("binary-outcome rewards threshold the true-class probability") {
  Trajectory t = synth({0, 0, 0}, {}, {0.99, 0.99, 0.99});
  auto r = compute_rewards(t, RewardMode::BinaryOutcome, 0.95, 0.95);
  for (double v : r) CHECK(v == 1.0);
  Trajectory t2 = synth({0, 0, 0}, {}, {0.5, 0.96, 0.3});
  auto r2 = compute_rewards(t2, RewardMode::BinaryOutcome, 0.95, 0.95);
  CHECK(r2[0] == 1.0);
  CHECK(r2[1] == 0.0);
  CHECK_THROWS_AS(compute_rewards(t, RewardMode::BinaryOutcome, 0.95, 1.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(compute_rewards(synth({1.0}, {}, {}),
                                  RewardMode::UncertaintyShaped, 0.9),
                  std::invalid_argument);
}

TEST_CASE("discounted reward sums telescope to L0 - gamma^H * LH") {
  Rng rng(42);
  for (int c = 0; c < 1000; ++c) {
    int H = 1 + rng.uniform_int(8);
    double gamma = rng.uniform(0.05, 1.0);
    std::vector<double> losses;
    for (int t = 0; t <= H; ++t) losses.push_back(rng.uniform(0.0, 3.0));
    Trajectory t = synth(losses, {}, {});
    auto r = compute_rewards(t, RewardMode::UncertaintyShaped, gamma);
    double lhs = discounted_return(r, gamma);
    double rhs = losses.front() - std::pow(gamma, double(H)) * losses.back();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
  }
}

TEST_CASE("advantage estimation: anchors and brute-force oracle") {
  Rng rng(7);
  // gae_lambda = 0 -> one-step TD errors exactly
  {
    std::vector<double> r{0.5, -0.2, 0.3};
    std::vector<double> v{1.0, 0.8, 0.9, 0.4};
    auto a = gae(r, v, 0.9, 0.0);
    for (std::size_t t = 0; t < 3; ++t)
      CHECK(a.adv[t] == doctest::Approx(r[t] + 0.9 * v[t + 1] - v[t]).epsilon(1e-12));
  }
  // gae_lambda = 1, V = 0 -> discounted reward-to-go
  {
    std::vector<double> r{1.0, 2.0, 3.0};
    std::vector<double> v{0, 0, 0, 0};
    auto a = gae(r, v, 0.5, 1.0);
    CHECK(a.adv[2] == doctest::Approx(3.0));
    CHECK(a.adv[1] == doctest::Approx(2.0 + 0.5 * 3.0));
    CHECK(a.adv[0] == doctest::Approx(1.0 + 0.5 * 2.0 + 0.25 * 3.0));
  }
  // random instances vs the double-loop evaluation
  for (int c = 0; c < 20; ++c) {
    int H = 1 + rng.uniform_int(8);
    std::vector<double> r, v;
    for (int t = 0; t < H; ++t) r.push_back(rng.uniform(-1, 1));
    for (int t = 0; t <= H; ++t) v.push_back(rng.uniform(-1, 1));
    double gamma = rng.uniform(0.1, 1.0), lam = rng.uniform(0.0, 1.0);
    auto fast = gae(r, v, gamma, lam);
    auto slow = gae_bruteforce(r, v, gamma, lam);
    for (int t = 0; t < H; ++t) {
      CHECK(fast.adv[std::size_t(t)] ==
            doctest::Approx(slow.adv[std::size_t(t)]).epsilon(1e-6));
      CHECK(fast.target[std::size_t(t)] ==
            doctest::Approx(slow.target[std::size_t(t)]).epsilon(1e-6));
    }
  }
  CHECK_THROWS_AS(gae({1.0}, {0.0}, 0.9, 0.9), std::invalid_argument);
}

TEST_CASE("advantage normalization centers and scales the batch") {
  Rng rng(8);
  std::vector<Advantages> batch(4);
  for (auto& a : batch)
    for (int t = 0; t < 5; ++t) a.adv.push_back(rng.uniform(-3, 3));
  normalize_advantages(batch);
  double sum = 0, sq = 0;
  int n = 0;
  for (const auto& a : batch)
    for (double v : a.adv) {
      sum += v;
      sq += v * v;
      ++n;
    }
  double mean = sum / n;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::sqrt(sq / n - mean * mean) == doctest::Approx(1.0).epsilon(1e-3));

  std::vector<Advantages> flat(2);
  for (auto& a : flat) a.adv = {0.7, 0.7};
  normalize_advantages(flat);  // degenerate spread: centered, not scaled
  for (const auto& a : flat)
    for (double v : a.adv) CHECK(v == doctest::Approx(0.0));
}

namespace {

struct AgentFixture {
  EnvConfig env = small_env();
  std::vector<Scene> scenes;
  Rng init_rng{606};
  PerceptionModel<double> perception;
  PolicyModel<double> policy;

  AgentFixture()
      : scenes(small_dataset(33)),
        perception(small_pcfg(), init_rng),
        policy(PolicyConfig{}, init_rng) {}

  std::vector<Trajectory> collect(int n, int H, std::uint64_t seed) {
    std::vector<Trajectory> out;
    for (int i = 0; i < n; ++i)
      out.push_back(rollout(perception, policy, env,
                            scenes[std::size_t(i) % scenes.size()], nullptr, -1, H,
                            derive_seed(seed, std::uint64_t(i)), true));
    return out;
  }
};

std::vector<Advantages> advantages_for(const std::vector<Trajectory>& trajs,
                                       double gamma, double lam) {
  std::vector<Advantages> advs;
  for (const auto& t : trajs) {
    auto r = compute_rewards(t, RewardMode::UncertaintyShaped, gamma);
    std::vector<double> v;
    for (const auto& s : t.steps) v.push_back(s.value);
    advs.push_back(gae(r, v, gamma, lam));
  }
  return advs;
}

}  // namespace

TEST_CASE("rollout records consistent lengths and is seed-deterministic") {
  AgentFixture f;
  Trajectory t = rollout(f.perception, f.policy, f.env, f.scenes[0], nullptr, -1, 1,
                         99, true);
  CHECK(t.steps.size() == 2);  // o_0 and o_1
  CHECK(t.states.size() == 2);
  CHECK(t.horizon() == 1);
  CHECK(t.valid);
  CHECK(t.label == f.scenes[0].label);

  Trajectory t2 = rollout(f.perception, f.policy, f.env, f.scenes[0], nullptr, -1, 1,
                          99, true);
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    CHECK(t.steps[i].obs.data == t2.steps[i].obs.data);
    CHECK(t.steps[i].raw_action == t2.steps[i].raw_action);
    CHECK(t.steps[i].log_prob == t2.steps[i].log_prob);
  }

  CHECK_THROWS_AS(rollout(f.perception, f.policy, f.env, f.scenes[0], nullptr, -1,
                          -1, 1, true),
                  std::invalid_argument);
  CHECK_THROWS_AS(rollout(f.perception, f.policy, f.env, f.scenes[0], nullptr, -1,
                          17, 1, true),
                  std::invalid_argument);

  // H = 0: a single passive observation (the one-view baseline protocol)
  Trajectory t0 = rollout(f.perception, f.policy, f.env, f.scenes[0], nullptr, -1,
                          0, 4, true);
  CHECK(t0.steps.size() == 1);
  CHECK(t0.horizon() == 0);
}

TEST_CASE("degenerate views mark the trajectory invalid") {
  AgentFixture f;
  EnvConfig behind = f.env;
  behind.radius = -2.2;  // card behind the camera from every state
  Trajectory t = rollout(f.perception, f.policy, behind, f.scenes[0], nullptr, -1, 2,
                         5, true);
  CHECK_FALSE(t.valid);
}

TEST_CASE("ppo objective at unchanged parameters equals the mean summed advantage") {
  AgentFixture f;
  auto trajs = f.collect(4, 2, 1234);
  auto advs = advantages_for(trajs, 0.95, 0.95);
  normalize_advantages(advs);

  std::vector<const Trajectory*> mb;
  std::vector<const Advantages*> ma;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    mb.push_back(&trajs[i]);
    ma.push_back(&advs[i]);
  }
  double expect = 0;
  for (const auto& a : advs)
    for (double v : a.adv) expect += v;
  expect /= double(trajs.size());

  SgdMomentum<double> opt(0.0, 0.0);  // freeze parameters: ratio stays exactly 1
  PpoStats st = ppo_update(f.policy, mb, ma, 0.2, opt);
  CHECK(st.dropped == 0);
  CHECK(st.objective == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("clip saturation removes the policy gradient but not the critic's") {
  AgentFixture f;
  auto trajs = f.collect(1, 1, 777);
  auto advs = advantages_for(trajs, 0.95, 0.95);
  advs[0].adv[0] = 2.0;  // positive advantage
  // pretend the collection-time log-prob was much lower: ratio = e^1 > 1.2
  trajs[0].steps[0].log_prob -= 1.0;

  std::vector<const Trajectory*> mb{&trajs[0]};
  std::vector<const Advantages*> ma{&advs[0]};
  SgdMomentum<double> opt(0.0, 0.0);
  ppo_update(f.policy, mb, ma, 0.2, opt);

  for (const char* n : {"pi.fc1.w", "pi.fc1.b", "pi.fc2.w", "pi.fc2.b"}) {
    const auto& grad = f.policy.params().find(n)->grad;
    for (double v : grad.data) CHECK(v == 0.0);
  }
  double vmass = 0;
  for (const char* n : {"v.fc1.w", "v.fc2.w"}) {
    const auto& grad = f.policy.params().find(n)->grad;
    for (double v : grad.data) vmass += std::abs(v);
  }
  CHECK(vmass > 0.0);
}

TEST_CASE("ppo objective matches an independent evaluation of the clip formula") {
  AgentFixture f;
  auto trajs = f.collect(3, 2, 4321);
  auto advs = advantages_for(trajs, 0.95, 0.95);
  normalize_advantages(advs);
  Rng shift(9);
  for (auto& t : trajs)  // synthetic old parameters: perturb recorded log-probs
    for (auto& s : t.steps) s.log_prob += shift.uniform(-0.3, 0.3);

  double eps = 0.2, expect = 0;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    for (int t = 0; t < trajs[i].horizon(); ++t) {
      const StepRecord& s = trajs[i].steps[std::size_t(t)];
      double lp = f.policy.log_prob(s.belief.cast<double>(), s.raw_action);
      double ratio = std::exp(lp - s.log_prob);
      double a = advs[i].adv[std::size_t(t)];
      expect += std::min(ratio * a, std::clamp(ratio, 1 - eps, 1 + eps) * a);
    }
  }
  expect /= double(trajs.size());

  std::vector<const Trajectory*> mb;
  std::vector<const Advantages*> ma;
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    mb.push_back(&trajs[i]);
    ma.push_back(&advs[i]);
  }
  SgdMomentum<double> opt(0.0, 0.0);
  PpoStats st = ppo_update(f.policy, mb, ma, eps, opt);
  CHECK(st.objective == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("non-finite ratios drop the trajectory and count it") {
  AgentFixture f;
  auto trajs = f.collect(2, 1, 888);
  auto advs = advantages_for(trajs, 0.95, 0.95);
  trajs[0].steps[0].log_prob = -1e8;  // ratio overflows to inf

  std::vector<const Trajectory*> mb{&trajs[0], &trajs[1]};
  std::vector<const Advantages*> ma{&advs[0], &advs[1]};
  SgdMomentum<double> opt(1e-3, 0.9);
  PpoStats st = ppo_update(f.policy, mb, ma, 0.2, opt);
  CHECK(st.dropped == 1);
}

TEST_CASE("perception update with zero entropy weight is a plain supervised step") {
  Rng ra(71), rb(71);
  PerceptionModel<double> a(small_pcfg(), ra), b(small_pcfg(), rb);
  AgentFixture f;
  auto trajs = f.collect(2, 1, 313);
  std::vector<const Trajectory*> mb{&trajs[0], &trajs[1]};

  SgdMomentum<double> oa(1e-3, 0.9);
  percep_update(a, mb, 0.0, false, oa);

  // hand-rolled supervised step on the same minibatch
  b.params().zero_grad();
  for (const Trajectory* tp : mb) {
    Graph<double> g;
    Var<double> bel = g.value(b.initial_belief());
    Var<double> obj = g.value(Tensor<double>::scalar(0.0));
    for (const StepRecord& s : tp->steps) {
      auto st = b.step(g, bel, g.value(s.obs.cast<double>()));
      bel = st.belief;
      obj = add(obj, cross_entropy_logits(st.logits, tp->label));
    }
    g.backward(scale(obj, 0.5));
  }
  SgdMomentum<double> ob(1e-3, 0.9);
  ob.step(b.params());

  for (std::size_t i = 0; i < a.params().all().size(); ++i)
    CHECK(a.params().all()[i]->value.data == b.params().all()[i]->value.data);
}

TEST_CASE("huge entropy weight aligns the update with the entropy gradient") {
  EnvConfig env = small_env();
  std::vector<Scene> scenes = small_dataset(44);
  Rng rng(12);
  PerceptionModel<double> m(small_pcfg(), rng);

  // brief pretraining pushes predictions off uniform so the entropy term has a
  // non-negligible gradient
  TrainConfig pre;
  pre.horizon = 2;
  pre.offline_episodes = 8;
  pre.offline_epochs = 4;
  pre.minibatch = 4;
  pre.lr_offline = 3e-3;
  pre.r_patch = 0.0;
  pre.seed = 19;
  PatchBank empty_bank;
  offline_pretrain(m, scenes, empty_bank, env, pre);

  std::vector<Trajectory> trajs;
  for (int i = 0; i < 2; ++i)
    trajs.push_back(uniform_rollout(m, env, scenes[std::size_t(i)], nullptr, -1, 2,
                                    derive_seed(515, std::uint64_t(i))));
  std::vector<const Trajectory*> mb{&trajs[0], &trajs[1]};

  auto grads_for = [&](double lambda) {
    SgdMomentum<double> opt(0.0, 0.0);
    percep_update(m, mb, lambda, false, opt);
    std::vector<double> flat;
    for (auto* p : m.params().all())
      flat.insert(flat.end(), p->grad.data.begin(), p->grad.data.end());
    return flat;
  };
  std::vector<double> g_big = grads_for(1e6);
  std::vector<double> g_ce = grads_for(0.0);
  double dot = 0, nb = 0, ne = 0;
  for (std::size_t i = 0; i < g_big.size(); ++i) {
    double ent_i = g_big[i] - g_ce[i];  // lambda-scaled entropy component
    dot += g_big[i] * ent_i;
    nb += g_big[i] * g_big[i];
    ne += ent_i * ent_i;
  }
  CHECK(dot / std::sqrt(nb * ne) > 0.99);
}

TEST_CASE("offline pretraining: no-op epochs, reproducible curve, divergence guard") {
  EnvConfig env = small_env();
  std::vector<Scene> scenes = small_dataset(55);
  PatchBank empty_bank;

  TrainConfig cfg;
  cfg.horizon = 2;
  cfg.offline_episodes = 6;
  cfg.offline_epochs = 0;
  cfg.minibatch = 3;
  cfg.seed = 7;

  Rng r1(99);
  PerceptionModel<float> m(small_pcfg(), r1);
  std::vector<float> before = m.params().all()[0]->value.data;
  OfflineResult res = offline_pretrain(m, scenes, empty_bank, env, cfg);
  CHECK(res.epoch_loss.empty());
  CHECK(m.params().all()[0]->value.data == before);

  cfg.offline_epochs = 3;
  Rng r2(99), r3(99);
  PerceptionModel<float> m2(small_pcfg(), r2), m3(small_pcfg(), r3);
  OfflineResult a = offline_pretrain(m2, scenes, empty_bank, env, cfg);
  OfflineResult b = offline_pretrain(m3, scenes, empty_bank, env, cfg);
  REQUIRE(a.epoch_loss.size() == 3);
  CHECK(a.epoch_loss == b.epoch_loss);
  CHECK(a.episodes_collected == 6);
  for (double l : a.epoch_loss) CHECK(std::isfinite(l));

  // absurd learning rate forces divergence -> abort with diagnostics
  cfg.lr_offline = 1e6;
  cfg.offline_epochs = 10;
  Rng r4(99);
  PerceptionModel<float> m4(small_pcfg(), r4);
  CHECK_THROWS_WITH_AS(offline_pretrain(m4, scenes, empty_bank, env, cfg),
                       doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("online training refuses to run before offline pretraining") {
  EnvConfig env = small_env();
  std::vector<Scene> scenes = small_dataset(66);
  PatchBank bank;
  Rng r(11);
  PerceptionModel<float> m(small_pcfg(), r);
  PolicyModel<float> pi(PolicyConfig{}, r);
  TrainConfig cfg;
  cfg.iterations = 1;
  CHECK_THROWS_WITH_AS(online_train(m, pi, scenes, bank, env, cfg, false),
                       doctest::Contains("pretrained"), std::runtime_error);
}

TEST_CASE("online training: zero iterations is a no-op, short runs are deterministic") {
  EnvConfig env = small_env();
  std::vector<Scene> scenes = small_dataset(77);
  PatchBank bank;
  TrainConfig cfg;
  cfg.horizon = 2;
  cfg.iterations = 0;
  cfg.episodes_per_iter = 4;
  cfg.minibatch = 2;
  cfg.seed = 3;

  Rng r1(22);
  PerceptionModel<float> m1(small_pcfg(), r1);
  PolicyModel<float> p1(PolicyConfig{}, r1);
  std::vector<float> before = m1.params().all()[0]->value.data;
  OnlineResult none = online_train(m1, p1, scenes, bank, env, cfg, true);
  CHECK(none.metrics.empty());
  CHECK(m1.params().all()[0]->value.data == before);

  cfg.iterations = 2;
  std::remove("metrics_t.csv");
  auto run = [&](std::uint64_t init_seed, const std::string& csv) {
    Rng r(init_seed);
    PerceptionModel<float> m(small_pcfg(), r);
    PolicyModel<float> p(PolicyConfig{}, r);
    return online_train(m, p, scenes, bank, env, cfg, true, false, csv);
  };
  OnlineResult a = run(22, "metrics_t.csv");
  OnlineResult b = run(22, "");
  REQUIRE(a.metrics.size() == 2);
  REQUIRE(b.metrics.size() == 2);
  auto same = [](double x, double y) {
    return x == y || (std::isnan(x) && std::isnan(y));
  };
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(same(a.metrics[i].mean_return, b.metrics[i].mean_return));
    CHECK(same(a.metrics[i].mean_final_loss, b.metrics[i].mean_final_loss));
    CHECK(same(a.metrics[i].mean_entropy, b.metrics[i].mean_entropy));
    CHECK(same(a.metrics[i].clean_acc, b.metrics[i].clean_acc));
    CHECK(same(a.metrics[i].patched_acc, b.metrics[i].patched_acc));
    CHECK(std::isfinite(a.metrics[i].mean_final_loss));
  }

  std::ifstream csv("metrics_t.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == kMetricsHeader);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 2);
  std::remove("metrics_t.csv");
}
