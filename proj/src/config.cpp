#include "patchdef/config.hpp"

#include <climits>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "patchdef/checkpoint.hpp"

namespace patchdef {

namespace {

enum class Kind { Int, Dbl, Bool, U64, Str };

struct Field {
  const char* name;  // "section.key"
  Kind kind;
  void* ptr;
};

std::vector<Field> schema(ExperimentConfig& c) {
  return {
      {"dataset.classes", Kind::Int, &c.dataset.n_classes},
      {"dataset.per_class", Kind::Int, &c.dataset.per_class},
      {"dataset.texture_size", Kind::Int, &c.dataset.texture_size},
      {"dataset.patch_area_frac", Kind::Dbl, &c.dataset.patch_area_frac},
      {"dataset.seed", Kind::U64, &c.dataset_seed},
      {"env.h_min", Kind::Dbl, &c.h_min},
      {"env.h_max", Kind::Dbl, &c.h_max},
      {"env.v_min", Kind::Dbl, &c.v_min},
      {"env.v_max", Kind::Dbl, &c.v_max},
      {"env.cap_frac", Kind::Dbl, &c.cap_frac},
      {"env.radius", Kind::Dbl, &c.radius},
      {"env.image_size", Kind::Int, &c.image_size},
      {"env.focal", Kind::Dbl, &c.focal},
      {"model.d_e", Kind::Int, &c.d_e},
      {"model.d_b", Kind::Int, &c.d_b},
      {"model.nce_dim", Kind::Int, &c.nce_dim},
      {"model.policy_hidden", Kind::Int, &c.policy_hidden},
      {"model.sigma_frac", Kind::Dbl, &c.sigma_frac},
      {"attack.method", Kind::Str, &c.attack_method},
      {"attack.iterations", Kind::Int, &c.attack.iterations},
      {"attack.alpha", Kind::Dbl, &c.attack.alpha},
      {"attack.momentum", Kind::Dbl, &c.attack.momentum},
      {"attack.eot_samples", Kind::Int, &c.attack.eot_samples},
      {"attack.horizon", Kind::Int, &c.attack.horizon},
      {"attack.target_class", Kind::Int, &c.attack.target_class},
      {"bank.size", Kind::Int, &c.bank.bank_size},
      {"bank.noise_frac", Kind::Dbl, &c.bank.noise_frac},
      {"bank.noise_std", Kind::Dbl, &c.bank.noise_std},
      {"train.horizon", Kind::Int, &c.train.horizon},
      {"train.gamma", Kind::Dbl, &c.train.gamma},
      {"train.lambda_entropy", Kind::Dbl, &c.train.lambda_entropy},
      {"train.clip_eps", Kind::Dbl, &c.train.clip_eps},
      {"train.epochs", Kind::Int, &c.train.epochs},
      {"train.iterations", Kind::Int, &c.train.iterations},
      {"train.episodes_per_iter", Kind::Int, &c.train.episodes_per_iter},
      {"train.minibatch", Kind::Int, &c.train.minibatch},
      {"train.lr_offline", Kind::Dbl, &c.train.lr_offline},
      {"train.lr_online", Kind::Dbl, &c.train.lr_online},
      {"train.gae_lambda", Kind::Dbl, &c.train.gae_lambda},
      {"train.r_patch", Kind::Dbl, &c.train.r_patch},
      {"train.reward_mode", Kind::Str, &c.reward_mode},
      {"train.kappa", Kind::Dbl, &c.train.kappa},
      {"train.entropy_final_only", Kind::Bool, &c.train.entropy_final_only},
      {"train.offline_episodes", Kind::Int, &c.train.offline_episodes},
      {"train.offline_epochs", Kind::Int, &c.train.offline_epochs},
      {"train.noise_patch_std", Kind::Dbl, &c.train.noise_patch_std},
      {"eval.episodes", Kind::Int, &c.eval_episodes},
      {"eval.horizon", Kind::Int, &c.eval_horizon},
      {"eval.mode", Kind::Str, &c.eval_mode},
      {"eval.attacks", Kind::Str, &c.eval_attacks},
      {"run.seed", Kind::U64, &c.seed},
      {"run.out_dir", Kind::Str, &c.out_dir},
  };
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw std::invalid_argument("config: " + what + " (" + where + ")");
}

void assign(const Field& f, const std::string& raw, const std::string& where) {
  std::string v = trim(raw);
  const char* s = v.c_str();
  char* end = nullptr;
  switch (f.kind) {
    case Kind::Int: {
      long x = std::strtol(s, &end, 10);
      if (v.empty() || *end != '\0' || x < INT_MIN || x > INT_MAX)
        fail(where, "expected an integer for " + std::string(f.name) +
                        ", got '" + v + "'");
      *static_cast<int*>(f.ptr) = int(x);
      break;
    }
    case Kind::Dbl: {
      double x = std::strtod(s, &end);
      if (v.empty() || *end != '\0')
        fail(where, "expected a number for " + std::string(f.name) + ", got '" +
                        v + "'");
      *static_cast<double*>(f.ptr) = x;
      break;
    }
    case Kind::Bool: {
      if (v == "true" || v == "1")
        *static_cast<bool*>(f.ptr) = true;
      else if (v == "false" || v == "0")
        *static_cast<bool*>(f.ptr) = false;
      else
        fail(where, "expected true/false for " + std::string(f.name) + ", got '" +
                        v + "'");
      break;
    }
    case Kind::U64: {
      unsigned long long x = std::strtoull(s, &end, 10);
      if (v.empty() || *end != '\0' || v[0] == '-')
        fail(where, "expected an unsigned integer for " + std::string(f.name) +
                        ", got '" + v + "'");
      *static_cast<std::uint64_t*>(f.ptr) = std::uint64_t(x);
      break;
    }
    case Kind::Str:
      *static_cast<std::string*>(f.ptr) = v;
      break;
  }
}

const Field* find_field(const std::vector<Field>& fields, const std::string& name) {
  for (const Field& f : fields)
    if (name == f.name) return &f;
  return nullptr;
}

void apply_pair(const std::vector<Field>& fields, const std::string& name,
                const std::string& value, const std::string& where) {
  const Field* f = find_field(fields, name);
  if (!f) fail(where, "unknown key '" + name + "'");
  assign(*f, value, where);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  std::vector<Field> fields = schema(cfg);

  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    std::string where = "line " + std::to_string(lineno);
    if (t.front() == '[') {
      if (t.back() != ']') fail(where, "malformed section header '" + t + "'");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) fail(where, "empty section name");
      continue;
    }
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      fail(where, "expected key=value, got '" + t + "'");
    std::string key = trim(t.substr(0, eq));
    if (key.empty()) fail(where, "empty key");
    if (section.empty()) fail(where, "key '" + key + "' outside any [section]");
    apply_pair(fields, section + "." + key, t.substr(eq + 1), where);
  }

  for (const std::string& ov : overrides) {
    std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      fail("override '" + ov + "'", "expected section.key=value");
    apply_pair(fields, trim(ov.substr(0, eq)), ov.substr(eq + 1),
               "override '" + ov + "'");
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), overrides);
}

std::string canonical_text(const ExperimentConfig& cfg) {
  ExperimentConfig copy = cfg;
  std::ostringstream os;
  char buf[64];
  for (const Field& f : schema(copy)) {
    os << f.name << "=";
    switch (f.kind) {
      case Kind::Int: os << *static_cast<const int*>(f.ptr); break;
      case Kind::Dbl:
        std::snprintf(buf, sizeof buf, "%.17g", *static_cast<const double*>(f.ptr));
        os << buf;
        break;
      case Kind::Bool: os << (*static_cast<const bool*>(f.ptr) ? 1 : 0); break;
      case Kind::U64: os << *static_cast<const std::uint64_t*>(f.ptr); break;
      case Kind::Str: os << *static_cast<const std::string*>(f.ptr); break;
    }
    os << "\n";
  }
  return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  return fnv1a(canonical_text(cfg));
}

RewardMode parse_reward_mode(const std::string& name) {
  if (name == "uncertainty") return RewardMode::UncertaintyShaped;
  if (name == "entropy_deduction") return RewardMode::EntropyDeduction;
  if (name == "binary_outcome") return RewardMode::BinaryOutcome;
  throw std::invalid_argument(
      "config: unknown reward mode '" + name +
      "' (expected uncertainty, entropy_deduction, or binary_outcome)");
}

const char* reward_mode_name(RewardMode mode) {
  switch (mode) {
    case RewardMode::UncertaintyShaped: return "uncertainty";
    case RewardMode::EntropyDeduction: return "entropy_deduction";
    case RewardMode::BinaryOutcome: return "binary_outcome";
  }
  return "?";
}

EnvConfig ExperimentConfig::env() const {
  EnvConfig e;
  e.intr.res = image_size;
  e.intr.fx = e.intr.fy = focal;
  e.intr.cx = e.intr.cy = image_size / 2.0;
  e.radius = radius;
  e.bounds = ViewBounds{h_min, h_max, v_min, v_max};
  e.caps = ActionCaps::from_bounds(e.bounds, cap_frac);
  return e;
}

PerceptionConfig ExperimentConfig::perception() const {
  PerceptionConfig p;
  p.image_size = image_size;
  p.n_classes = dataset.n_classes;
  p.d_e = d_e;
  p.d_b = d_b;
  p.nce_dim = nce_dim;
  return p;
}

PolicyConfig ExperimentConfig::policy() const {
  PolicyConfig p;
  p.d_b = d_b;
  p.hidden = policy_hidden;
  p.caps = env().caps;
  p.sigma_frac = sigma_frac;
  return p;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t = train;
  t.reward_mode = parse_reward_mode(reward_mode);
  t.seed = seed;
  return t;
}

BankConfig ExperimentConfig::bank_config() const {
  BankConfig b = bank;
  b.attack = attack;
  return b;
}

void ExperimentConfig::validate() const {
  if (dataset.n_classes < 2 || dataset.n_classes > 8)
    throw std::invalid_argument("config: dataset.classes must lie in [2,8]");
  if (dataset.per_class < 1)
    throw std::invalid_argument("config: dataset.per_class must be >= 1");
  if (dataset.texture_size < 8)
    throw std::invalid_argument("config: dataset.texture_size must be >= 8");
  if (dataset.patch_area_frac <= 0.0 || dataset.patch_area_frac >= 1.0)
    throw std::invalid_argument("config: dataset.patch_area_frac must lie in (0,1)");
  if (h_min >= h_max || v_min >= v_max)
    throw std::invalid_argument("config: view bounds must satisfy min < max");
  if (cap_frac <= 0.0 || cap_frac > 1.0)
    throw std::invalid_argument("config: env.cap_frac must lie in (0,1]");
  if (radius <= 0.0)
    throw std::invalid_argument("config: env.radius must be positive");
  if (image_size < 8 || image_size % 8 != 0)
    throw std::invalid_argument("config: env.image_size must be a multiple of 8");
  if (focal <= 0.0) throw std::invalid_argument("config: env.focal must be positive");
  if (d_e < 1 || d_b < 1 || nce_dim < 1 || policy_hidden < 1)
    throw std::invalid_argument("config: model widths must be >= 1");
  if (sigma_frac <= 0.0)
    throw std::invalid_argument("config: model.sigma_frac must be positive");
  if (attack_method != "pgd" && attack_method != "fgsm" && attack_method != "mim" &&
      attack_method != "eot" && attack_method != "uniform_policy")
    throw std::invalid_argument("config: attack.method must be one of "
                                "pgd, fgsm, mim, eot, uniform_policy");
  attack.validate();
  if (bank.bank_size < 0)
    throw std::invalid_argument("config: bank.size must be >= 0");
  if (bank.noise_frac < 0.0 || bank.noise_frac > 1.0)
    throw std::invalid_argument("config: bank.noise_frac must lie in [0,1]");
  if (bank.noise_std < 0.0)
    throw std::invalid_argument("config: bank.noise_std must be >= 0");
  train_config().validate();  // also validates the reward-mode name
  if (eval_episodes < 1)
    throw std::invalid_argument("config: eval.episodes must be >= 1");
  if (eval_horizon < -1 || eval_horizon > kMaxHorizon)
    throw std::invalid_argument("config: eval.horizon must be in [-1, 16]");
  if (eval_mode != "final_step" && eval_mode != "uniform_steps")
    throw std::invalid_argument(
        "config: eval.mode must be final_step or uniform_steps");
  std::stringstream ss(eval_attacks);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::string a = trim(item);
    if (a.empty()) continue;
    if (a != "pgd" && a != "fgsm" && a != "mim" && a != "eot" && a != "uniform_policy")
      throw std::invalid_argument("config: eval.attacks entry '" + a +
                                  "' not one of pgd, fgsm, mim, eot, uniform_policy");
  }
}

}  // namespace patchdef
