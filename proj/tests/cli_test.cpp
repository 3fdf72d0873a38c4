#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "patchdef_cli_test";

int run(const std::string& args) {
  std::string cmd = std::string(PATCHDEF_BIN) + " " + args + " >/dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// seconds-scale pipeline: tiny everything
const char* kTinyConfig = R"([dataset]
per_class = 2
[env]
image_size = 16
focal = 22.4
[model]
d_e = 24
d_b = 24
nce_dim = 12
policy_hidden = 12
[attack]
iterations = 2
eot_samples = 2
[bank]
size = 2
noise_frac = 0
[train]
horizon = 2
iterations = 1
episodes_per_iter = 4
minibatch = 4
offline_episodes = 8
offline_epochs = 2
[eval]
episodes = 4
[run]
out_dir = )";

struct CliFixture {
  fs::path cfg_path = kWork / "tiny.ini";

  CliFixture() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    std::ofstream(cfg_path) << kTinyConfig << (kWork / "run").string() << "\n";
  }
  static CliFixture& get() {
    static CliFixture f;
    return f;
  }
  std::string base() const { return "--config " + cfg_path.string(); }
  fs::path out(const char* name) const { return kWork / "run" / name; }
};

}  // namespace

TEST_CASE("verify-oracles exits 0 on a clean build") {
  CHECK(run("verify-oracles") == 0);
}

TEST_CASE("evaluate without a checkpoint is a usage error") {
  CliFixture& f = CliFixture::get();
  CHECK(run("evaluate " + f.base()) != 0);
}

TEST_CASE("unknown config keys are fatal") {
  CliFixture& f = CliFixture::get();
  CHECK(run("gen-dataset " + f.base() + " --override eval.bogus=3") != 0);
  CHECK(run("gen-dataset " + f.base() + " --override bogus.key=3") != 0);
}

TEST_CASE("full pipeline produces every artifact") {
  CliFixture& f = CliFixture::get();
  REQUIRE(run("gen-dataset " + f.base()) == 0);
  CHECK(fs::exists(f.out("dataset/dataset.txt")));
  CHECK(fs::exists(f.out("dataset/scene_000_class0.ppm")));

  REQUIRE(run("train-offline " + f.base()) == 0);
  CHECK(fs::exists(f.out("offline.ckpt")));
  CHECK(fs::exists(f.out("offline_loss.csv")));

  REQUIRE(run("build-patch-bank " + f.base()) == 0);
  CHECK(fs::exists(f.out("patch_bank.bin")));

  REQUIRE(run("train-online " + f.base()) == 0);
  CHECK(fs::exists(f.out("agent.ckpt")));
  std::string metrics = slurp(f.out("metrics.csv"));
  CHECK(metrics.rfind("iteration,mean_return,", 0) == 0);

  std::string eval_cmd =
      "evaluate " + f.base() + " --checkpoint " + f.out("agent.ckpt").string();
  REQUIRE(run(eval_cmd) == 0);
  std::string report = slurp(f.out("eval_report.txt"));
  CHECK(report.find("clean.accuracy=") != std::string::npos);
  CHECK(report.find("attack.pgd.") != std::string::npos);
  CHECK(report.find("attack.bank.") != std::string::npos);
  CHECK(report.find("checkpoint_hash=") != std::string::npos);

  // repeat run: identical evaluation outputs (the reproducibility contract)
  std::string ep1 = slurp(f.out("eval_episodes.csv"));
  REQUIRE(run(eval_cmd) == 0);
  CHECK(slurp(f.out("eval_report.txt")) == report);
  CHECK(slurp(f.out("eval_episodes.csv")) == ep1);

  REQUIRE(run("attack " + f.base() + " --checkpoint " +
              f.out("agent.ckpt").string()) == 0);
  CHECK(fs::exists(f.out("attack_summary.csv")));
  CHECK(fs::exists(f.out("patches/patch_000.ppm")));

  REQUIRE(run("render-debug " + f.base() + " --checkpoint " +
              f.out("agent.ckpt").string()) == 0);
  CHECK(fs::exists(f.out("render/step_00.ppm")));
  CHECK(fs::exists(f.out("render/step_02.ppm")));

  // config-hash mismatch on load is a warning, not an error
  CHECK(run("evaluate " + f.base() + " --checkpoint " +
            f.out("agent.ckpt").string() + " --override train.gamma=0.9") == 0);
}

TEST_CASE("seed flag overrides the config seed") {
  CliFixture& f = CliFixture::get();
  CHECK(run("verify-oracles " + f.base() + " --seed 9") == 0);
}
