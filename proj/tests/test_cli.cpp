#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "b2diff_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(B2DIFF_CLI_PATH) + " " + args + " > " +
                          (work_dir() / "stdout.txt").string() + " 2> " + (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

fs::path write_config(const std::string& name, const std::string& body) {
  const auto p = work_dir() / name;
  std::ofstream(p) << body;
  return p;
}

const char* kSmall = R"({
  "batch_size": 2, "batch_count": 2, "train_batch_size": 2, "grad_accum_steps": 2,
  "baseline_grad_accum_steps": 4, "rounds": 3, "eval_samples": 32,
  "network": {"hidden_dims": [16, 16], "t_embed_dim": 4, "c_embed_dim": 3},
  "world": {"ring": {"count": 4, "radius": 2.0, "scale": 0.5}},
  "pretrain": {"steps": 30, "batch_size": 16},
  "branch_stats": {"timesteps": [2, 10, 20], "branches": 8, "num_branches": 3},
  "base_checkpoint": "pre/pretrained.ckpt"
})";

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("eval --bogus-flag") == 2);
  const auto bad = write_config("bad.json", R"({"learning_rat": 1})");
  CHECK(run("eval --config " + bad.string()) == 2);
  CHECK(read_file(work_dir() / "stderr.txt").find("learning_rat") != std::string::npos);
  const auto cfg = write_config("small.json", kSmall);
  CHECK(run("finetune --config " + cfg.string() + " --algo nope") == 2);
  CHECK(run("eval --config " + cfg.string() + " --resume " + (work_dir() / "none.ckpt").string()) == 2);
  std::ofstream(work_dir() / "junk.ckpt") << "not a checkpoint";
  CHECK(run("eval --config " + cfg.string() + " --resume " + (work_dir() / "junk.ckpt").string()) == 2);
}

TEST_CASE("pretrain, finetune, eval, export") {
  const auto cfg = write_config("small.json", kSmall).string();
  const auto d = work_dir();
  REQUIRE(run("pretrain --config " + cfg + " --out " + (d / "pre").string()) == 0);
  CHECK(fs::exists(d / "pre" / "pretrained.ckpt"));
  CHECK(read_file(d / "stdout.txt").find("hit_rate") != std::string::npos);

  const auto run_dir = (d / "run").string();
  REQUIRE(run("finetune --config " + cfg + " --seed 3 --out " + run_dir) == 0);
  CHECK(count_lines(d / "run" / "metrics.jsonl") == 3);
  CHECK(fs::exists(d / "run" / "final.ckpt"));
  CHECK(fs::exists(d / "run" / "config.resolved.json"));

  // A second run into the same directory starts a fresh log.
  REQUIRE(run("finetune --config " + cfg + " --seed 3 --out " + run_dir) == 0);
  CHECK(count_lines(d / "run" / "metrics.jsonl") == 3);

  REQUIRE(run("export-metrics --out " + run_dir) == 0);
  CHECK(count_lines(d / "run" / "metrics.csv") == 4);
  CHECK(read_file(d / "run" / "metrics.csv").rfind("round,tau,mean_reward,inception_score\n", 0) == 0);

  REQUIRE(run("eval --config " + cfg + " --resume " + (d / "run" / "final.ckpt").string()) == 0);
  CHECK(read_file(d / "stdout.txt").find("inception_score") != std::string::npos);

  REQUIRE(run("branch-stats --config " + cfg) == 0);
  CHECK(read_file(d / "stdout.txt").find("proportions") != std::string::npos);

  for (const char* algo : {"bpt-ppo", "ddpo-baseline", "pg", "dpok", "dpo"}) {
    CHECK(run("finetune --config " + cfg + " --algo " + algo + " --out " + (d / algo).string()) == 0);
    CHECK(count_lines(d / algo / "metrics.jsonl") == 3);
  }
}

TEST_CASE("unreachable remote scorer exits with 3") {
  const auto cfg = write_config("small.json", kSmall).string();
  const auto d = work_dir();
  if (!fs::exists(d / "pre" / "pretrained.ckpt"))
    REQUIRE(run("pretrain --config " + cfg + " --out " + (d / "pre").string()) == 0);
  const auto cfg_remote = write_config("remote.json", std::string(kSmall).replace(
      std::string(kSmall).rfind('}'), 1, R"(, "remote_timeout_ms": 200, "remote_retries": 0})"));
  CHECK(run("finetune --config " + cfg_remote.string() + " --reward remote:http://127.0.0.1:9 --out " +
            (d / "remote").string()) == 3);
  CHECK(fs::exists(d / "remote" / "last.ckpt"));
  CHECK(run("eval --config " + cfg_remote.string() + " --reward remote:http://127.0.0.1:9") == 3);
}
