#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "synflow/commands.hpp"
#include "test_support.hpp"

using namespace synflow;
using namespace synflow::config;
namespace fs = std::filesystem;

namespace {

const std::string kMinimal = R"(
[env]
building_blocks = "bbs.tsv"
templates = "templates.tsv"
)";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, ".", false);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

/// The tiny env's config, shortened for unit-test runtimes.
RunConfig tiny_config(const fs::path& out) {
  auto c = load_config(testing::data_dir() / "envs" / "tiny" / "config.toml");
  c.out = out;
  c.train.steps = 6;
  c.train.batch_size = 8;
  c.train.eval_every = 3;
  c.policy.hidden = 16;
  c.eval.samples = 40;
  c.eval.test_samples = 40;
  c.eval.gradcheck_seeds = 3;
  return c;
}

int run(const std::string& verb, const RunConfig& c, std::optional<fs::path> ckpt = std::nullopt) {
  std::ostringstream out;
  return commands::run_command(verb, c, commands::CommandOptions{std::move(ckpt)}, out);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("synflow_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config defaults") {
  const auto c = parse_config(kMinimal, "/base", false);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.lr_z == 1e-3);
  CHECK(c.train.lr_pf == 1e-4);
  CHECK(c.train.lr_pb == 1e-4);
  CHECK(c.train.beta == 1.0);
  CHECK(c.train.alpha == 1.0);
  CHECK(c.train.backward_mode == train::BackwardMode::Uniform);
  CHECK(c.seed == 0);
  CHECK(c.threads == 1);
  CHECK(c.env.building_blocks == fs::path("/base/bbs.tsv"));
  CHECK(c.reward.kind == "constant");
  CHECK(c.eval.top_k == 10);
}

TEST_CASE("config errors name the offending key") {
  CHECK(error_of(kMinimal + "[train]\nlr_pF = 0.1\n").find("unknown key 'train.lr_pF'") != std::string::npos);
  CHECK(error_of("bogus = 1\n" + kMinimal).find("unknown key 'bogus'") != std::string::npos);
  CHECK(error_of(kMinimal + "bogus = 1\n").find("unknown key 'env.bogus'") != std::string::npos);
  CHECK(error_of(kMinimal + "[train]\nsteps = \"many\"\n").find("train.steps") != std::string::npos);
  CHECK(error_of(kMinimal + "[train]\nbeta = 0.5\n").find("beta") != std::string::npos);
  CHECK(error_of(kMinimal + "[train]\nbackward_mode = \"sideways\"\n").find("backward_mode") != std::string::npos);
  CHECK(error_of(kMinimal + "[policy]\nbb_mode = \"graph\"\n").find("policy.bb_mode") != std::string::npos);
  CHECK(error_of("[env]\ntemplates = \"t.tsv\"\n").find("env.building_blocks") != std::string::npos);
  CHECK(error_of(kMinimal + "[reward]\nkind = \"rediscovery\"\n").find("target") != std::string::npos);
  CHECK_FALSE(error_of("[env\n").empty());
  // Integers are accepted where floats are expected.
  CHECK(parse_config(kMinimal + "[train]\nbeta = 4\n", ".", false).train.beta == 4.0);
  CHECK_FALSE(parse_config(kMinimal, ".", false).env.options.require_reversible);
  CHECK(parse_config(kMinimal + "[train]\nbackward_mode = \"reinforce\"\n", ".", false).env.options.require_reversible);
  CHECK_FALSE(parse_config(kMinimal + "require_reversible = false\n[train]\nbackward_mode = \"reinforce\"\n", ".", false)
                  .env.options.require_reversible);
  CHECK_THROWS_AS(parse_config(kMinimal, "/nonexistent", true), ConfigError);
}

TEST_CASE("bundled configs load") {
  for (const char* env : {"tiny", "count1", "count3", "trap"}) {
    CAPTURE(env);
    const auto c = load_config(testing::data_dir() / "envs" / env / "config.toml");
    CHECK(fs::exists(c.env.building_blocks));
  }
  CHECK(load_config(testing::data_dir() / "envs" / "trap" / "config.toml").train.backward_mode ==
        train::BackwardMode::MaxLikelihood);
}

TEST_CASE("enumerate reproduces the golden counts") {
  for (const char* env : {"tiny", "count1", "count3"}) {
    CAPTURE(env);
    const auto dir = testing::data_dir() / "envs" / env;
    auto c = load_config(dir / "config.toml");
    c.out = scratch(std::string("enumerate_") + env);
    CHECK(run("enumerate", c) == 0);
    CHECK(slurp(c.out / "count.txt") == slurp(dir / "terminal_count.txt"));
    fs::remove_all(c.out);
  }
}

TEST_CASE("train, sample, eval, routes and estimate-space on the tiny env") {
  const auto root = scratch("pipeline");
  auto c = tiny_config(root / "a");
  CHECK(run("train", c) == 0);
  const auto ckpt = c.out / "checkpoints" / "final.ckpt";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(c.out / "seen_terminals.txt"));

  auto again = tiny_config(root / "b");
  CHECK(run("train", again) == 0);
  CHECK(slurp(c.out / "metrics.csv") == slurp(again.out / "metrics.csv"));
  CHECK(slurp(ckpt) == slurp(again.out / "checkpoints" / "final.ckpt"));

  CHECK(run("sample", c, ckpt) == 0);
  const auto routes = mdp::read_routes(c.out / "routes.jsonl");
  CHECK(routes.size() == 40);
  mdp::export_routes(routes, root / "reexport.jsonl");
  CHECK(slurp(root / "reexport.jsonl") == slurp(c.out / "routes.jsonl"));
  CHECK_THROWS_AS(run("sample", c), Error);

  CHECK(run("eval", c, ckpt) == 0);
  const auto eval_csv = slurp(c.out / "eval.csv");
  CHECK(eval_csv.rfind("metric,value\nsamples,40\n", 0) == 0);
  CHECK(eval_csv.find("top_k_mean_reward,") != std::string::npos);
  CHECK(eval_csv.find("modes_count,") != std::string::npos);

  c.eval.train_terminals = c.out / "seen_terminals.txt";
  CHECK(run("routes", c, ckpt) == 0);
  const auto routes_csv = slurp(c.out / "routes.csv");
  CHECK(routes_csv.rfind("split,terminals,policy_solved_rate,uniform_solved_rate\ntrain,", 0) == 0);
  CHECK(routes_csv.find("\ntest,") != std::string::npos);

  CHECK(run("estimate-space", c, ckpt) == 0);
  CHECK(slurp(c.out / "estimate_space.csv").find(",29,") != std::string::npos);
  // Without a checkpoint it trains, which needs a constant reward.
  CHECK_THROWS_AS(run("estimate-space", c), Error);
  CHECK_THROWS_AS(run("fly", c), Error);
  fs::remove_all(root);
}

TEST_CASE("gradcheck command passes on the tiny env") {
  auto c = tiny_config(scratch("gradcheck"));
  c.train.backward_mode = train::BackwardMode::Free;
  CHECK(run("gradcheck", c) == 0);
  std::istringstream csv(slurp(c.out / "gradcheck.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "seed,max_rel_error,worst_param,coordinates,kinks");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(std::stod(line.substr(line.find(',') + 1)) <= 1e-4);
  }
  CHECK(rows == 3);
  fs::remove_all(c.out);
}

TEST_CASE("read_smiles_list canonicalizes and skips comments") {
  const auto p = fs::temp_directory_path() / "synflow_smiles_list.txt";
  std::ofstream(p) << "# header\nOCC\textra\n\n  c1ccccc1C\r\n";
  CHECK(commands::read_smiles_list(p) == std::vector<std::string>{testing::canon("CCO"), testing::canon("Cc1ccccc1")});
  fs::remove(p);
  CHECK_THROWS_AS(commands::read_smiles_list(p), Error);
}
