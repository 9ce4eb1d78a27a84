// Run configuration: TOML loading with defaults, validation and unknown-key
// rejection.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "synflow/mdp.hpp"
#include "synflow/policy.hpp"
#include "synflow/rewards.hpp"
#include "synflow/training.hpp"

namespace synflow::config {

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct EnvConfig {
  std::filesystem::path building_blocks;
  std::filesystem::path templates;
  mdp::EnvOptions options;
};

struct RewardConfig {
  /// constant, rediscovery, scaled_affinity, external or product.
  std::string kind = "constant";
  std::string target;
  std::filesystem::path table;
  std::optional<double> missing_default;
  double scale_min = -1.0;
  double scale_max = -10.0;
  std::optional<int> ref_heavy_atoms;
  int allowance = 8;
  std::vector<RewardConfig> factors;
};

struct EvalConfig {
  int samples = 1000;
  double temperature = 1.0;
  double reward_threshold = 0.9;
  int top_k = 10;
  std::optional<std::filesystem::path> reference;
  int rollouts_per_mol = 1;
  int test_samples = 2000;
  std::optional<std::filesystem::path> train_terminals;
  int gradcheck_seeds = 20;
  int gradcheck_batch = 4;
  double gradcheck_h = 1e-4;
  int gradcheck_coords = 8;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  int threads = 1;
  EnvConfig env;
  train::TrainConfig train;
  policy::PolicyConfig policy;
  RewardConfig reward;
  EvalConfig eval;
};

/// Relative paths resolve against `base_dir`. Throws ConfigError naming the
/// key on unknown keys, type mismatches and invalid values.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir, bool check_files = true);
/// Reads and parses a TOML file; paths resolve against its directory.
RunConfig load_config(const std::filesystem::path& path);

rewards::RewardFn build_reward(const RewardConfig& rc);
mdp::Env load_env(const EnvConfig& config);

}  // namespace synflow::config
