// Trajectory-balance training of the forward policy and log Z, with the four
// backward-policy regimes and a replay buffer of sampled terminals.
#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "synflow/mdp.hpp"
#include "synflow/numerics.hpp"
#include "synflow/policy.hpp"
#include "synflow/rewards.hpp"

namespace synflow::train {

enum class BackwardMode { Uniform, Free, MaxLikelihood, Reinforce };

std::string backward_mode_name(BackwardMode mode);
/// Accepts "uniform", "free", "maxlikelihood" (or "mle"), "reinforce".
BackwardMode parse_backward_mode(const std::string& name);

struct TrainConfig {
  int batch_size = 64;
  int steps = 1000;
  double lr_pf = 1e-4;
  double lr_pb = 1e-4;
  double lr_z = 1e-3;
  double beta = 1.0;
  BackwardMode backward_mode = BackwardMode::Uniform;
  double alpha = 1.0;
  int replay_capacity = 10000;
  double reward_floor = 1e-8;
  /// Subtract the batch-mean backward reward in REINFORCE.
  bool reinforce_baseline = true;
  /// Backward rollouts per REINFORCE update; <= 0 means batch_size / 2.
  int backward_rollouts = 0;
  /// Let the TB step also update P_B (always on in Free mode).
  bool train_pb_in_tb = false;
  double logz_init = 0.0;
  /// Steps between solved-rate evaluations (the CSV carries the last value).
  int eval_every = 10;
  /// Steps between checkpoints; 0 writes only the final one.
  int checkpoint_every = 0;

  /// Throws ContractViolation naming the offending field.
  void validate() const;
  int rollouts_per_update() const { return backward_rollouts > 0 ? backward_rollouts : batch_size / 2; }
};

/// (logZ + sum log P_F - beta log max(R, floor) - sum log P_B)^2.
double tb_loss(double log_z, double sum_log_pf, double reward, double sum_log_pb, double beta,
               double reward_floor = 1e-8);

/// beta * log max(R, floor). Throws ContractViolation for negative or non-finite R.
double log_reward(double reward, double beta, double reward_floor);

/// Bounded FIFO of sampled terminal trajectories.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(mdp::Trajectory traj);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const mdp::Trajectory& at(std::size_t i) const { return items_[i]; }
  /// n terminals drawn uniformly with replacement.
  std::vector<std::string> sample_terminals(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<mdp::Trajectory> items_;
};

struct StepMetrics {
  int step = 0;
  double tb_loss = 0.0;
  double log_z = 0.0;
  double mean_reward = 0.0;
  double backward_reward_mean = 0.0;
  double solved_rate = 0.0;
  int modes_count = 0;
};

class Trainer {
 public:
  Trainer(const mdp::Env& env, rewards::RewardFn reward, TrainConfig config, policy::PolicyConfig policy_config,
          std::uint64_t seed);

  const mdp::Env& env() const { return env_; }
  const TrainConfig& config() const { return config_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }
  const policy::ForwardPolicy& forward_policy() const { return *pf_; }
  const policy::BackwardPolicy& backward_policy() const { return *pb_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  double log_z() const;
  int steps_done() const { return step_; }
  /// Canonical SMILES of every terminal sampled during training.
  const std::set<std::string>& seen_terminals() const { return seen_; }

  /// Cached reward of a canonical SMILES (before the exponent).
  double reward(const std::string& smiles);

  /// Mean TB loss over the batch on `tape`; P_B enters with gradients only
  /// when it is updated in the TB step.
  nn::Var tb_loss_graph(nn::Tape& tape, const std::vector<mdp::Trajectory>& batch,
                        const std::vector<double>& rewards) const;
  /// One Adam step on the mean TB loss; returns the loss.
  double tb_update(const std::vector<mdp::Trajectory>& batch, const std::vector<double>& rewards);
  /// One Adam step on mean(-sum log P_B) over the batch; returns that mean.
  double mle_update(const std::vector<mdp::Trajectory>& batch);
  /// One REINFORCE step on P_B. Forward trajectories count as successes.
  /// Returns the mean backward reward of the rollouts.
  double reinforce_update(const std::vector<mdp::BackwardRollout>& rollouts,
                          const std::vector<mdp::Trajectory>& forward);

  /// Sample, TB update, backward update.
  StepMetrics step();
  /// Runs the remaining steps, writing metrics.csv and checkpoints into
  /// `out_dir` when given.
  std::vector<StepMetrics> run(const std::optional<std::filesystem::path>& out_dir = std::nullopt);

  /// JSON manifest stored as checkpoint metadata.
  std::string manifest() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::vector<mdp::BackStep>> back_steps(const std::vector<mdp::Trajectory>& batch) const;
  void update(nn::Var loss, nn::Tape& tape, const nn::AdamConfig& adam);

  const mdp::Env& env_;
  rewards::RewardFn reward_fn_;
  TrainConfig config_;
  policy::PolicyConfig policy_config_;
  std::uint64_t seed_;
  Rng rng_;
  nn::ParamStore store_;
  std::unique_ptr<policy::ForwardPolicy> pf_;
  std::unique_ptr<policy::BackwardPolicy> pb_;
  ReplayBuffer buffer_;
  std::map<std::string, double> reward_cache_;
  std::set<std::string> seen_;
  int step_ = 0;
  double last_solved_ = 0.0;
  double last_backward_reward_ = 0.0;
};

/// Writes the metrics header and rows with fixed formatting.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);
  void write(const StepMetrics& m);

 private:
  std::ofstream out_;
};

std::string format_metrics_row(const StepMetrics& m);
inline constexpr const char* kMetricsHeader = "step,tb_loss,logZ,mean_reward,backward_reward_mean,solved_rate,modes_count";

/// Recreates the policies described by a checkpoint manifest and loads its values.
struct LoadedModel {
  nn::ParamStore store;
  policy::PolicyConfig policy_config;
  BackwardMode backward_mode = BackwardMode::Uniform;
  std::unique_ptr<policy::ForwardPolicy> pf;
  std::unique_ptr<policy::BackwardPolicy> pb;
  double log_z = 0.0;
};
/// Throws Error when the checkpoint was written for a different env.
std::unique_ptr<LoadedModel> load_model(const mdp::Env& env, const std::filesystem::path& checkpoint);

/// Replaces every trainable bias (names ending in ".b") with N(0, scale^2)
/// draws, moving ReLU pre-activations of all-zero feature rows off the kink
/// so that finite differences are meaningful.
void jitter_biases(nn::ParamStore& store, Rng& rng, double scale);

inline constexpr const char* kLogZName = "z.logZ";

}  // namespace synflow::train
