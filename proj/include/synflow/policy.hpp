// Hierarchical forward/backward policies over fingerprint state features,
// with the fingerprint dot-product building-block selector.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "synflow/mdp.hpp"
#include "synflow/numerics.hpp"

namespace synflow::policy {

/// Fingerprint: the BB matrix holds the building blocks' fingerprints and is
/// never trained. Embedding: the BB matrix is a learnable parameter.
enum class BbMode { Fingerprint, Embedding };

struct PolicyConfig {
  int hidden = 128;
  BbMode bb_mode = BbMode::Fingerprint;
  /// BB logits from cosine similarity times cosine_scale instead of q.B / sqrt(nbits).
  bool cosine = false;
  double cosine_scale = 10.0;
  /// All weights zero: uniform over legal actions.
  bool zero_init = false;
  /// Weights drawn from N(0, init_gain^2 / fan_in).
  double init_gain = 1.0;
};

/// Fingerprint bits of the molecule (zeros for s0) followed by steps / L.
std::vector<double> state_features(const mdp::Env& env, const mdp::State& state);

/// Log-probabilities at one state. Masked entries are -inf.
struct ForwardDistribution {
  /// [stop, uni..., bi...]; empty in s0.
  std::vector<double> top;
  /// Over building blocks; only in s0.
  std::vector<double> first;
  /// Per legal bimolecular template position, over building blocks.
  std::map<int, std::vector<double>> add_reactant;
};

class ForwardPolicy {
 public:
  ForwardPolicy(const mdp::Env& env, const PolicyConfig& config, nn::ParamStore& store, Rng& rng,
                std::string prefix = "pf");

  const mdp::Env& env() const { return env_; }
  nn::ParamStore& store() const { return store_; }
  const PolicyConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  std::string bb_matrix_name() const { return prefix_ + ".bb_matrix"; }

  nn::Var embed(nn::Tape& tape, const std::vector<mdp::State>& states) const;
  /// Row-wise log-softmax over [stop, uni..., bi...]; mask is row-major.
  nn::Var top_logprobs(nn::Tape& tape, nn::Var emb, const std::vector<std::uint8_t>& mask) const;
  /// AddFirstReactant distribution over building blocks.
  nn::Var first_logprobs(nn::Tape& tape, nn::Var emb, const std::vector<std::uint8_t>& mask) const;
  /// AddReactant distribution for (emb row, bimolecular template position) pairs.
  nn::Var add_reactant_logprobs(nn::Tape& tape, nn::Var emb, const std::vector<int>& rows,
                                const std::vector<int>& bi_positions, const std::vector<std::uint8_t>& mask) const;

  /// Sum of log P_F over each trajectory's actions, as an n x 1 column.
  nn::Var trajectory_logprobs(nn::Tape& tape, const std::vector<const mdp::Trajectory*>& trajs) const;

  ForwardDistribution distribution(const mdp::State& state) const;

 private:
  nn::Var bb_logits(nn::Tape& tape, nn::Var query) const;

  const mdp::Env& env_;
  nn::ParamStore& store_;
  PolicyConfig config_;
  std::string prefix_;
};

class BackwardPolicy {
 public:
  /// Learned backward policy with parameters under `prefix`.
  BackwardPolicy(const mdp::Env& env, const PolicyConfig& config, nn::ParamStore& store, Rng& rng,
                 std::string prefix = "pb");
  /// The uniform backward policy (no parameters).
  static BackwardPolicy uniform(const mdp::Env& env);

  bool is_uniform() const { return store_ == nullptr; }
  /// Null for the uniform policy.
  nn::ParamStore* store() const { return store_; }
  const mdp::Env& env() const { return env_; }
  const std::string& prefix() const { return prefix_; }

  /// Log-probabilities over [uni..., bi..., remove] at each (molecule, from_terminal).
  std::vector<std::vector<double>> distributions(const std::vector<std::pair<std::string, bool>>& states) const;
  std::vector<double> distribution(const mdp::State& state, bool from_terminal = false) const;

  /// Sum of log P_B (including set and tie factors) per step list, as an n x 1
  /// column. Constant (no gradient) for the uniform policy.
  nn::Var trajectory_logprobs(nn::Tape& tape, const std::vector<const std::vector<mdp::BackStep>*>& steps) const;

 private:
  explicit BackwardPolicy(const mdp::Env& env) : env_(env) {}
  nn::Var logits(nn::Tape& tape, const std::vector<std::pair<std::string, bool>>& states) const;

  const mdp::Env& env_;
  nn::ParamStore* store_ = nullptr;
  PolicyConfig config_;
  std::string prefix_;
};

/// Sum over steps of -ln(#legal backward actions) plus set and tie factors.
double uniform_backward_logprob(const mdp::Env& env, const std::vector<mdp::BackStep>& steps);

/// Index drawn from log-probabilities at temperature T (T = 1: the policy;
/// T = 0: first argmax; otherwise proportional to p^(1/T)).
std::size_t sample_index(std::span<const double> logprobs, double temperature, Rng& rng);

/// n forward rollouts sampled in lockstep from s0 to a terminal state.
/// fwd_logprobs hold the policy's (untempered) log-probabilities; when `pb`
/// is given, bck_logprobs hold log P_B of each realized reverse transition.
std::vector<mdp::Trajectory> sample_forward(const ForwardPolicy& pf, const BackwardPolicy* pb, int n, Rng& rng,
                                            double temperature = 1.0);
mdp::Trajectory rollout_forward(const ForwardPolicy& pf, const BackwardPolicy* pb, Rng& rng,
                                double temperature = 1.0);

/// Backward rollouts from each terminal until s0 (success), an all-false mask
/// or `max_backsteps` steps (failure).
std::vector<mdp::BackwardRollout> sample_backward(const BackwardPolicy& pb, const std::vector<std::string>& terminals,
                                                  Rng& rng, int max_backsteps);
mdp::BackwardRollout rollout_backward(const BackwardPolicy& pb, const std::string& terminal, Rng& rng,
                                      int max_backsteps);

/// (sum log P_F, sum log P_B) of a complete trajectory.
std::pair<double, double> trajectory_logprob(const ForwardPolicy& pf, const BackwardPolicy& pb,
                                             const mdp::Trajectory& traj);

}  // namespace synflow::policy
