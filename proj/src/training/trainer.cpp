#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "synflow/eval.hpp"
#include "synflow/training.hpp"

namespace synflow::train {

using mdp::Trajectory;
using nn::Tape;
using nn::Var;

std::string backward_mode_name(BackwardMode mode) {
  switch (mode) {
    case BackwardMode::Uniform: return "uniform";
    case BackwardMode::Free: return "free";
    case BackwardMode::MaxLikelihood: return "maxlikelihood";
    case BackwardMode::Reinforce: return "reinforce";
  }
  throw Error("unknown backward mode");
}

BackwardMode parse_backward_mode(const std::string& name) {
  if (name == "uniform") return BackwardMode::Uniform;
  if (name == "free") return BackwardMode::Free;
  if (name == "maxlikelihood" || name == "mle") return BackwardMode::MaxLikelihood;
  if (name == "reinforce") return BackwardMode::Reinforce;
  throw Error("unknown backward_mode '" + name + "'");
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ContractViolation(std::string("invalid training config: ") + what);
  };
  need(batch_size >= 1, "batch_size must be >= 1");
  need(steps >= 0, "steps must be >= 0");
  need(lr_pf >= 0 && lr_pb >= 0 && lr_z >= 0, "learning rates must be >= 0");
  need(beta >= 1.0, "beta must be >= 1");
  need(alpha >= 0.0, "alpha must be >= 0");
  need(replay_capacity >= 1, "replay_capacity must be >= 1");
  need(reward_floor > 0.0, "reward_floor must be > 0");
  need(std::isfinite(logz_init), "logz_init must be finite");
  need(eval_every >= 1, "eval_every must be >= 1");
  need(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  need(backward_mode != BackwardMode::Reinforce || rollouts_per_update() >= 1, "REINFORCE needs backward rollouts");
}

double log_reward(double reward, double beta, double reward_floor) {
  if (!std::isfinite(reward) || reward < 0.0)
    throw ContractViolation("reward must be finite and nonnegative, got " + std::to_string(reward));
  return beta * std::log(std::max(reward, reward_floor));
}

double tb_loss(double log_z, double sum_log_pf, double reward, double sum_log_pb, double beta, double reward_floor) {
  const double d = log_z + sum_log_pf - log_reward(reward, beta, reward_floor) - sum_log_pb;
  return d * d;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ContractViolation("replay buffer capacity must be positive");
}

void ReplayBuffer::push(Trajectory traj) {
  if (!traj.complete()) throw ContractViolation("replay buffer holds complete trajectories only");
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(traj));
}

std::vector<std::string> ReplayBuffer::sample_terminals(std::size_t n, Rng& rng) const {
  if (items_.empty()) throw ContractViolation("sampling from an empty replay buffer");
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[rng.uniform_index(items_.size())].last().smiles);
  return out;
}

Trainer::Trainer(const mdp::Env& env, rewards::RewardFn reward, TrainConfig config,
                 policy::PolicyConfig policy_config, std::uint64_t seed)
    : env_(env),
      reward_fn_(std::move(reward)),
      config_(config),
      policy_config_(policy_config),
      seed_(seed),
      rng_(derive_seed(seed, {0})),
      buffer_(static_cast<std::size_t>(config.replay_capacity)) {
  config_.validate();
  Rng init(derive_seed(seed, {1}));
  pf_ = std::make_unique<policy::ForwardPolicy>(env_, policy_config_, store_, init, "pf");
  if (config_.backward_mode == BackwardMode::Uniform)
    pb_ = std::make_unique<policy::BackwardPolicy>(policy::BackwardPolicy::uniform(env_));
  else
    pb_ = std::make_unique<policy::BackwardPolicy>(env_, policy_config_, store_, init, "pb");
  store_.add(kLogZName, 1, 1, "z").value[0] = static_cast<float>(config_.logz_init);
}

double Trainer::log_z() const { return store_.get(kLogZName).value[0]; }

double Trainer::reward(const std::string& smiles) {
  if (const auto it = reward_cache_.find(smiles); it != reward_cache_.end()) return it->second;
  const auto& info = env_.info(smiles);
  const double r = reward_fn_(info.mol, info.smiles);
  reward_cache_.emplace(smiles, r);
  return r;
}

std::vector<std::vector<mdp::BackStep>> Trainer::back_steps(const std::vector<Trajectory>& batch) const {
  std::vector<std::vector<mdp::BackStep>> out;
  out.reserve(batch.size());
  for (const auto& t : batch) out.push_back(mdp::backward_steps(env_, t));
  return out;
}

namespace {

std::string dump(const Trajectory& t) {
  std::ostringstream os;
  for (std::size_t i = 0; i < t.actions.size(); ++i)
    os << (t.states[i].kind == mdp::StateKind::Empty ? "s0" : t.states[i].smiles) << " --"
       << mdp::action_name(t.actions[i].type) << "(" << t.actions[i].template_index << "," << t.actions[i].bb_index
       << ")--> ";
  os << "terminal " << t.last().smiles;
  return os.str();
}

void check_finite(const Tape& tape, Var v, const std::vector<Trajectory>& batch, const char* what) {
  const auto& vals = tape.value(v);
  for (std::size_t i = 0; i < vals.size(); ++i)
    if (!std::isfinite(vals[i])) throw Error(std::string("non-finite ") + what + " for trajectory " + dump(batch[i]));
}

}  // namespace

Var Trainer::tb_loss_graph(Tape& tape, const std::vector<Trajectory>& batch, const std::vector<double>& rewards) const {
  if (batch.empty()) throw ContractViolation("TB loss on an empty batch");
  if (rewards.size() != batch.size()) throw ContractViolation("one reward per trajectory required");
  const int n = static_cast<int>(batch.size());
  std::vector<const Trajectory*> ptrs;
  for (const auto& t : batch) ptrs.push_back(&t);
  std::vector<double> logr(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) logr[i] = log_reward(rewards[i], config_.beta, config_.reward_floor);

  Var lpf = pf_->trajectory_logprobs(tape, ptrs);
  check_finite(tape, lpf, batch, "log P_F");

  const auto steps = back_steps(batch);
  std::vector<const std::vector<mdp::BackStep>*> sptrs;
  for (const auto& s : steps) sptrs.push_back(&s);
  Var lpb;
  const bool pb_grad = !pb_->is_uniform() && (config_.backward_mode == BackwardMode::Free || config_.train_pb_in_tb);
  if (pb_grad) {
    lpb = pb_->trajectory_logprobs(tape, sptrs);
  } else {
    Tape frozen(pb_->store(), false);
    lpb = tape.constant(n, 1, frozen.value(pb_->trajectory_logprobs(frozen, sptrs)));
  }
  check_finite(tape, lpb, batch, "log P_B");

  Var ones = tape.constant(n, 1, std::vector<double>(batch.size(), 1.0));
  Var logz = tape.matmul(ones, tape.param(kLogZName));
  Var diff = tape.sub(tape.sub(tape.add(logz, lpf), tape.constant(n, 1, logr)), lpb);
  return tape.mean(tape.square(diff));
}

void Trainer::update(Var loss, Tape& tape, const nn::AdamConfig& adam) {
  store_.zero_grad();
  tape.backward(loss);
  nn::adam_step(store_, adam);
}

double Trainer::tb_update(const std::vector<Trajectory>& batch, const std::vector<double>& rewards) {
  Tape tape(&store_);
  Var loss = tb_loss_graph(tape, batch, rewards);
  const double value = tape.item(loss);
  if (!std::isfinite(value)) throw Error("non-finite TB loss");
  nn::AdamConfig adam;
  adam.lr = {{"pf", config_.lr_pf}, {"z", config_.lr_z}};
  if (!pb_->is_uniform() && (config_.backward_mode == BackwardMode::Free || config_.train_pb_in_tb))
    adam.lr["pb"] = config_.lr_pb;
  update(loss, tape, adam);
  return value;
}

double Trainer::mle_update(const std::vector<Trajectory>& batch) {
  if (pb_->is_uniform()) throw ContractViolation("mle_update needs a learned backward policy");
  if (batch.empty()) throw ContractViolation("mle_update on an empty batch");
  const auto steps = back_steps(batch);
  std::vector<const std::vector<mdp::BackStep>*> sptrs;
  for (const auto& s : steps) sptrs.push_back(&s);
  Tape tape(&store_);
  Var lpb = pb_->trajectory_logprobs(tape, sptrs);
  check_finite(tape, lpb, batch, "log P_B");
  Var loss = tape.scale(tape.mean(lpb), -1.0);
  const double value = tape.item(loss);
  update(loss, tape, nn::AdamConfig{0.9, 0.999, 1e-8, {{"pb", config_.lr_pb}}});
  return value;
}

double Trainer::reinforce_update(const std::vector<mdp::BackwardRollout>& rollouts,
                                 const std::vector<Trajectory>& forward) {
  if (pb_->is_uniform()) throw ContractViolation("reinforce_update needs a learned backward policy");
  if (rollouts.empty() && forward.empty()) throw ContractViolation("reinforce_update without trajectories");
  std::vector<std::vector<mdp::BackStep>> steps;
  std::vector<double> rb;
  double backward_mean = 0.0;
  for (const auto& r : rollouts) {
    steps.push_back(r.steps);
    rb.push_back(r.reached_s0 ? 1.0 : -1.0);
    backward_mean += rb.back();
  }
  if (!rollouts.empty()) backward_mean /= static_cast<double>(rollouts.size());
  for (const auto& t : forward) {
    steps.push_back(mdp::backward_steps(env_, t));
    rb.push_back(1.0);
  }
  double baseline = 0.0;
  if (config_.reinforce_baseline) {
    for (double r : rb) baseline += r;
    baseline /= static_cast<double>(rb.size());
  }
  const auto n = rb.size();
  const auto nb = rollouts.size();
  std::vector<const std::vector<mdp::BackStep>*> sptrs;
  for (const auto& s : steps) sptrs.push_back(&s);

  // Surrogate whose gradient is the negated estimator
  // mean((R_B - b) grad log P_B) + alpha grad mean(-log P_B over rollouts).
  Tape tape(&store_);
  Var lpb = pb_->trajectory_logprobs(tape, sptrs);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = -(rb[i] - baseline) / static_cast<double>(n);
    if (i < nb) w[i] += config_.alpha / static_cast<double>(nb);
  }
  Var loss = tape.sum(tape.mul(tape.constant(static_cast<int>(n), 1, w), lpb));
  update(loss, tape, nn::AdamConfig{0.9, 0.999, 1e-8, {{"pb", config_.lr_pb}}});
  return backward_mean;
}

StepMetrics Trainer::step() {
  ++step_;
  const int B = config_.batch_size;
  auto batch = policy::sample_forward(*pf_, nullptr, B, rng_);
  std::vector<double> rewards;
  std::vector<eval::Sample> samples;
  double mean_reward = 0.0;
  for (const auto& t : batch) {
    const double r = reward(t.last().smiles);
    rewards.push_back(r);
    samples.push_back({t.last().smiles, r});
    mean_reward += r;
    seen_.insert(t.last().smiles);
  }
  mean_reward /= static_cast<double>(B);

  StepMetrics m;
  m.step = step_;
  m.tb_loss = tb_update(batch, rewards);

  switch (config_.backward_mode) {
    case BackwardMode::MaxLikelihood:
      mle_update(batch);
      break;
    case BackwardMode::Reinforce: {
      for (const auto& t : batch) buffer_.push(t);
      const auto k = static_cast<std::size_t>(config_.rollouts_per_update());
      const auto terminals = buffer_.sample_terminals(k, rng_);
      const auto rollouts = policy::sample_backward(*pb_, terminals, rng_, env_.max_len() + 1);
      const std::vector<Trajectory> forward(batch.begin(), batch.begin() + std::min<std::ptrdiff_t>(
                                                                             static_cast<std::ptrdiff_t>(k), B));
      last_backward_reward_ = reinforce_update(rollouts, forward);
      break;
    }
    default:
      break;
  }

  if (step_ % config_.eval_every == 0 || step_ == 1) {
    std::vector<std::string> terminals;
    for (const auto& t : batch) terminals.push_back(t.last().smiles);
    Rng eval_rng(derive_seed(seed_, {2, static_cast<std::uint64_t>(step_)}));
    const auto rollouts = policy::sample_backward(*pb_, terminals, eval_rng, env_.max_len() + 1);
    double solved = 0.0;
    for (const auto& r : rollouts) solved += r.reached_s0;
    last_solved_ = solved / static_cast<double>(rollouts.size());
    if (config_.backward_mode != BackwardMode::Reinforce) last_backward_reward_ = 2.0 * last_solved_ - 1.0;
  }
  m.log_z = log_z();
  m.mean_reward = mean_reward;
  m.backward_reward_mean = last_backward_reward_;
  m.solved_rate = last_solved_;
  m.modes_count = eval::count_modes(samples, 0.9);
  spdlog::debug("step {} loss {:.6g} logZ {:.6g} reward {:.4g}", m.step, m.tb_loss, m.log_z, m.mean_reward);
  return m;
}

std::vector<StepMetrics> Trainer::run(const std::optional<std::filesystem::path>& out_dir) {
  std::optional<MetricsWriter> writer;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir / "checkpoints");
    writer.emplace(*out_dir / "metrics.csv");
  }
  std::vector<StepMetrics> all;
  while (step_ < config_.steps) {
    all.push_back(step());
    if (writer) writer->write(all.back());
    if (out_dir && config_.checkpoint_every > 0 && step_ % config_.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step_%06d.ckpt", step_);
      save(*out_dir / "checkpoints" / name);
    }
    if (step_ % 100 == 0) spdlog::info("step {} logZ {:.6g}", step_, log_z());
  }
  if (out_dir) save(*out_dir / "checkpoints" / "final.ckpt");
  return all;
}

std::string Trainer::manifest() const {
  nlohmann::ordered_json j;
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, env_.hash());
  j["format"] = "synflow-model";
  j["env_hash"] = hash;
  j["num_building_blocks"] = env_.num_bbs();
  j["num_templates"] = static_cast<int>(env_.templates().size());
  j["fingerprint_bits"] = env_.options().fingerprint_bits;
  j["hidden"] = policy_config_.hidden;
  j["bb_mode"] = policy_config_.bb_mode == policy::BbMode::Fingerprint ? "fingerprint" : "embedding";
  j["cosine"] = policy_config_.cosine;
  j["cosine_scale"] = policy_config_.cosine_scale;
  j["backward_mode"] = backward_mode_name(config_.backward_mode);
  j["step"] = step_;
  return j.dump();
}

void Trainer::save(const std::filesystem::path& path) const { nn::save_checkpoint(path, store_, manifest()); }

std::unique_ptr<LoadedModel> load_model(const mdp::Env& env, const std::filesystem::path& checkpoint) {
  const auto meta = nlohmann::json::parse(nn::read_checkpoint_metadata(checkpoint), nullptr, false);
  if (meta.is_discarded() || !meta.is_object() || meta.value("format", "") != "synflow-model")
    throw Error(checkpoint.string() + " is not a synflow model checkpoint");
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, env.hash());
  if (meta.at("env_hash").get<std::string>() != hash)
    throw Error(checkpoint.string() + " was trained on a different environment");
  auto model = std::make_unique<LoadedModel>();
  model->policy_config.hidden = meta.at("hidden").get<int>();
  model->policy_config.bb_mode =
      meta.at("bb_mode").get<std::string>() == "fingerprint" ? policy::BbMode::Fingerprint : policy::BbMode::Embedding;
  model->policy_config.cosine = meta.at("cosine").get<bool>();
  model->policy_config.cosine_scale = meta.at("cosine_scale").get<double>();
  model->backward_mode = parse_backward_mode(meta.at("backward_mode").get<std::string>());
  Rng init(0);
  model->pf = std::make_unique<policy::ForwardPolicy>(env, model->policy_config, model->store, init, "pf");
  if (model->backward_mode == BackwardMode::Uniform)
    model->pb = std::make_unique<policy::BackwardPolicy>(policy::BackwardPolicy::uniform(env));
  else
    model->pb = std::make_unique<policy::BackwardPolicy>(env, model->policy_config, model->store, init, "pb");
  model->store.add(kLogZName, 1, 1, "z");
  nn::load_checkpoint(checkpoint, model->store);
  model->log_z = model->store.get(kLogZName).value[0];
  return model;
}

void jitter_biases(nn::ParamStore& store, Rng& rng, double scale) {
  for (auto& p : store.params()) {
    if (!p.trainable || p.name.size() < 2 || p.name.compare(p.name.size() - 2, 2, ".b") != 0) continue;
    for (auto& v : p.value) v = static_cast<float>(scale * rng.normal());
  }
}

std::string format_metrics_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%d", m.step, m.tb_loss, m.log_z, m.mean_reward,
                m.backward_reward_mean, m.solved_rate, m.modes_count);
  return buf;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw Error("cannot write " + path.string());
  out_ << kMetricsHeader << '\n';
}

void MetricsWriter::write(const StepMetrics& m) { out_ << format_metrics_row(m) << '\n' << std::flush; }

}  // namespace synflow::train
