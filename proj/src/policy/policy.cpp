#include <cmath>

#include "synflow/policy.hpp"

namespace synflow::policy {

using mdp::State;
using mdp::StateKind;
using nn::Tape;
using nn::Var;

namespace {

void add_weight(nn::ParamStore& store, const std::string& name, int rows, int cols, const std::string& group,
                const PolicyConfig& cfg, Rng& rng) {
  if (cfg.zero_init)
    store.add(name, rows, cols, group);
  else
    store.add_normal(name, rows, cols, group, rng, cfg.init_gain / std::sqrt(static_cast<double>(rows)));
}

void add_bias(nn::ParamStore& store, const std::string& name, int cols, const std::string& group) {
  store.add(name, 1, cols, group);
}

Var linear(Tape& tape, Var x, const std::string& name) {
  return tape.add_row(tape.matmul(x, tape.param(name + ".W")), tape.param(name + ".b"));
}

Var trunk(Tape& tape, Var x, const std::string& prefix) {
  Var h = tape.relu(linear(tape, x, prefix + ".l1"));
  return tape.relu(linear(tape, h, prefix + ".l2"));
}

void add_trunk(nn::ParamStore& store, const std::string& prefix, int in, const PolicyConfig& cfg, Rng& rng) {
  add_weight(store, prefix + ".l1.W", in, cfg.hidden, prefix, cfg, rng);
  add_bias(store, prefix + ".l1.b", cfg.hidden, prefix);
  add_weight(store, prefix + ".l2.W", cfg.hidden, cfg.hidden, prefix, cfg, rng);
  add_bias(store, prefix + ".l2.b", cfg.hidden, prefix);
}

std::vector<double> feature_matrix(const mdp::Env& env, const std::vector<State>& states) {
  std::vector<double> x;
  x.reserve(states.size() * static_cast<std::size_t>(env.options().fingerprint_bits + 1));
  for (const auto& s : states) {
    const auto f = state_features(env, s);
    x.insert(x.end(), f.begin(), f.end());
  }
  return x;
}

}  // namespace

std::vector<double> state_features(const mdp::Env& env, const State& state) {
  const int nbits = env.options().fingerprint_bits;
  std::vector<double> f(static_cast<std::size_t>(nbits) + 1, 0.0);
  if (state.kind != StateKind::Empty) {
    const auto& fp = env.info(state.smiles).fp;
    for (int b = 0; b < nbits; ++b)
      if (fp.test(b)) f[static_cast<std::size_t>(b)] = 1.0;
  }
  f.back() = static_cast<double>(state.steps) / static_cast<double>(env.max_len());
  return f;
}

ForwardPolicy::ForwardPolicy(const mdp::Env& env, const PolicyConfig& config, nn::ParamStore& store, Rng& rng,
                             std::string prefix)
    : env_(env), store_(store), config_(config), prefix_(std::move(prefix)) {
  if (config_.hidden < 1) throw ContractViolation("hidden size must be positive");
  const int nbits = env.options().fingerprint_bits;
  const int h = config_.hidden;
  add_trunk(store, prefix_, nbits + 1, config_, rng);
  add_weight(store, prefix_ + ".top.W", h, env.top_width(), prefix_, config_, rng);
  add_bias(store, prefix_ + ".top.b", env.top_width(), prefix_);
  add_weight(store, prefix_ + ".first.W", h, nbits, prefix_, config_, rng);
  add_bias(store, prefix_ + ".first.b", nbits, prefix_);
  if (env.num_bi() > 0) {
    add_weight(store, prefix_ + ".add.l1.W", h + env.num_bi(), h, prefix_, config_, rng);
    add_bias(store, prefix_ + ".add.l1.b", h, prefix_);
    add_weight(store, prefix_ + ".add.l2.W", h, nbits, prefix_, config_, rng);
    add_bias(store, prefix_ + ".add.l2.b", nbits, prefix_);
  }
  const bool learnable = config_.bb_mode == BbMode::Embedding;
  nn::Param& bb = store.add(bb_matrix_name(), env.num_bbs(), nbits, prefix_, learnable);
  for (int i = 0; i < env.num_bbs(); ++i)
    for (int b = 0; b < nbits; ++b) {
      const auto k = static_cast<std::size_t>(i) * static_cast<std::size_t>(nbits) + static_cast<std::size_t>(b);
      bb.value[k] = learnable ? static_cast<float>(rng.normal())
                              : (env.building_blocks()[static_cast<std::size_t>(i)].fp.test(b) ? 1.0f : 0.0f);
    }
}

Var ForwardPolicy::embed(Tape& tape, const std::vector<State>& states) const {
  const int in = env_.options().fingerprint_bits + 1;
  Var x = tape.constant(static_cast<int>(states.size()), in, feature_matrix(env_, states));
  return trunk(tape, x, prefix_);
}

Var ForwardPolicy::top_logprobs(Tape& tape, Var emb, const std::vector<std::uint8_t>& mask) const {
  return tape.masked_log_softmax(linear(tape, emb, prefix_ + ".top"), mask);
}

Var ForwardPolicy::bb_logits(Tape& tape, Var query) const {
  Var bb = tape.param(bb_matrix_name());
  if (config_.cosine)
    return tape.scale(tape.matmul_bt(tape.row_l2_normalize(query), tape.row_l2_normalize(bb)), config_.cosine_scale);
  return tape.scale(tape.matmul_bt(query, bb), 1.0 / std::sqrt(static_cast<double>(env_.options().fingerprint_bits)));
}

Var ForwardPolicy::first_logprobs(Tape& tape, Var emb, const std::vector<std::uint8_t>& mask) const {
  return tape.masked_log_softmax(bb_logits(tape, linear(tape, emb, prefix_ + ".first")), mask);
}

Var ForwardPolicy::add_reactant_logprobs(Tape& tape, Var emb, const std::vector<int>& rows,
                                         const std::vector<int>& bi_positions,
                                         const std::vector<std::uint8_t>& mask) const {
  if (rows.size() != bi_positions.size()) throw ContractViolation("add_reactant_logprobs: rows and positions differ in length");
  const int nb = env_.num_bi();
  std::vector<double> onehot(rows.size() * static_cast<std::size_t>(nb), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (bi_positions[r] < 0 || bi_positions[r] >= nb) throw ContractViolation("bimolecular template position out of range");
    onehot[r * static_cast<std::size_t>(nb) + static_cast<std::size_t>(bi_positions[r])] = 1.0;
  }
  Var x = tape.concat_cols(tape.gather_rows(emb, rows), tape.constant(static_cast<int>(rows.size()), nb, onehot));
  Var h = tape.relu(linear(tape, x, prefix_ + ".add.l1"));
  Var q = linear(tape, h, prefix_ + ".add.l2");
  return tape.masked_log_softmax(bb_logits(tape, q), mask);
}

Var ForwardPolicy::trajectory_logprobs(Tape& tape, const std::vector<const mdp::Trajectory*>& trajs) const {
  const int n = static_cast<int>(trajs.size());
  std::map<State, int> index;
  std::vector<State> unique;
  for (const auto* t : trajs)
    for (std::size_t i = 0; i < t->actions.size(); ++i)
      if (index.try_emplace(t->states[i], static_cast<int>(unique.size())).second) unique.push_back(t->states[i]);
  Var emb = embed(tape, unique);

  // Rows of `emb` that are s0 and molecule states, and their masks.
  std::vector<int> empty_rows, mol_rows, row_slot(unique.size(), -1);
  std::vector<std::uint8_t> first_mask, top_mask;
  for (std::size_t r = 0; r < unique.size(); ++r) {
    const auto m = env_.forward_mask(unique[r]);
    if (unique[r].kind == StateKind::Empty) {
      row_slot[r] = static_cast<int>(empty_rows.size());
      empty_rows.push_back(static_cast<int>(r));
      first_mask.insert(first_mask.end(), m.add_first.begin(), m.add_first.end());
    } else {
      row_slot[r] = static_cast<int>(mol_rows.size());
      mol_rows.push_back(static_cast<int>(r));
      const auto top = m.top();
      top_mask.insert(top_mask.end(), top.begin(), top.end());
    }
  }

  std::vector<std::pair<int, int>> first_picks, top_picks, add_picks;
  std::vector<int> first_seg, top_seg, add_seg;
  std::map<std::pair<int, int>, int> add_index;
  std::vector<int> add_rows, add_pos;
  std::vector<std::uint8_t> add_mask;
  for (int ti = 0; ti < n; ++ti) {
    const auto& t = *trajs[static_cast<std::size_t>(ti)];
    if (t.actions.size() + 1 != t.states.size()) throw ContractViolation("trajectory has mismatched states and actions");
    for (std::size_t i = 0; i < t.actions.size(); ++i) {
      const int r = index.at(t.states[i]);
      const auto& a = t.actions[i];
      if (t.states[i].kind == StateKind::Empty) {
        if (a.type != mdp::ActionType::AddFirstReactant) throw ContractViolation("trajectory does not start with AddFirstReactant");
        first_picks.emplace_back(row_slot[static_cast<std::size_t>(r)], a.bb_index);
        first_seg.push_back(ti);
        continue;
      }
      top_picks.emplace_back(row_slot[static_cast<std::size_t>(r)], env_.top_index(a));
      top_seg.push_back(ti);
      if (a.type == mdp::ActionType::ReactBi) {
        const int pos = env_.template_position(a.template_index);
        auto [it, inserted] = add_index.try_emplace({r, pos}, static_cast<int>(add_rows.size()));
        if (inserted) {
          add_rows.push_back(r);
          add_pos.push_back(pos);
          const auto m = env_.addreactant_mask(t.states[i], a.template_index);
          add_mask.insert(add_mask.end(), m.begin(), m.end());
        }
        add_picks.emplace_back(it->second, a.bb_index);
        add_seg.push_back(ti);
      }
    }
  }

  Var total = tape.constant(n, 1, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  if (!first_picks.empty()) {
    Var lp = first_logprobs(tape, tape.gather_rows(emb, empty_rows), first_mask);
    total = tape.add(total, tape.segment_sum(tape.pick(lp, first_picks), first_seg, n));
  }
  if (!top_picks.empty()) {
    Var lp = top_logprobs(tape, tape.gather_rows(emb, mol_rows), top_mask);
    total = tape.add(total, tape.segment_sum(tape.pick(lp, top_picks), top_seg, n));
  }
  if (!add_picks.empty()) {
    Var lp = add_reactant_logprobs(tape, emb, add_rows, add_pos, add_mask);
    total = tape.add(total, tape.segment_sum(tape.pick(lp, add_picks), add_seg, n));
  }
  return total;
}

ForwardDistribution ForwardPolicy::distribution(const State& state) const {
  Tape tape(&store_, false);
  ForwardDistribution d;
  const auto m = env_.forward_mask(state);
  Var emb = embed(tape, {state});
  if (state.kind == StateKind::Empty) {
    d.first = tape.value(first_logprobs(tape, emb, m.add_first));
    return d;
  }
  d.top = tape.value(top_logprobs(tape, emb, m.top()));
  std::vector<int> rows, pos;
  std::vector<std::uint8_t> mask;
  for (int i = 0; i < env_.num_bi(); ++i) {
    if (!m.bi[static_cast<std::size_t>(i)]) continue;
    rows.push_back(0);
    pos.push_back(i);
    const auto am = env_.addreactant_mask(state, env_.bi_templates()[static_cast<std::size_t>(i)]);
    mask.insert(mask.end(), am.begin(), am.end());
  }
  if (!rows.empty()) {
    const auto& v = tape.value(add_reactant_logprobs(tape, emb, rows, pos, mask));
    const auto nb = static_cast<std::size_t>(env_.num_bbs());
    for (std::size_t k = 0; k < rows.size(); ++k)
      d.add_reactant[pos[k]] = std::vector<double>(v.begin() + static_cast<std::ptrdiff_t>(k * nb),
                                                   v.begin() + static_cast<std::ptrdiff_t>((k + 1) * nb));
  }
  return d;
}

BackwardPolicy::BackwardPolicy(const mdp::Env& env, const PolicyConfig& config, nn::ParamStore& store, Rng& rng,
                               std::string prefix)
    : env_(env), store_(&store), config_(config), prefix_(std::move(prefix)) {
  if (config_.hidden < 1) throw ContractViolation("hidden size must be positive");
  add_trunk(store, prefix_, env.options().fingerprint_bits + 1, config_, rng);
  add_weight(store, prefix_ + ".head.W", config_.hidden, env.backward_width(), prefix_, config_, rng);
  add_bias(store, prefix_ + ".head.b", env.backward_width(), prefix_);
}

BackwardPolicy BackwardPolicy::uniform(const mdp::Env& env) { return BackwardPolicy(env); }

Var BackwardPolicy::logits(Tape& tape, const std::vector<std::pair<std::string, bool>>& states) const {
  std::vector<State> as_states;
  as_states.reserve(states.size());
  for (const auto& [smiles, from_terminal] : states) as_states.push_back(State{StateKind::Mol, smiles, 0});
  const int in = env_.options().fingerprint_bits + 1;
  Var x = tape.constant(static_cast<int>(states.size()), in, feature_matrix(env_, as_states));
  return linear(tape, trunk(tape, x, prefix_), prefix_ + ".head");
}

std::vector<std::vector<double>> BackwardPolicy::distributions(
    const std::vector<std::pair<std::string, bool>>& states) const {
  std::vector<std::vector<double>> out;
  std::vector<std::uint8_t> mask;
  for (const auto& [smiles, from_terminal] : states) {
    const auto m = env_.backward_mask(State{StateKind::Mol, smiles, 0}, from_terminal).flat();
    mask.insert(mask.end(), m.begin(), m.end());
  }
  const auto w = static_cast<std::size_t>(env_.backward_width());
  if (is_uniform()) {
    for (std::size_t r = 0; r < states.size(); ++r) {
      std::vector<double> row(w, kNegInf);
      int count = 0;
      for (std::size_t j = 0; j < w; ++j) count += mask[r * w + j] != 0;
      if (count == 0) throw ContractViolation("backward distribution over an all-masked state");
      for (std::size_t j = 0; j < w; ++j)
        if (mask[r * w + j]) row[j] = -std::log(static_cast<double>(count));
      out.push_back(std::move(row));
    }
    return out;
  }
  Tape tape(store_, false);
  const auto& v = tape.value(tape.masked_log_softmax(logits(tape, states), mask));
  for (std::size_t r = 0; r < states.size(); ++r)
    out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(r * w), v.begin() + static_cast<std::ptrdiff_t>((r + 1) * w));
  return out;
}

std::vector<double> BackwardPolicy::distribution(const State& state, bool from_terminal) const {
  if (state.kind == StateKind::Empty) throw ContractViolation("backward distribution at s0");
  return distributions({{state.smiles, from_terminal}}).front();
}

Var BackwardPolicy::trajectory_logprobs(Tape& tape, const std::vector<const std::vector<mdp::BackStep>*>& steps) const {
  const int n = static_cast<int>(steps.size());
  std::vector<double> extra(static_cast<std::size_t>(n), 0.0);
  if (is_uniform()) {
    for (int i = 0; i < n; ++i) extra[static_cast<std::size_t>(i)] = uniform_backward_logprob(env_, *steps[static_cast<std::size_t>(i)]);
    return tape.constant(n, 1, extra);
  }
  std::map<std::pair<std::string, bool>, int> index;
  std::vector<std::pair<std::string, bool>> unique;
  std::vector<std::pair<int, int>> picks;
  std::vector<int> seg;
  for (int i = 0; i < n; ++i)
    for (const auto& s : *steps[static_cast<std::size_t>(i)]) {
      auto [it, inserted] = index.try_emplace({s.smiles, s.from_terminal}, static_cast<int>(unique.size()));
      if (inserted) unique.emplace_back(s.smiles, s.from_terminal);
      picks.emplace_back(it->second, s.flat);
      seg.push_back(i);
      extra[static_cast<std::size_t>(i)] += s.extra_logprob;
    }
  Var total = tape.constant(n, 1, extra);
  if (picks.empty()) return total;
  std::vector<std::uint8_t> mask;
  for (const auto& [smiles, from_terminal] : unique) {
    const auto m = env_.backward_mask(State{StateKind::Mol, smiles, 0}, from_terminal).flat();
    mask.insert(mask.end(), m.begin(), m.end());
  }
  Var lp = tape.masked_log_softmax(logits(tape, unique), mask);
  return tape.add(total, tape.segment_sum(tape.pick(lp, picks), seg, n));
}

double uniform_backward_logprob(const mdp::Env& env, const std::vector<mdp::BackStep>& steps) {
  double total = 0.0;
  for (const auto& s : steps) {
    const int count = env.backward_mask(State{StateKind::Mol, s.smiles, 0}, s.from_terminal).count();
    if (count == 0) throw ContractViolation("uniform backward log-probability at an all-masked state");
    total += -std::log(static_cast<double>(count)) + s.extra_logprob;
  }
  return total;
}

}  // namespace synflow::policy
