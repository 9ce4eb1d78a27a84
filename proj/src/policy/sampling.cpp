#include <cmath>

#include "synflow/policy.hpp"

namespace synflow::policy {

using mdp::Action;
using mdp::ActionType;
using mdp::State;
using mdp::StateKind;
using nn::Tape;
using nn::Var;

std::size_t sample_index(std::span<const double> logprobs, double temperature, Rng& rng) {
  if (temperature < 0.0) throw ContractViolation("negative sampling temperature");
  if (temperature == 1.0) return rng.categorical(logprobs);
  std::size_t best = logprobs.size();
  for (std::size_t i = 0; i < logprobs.size(); ++i)
    if (std::isfinite(logprobs[i]) && (best == logprobs.size() || logprobs[i] > logprobs[best])) best = i;
  if (best == logprobs.size()) throw ContractViolation("sampling from an all-masked distribution");
  if (temperature == 0.0) return best;
  std::vector<double> tempered(logprobs.size(), kNegInf);
  double z = 0.0;
  for (std::size_t i = 0; i < logprobs.size(); ++i)
    if (std::isfinite(logprobs[i])) z += std::exp((logprobs[i] - logprobs[best]) / temperature);
  for (std::size_t i = 0; i < logprobs.size(); ++i)
    if (std::isfinite(logprobs[i])) tempered[i] = (logprobs[i] - logprobs[best]) / temperature - std::log(z);
  return rng.categorical(tempered);
}

namespace {

Action decode_top(const mdp::Env& env, std::size_t k) {
  if (k == 0) return Action{};
  const int u = static_cast<int>(k) - 1;
  if (u < env.num_uni()) return Action{ActionType::ReactUni, env.uni_templates()[static_cast<std::size_t>(u)], -1, -1, mdp::Tie::None};
  return Action{ActionType::ReactBi, env.bi_templates()[static_cast<std::size_t>(u - env.num_uni())], -1, -1,
                mdp::Tie::None};
}

std::span<const double> row_of(const std::vector<double>& v, std::size_t row, std::size_t width) {
  return std::span<const double>(v.data() + row * width, width);
}

}  // namespace

std::vector<mdp::Trajectory> sample_forward(const ForwardPolicy& pf, const BackwardPolicy* pb, int n, Rng& rng,
                                            double temperature) {
  const mdp::Env& env = pf.env();
  std::vector<mdp::Trajectory> trajs(static_cast<std::size_t>(n));
  for (auto& t : trajs) t.states.push_back(State{});
  std::vector<int> active(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) active[static_cast<std::size_t>(i)] = i;
  const auto nbbs = static_cast<std::size_t>(env.num_bbs());
  const auto top_w = static_cast<std::size_t>(env.top_width());

  while (!active.empty()) {
    std::map<State, int> index;
    std::vector<State> unique;
    for (int i : active) {
      const State& s = trajs[static_cast<std::size_t>(i)].states.back();
      if (index.try_emplace(s, static_cast<int>(unique.size())).second) unique.push_back(s);
    }
    Tape tape(&pf.store(), false);
    Var emb = pf.embed(tape, unique);
    std::vector<int> empty_rows, mol_rows, slot(unique.size());
    std::vector<std::uint8_t> first_mask, top_mask;
    for (std::size_t r = 0; r < unique.size(); ++r) {
      const auto m = env.forward_mask(unique[r]);
      if (unique[r].kind == StateKind::Empty) {
        slot[r] = static_cast<int>(empty_rows.size());
        empty_rows.push_back(static_cast<int>(r));
        first_mask.insert(first_mask.end(), m.add_first.begin(), m.add_first.end());
      } else {
        slot[r] = static_cast<int>(mol_rows.size());
        mol_rows.push_back(static_cast<int>(r));
        const auto top = m.top();
        top_mask.insert(top_mask.end(), top.begin(), top.end());
      }
    }
    std::vector<double> first_lp, top_lp;
    if (!empty_rows.empty()) first_lp = tape.value(pf.first_logprobs(tape, tape.gather_rows(emb, empty_rows), first_mask));
    if (!mol_rows.empty()) top_lp = tape.value(pf.top_logprobs(tape, tape.gather_rows(emb, mol_rows), top_mask));

    std::vector<Action> chosen(active.size());
    std::vector<double> lp(active.size(), 0.0);
    std::vector<std::size_t> pending;
    for (std::size_t k = 0; k < active.size(); ++k) {
      const State& s = trajs[static_cast<std::size_t>(active[k])].states.back();
      const auto r = static_cast<std::size_t>(index.at(s));
      const auto sl = static_cast<std::size_t>(slot[r]);
      if (s.kind == StateKind::Empty) {
        const auto row = row_of(first_lp, sl, nbbs);
        const std::size_t b = sample_index(row, temperature, rng);
        chosen[k] = Action{ActionType::AddFirstReactant, -1, static_cast<int>(b), -1, mdp::Tie::None};
        lp[k] = row[b];
      } else {
        const auto row = row_of(top_lp, sl, top_w);
        const std::size_t j = sample_index(row, temperature, rng);
        chosen[k] = decode_top(env, j);
        lp[k] = row[j];
        if (chosen[k].type == ActionType::ReactBi) pending.push_back(k);
      }
    }
    if (!pending.empty()) {
      std::map<std::pair<int, int>, int> pair_index;
      std::vector<int> rows, pos;
      std::vector<std::uint8_t> mask;
      for (std::size_t k : pending) {
        const State& s = trajs[static_cast<std::size_t>(active[k])].states.back();
        const int r = index.at(s);
        const int p = env.template_position(chosen[k].template_index);
        if (pair_index.try_emplace({r, p}, static_cast<int>(rows.size())).second) {
          rows.push_back(r);
          pos.push_back(p);
          const auto m = env.addreactant_mask(s, chosen[k].template_index);
          mask.insert(mask.end(), m.begin(), m.end());
        }
      }
      const auto add_lp = tape.value(pf.add_reactant_logprobs(tape, emb, rows, pos, mask));
      for (std::size_t k : pending) {
        const State& s = trajs[static_cast<std::size_t>(active[k])].states.back();
        const auto row_i = static_cast<std::size_t>(
            pair_index.at({index.at(s), env.template_position(chosen[k].template_index)}));
        const auto row = row_of(add_lp, row_i, nbbs);
        const std::size_t b = sample_index(row, temperature, rng);
        chosen[k].bb_index = static_cast<int>(b);
        lp[k] += row[b];
      }
    }
    std::vector<int> still;
    for (std::size_t k = 0; k < active.size(); ++k) {
      auto& t = trajs[static_cast<std::size_t>(active[k])];
      State next = env.step_forward(t.states.back(), chosen[k]);
      t.actions.push_back(chosen[k]);
      t.fwd_logprobs.push_back(lp[k]);
      const bool done = next.kind == StateKind::Terminal;
      t.states.push_back(std::move(next));
      if (!done) still.push_back(active[k]);
    }
    active = std::move(still);
  }

  if (pb) {
    std::map<std::pair<std::string, bool>, int> index;
    std::vector<std::pair<std::string, bool>> unique;
    std::vector<std::vector<mdp::BackStep>> per_traj;
    for (const auto& t : trajs) {
      std::vector<mdp::BackStep> steps;
      for (std::size_t i = 0; i < t.actions.size(); ++i) {
        mdp::BackStep bs;
        if (t.actions[i].type != ActionType::Stop) {
          const auto rev = env.reverse_of(t.states[i], t.actions[i], t.states[i + 1]);
          bs.smiles = t.states[i + 1].smiles;
          bs.from_terminal = i + 1 < t.actions.size() && t.actions[i + 1].type == ActionType::Stop;
          bs.flat = env.backward_flat_index(rev.action);
          bs.extra_logprob = rev.extra_logprob;
          if (index.try_emplace({bs.smiles, bs.from_terminal}, static_cast<int>(unique.size())).second)
            unique.emplace_back(bs.smiles, bs.from_terminal);
        } else {
          bs.flat = -1;
        }
        steps.push_back(std::move(bs));
      }
      per_traj.push_back(std::move(steps));
    }
    const auto dists = unique.empty() ? std::vector<std::vector<double>>{} : pb->distributions(unique);
    for (std::size_t ti = 0; ti < trajs.size(); ++ti) {
      auto& t = trajs[ti];
      for (const auto& bs : per_traj[ti]) {
        if (bs.flat < 0) {
          t.bck_logprobs.push_back(0.0);
          continue;
        }
        const auto& d = dists[static_cast<std::size_t>(index.at({bs.smiles, bs.from_terminal}))];
        t.bck_logprobs.push_back(d[static_cast<std::size_t>(bs.flat)] + bs.extra_logprob);
      }
    }
  }
  return trajs;
}

mdp::Trajectory rollout_forward(const ForwardPolicy& pf, const BackwardPolicy* pb, Rng& rng, double temperature) {
  return std::move(sample_forward(pf, pb, 1, rng, temperature).front());
}

std::vector<mdp::BackwardRollout> sample_backward(const BackwardPolicy& pb, const std::vector<std::string>& terminals,
                                                  Rng& rng, int max_backsteps) {
  const mdp::Env& env = pb.env();
  std::vector<mdp::BackwardRollout> out(terminals.size());
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < terminals.size(); ++i) {
    const auto& canon = env.info(terminals[i]).smiles;
    out[i].terminal = canon;
    out[i].states.push_back(State{StateKind::Mol, canon, 0});
    active.push_back(i);
  }
  while (!active.empty()) {
    std::vector<std::size_t> live;
    std::vector<std::pair<std::string, bool>> query;
    for (std::size_t i : active) {
      auto& r = out[i];
      const bool from_terminal = r.steps.empty();
      if (static_cast<int>(r.steps.size()) >= max_backsteps) continue;
      if (env.backward_mask(r.states.back(), from_terminal).count() == 0) continue;
      live.push_back(i);
      query.emplace_back(r.states.back().smiles, from_terminal);
    }
    if (live.empty()) break;
    const auto dists = pb.distributions(query);
    std::vector<std::size_t> still;
    for (std::size_t k = 0; k < live.size(); ++k) {
      auto& r = out[live[k]];
      const bool from_terminal = query[k].second;
      const std::size_t flat = sample_index(dists[k], 1.0, rng);
      const Action a = env.backward_action_at(static_cast<int>(flat));
      const auto step = env.step_backward(r.states.back(), a, rng, from_terminal);
      r.steps.push_back(mdp::BackStep{r.states.back().smiles, from_terminal, static_cast<int>(flat), step.extra_logprob});
      r.actions.push_back(step.action);
      r.states.push_back(step.previous);
      if (step.previous.kind == StateKind::Empty)
        r.reached_s0 = true;
      else
        still.push_back(live[k]);
    }
    active = std::move(still);
  }
  return out;
}

mdp::BackwardRollout rollout_backward(const BackwardPolicy& pb, const std::string& terminal, Rng& rng,
                                      int max_backsteps) {
  return std::move(sample_backward(pb, {terminal}, rng, max_backsteps).front());
}

std::pair<double, double> trajectory_logprob(const ForwardPolicy& pf, const BackwardPolicy& pb,
                                             const mdp::Trajectory& traj) {
  Tape tape(&pf.store(), false);
  const double f = tape.item(pf.trajectory_logprobs(tape, {&traj}));
  const auto steps = mdp::backward_steps(pf.env(), traj);
  Tape btape(pb.store(), false);
  const double b = btape.item(pb.trajectory_logprobs(btape, {&steps}));
  return {f, b};
}

}  // namespace synflow::policy
