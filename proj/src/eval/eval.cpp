#include <algorithm>
#include <cmath>
#include <deque>
#include <set>

#include "synflow/eval.hpp"

namespace synflow::eval {

using mdp::State;
using mdp::StateKind;

double diversity(const std::vector<chem::Fingerprint>& fps) {
  if (fps.size() < 2) throw ContractViolation("diversity needs at least two samples");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < fps.size(); ++i)
    for (std::size_t j = i + 1; j < fps.size(); ++j) {
      total += 1.0 - chem::tanimoto(fps[i], fps[j]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

double diversity(const std::vector<Sample>& samples) {
  std::vector<chem::Fingerprint> fps;
  fps.reserve(samples.size());
  for (const auto& s : samples) fps.push_back(chem::morgan_fingerprint(chem::parse_smiles(s.smiles)));
  return diversity(fps);
}

int count_modes(const std::vector<Sample>& samples, double reward_threshold) {
  std::set<std::string> scaffolds;
  std::map<std::string, std::string> memo;
  for (const auto& s : samples) {
    if (!(s.reward > reward_threshold)) continue;
    auto it = memo.find(s.smiles);
    if (it == memo.end()) {
      const auto scaffold = chem::bemis_murcko_scaffold(chem::parse_smiles(s.smiles));
      it = memo.emplace(s.smiles, scaffold.acyclic ? std::string() : chem::write_canonical_smiles(scaffold.graph)).first;
    }
    scaffolds.insert(it->second);
  }
  return static_cast<int>(scaffolds.size());
}

double tv_distance(const std::map<std::string, double>& p, const std::map<std::string, double>& q) {
  double total = 0.0;
  for (const auto& [k, v] : p) {
    const auto it = q.find(k);
    total += std::abs(v - (it == q.end() ? 0.0 : it->second));
  }
  for (const auto& [k, v] : q)
    if (!p.count(k)) total += std::abs(v);
  return 0.5 * total;
}

std::vector<double> max_similarity_to_reference(const std::vector<chem::Fingerprint>& samples,
                                                const std::vector<chem::Fingerprint>& reference) {
  if (reference.empty()) throw ContractViolation("reference set is empty");
  std::vector<double> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    double best = 0.0;
    for (const auto& r : reference) best = std::max(best, chem::tanimoto(s, r));
    out.push_back(best);
  }
  return out;
}

SpaceStats enumerate_space(const mdp::Env& env, std::size_t max_states) {
  SpaceStats stats;
  std::set<State> visited;
  std::set<std::string> terminals;
  std::deque<State> queue;
  auto push = [&](State s) {
    if (!visited.insert(s).second) return;
    if (visited.size() > max_states)
      throw EnumerationBudgetExceeded(visited.size(), std::vector<std::string>(terminals.begin(), terminals.end()));
    queue.push_back(std::move(s));
  };
  push(State{});
  while (!queue.empty()) {
    const State s = queue.front();
    queue.pop_front();
    const auto mask = env.forward_mask(s);
    if (s.kind == StateKind::Empty) {
      for (int b = 0; b < env.num_bbs(); ++b)
        if (mask.add_first[static_cast<std::size_t>(b)]) {
          ++stats.transitions;
          push(State{StateKind::Mol, env.building_blocks()[static_cast<std::size_t>(b)].smiles, 0});
        }
      continue;
    }
    if (mask.stop) {
      ++stats.transitions;
      terminals.insert(s.smiles);
    }
    const auto& fi = env.forward_info(s.smiles);
    for (int u = 0; u < env.num_uni(); ++u)
      if (mask.uni[static_cast<std::size_t>(u)]) {
        ++stats.transitions;
        push(State{StateKind::Mol, *fi.uni_product[static_cast<std::size_t>(u)], s.steps + 1});
      }
    for (int i = 0; i < env.num_bi(); ++i) {
      if (!mask.bi[static_cast<std::size_t>(i)]) continue;
      for (const auto& p : fi.bi_product[static_cast<std::size_t>(i)])
        if (p) {
          ++stats.transitions;
          push(State{StateKind::Mol, *p, s.steps + 1});
        }
    }
  }
  stats.states = visited.size();
  stats.terminals.assign(terminals.begin(), terminals.end());
  return stats;
}

std::map<std::string, double> exact_terminal_distribution(const mdp::Env& env, const policy::ForwardPolicy& pf) {
  std::map<std::string, double> out;
  // Every transition from s0 or a molecule with k reactions leads to k + 1 or
  // to a terminal, so processing by reaction count is a topological order.
  std::map<State, double> level;
  {
    const auto d = pf.distribution(State{});
    for (int b = 0; b < env.num_bbs(); ++b)
      if (std::isfinite(d.first[static_cast<std::size_t>(b)]))
        level[State{StateKind::Mol, env.building_blocks()[static_cast<std::size_t>(b)].smiles, 0}] +=
            std::exp(d.first[static_cast<std::size_t>(b)]);
  }
  while (!level.empty()) {
    std::map<State, double> next;
    for (const auto& [s, mass] : level) {
      const auto d = pf.distribution(s);
      const auto& fi = env.forward_info(s.smiles);
      if (std::isfinite(d.top[0])) out[s.smiles] += mass * std::exp(d.top[0]);
      for (int u = 0; u < env.num_uni(); ++u) {
        const double lp = d.top[static_cast<std::size_t>(1 + u)];
        if (std::isfinite(lp))
          next[State{StateKind::Mol, *fi.uni_product[static_cast<std::size_t>(u)], s.steps + 1}] += mass * std::exp(lp);
      }
      for (const auto& [pos, cond] : d.add_reactant) {
        const double lp = d.top[static_cast<std::size_t>(1 + env.num_uni() + pos)];
        for (int b = 0; b < env.num_bbs(); ++b) {
          const double lb = cond[static_cast<std::size_t>(b)];
          if (!std::isfinite(lb)) continue;
          const auto& p = fi.bi_product[static_cast<std::size_t>(pos)][static_cast<std::size_t>(b)];
          next[State{StateKind::Mol, *p, s.steps + 1}] += mass * std::exp(lp + lb);
        }
      }
    }
    level = std::move(next);
  }
  return out;
}

namespace {

struct SolveMemo {
  const mdp::Env& env;
  std::map<std::tuple<std::string, bool, int>, double> memo;

  double solve(const std::string& smiles, bool from_terminal, int remaining) {
    if (remaining <= 0) return 0.0;
    const auto key = std::make_tuple(smiles, from_terminal, remaining);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const State s{StateKind::Mol, smiles, 0};
    const auto mask = env.backward_mask(s, from_terminal);
    const int n = mask.count();
    double total = 0.0;
    if (n > 0) {
      const auto& bi = env.backward_info(smiles);
      if (mask.remove) total += 1.0;
      for (std::size_t u = 0; u < mask.uni.size(); ++u) {
        if (!mask.uni[u]) continue;
        double acc = 0.0;
        for (const auto& p : bi.uni_parents[u]) acc += solve(p, false, remaining - 1);
        total += acc / static_cast<double>(bi.uni_parents[u].size());
      }
      for (std::size_t i = 0; i < mask.bi.size(); ++i) {
        if (!mask.bi[i]) continue;
        double acc = 0.0;
        for (const auto& bp : bi.bi_parents[i]) {
          if (bp.a_prev && bp.b_prev && bp.a != bp.b)
            acc += 0.5 * solve(bp.a, false, remaining - 1) + 0.5 * solve(bp.b, false, remaining - 1);
          else
            acc += solve(bp.a_prev ? bp.a : bp.b, false, remaining - 1);
        }
        total += acc / static_cast<double>(bi.bi_parents[i].size());
      }
      total /= static_cast<double>(n);
    }
    memo[key] = total;
    return total;
  }
};

}  // namespace

double uniform_solve_probability(const mdp::Env& env, const std::string& terminal, int max_backsteps) {
  SolveMemo m{env, {}};
  return m.solve(env.info(terminal).smiles, true, max_backsteps);
}

double logz_vs_count(double log_z, std::size_t count) {
  if (count == 0) throw ContractViolation("logz_vs_count with an empty space");
  const double n = static_cast<double>(count);
  return std::abs(std::exp(log_z) - n) / n;
}

double solved_routes_rate(const policy::BackwardPolicy& pb, const std::vector<std::string>& terminals,
                          int rollouts_per_mol, int max_backsteps, std::uint64_t seed) {
  if (terminals.empty()) return 0.0;
  if (rollouts_per_mol < 1) throw ContractViolation("rollouts_per_mol must be positive");
  std::vector<std::string> batch;
  for (const auto& t : terminals)
    for (int r = 0; r < rollouts_per_mol; ++r) batch.push_back(t);
  Rng rng(seed);
  const auto rollouts = policy::sample_backward(pb, batch, rng, max_backsteps);
  std::size_t solved = 0;
  for (std::size_t i = 0; i < terminals.size(); ++i) {
    bool any = false;
    for (int r = 0; r < rollouts_per_mol; ++r)
      any = any || rollouts[i * static_cast<std::size_t>(rollouts_per_mol) + static_cast<std::size_t>(r)].reached_s0;
    solved += any;
  }
  return static_cast<double>(solved) / static_cast<double>(terminals.size());
}

double top_k_mean(std::vector<double> rewards, std::size_t k) {
  if (rewards.empty() || k == 0) throw ContractViolation("top_k_mean needs samples and k > 0");
  std::sort(rewards.begin(), rewards.end(), std::greater<>());
  const std::size_t m = std::min(k, rewards.size());
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total += rewards[i];
  return total / static_cast<double>(m);
}

}  // namespace synflow::eval
