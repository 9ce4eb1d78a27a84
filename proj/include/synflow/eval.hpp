// Metrics and oracles: diversity, modes, solved routes, exhaustive
// enumeration and distribution comparison.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "synflow/chemgraph.hpp"
#include "synflow/mdp.hpp"
#include "synflow/policy.hpp"

namespace synflow::eval {

struct Sample {
  std::string smiles;
  double reward = 0.0;
};

/// Mean pairwise Tanimoto distance. Throws ContractViolation for < 2 fingerprints.
double diversity(const std::vector<chem::Fingerprint>& fps);
double diversity(const std::vector<Sample>& samples);

/// Distinct Bemis-Murcko scaffolds among samples with reward > threshold;
/// acyclic molecules share one mode.
int count_modes(const std::vector<Sample>& samples, double reward_threshold = 0.9);

/// Half the L1 distance between two distributions over string keys.
double tv_distance(const std::map<std::string, double>& p, const std::map<std::string, double>& q);

/// For each sample, the maximum Tanimoto similarity to any reference fingerprint.
std::vector<double> max_similarity_to_reference(const std::vector<chem::Fingerprint>& samples,
                                                const std::vector<chem::Fingerprint>& reference);

class EnumerationBudgetExceeded : public Error {
 public:
  EnumerationBudgetExceeded(std::size_t states, std::vector<std::string> partial)
      : Error("enumeration budget exceeded after " + std::to_string(states) + " states"),
        partial_(std::move(partial)) {}
  const std::vector<std::string>& partial() const { return partial_; }

 private:
  std::vector<std::string> partial_;
};

struct SpaceStats {
  std::vector<std::string> terminals;
  std::size_t states = 0;
  std::size_t transitions = 0;
};

/// Breadth-first closure of s0 under every legal forward action with the
/// env's max length; sorted canonical SMILES of all terminal-able molecules.
SpaceStats enumerate_space(const mdp::Env& env, std::size_t max_states = 2'000'000);

/// Exact terminal distribution of a forward policy, by dynamic programming
/// over the state DAG. Keys are canonical SMILES.
std::map<std::string, double> exact_terminal_distribution(const mdp::Env& env, const policy::ForwardPolicy& pf);

/// Probability that a backward rollout under the uniform backward policy
/// reaches s0 from `terminal` within `max_backsteps` steps.
double uniform_solve_probability(const mdp::Env& env, const std::string& terminal, int max_backsteps);

/// |exp(logZ) - N| / N.
double logz_vs_count(double log_z, std::size_t count);

/// Fraction of terminals for which at least one of `rollouts_per_mol`
/// backward rollouts reaches s0. Rollouts are drawn in lockstep from Rng(seed).
double solved_routes_rate(const policy::BackwardPolicy& pb, const std::vector<std::string>& terminals,
                          int rollouts_per_mol, int max_backsteps, std::uint64_t seed);

/// Mean of the k largest rewards (duplicates included).
double top_k_mean(std::vector<double> rewards, std::size_t k);

}  // namespace synflow::eval
