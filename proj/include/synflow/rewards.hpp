// Terminal-state rewards: constant, rediscovery, scaled affinity from an
// external score table, and products of these.
#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "synflow/chemgraph.hpp"

namespace synflow::rewards {

/// Tanimoto similarity of the molecule's fingerprint to the target's.
double rediscovery_reward(const chem::MolGraph& mol, const chem::Fingerprint& target_fp);

/// (affinity + scale_min) / (scale_min + scale_max) - 1, exactly as written.
/// Throws ContractViolation when scale_min + scale_max == 0.
double scale_affinity(double affinity, double scale_min = -1.0, double scale_max = -10.0);

/// -0.4 when the molecule has more than ref_heavy_atoms + allowance heavy atoms, else 0.
double size_penalty(const chem::MolGraph& mol, int ref_heavy_atoms, int allowance = 8);

/// R^beta. Requires R >= 0 and beta >= 1.
double apply_exponent(double reward, double beta);

/// `canonical_smiles<TAB>score` lines; keys are re-canonicalized on load.
class ScoreTable {
 public:
  static ScoreTable load(const std::filesystem::path& path, std::optional<double> missing_default = std::nullopt);
  ScoreTable(std::map<std::string, double> scores, std::optional<double> missing_default)
      : scores_(std::move(scores)), missing_default_(missing_default) {}

  /// Score of a canonical SMILES; the default, or Error when there is none.
  double lookup(const std::string& canonical_smiles) const;
  std::size_t size() const { return scores_.size(); }

 private:
  std::map<std::string, double> scores_;
  std::optional<double> missing_default_;
};

enum class RewardKind { Constant, Rediscovery, ScaledAffinity, External, Product };

class RewardFn {
 public:
  static RewardFn constant();
  static RewardFn rediscovery(const std::string& target_smiles);
  /// scale_affinity(table score) plus size_penalty when ref_heavy_atoms is set.
  static RewardFn scaled_affinity(std::shared_ptr<const ScoreTable> table, double scale_min = -1.0,
                                  double scale_max = -10.0, std::optional<int> ref_heavy_atoms = std::nullopt,
                                  int allowance = 8);
  /// The table score itself.
  static RewardFn external(std::shared_ptr<const ScoreTable> table);
  /// Requires at least one factor.
  static RewardFn product(std::vector<RewardFn> factors);

  RewardKind kind() const { return kind_; }
  const std::string& target_smiles() const { return target_smiles_; }

  /// Reward of a molecule whose canonical SMILES is `canonical`.
  double operator()(const chem::MolGraph& mol, const std::string& canonical) const;
  /// Parses and canonicalizes first.
  double operator()(const std::string& smiles) const;

 private:
  RewardKind kind_ = RewardKind::Constant;
  std::string target_smiles_;
  std::optional<chem::Fingerprint> target_fp_;
  std::shared_ptr<const ScoreTable> table_;
  double scale_min_ = -1.0;
  double scale_max_ = -10.0;
  std::optional<int> ref_heavy_atoms_;
  int allowance_ = 8;
  std::vector<RewardFn> factors_;
};

/// Product of the factors' rewards. Requires at least one factor.
double product_reward(const std::vector<RewardFn>& factors, const chem::MolGraph& mol);

}  // namespace synflow::rewards
