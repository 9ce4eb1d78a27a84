#include <cmath>
#include <fstream>

#include "synflow/rewards.hpp"

namespace synflow::rewards {

double rediscovery_reward(const chem::MolGraph& mol, const chem::Fingerprint& target_fp) {
  return chem::tanimoto(chem::morgan_fingerprint(mol, target_fp.radius(), target_fp.nbits()), target_fp);
}

double scale_affinity(double affinity, double scale_min, double scale_max) {
  if (scale_min + scale_max == 0.0) throw ContractViolation("scale_min + scale_max must be nonzero");
  return (affinity + scale_min) / (scale_min + scale_max) - 1.0;
}

double size_penalty(const chem::MolGraph& mol, int ref_heavy_atoms, int allowance) {
  if (ref_heavy_atoms < 0) throw ContractViolation("negative reference heavy-atom count");
  return static_cast<long>(chem::heavy_atom_count(mol)) > ref_heavy_atoms + allowance ? -0.4 : 0.0;
}

double apply_exponent(double reward, double beta) {
  if (!(reward >= 0.0)) throw ContractViolation("apply_exponent needs a nonnegative reward");
  if (!(beta >= 1.0)) throw ContractViolation("apply_exponent needs beta >= 1");
  return std::pow(reward, beta);
}

ScoreTable ScoreTable::load(const std::filesystem::path& path, std::optional<double> missing_default) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open score table " + path.string());
  std::map<std::string, double> scores;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected SMILES<TAB>score");
    double score = 0.0;
    try {
      std::size_t used = 0;
      score = std::stod(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("trailing text");
    } catch (const std::exception&) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    if (!std::isfinite(score)) throw Error(path.string() + ":" + std::to_string(lineno) + ": non-finite score");
    scores[chem::write_canonical_smiles(chem::parse_smiles(line.substr(0, tab)))] = score;
  }
  return ScoreTable(std::move(scores), missing_default);
}

double ScoreTable::lookup(const std::string& canonical_smiles) const {
  if (const auto it = scores_.find(canonical_smiles); it != scores_.end()) return it->second;
  if (missing_default_) return *missing_default_;
  throw Error("no score for " + canonical_smiles);
}

RewardFn RewardFn::constant() { return RewardFn{}; }

RewardFn RewardFn::rediscovery(const std::string& target_smiles) {
  RewardFn r;
  r.kind_ = RewardKind::Rediscovery;
  const auto mol = chem::parse_smiles(target_smiles);
  r.target_smiles_ = chem::write_canonical_smiles(mol);
  r.target_fp_ = chem::morgan_fingerprint(mol);
  return r;
}

RewardFn RewardFn::scaled_affinity(std::shared_ptr<const ScoreTable> table, double scale_min, double scale_max,
                                   std::optional<int> ref_heavy_atoms, int allowance) {
  if (!table) throw ContractViolation("scaled affinity reward without a score table");
  if (scale_min + scale_max == 0.0) throw ContractViolation("scale_min + scale_max must be nonzero");
  RewardFn r;
  r.kind_ = RewardKind::ScaledAffinity;
  r.table_ = std::move(table);
  r.scale_min_ = scale_min;
  r.scale_max_ = scale_max;
  r.ref_heavy_atoms_ = ref_heavy_atoms;
  r.allowance_ = allowance;
  return r;
}

RewardFn RewardFn::external(std::shared_ptr<const ScoreTable> table) {
  if (!table) throw ContractViolation("external reward without a score table");
  RewardFn r;
  r.kind_ = RewardKind::External;
  r.table_ = std::move(table);
  return r;
}

RewardFn RewardFn::product(std::vector<RewardFn> factors) {
  if (factors.empty()) throw ContractViolation("product reward needs at least one factor");
  RewardFn r;
  r.kind_ = RewardKind::Product;
  r.factors_ = std::move(factors);
  return r;
}

double RewardFn::operator()(const chem::MolGraph& mol, const std::string& canonical) const {
  switch (kind_) {
    case RewardKind::Constant:
      return 1.0;
    case RewardKind::Rediscovery:
      return rediscovery_reward(mol, *target_fp_);
    case RewardKind::ScaledAffinity: {
      double r = scale_affinity(table_->lookup(canonical), scale_min_, scale_max_);
      if (ref_heavy_atoms_) r += size_penalty(mol, *ref_heavy_atoms_, allowance_);
      return r;
    }
    case RewardKind::External:
      return table_->lookup(canonical);
    case RewardKind::Product: {
      double r = 1.0;
      for (const auto& f : factors_) r *= f(mol, canonical);
      return r;
    }
  }
  throw Error("unknown reward kind");
}

double RewardFn::operator()(const std::string& smiles) const {
  const auto mol = chem::parse_smiles(smiles);
  return (*this)(mol, chem::write_canonical_smiles(mol));
}

double product_reward(const std::vector<RewardFn>& factors, const chem::MolGraph& mol) {
  return RewardFn::product(factors)(mol, chem::write_canonical_smiles(mol));
}

}  // namespace synflow::rewards
