#include <algorithm>

#include "synflow/templates.hpp"

namespace synflow::tmpl {

bool atom_matches(const AtomPattern& p, const chem::MolGraph& mol, int atom) {
  const auto& a = mol.atom(atom);
  if (p.atomic_number && *p.atomic_number != chem::atomic_number(a.element)) return false;
  if (p.aromatic && *p.aromatic != a.aromatic) return false;
  if (p.charge && *p.charge != a.charge) return false;
  if (p.h_count && *p.h_count != a.total_h()) return false;
  if (p.connectivity && *p.connectivity != mol.degree(atom) + a.total_h()) return false;
  if (p.in_ring && *p.in_ring != mol.atom_in_ring(atom)) return false;
  return true;
}

bool bond_matches(BondPattern p, chem::BondOrder order) {
  switch (p) {
    case BondPattern::Single: return order == chem::BondOrder::Single;
    case BondPattern::Double: return order == chem::BondOrder::Double;
    case BondPattern::Triple: return order == chem::BondOrder::Triple;
    case BondPattern::Aromatic: return order == chem::BondOrder::Aromatic;
    case BondPattern::Any: return true;
    case BondPattern::SingleOrAromatic: return order == chem::BondOrder::Single || order == chem::BondOrder::Aromatic;
  }
  return false;
}

namespace {

// Backtracking over pattern atoms in BFS order, so every atom after a
// component root has an already-mapped neighbor restricting its candidates.
class Matcher {
 public:
  Matcher(const PatternGraph& p, const chem::MolGraph& m) : p_(p), m_(m) {
    const int n = static_cast<int>(p.size());
    std::vector<bool> seen(static_cast<std::size_t>(n), false);
    for (int s = 0; s < n; ++s) {
      if (seen[static_cast<std::size_t>(s)]) continue;
      seen[static_cast<std::size_t>(s)] = true;
      std::size_t head = order_.size();
      order_.push_back(s);
      parent_.push_back(-1);
      while (head < order_.size()) {
        const int u = order_[head++];
        for (const auto& nb : p.neighbors(u))
          if (!seen[static_cast<std::size_t>(nb.atom)]) {
            seen[static_cast<std::size_t>(nb.atom)] = true;
            order_.push_back(nb.atom);
            parent_.push_back(u);
          }
      }
    }
    map_.assign(p.size(), -1);
    used_.assign(m.size(), false);
  }

  template <typename Visit>
  bool run(Visit&& visit) {
    if (p_.size() == 0 || p_.size() > m_.size()) return false;
    return extend(0, visit);
  }

 private:
  bool feasible(int u, int v) const {
    if (used_[static_cast<std::size_t>(v)] || !atom_matches(p_.atom(u), m_, v)) return false;
    for (const auto& nb : p_.neighbors(u)) {
      const int mv = map_[static_cast<std::size_t>(nb.atom)];
      if (mv < 0) continue;
      const int b = m_.find_bond(v, mv);
      if (b < 0 || !bond_matches(p_.bond(nb.bond).order, m_.bond(b).order)) return false;
    }
    return true;
  }

  // Returns true to stop the search.
  template <typename Visit>
  bool extend(std::size_t k, Visit& visit) {
    if (k == order_.size()) return visit(map_);
    const int u = order_[k];
    const int parent = parent_[k];
    auto attempt = [&](int v) {
      if (!feasible(u, v)) return false;
      map_[static_cast<std::size_t>(u)] = v;
      used_[static_cast<std::size_t>(v)] = true;
      const bool stop = extend(k + 1, visit);
      map_[static_cast<std::size_t>(u)] = -1;
      used_[static_cast<std::size_t>(v)] = false;
      return stop;
    };
    if (parent >= 0) {
      for (const auto& nb : m_.neighbors(map_[static_cast<std::size_t>(parent)]))
        if (attempt(nb.atom)) return true;
    } else {
      for (int v = 0; v < static_cast<int>(m_.size()); ++v)
        if (attempt(v)) return true;
    }
    return false;
  }

  const PatternGraph& p_;
  const chem::MolGraph& m_;
  std::vector<int> order_;
  std::vector<int> parent_;
  std::vector<int> map_;
  std::vector<bool> used_;
};

}  // namespace

std::vector<Embedding> match_pattern(const PatternGraph& pattern, const chem::MolGraph& mol) {
  std::vector<Embedding> out;
  Matcher(pattern, mol).run([&](const std::vector<int>& m) {
    out.push_back(m);
    return false;
  });
  std::sort(out.begin(), out.end());
  return out;
}

bool has_match(const PatternGraph& pattern, const chem::MolGraph& mol) {
  return Matcher(pattern, mol).run([](const std::vector<int>&) { return true; });
}

bool embedding_satisfies(const PatternGraph& pattern, const chem::MolGraph& mol, const Embedding& emb) {
  if (emb.size() != pattern.size()) return false;
  std::vector<bool> used(mol.size(), false);
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const int v = emb[i];
    if (v < 0 || static_cast<std::size_t>(v) >= mol.size() || used[static_cast<std::size_t>(v)]) return false;
    used[static_cast<std::size_t>(v)] = true;
    if (!atom_matches(pattern.atom(static_cast<int>(i)), mol, v)) return false;
  }
  for (const auto& b : pattern.bonds()) {
    const int mb = mol.find_bond(emb[static_cast<std::size_t>(b.a)], emb[static_cast<std::size_t>(b.b)]);
    if (mb < 0 || !bond_matches(b.order, mol.bond(mb).order)) return false;
  }
  return true;
}

}  // namespace synflow::tmpl
