#include <algorithm>
#include <array>
#include <functional>
#include <numeric>

#include "synflow/chemgraph.hpp"

namespace synflow::chem {

namespace {

struct ElementInfo {
  Element element;
  std::string_view symbol;
  int valence_electrons;
  bool period2;
};

constexpr std::array<ElementInfo, 10> kElements{{
    {Element::B, "B", 3, true},
    {Element::C, "C", 4, true},
    {Element::N, "N", 5, true},
    {Element::O, "O", 6, true},
    {Element::F, "F", 7, true},
    {Element::P, "P", 5, false},
    {Element::S, "S", 6, false},
    {Element::Cl, "Cl", 7, false},
    {Element::Br, "Br", 7, false},
    {Element::I, "I", 7, false},
}};

const ElementInfo& info(Element e) {
  for (const auto& i : kElements)
    if (i.element == e) return i;
  throw Error("unknown element");
}

}  // namespace

std::string_view symbol(Element e) { return info(e).symbol; }

std::optional<Element> element_from_symbol(std::string_view sym) {
  for (const auto& i : kElements)
    if (i.symbol == sym) return i.element;
  return std::nullopt;
}

std::optional<Element> element_from_number(int z) {
  for (const auto& i : kElements)
    if (atomic_number(i.element) == z) return i.element;
  return std::nullopt;
}

// Isoelectronic model: a charge shifts the valence-electron count, so N+
// behaves like C, O- like F, C- like N. Period 3+ elements also get the
// expanded (+2, +4) valences.
std::vector<int> allowed_valences(Element e, int charge) {
  const auto& ei = info(e);
  const int ve = ei.valence_electrons - charge;
  if (ve < 0 || ve > 8) return {};
  const int base = ve <= 4 ? ve : 8 - ve;
  std::vector<int> out{base};
  if (!ei.period2 && ve > 4)
    for (int v = base + 2; v <= ve; v += 2) out.push_back(v);
  return out;
}

std::optional<int> implicit_hydrogens(const Atom& atom, int bond_sum) {
  const auto vals = allowed_valences(atom.element, atom.charge);
  if (vals.empty()) return std::nullopt;
  if (atom.aromatic) {
    if (atom.element == Element::C || atom.element == Element::B) {
      const int need = bond_sum + 1;
      for (int v : vals)
        if (v >= need) return v - need;
      return std::nullopt;
    }
    // Heteroatoms donate a lone pair or sit in a pi bond; H must be bracketed.
    if (bond_sum <= vals.back()) return 0;
    return std::nullopt;
  }
  for (int v : vals)
    if (v >= bond_sum) return v - bond_sum;
  return std::nullopt;
}

int MolGraph::add_atom(const Atom& atom) {
  atoms_.push_back(atom);
  adjacency_.emplace_back();
  atom_ring_.push_back(false);
  return static_cast<int>(atoms_.size()) - 1;
}

int MolGraph::add_bond(int a, int b, BondOrder order) {
  const int n = static_cast<int>(atoms_.size());
  if (a == b || a < 0 || b < 0 || a >= n || b >= n) throw ContractViolation("invalid bond endpoints");
  if (find_bond(a, b) >= 0) throw ContractViolation("duplicate bond");
  bonds_.push_back({a, b, order});
  const int idx = static_cast<int>(bonds_.size()) - 1;
  adjacency_[static_cast<std::size_t>(a)].push_back({b, idx});
  adjacency_[static_cast<std::size_t>(b)].push_back({a, idx});
  bond_ring_.push_back(false);
  return idx;
}

void MolGraph::remove_bond(int a, int b) {
  const int idx = find_bond(a, b);
  if (idx < 0) throw ContractViolation("no such bond");
  bonds_.erase(bonds_.begin() + idx);
  bond_ring_.erase(bond_ring_.begin() + idx);
  for (auto& adj : adjacency_) {
    std::erase_if(adj, [idx](const Neighbor& nb) { return nb.bond == idx; });
    for (auto& nb : adj)
      if (nb.bond > idx) --nb.bond;
  }
}

void MolGraph::set_bond_order(int a, int b, BondOrder order) {
  const int idx = find_bond(a, b);
  if (idx < 0) throw ContractViolation("no such bond");
  bonds_[static_cast<std::size_t>(idx)].order = order;
}

int MolGraph::find_bond(int a, int b) const {
  if (a < 0 || static_cast<std::size_t>(a) >= adjacency_.size()) return -1;
  for (const auto& nb : adjacency_[static_cast<std::size_t>(a)])
    if (nb.atom == b) return nb.bond;
  return -1;
}

int MolGraph::bond_valence_sum(int i) const {
  int sum = 0;
  for (const auto& nb : neighbors(i)) sum += bond_valence(bond(nb.bond).order);
  return sum;
}

void MolGraph::compute_rings() {
  const int n = static_cast<int>(atoms_.size());
  // Bridge detection: a bond is in a ring iff it is not a bridge.
  std::vector<int> disc(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
  std::vector<bool> bridge(bonds_.size(), false);
  int timer = 0;
  std::function<void(int, int)> dfs = [&](int u, int parent_bond) {
    disc[static_cast<std::size_t>(u)] = low[static_cast<std::size_t>(u)] = timer++;
    for (const auto& nb : adjacency_[static_cast<std::size_t>(u)]) {
      if (nb.bond == parent_bond) continue;
      const auto v = static_cast<std::size_t>(nb.atom);
      if (disc[v] < 0) {
        dfs(nb.atom, nb.bond);
        low[static_cast<std::size_t>(u)] = std::min(low[static_cast<std::size_t>(u)], low[v]);
        if (low[v] > disc[static_cast<std::size_t>(u)]) bridge[static_cast<std::size_t>(nb.bond)] = true;
      } else {
        low[static_cast<std::size_t>(u)] = std::min(low[static_cast<std::size_t>(u)], disc[v]);
      }
    }
  };
  for (int i = 0; i < n; ++i)
    if (disc[static_cast<std::size_t>(i)] < 0) dfs(i, -1);

  bond_ring_.assign(bonds_.size(), false);
  atom_ring_.assign(atoms_.size(), false);
  for (std::size_t b = 0; b < bonds_.size(); ++b) {
    if (bridge[b]) continue;
    bond_ring_[b] = true;
    atom_ring_[static_cast<std::size_t>(bonds_[b].a)] = true;
    atom_ring_[static_cast<std::size_t>(bonds_[b].b)] = true;
  }
}

void MolGraph::perceive() {
  compute_rings();
  const int n = static_cast<int>(atoms_.size());

  for (std::size_t b = 0; b < bonds_.size(); ++b) {
    const auto& bd = bonds_[b];
    if (bd.order == BondOrder::Aromatic &&
        (!atoms_[static_cast<std::size_t>(bd.a)].aromatic || !atoms_[static_cast<std::size_t>(bd.b)].aromatic))
      throw ValenceError("aromatic bond between non-aromatic atoms", bd.a);
  }

  for (int i = 0; i < n; ++i) {
    auto& at = atoms_[static_cast<std::size_t>(i)];
    if (at.aromatic && !atom_ring_[static_cast<std::size_t>(i)])
      throw ValenceError("aromatic atom outside a ring", i);
    const int bsum = bond_valence_sum(i);
    const auto vals = allowed_valences(at.element, at.charge);
    if (vals.empty()) throw ValenceError("unsupported charge state", i);
    if (at.explicit_h) {
      if (*at.explicit_h < 0) throw ValenceError("negative hydrogen count", i);
      const int pi = at.aromatic && (at.element == Element::C || at.element == Element::B) ? 1 : 0;
      if (bsum + *at.explicit_h + pi > vals.back()) throw ValenceError("valence exceeded", i);
      at.implicit_h = 0;
    } else {
      const auto h = implicit_hydrogens(at, bsum);
      if (!h) throw ValenceError("valence exceeded", i);
      at.implicit_h = *h;
    }
  }
}

std::vector<std::vector<int>> MolGraph::fragments() const {
  const int n = static_cast<int>(atoms_.size());
  std::vector<int> comp(static_cast<std::size_t>(n), -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; ++s) {
    if (comp[static_cast<std::size_t>(s)] >= 0) continue;
    const int c = static_cast<int>(out.size());
    out.emplace_back();
    std::vector<int> stack{s};
    comp[static_cast<std::size_t>(s)] = c;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (const auto& nb : neighbors(u)) {
        if (comp[static_cast<std::size_t>(nb.atom)] < 0) {
          comp[static_cast<std::size_t>(nb.atom)] = c;
          stack.push_back(nb.atom);
        }
      }
    }
    std::sort(out.back().begin(), out.back().end());
  }
  return out;
}

MolGraph MolGraph::induced_subgraph(const std::vector<bool>& keep) const {
  MolGraph out;
  std::vector<int> remap(atoms_.size(), -1);
  for (std::size_t i = 0; i < atoms_.size(); ++i) {
    if (!keep[i]) continue;
    Atom at = atoms_[i];
    int lost = 0;
    for (const auto& nb : adjacency_[i])
      if (!keep[static_cast<std::size_t>(nb.atom)]) lost += bond_valence(bonds_[static_cast<std::size_t>(nb.bond)].order);
    if (lost > 0) {
      if (at.explicit_h)
        at.explicit_h = *at.explicit_h + lost;
      else if (at.aromatic && at.element != Element::C && at.element != Element::B)
        at.explicit_h = lost;
    }
    remap[i] = out.add_atom(at);
  }
  for (const auto& b : bonds_) {
    const int a = remap[static_cast<std::size_t>(b.a)];
    const int c = remap[static_cast<std::size_t>(b.b)];
    if (a >= 0 && c >= 0) out.add_bond(a, c, b.order);
  }
  out.perceive();
  return out;
}

MolGraph MolGraph::permuted(std::span<const int> perm) const {
  if (perm.size() != atoms_.size()) throw ContractViolation("permutation size mismatch");
  std::vector<int> inverse(atoms_.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inverse[static_cast<std::size_t>(perm[i])] = static_cast<int>(i);
  MolGraph out;
  for (std::size_t j = 0; j < atoms_.size(); ++j) out.add_atom(atoms_[static_cast<std::size_t>(inverse[j])]);
  for (const auto& b : bonds_) out.add_bond(perm[static_cast<std::size_t>(b.a)], perm[static_cast<std::size_t>(b.b)], b.order);
  out.perceive();
  return out;
}

namespace {

std::array<int, 5> atom_label(const MolGraph& m, int i) {
  const auto& a = m.atom(i);
  return {atomic_number(a.element), a.aromatic ? 1 : 0, a.charge, a.total_h(), m.degree(i)};
}

}  // namespace

bool isomorphic(const MolGraph& a, const MolGraph& b) {
  if (a.size() != b.size() || a.bonds().size() != b.bonds().size()) return false;
  const int n = static_cast<int>(a.size());
  if (n == 0) return true;
  std::vector<std::array<int, 5>> la(static_cast<std::size_t>(n)), lb(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    la[static_cast<std::size_t>(i)] = atom_label(a, i);
    lb[static_cast<std::size_t>(i)] = atom_label(b, i);
  }
  auto sa = la, sb = lb;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa != sb) return false;

  // Visit order: BFS per component so most atoms have a mapped neighbor.
  std::vector<int> order;
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int s = 0; s < n; ++s) {
    if (seen[static_cast<std::size_t>(s)]) continue;
    seen[static_cast<std::size_t>(s)] = true;
    std::size_t head = order.size();
    order.push_back(s);
    while (head < order.size()) {
      const int u = order[head++];
      for (const auto& nb : a.neighbors(u))
        if (!seen[static_cast<std::size_t>(nb.atom)]) {
          seen[static_cast<std::size_t>(nb.atom)] = true;
          order.push_back(nb.atom);
        }
    }
  }

  std::vector<int> map(static_cast<std::size_t>(n), -1);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::function<bool(std::size_t)> extend = [&](std::size_t k) -> bool {
    if (k == order.size()) return true;
    const int u = order[k];
    for (int v = 0; v < n; ++v) {
      if (used[static_cast<std::size_t>(v)] || la[static_cast<std::size_t>(u)] != lb[static_cast<std::size_t>(v)]) continue;
      bool ok = true;
      for (const auto& nb : a.neighbors(u)) {
        const int mv = map[static_cast<std::size_t>(nb.atom)];
        if (mv < 0) continue;
        const int bb = b.find_bond(v, mv);
        if (bb < 0 || b.bond(bb).order != a.bond(nb.bond).order) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      map[static_cast<std::size_t>(u)] = v;
      used[static_cast<std::size_t>(v)] = true;
      if (extend(k + 1)) return true;
      map[static_cast<std::size_t>(u)] = -1;
      used[static_cast<std::size_t>(v)] = false;
    }
    return false;
  };
  return extend(0);
}

}  // namespace synflow::chem
