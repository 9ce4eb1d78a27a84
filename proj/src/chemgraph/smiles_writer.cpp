#include <algorithm>
#include <functional>
#include <tuple>

#include "synflow/chemgraph.hpp"

namespace synflow::chem {

namespace {

int bond_code(BondOrder o) { return static_cast<int>(o); }

// Rank = number of atoms with a strictly smaller key, so tied atoms share a rank.
template <typename Key>
std::vector<int> ranks_from_keys(const std::vector<Key>& keys) {
  const std::size_t n = keys.size();
  std::vector<int> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) { return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)]; });
  std::vector<int> ranks(n, 0);
  for (std::size_t k = 1; k < n; ++k) {
    const auto cur = static_cast<std::size_t>(idx[k]);
    const auto prev = static_cast<std::size_t>(idx[k - 1]);
    ranks[cur] = keys[cur] == keys[prev] ? ranks[prev] : static_cast<int>(k);
  }
  return ranks;
}

int class_count(const std::vector<int>& ranks) {
  std::vector<int> s = ranks;
  std::sort(s.begin(), s.end());
  return static_cast<int>(std::unique(s.begin(), s.end()) - s.begin());
}

void refine(const MolGraph& mol, std::vector<int>& ranks) {
  const std::size_t n = mol.size();
  int classes = class_count(ranks);
  while (classes < static_cast<int>(n)) {
    std::vector<std::pair<int, std::vector<int>>> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
      keys[i].first = ranks[i];
      for (const auto& nb : mol.neighbors(static_cast<int>(i)))
        keys[i].second.push_back(ranks[static_cast<std::size_t>(nb.atom)] * 8 + bond_code(mol.bond(nb.bond).order));
      std::sort(keys[i].second.begin(), keys[i].second.end());
    }
    auto next = ranks_from_keys(keys);
    const int next_classes = class_count(next);
    ranks = std::move(next);
    if (next_classes == classes) break;
    classes = next_classes;
  }
}

std::vector<int> initial_ranks(const MolGraph& mol) {
  std::vector<std::tuple<int, int, int, int, int, int>> keys;
  keys.reserve(mol.size());
  for (int i = 0; i < static_cast<int>(mol.size()); ++i) {
    const auto& a = mol.atom(i);
    keys.emplace_back(atomic_number(a.element), mol.degree(i), a.total_h(), a.charge, a.aromatic ? 1 : 0,
                      mol.atom_in_ring(i) ? 1 : 0);
  }
  return ranks_from_keys(keys);
}

std::string atom_token(const MolGraph& mol, int i) {
  const auto& a = mol.atom(i);
  std::string sym(symbol(a.element));
  if (a.aromatic) sym[0] = static_cast<char>(sym[0] - 'A' + 'a');
  Atom probe = a;
  probe.explicit_h.reset();
  const auto implied = implicit_hydrogens(probe, mol.bond_valence_sum(i));
  const int h = a.total_h();
  if (a.charge == 0 && implied && *implied == h) return sym;
  std::string out = "[" + sym;
  if (h > 0) {
    out += 'H';
    if (h > 1) out += std::to_string(h);
  }
  if (a.charge != 0) {
    out += a.charge > 0 ? '+' : '-';
    const int mag = a.charge > 0 ? a.charge : -a.charge;
    if (mag > 1) out += std::to_string(mag);
  }
  out += ']';
  return out;
}

std::string bond_token(const MolGraph& mol, const Bond& b) {
  switch (b.order) {
    case BondOrder::Single:
      return mol.atom(b.a).aromatic && mol.atom(b.b).aromatic ? "-" : "";
    case BondOrder::Double: return "=";
    case BondOrder::Triple: return "#";
    case BondOrder::Aromatic: return "";
  }
  return "";
}

std::string ring_label(int d) { return d < 10 ? std::string(1, static_cast<char>('0' + d)) : "%" + std::to_string(d); }

constexpr int kLeafBudget = 2000;

}  // namespace

std::string write_smiles(const MolGraph& mol, std::span<const int> ranks) {
  const int n = static_cast<int>(mol.size());
  if (n == 0) return "";
  std::vector<int> state(static_cast<std::size_t>(n), 0);
  std::vector<std::vector<std::pair<int, int>>> children(static_cast<std::size_t>(n));  // (atom, bond)
  // ring events per atom: (partner rank, bond, opening?)
  std::vector<std::vector<std::tuple<int, int, bool>>> rings(static_cast<std::size_t>(n));

  auto sorted_neighbors = [&](int u) {
    std::vector<Neighbor> nbs(mol.neighbors(u).begin(), mol.neighbors(u).end());
    std::sort(nbs.begin(), nbs.end(), [&](const Neighbor& x, const Neighbor& y) {
      return ranks[static_cast<std::size_t>(x.atom)] < ranks[static_cast<std::size_t>(y.atom)];
    });
    return nbs;
  };

  std::function<void(int, int)> walk = [&](int u, int parent_bond) {
    state[static_cast<std::size_t>(u)] = 1;
    for (const auto& nb : sorted_neighbors(u)) {
      if (nb.bond == parent_bond) continue;
      const auto v = static_cast<std::size_t>(nb.atom);
      if (state[v] == 0) {
        children[static_cast<std::size_t>(u)].emplace_back(nb.atom, nb.bond);
        walk(nb.atom, nb.bond);
      } else if (state[v] == 1) {
        rings[v].emplace_back(ranks[static_cast<std::size_t>(u)], nb.bond, true);
        rings[static_cast<std::size_t>(u)].emplace_back(ranks[v], nb.bond, false);
      }
    }
    state[static_cast<std::size_t>(u)] = 2;
  };

  std::vector<int> roots;
  std::vector<int> by_rank(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) by_rank[static_cast<std::size_t>(i)] = i;
  std::sort(by_rank.begin(), by_rank.end(), [&](int a, int b) { return ranks[static_cast<std::size_t>(a)] < ranks[static_cast<std::size_t>(b)]; });
  for (int a : by_rank) {
    if (state[static_cast<std::size_t>(a)] != 0) continue;
    roots.push_back(a);
    walk(a, -1);
  }

  std::vector<int> digit_of_bond(mol.bonds().size(), -1);
  std::vector<bool> digit_used(100, false);
  std::string out;

  std::function<void(int)> emit = [&](int u) {
    out += atom_token(mol, u);
    auto events = rings[static_cast<std::size_t>(u)];
    std::sort(events.begin(), events.end());
    std::vector<int> closing;
    for (const auto& [partner, bond, opening] : events) {
      if (opening) continue;
      closing.push_back(bond);
    }
    std::string opens;
    for (const auto& [partner, bond, opening] : events) {
      if (!opening) continue;
      int d = 1;
      while (digit_used[static_cast<std::size_t>(d)]) ++d;
      digit_used[static_cast<std::size_t>(d)] = true;
      digit_of_bond[static_cast<std::size_t>(bond)] = d;
      opens += bond_token(mol, mol.bond(bond)) + ring_label(d);
    }
    for (int bond : closing) {
      const int d = digit_of_bond[static_cast<std::size_t>(bond)];
      out += ring_label(d);
      digit_used[static_cast<std::size_t>(d)] = false;
    }
    out += opens;
    const auto& ch = children[static_cast<std::size_t>(u)];
    for (std::size_t k = 0; k < ch.size(); ++k) {
      const bool last = k + 1 == ch.size();
      if (!last) out += '(';
      out += bond_token(mol, mol.bond(ch[k].second));
      emit(ch[k].first);
      if (!last) out += ')';
    }
  };

  for (std::size_t r = 0; r < roots.size(); ++r) {
    if (r > 0) out += '.';
    emit(roots[r]);
  }
  return out;
}

namespace {

bool same_atom(const Atom& x, const Atom& y) {
  return x.element == y.element && x.aromatic == y.aromatic && x.charge == y.charge && x.total_h() == y.total_h();
}

// Individualize-and-refine search for the lexicographically smallest SMILES.
// Leaves with equal strings yield automorphisms; a candidate whose orbit under
// the automorphisms fixing the current path was already explored is skipped.
struct CanonicalSearch {
  const MolGraph& mol;
  std::string best;
  std::vector<int> best_ranks;
  int leaves = 0;
  std::vector<std::vector<int>> automorphisms;
  std::vector<int> path;

  void record(const std::vector<int>& ranks) {
    const auto n = mol.size();
    std::vector<int> best_atom(n), atom(n);
    for (std::size_t i = 0; i < n; ++i) {
      best_atom[static_cast<std::size_t>(best_ranks[i])] = static_cast<int>(i);
      atom[static_cast<std::size_t>(ranks[i])] = static_cast<int>(i);
    }
    std::vector<int> map(n);
    for (std::size_t k = 0; k < n; ++k) map[static_cast<std::size_t>(best_atom[k])] = atom[k];
    for (std::size_t i = 0; i < n; ++i)
      if (!same_atom(mol.atom(static_cast<int>(i)), mol.atom(map[i]))) return;
    for (const auto& b : mol.bonds()) {
      const int other = mol.find_bond(map[static_cast<std::size_t>(b.a)], map[static_cast<std::size_t>(b.b)]);
      if (other < 0 || mol.bond(other).order != b.order) return;
    }
    automorphisms.push_back(std::move(map));
  }

  bool explored_orbit(int c, const std::vector<int>& explored) const {
    std::vector<int> parent(mol.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = static_cast<int>(i);
    auto find = [&](int x) {
      while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      return x;
    };
    for (const auto& a : automorphisms) {
      bool fixes = true;
      for (int p : path) fixes = fixes && a[static_cast<std::size_t>(p)] == p;
      if (!fixes) continue;
      for (std::size_t v = 0; v < a.size(); ++v) parent[static_cast<std::size_t>(find(static_cast<int>(v)))] = find(a[v]);
    }
    for (int e : explored)
      if (find(e) == find(c)) return true;
    return false;
  }

  void run(std::vector<int> ranks) {
    refine(mol, ranks);
    const int n = static_cast<int>(mol.size());
    if (class_count(ranks) == n) {
      ++leaves;
      auto s = write_smiles(mol, ranks);
      if (best_ranks.empty() || s < best) {
        best = std::move(s);
        best_ranks = ranks;
      } else if (s == best) {
        record(ranks);
      }
      return;
    }
    // Lowest tied class.
    std::vector<int> counts(static_cast<std::size_t>(n), 0);
    for (int r : ranks) ++counts[static_cast<std::size_t>(r)];
    int tied = 0;
    while (counts[static_cast<std::size_t>(tied)] < 2) ++tied;
    std::vector<int> candidates;
    for (int i = 0; i < n; ++i)
      if (ranks[static_cast<std::size_t>(i)] == tied) candidates.push_back(i);
    std::vector<int> explored;
    for (int c : candidates) {
      if (leaves >= kLeafBudget && c != candidates.front()) break;
      if (!explored.empty() && explored_orbit(c, explored)) continue;
      auto next = ranks;
      for (int i : candidates)
        if (i != c) next[static_cast<std::size_t>(i)] = tied + 1;
      path.push_back(c);
      run(std::move(next));
      path.pop_back();
      explored.push_back(c);
    }
  }
};

}  // namespace

std::vector<int> canonical_ranks(const MolGraph& mol) {
  if (mol.empty()) return {};
  if (mol.fragments().size() != 1) throw Error("canonicalization requires a single-fragment molecule");
  CanonicalSearch search{mol, {}, {}, 0, {}, {}};
  search.run(initial_ranks(mol));
  return search.best_ranks;
}

std::string write_canonical_smiles(const MolGraph& mol) {
  if (mol.empty()) return "";
  if (mol.fragments().size() != 1) throw Error("canonicalization requires a single-fragment molecule");
  CanonicalSearch search{mol, {}, {}, 0, {}, {}};
  search.run(initial_ranks(mol));
  return search.best;
}

}  // namespace synflow::chem
