#include <algorithm>
#include <bit>
#include <fstream>

#include "synflow/chemgraph.hpp"

namespace synflow::chem {

Fingerprint::Fingerprint(int nbits, int radius) : nbits_(nbits), radius_(radius) {
  if (nbits < 64 || (nbits & (nbits - 1)) != 0) throw ContractViolation("fingerprint length must be a power of two >= 64");
  if (radius < 0) throw ContractViolation("fingerprint radius must be non-negative");
  words_.assign(static_cast<std::size_t>(nbits / 64), 0);
}

int Fingerprint::popcount() const {
  int c = 0;
  for (auto w : words_) c += std::popcount(w);
  return c;
}

Fingerprint morgan_fingerprint(const MolGraph& mol, int radius, int nbits) {
  Fingerprint fp(nbits, radius);
  const std::size_t n = mol.size();
  std::vector<std::uint64_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = mol.atom(static_cast<int>(i));
    ids[i] = StableHash()
                 .add(atomic_number(a.element))
                 .add(mol.degree(static_cast<int>(i)))
                 .add(a.charge)
                 .add(a.aromatic ? 1 : 0)
                 .add(a.total_h())
                 .value();
    fp.set(static_cast<int>(ids[i] % static_cast<std::uint64_t>(nbits)));
  }
  for (int iter = 1; iter <= radius; ++iter) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<int, std::uint64_t>> env;
      for (const auto& nb : mol.neighbors(static_cast<int>(i)))
        env.emplace_back(static_cast<int>(mol.bond(nb.bond).order), ids[static_cast<std::size_t>(nb.atom)]);
      std::sort(env.begin(), env.end());
      StableHash h;
      h.add(iter).add(ids[i]);
      for (const auto& [order, id] : env) h.add(order).add(id);
      next[i] = h.value();
      fp.set(static_cast<int>(next[i] % static_cast<std::uint64_t>(nbits)));
    }
    ids = std::move(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.nbits() != b.nbits()) throw ContractViolation("tanimoto on fingerprints of different lengths");
  int both = 0;
  int either = 0;
  for (std::size_t i = 0; i < a.words().size(); ++i) {
    both += std::popcount(a.words()[i] & b.words()[i]);
    either += std::popcount(a.words()[i] | b.words()[i]);
  }
  if (either == 0) return 1.0;
  return static_cast<double>(both) / static_cast<double>(either);
}

Scaffold bemis_murcko_scaffold(const MolGraph& mol) {
  const std::size_t n = mol.size();
  std::vector<bool> keep(n, true);
  std::vector<int> degree(n);
  for (std::size_t i = 0; i < n; ++i) degree[i] = mol.degree(static_cast<int>(i));

  // Prune terminal non-ring atoms to a fixpoint: what remains is rings + linkers.
  std::vector<int> queue;
  for (std::size_t i = 0; i < n; ++i)
    if (!mol.atom_in_ring(static_cast<int>(i)) && degree[i] <= 1) queue.push_back(static_cast<int>(i));
  while (!queue.empty()) {
    const int u = queue.back();
    queue.pop_back();
    if (!keep[static_cast<std::size_t>(u)]) continue;
    keep[static_cast<std::size_t>(u)] = false;
    for (const auto& nb : mol.neighbors(u)) {
      const auto v = static_cast<std::size_t>(nb.atom);
      if (!keep[v]) continue;
      if (--degree[v] <= 1 && !mol.atom_in_ring(nb.atom)) queue.push_back(nb.atom);
    }
  }
  const bool any_core = std::find(keep.begin(), keep.end(), true) != keep.end();
  if (!any_core) return {MolGraph{}, true};

  // Exocyclic and linker double-bonded terminal atoms stay with the core.
  auto core = keep;
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i] || mol.degree(static_cast<int>(i)) != 1) continue;
    const auto& nb = mol.neighbors(static_cast<int>(i))[0];
    if (core[static_cast<std::size_t>(nb.atom)] && mol.bond(nb.bond).order == BondOrder::Double) keep[i] = true;
  }
  return {mol.induced_subgraph(keep), false};
}

std::vector<BuildingBlockRecord> read_building_blocks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open building-block file " + path.string());
  std::vector<BuildingBlockRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    BuildingBlockRecord rec;
    rec.smiles = line.substr(0, tab);
    if (tab != std::string::npos) rec.id = line.substr(tab + 1);
    try {
      rec.mol = parse_smiles(rec.smiles);
    } catch (const ParseError& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace synflow::chem
