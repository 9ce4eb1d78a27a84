// Molecular graphs, restricted SMILES I/O, canonical forms, circular
// fingerprints, Tanimoto similarity and Bemis-Murcko scaffolds.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synflow/util.hpp"

namespace synflow::chem {

enum class Element : std::uint8_t {
  B = 5, C = 6, N = 7, O = 8, F = 9, P = 15, S = 16, Cl = 17, Br = 35, I = 53
};

inline int atomic_number(Element e) { return static_cast<int>(e); }
std::string_view symbol(Element e);
std::optional<Element> element_from_symbol(std::string_view sym);
std::optional<Element> element_from_number(int z);

/// Allowed valences for an element carrying `charge`, smallest first.
/// Empty when the charge state is not representable.
std::vector<int> allowed_valences(Element e, int charge);

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

/// Contribution of a bond to an atom's valence; aromatic bonds count 1 and the
/// aromatic pi contribution is handled per atom.
inline int bond_valence(BondOrder o) { return o == BondOrder::Aromatic ? 1 : static_cast<int>(o); }

struct Atom {
  Element element = Element::C;
  bool aromatic = false;
  int charge = 0;
  /// Hydrogen count fixed by the notation (bracket atoms).
  std::optional<int> explicit_h;
  /// Hydrogens derived from the default valence model; refreshed by perceive().
  int implicit_h = 0;

  int total_h() const { return explicit_h.value_or(implicit_h); }
};

struct Bond {
  int a = 0;
  int b = 0;
  BondOrder order = BondOrder::Single;
  int other(int atom) const { return atom == a ? b : a; }
};

struct Neighbor {
  int atom;
  int bond;
};

/// Attributed molecular graph. Mutating calls leave ring and hydrogen data
/// stale until perceive() is called; every public constructor in this library
/// returns a perceived graph.
class MolGraph {
 public:
  int add_atom(const Atom& atom);
  int add_bond(int a, int b, BondOrder order);
  void remove_bond(int a, int b);
  void set_bond_order(int a, int b, BondOrder order);

  std::size_t size() const { return atoms_.size(); }
  bool empty() const { return atoms_.empty(); }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const Atom& atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }
  Atom& atom(int i) { return atoms_[static_cast<std::size_t>(i)]; }
  const std::vector<Bond>& bonds() const { return bonds_; }
  const Bond& bond(int i) const { return bonds_[static_cast<std::size_t>(i)]; }
  std::span<const Neighbor> neighbors(int i) const { return adjacency_[static_cast<std::size_t>(i)]; }
  int degree(int i) const { return static_cast<int>(adjacency_[static_cast<std::size_t>(i)].size()); }
  /// Bond index joining a and b, or -1.
  int find_bond(int a, int b) const;
  /// Sum of bond valences around atom i (aromatic bonds count 1).
  int bond_valence_sum(int i) const;

  bool atom_in_ring(int i) const { return atom_ring_[static_cast<std::size_t>(i)]; }
  bool bond_in_ring(int b) const { return bond_ring_[static_cast<std::size_t>(b)]; }

  /// Recompute ring membership and implicit hydrogens; validates aromatic
  /// ring membership and valences. Throws chem::ValenceError.
  void perceive();
  /// Ring membership only; no validation.
  void compute_rings();

  /// Connected components as sorted atom index lists.
  std::vector<std::vector<int>> fragments() const;

  /// Induced subgraph on atoms with keep[i] == true. Atoms losing bonds gain
  /// hydrogens. The result is perceived.
  MolGraph induced_subgraph(const std::vector<bool>& keep) const;

  /// Graph with atom i moved to position perm[i].
  MolGraph permuted(std::span<const int> perm) const;

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<Neighbor>> adjacency_;
  std::vector<bool> atom_ring_;
  std::vector<bool> bond_ring_;
};

class ValenceError : public Error {
 public:
  ValenceError(const std::string& what, int atom) : Error(what), atom_(atom) {}
  int atom() const { return atom_; }

 private:
  int atom_;
};

/// Hydrogens implied by the default valence model for `atom` given its bond
/// valence sum, or nullopt when no allowed valence fits.
std::optional<int> implicit_hydrogens(const Atom& atom, int bond_sum);

struct SmilesFlags {
  bool stereo_stripped = false;
};

/// Restricted SMILES reader: organic subset, aromatic b/c/n/o/p/s, bracket
/// atoms with H count and charge, ring closures (digits and %nn), branches,
/// bonds - = # : and '.' separators. Stereo marks are dropped and flagged.
MolGraph parse_smiles(std::string_view text, SmilesFlags* flags = nullptr);

/// Canonical atom ranks: a permutation of 0..n-1 that is identical for
/// isomorphic inputs. Throws on multi-fragment input.
std::vector<int> canonical_ranks(const MolGraph& mol);

/// Canonical SMILES. Throws Error for multi-fragment input.
std::string write_canonical_smiles(const MolGraph& mol);

/// SMILES written with the DFS order implied by `ranks` (lowest rank first).
std::string write_smiles(const MolGraph& mol, std::span<const int> ranks);

/// Graph isomorphism by direct backtracking (independent of canonicalization).
bool isomorphic(const MolGraph& a, const MolGraph& b);

/// Fixed-length bit vector.
class Fingerprint {
 public:
  Fingerprint() = default;
  Fingerprint(int nbits, int radius);

  int nbits() const { return nbits_; }
  int radius() const { return radius_; }
  bool test(int bit) const { return (words_[static_cast<std::size_t>(bit) / 64] >> (bit % 64)) & 1ULL; }
  void set(int bit) { words_[static_cast<std::size_t>(bit) / 64] |= 1ULL << (bit % 64); }
  int popcount() const;
  const std::vector<std::uint64_t>& words() const { return words_; }
  bool operator==(const Fingerprint&) const = default;

 private:
  int nbits_ = 0;
  int radius_ = 0;
  std::vector<std::uint64_t> words_;
};

inline constexpr int kDefaultFingerprintBits = 2048;
inline constexpr int kDefaultFingerprintRadius = 2;

/// ECFP-style circular fingerprint. Atom identifiers are FNV-1a hashes of
/// (element, degree, charge, aromatic, H count), refined `radius` times with
/// sorted (bond order, neighbor id) lists; each identifier sets bit id % nbits.
Fingerprint morgan_fingerprint(const MolGraph& mol, int radius = kDefaultFingerprintRadius,
                               int nbits = kDefaultFingerprintBits);

/// |a & b| / |a | b|; 1.0 when both are empty. Throws on mismatched lengths.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

struct Scaffold {
  MolGraph graph;
  bool acyclic = false;
};

/// Ring systems plus linkers, keeping exocyclic double-bonded atoms.
Scaffold bemis_murcko_scaffold(const MolGraph& mol);

inline std::size_t heavy_atom_count(const MolGraph& mol) { return mol.size(); }

struct BuildingBlockRecord {
  std::string smiles;
  std::string id;
  MolGraph mol;
};

/// Reads `SMILES<TAB>optional-id` lines; '#' starts a comment line.
std::vector<BuildingBlockRecord> read_building_blocks(const std::filesystem::path& path);

}  // namespace synflow::chem
