// Reaction templates: a restricted SMARTS-like pattern language, subgraph
// matching, and forward/backward template application.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "synflow/chemgraph.hpp"

namespace synflow::tmpl {

struct AtomPattern {
  std::optional<int> atomic_number;
  std::optional<bool> aromatic;
  std::optional<int> charge;
  std::optional<int> h_count;
  /// Total connections: heavy-atom degree plus hydrogens (SMARTS X).
  std::optional<int> connectivity;
  std::optional<bool> in_ring;
  /// Atom-map index; 0 when unmapped.
  int map_index = 0;
  bool wildcard = false;
};

enum class BondPattern : std::uint8_t { Single, Double, Triple, Aromatic, Any, SingleOrAromatic };

struct PatternBond {
  int a = 0;
  int b = 0;
  BondPattern order = BondPattern::SingleOrAromatic;
};

class PatternGraph {
 public:
  int add_atom(const AtomPattern& atom);
  int add_bond(int a, int b, BondPattern order);

  std::size_t size() const { return atoms_.size(); }
  const std::vector<AtomPattern>& atoms() const { return atoms_; }
  const AtomPattern& atom(int i) const { return atoms_[static_cast<std::size_t>(i)]; }
  AtomPattern& atom(int i) { return atoms_[static_cast<std::size_t>(i)]; }
  const std::vector<PatternBond>& bonds() const { return bonds_; }
  const PatternBond& bond(int i) const { return bonds_[static_cast<std::size_t>(i)]; }
  const std::vector<chem::Neighbor>& neighbors(int i) const { return adjacency_[static_cast<std::size_t>(i)]; }
  int find_bond(int a, int b) const;
  bool connected() const;

 private:
  std::vector<AtomPattern> atoms_;
  std::vector<PatternBond> bonds_;
  std::vector<std::vector<chem::Neighbor>> adjacency_;
};

/// Pattern atom index -> molecule atom index.
using Embedding = std::vector<int>;

/// A single connected pattern such as `[C;H1:2]=O` or `c[Br]`.
PatternGraph parse_pattern(std::string_view text);

bool atom_matches(const AtomPattern& p, const chem::MolGraph& mol, int atom);
bool bond_matches(BondPattern p, chem::BondOrder order);

/// All embeddings of `pattern` in `mol`, automorphic images included, sorted
/// lexicographically.
std::vector<Embedding> match_pattern(const PatternGraph& pattern, const chem::MolGraph& mol);
/// True when at least one embedding exists (stops at the first).
bool has_match(const PatternGraph& pattern, const chem::MolGraph& mol);
/// Independent check of one embedding: injective, constraints hold, bonds preserved.
bool embedding_satisfies(const PatternGraph& pattern, const chem::MolGraph& mol, const Embedding& emb);

/// Reference to atom `atom` of reactant pattern `reactant`.
struct AtomRef {
  int reactant = 0;
  int atom = 0;
  bool operator==(const AtomRef&) const = default;
};

/// Difference between the reactant and product sides.
struct EditSet {
  struct BondChange {
    AtomRef ra, rb;
    int pa = 0, pb = 0;  // product pattern atoms
    std::optional<BondPattern> before;  // nullopt: bond formed
    std::optional<BondPattern> after;   // nullopt: bond broken
  };
  struct AtomChange {
    AtomRef r;
    int p = 0;
    std::optional<int> charge_before, charge_after;
    std::optional<int> element_before, element_after;
  };
  /// Reactant atoms absent from the product (leaving groups).
  std::vector<AtomRef> deleted;
  std::vector<BondChange> bonds;
  std::vector<AtomChange> atoms;
};

struct ReactionTemplate {
  std::string id;
  std::string text;
  std::vector<PatternGraph> reactants;
  PatternGraph product;
  /// Reactant atom corresponding to each product atom.
  std::vector<AtomRef> product_origin;
  EditSet edits;

  int arity() const { return static_cast<int>(reactants.size()); }
};

/// Parses `R1>>P` or `R1.R2>>P`. Unmapped product atoms are paired with
/// unmapped reactant atoms of the same element bonded the same way to a
/// corresponding atom; any leftover is an error.
ReactionTemplate parse_template(std::string_view text, std::string id = {});

class TemplateNotApplicable : public Error {
 public:
  using Error::Error;
};

/// A molecule together with its canonical SMILES.
struct Molecule {
  std::string smiles;
  chem::MolGraph mol;
};

/// Products of applying `t` to `reactants` (ordered as the reactant patterns),
/// deduplicated and sorted by canonical SMILES. Empty when no embedding
/// combination produces a valid single-fragment product. Rejected candidates
/// are described in `diagnostics` when given.
std::vector<Molecule> forward_products(const ReactionTemplate& t, std::span<const chem::MolGraph> reactants,
                                       std::vector<std::string>* diagnostics = nullptr);

/// As forward_products, but throws TemplateNotApplicable when a reactant does
/// not match its pattern.
std::vector<Molecule> apply_forward(const ReactionTemplate& t, std::span<const chem::MolGraph> reactants,
                                    std::vector<std::string>* diagnostics = nullptr);

/// Reactant sets (one Molecule per reactant pattern, in pattern order) that
/// `t` maps onto `product`; deduplicated and sorted.
std::vector<std::vector<Molecule>> apply_backward(const ReactionTemplate& t, const chem::MolGraph& product);

/// True iff some forward product, taken backward, recovers the reactant multiset.
bool check_reversible(const ReactionTemplate& t, std::span<const chem::MolGraph> reactants);

/// Reads `id<TAB>template` lines; '#' starts a comment line.
std::vector<ReactionTemplate> read_templates(const std::filesystem::path& path);

}  // namespace synflow::tmpl
