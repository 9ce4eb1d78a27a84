#include <algorithm>
#include <map>
#include <set>

#include "synflow/templates.hpp"

namespace synflow::tmpl {

namespace {

using chem::BondOrder;
using chem::MolGraph;

bool concrete(BondPattern p) { return p != BondPattern::Any && p != BondPattern::SingleOrAromatic; }

BondOrder to_order(BondPattern p, bool both_aromatic) {
  switch (p) {
    case BondPattern::Single: return BondOrder::Single;
    case BondPattern::Double: return BondOrder::Double;
    case BondPattern::Triple: return BondOrder::Triple;
    case BondPattern::Aromatic: return BondOrder::Aromatic;
    case BondPattern::Any:
    case BondPattern::SingleOrAromatic: break;
  }
  return both_aromatic ? BondOrder::Aromatic : BondOrder::Single;
}

std::vector<int> valence_sums(const MolGraph& m) {
  std::vector<int> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m.bond_valence_sum(static_cast<int>(i));
  return out;
}

// Hydrogens on an edited atom follow the valence model again, except for
// aromatic heteroatoms whose H count is explicit by notation: those trade
// hydrogens one-for-one against bond valence.
void refresh_hydrogens(MolGraph& m, int i, int before_sum) {
  auto& a = m.atom(i);
  if (a.aromatic && a.element != chem::Element::C && a.element != chem::Element::B) {
    const int delta = m.bond_valence_sum(i) - before_sum;
    a.explicit_h = std::max(0, a.total_h() - delta);
  } else {
    a.explicit_h.reset();
  }
}

void detach(MolGraph& m, int atom, std::set<int>& touched) {
  std::vector<int> nbrs;
  for (const auto& nb : m.neighbors(atom)) nbrs.push_back(nb.atom);
  for (int v : nbrs) {
    m.remove_bond(atom, v);
    touched.insert(v);
  }
}

// Copies the atoms with keep[i] set; no perception.
MolGraph compact(const MolGraph& m, const std::vector<bool>& keep, std::vector<int>& remap) {
  MolGraph out;
  remap.assign(m.size(), -1);
  for (std::size_t i = 0; i < m.size(); ++i)
    if (keep[i]) remap[i] = out.add_atom(m.atom(static_cast<int>(i)));
  for (const auto& b : m.bonds()) {
    const int a = remap[static_cast<std::size_t>(b.a)];
    const int c = remap[static_cast<std::size_t>(b.b)];
    if (a >= 0 && c >= 0) out.add_bond(a, c, b.order);
  }
  return out;
}

void note(std::vector<std::string>* diagnostics, const ReactionTemplate& t, const std::string& what) {
  if (diagnostics) diagnostics->push_back((t.id.empty() ? t.text : t.id) + ": " + what);
}

}  // namespace

std::vector<Molecule> forward_products(const ReactionTemplate& t, std::span<const MolGraph> reactants,
                                       std::vector<std::string>* diagnostics) {
  if (static_cast<int>(reactants.size()) != t.arity()) throw ContractViolation("reactant count does not match template arity");
  const std::size_t k = reactants.size();
  std::vector<std::vector<Embedding>> embs(k);
  for (std::size_t r = 0; r < k; ++r) {
    embs[r] = match_pattern(t.reactants[r], reactants[r]);
    if (embs[r].empty()) return {};
  }

  MolGraph combined;
  std::vector<int> offset(k, 0);
  for (std::size_t r = 0; r < k; ++r) {
    offset[r] = static_cast<int>(combined.size());
    for (const auto& a : reactants[r].atoms()) combined.add_atom(a);
    for (const auto& b : reactants[r].bonds()) combined.add_bond(b.a + offset[r], b.b + offset[r], b.order);
  }
  const auto before_sums = valence_sums(combined);

  std::map<std::string, MolGraph> results;
  std::set<std::vector<int>> seen;
  std::vector<std::size_t> pick(k, 0);
  for (;;) {
    auto img = [&](const AtomRef& r) {
      const auto ri = static_cast<std::size_t>(r.reactant);
      return embs[ri][pick[ri]][static_cast<std::size_t>(r.atom)] + offset[ri];
    };

    // Embeddings that agree on every kept and deleted atom give the same product.
    std::vector<int> key;
    for (const auto& o : t.product_origin) key.push_back(img(o));
    std::vector<int> gone;
    for (const auto& d : t.edits.deleted) gone.push_back(img(d));
    std::sort(gone.begin(), gone.end());
    key.push_back(-1);
    key.insert(key.end(), gone.begin(), gone.end());

    if (seen.insert(key).second) {
      MolGraph m = combined;
      std::set<int> touched;
      std::vector<bool> keep(m.size(), true);
      for (int g : gone) {
        keep[static_cast<std::size_t>(g)] = false;
        detach(m, g, touched);
      }
      bool ok = true;
      for (const auto& bc : t.edits.bonds) {
        const int a = img(bc.ra), b = img(bc.rb);
        touched.insert(a);
        touched.insert(b);
        if (!bc.after) {
          m.remove_bond(a, b);
        } else if (!bc.before) {
          if (m.find_bond(a, b) >= 0) {
            note(diagnostics, t, "bond to form already exists");
            ok = false;
            break;
          }
          m.add_bond(a, b, to_order(*bc.after, false));
        } else if (concrete(*bc.after)) {
          m.set_bond_order(a, b, to_order(*bc.after, false));
        }
      }
      if (ok) {
        for (const auto& ac : t.edits.atoms) {
          auto& atom = m.atom(img(ac.r));
          if (ac.charge_after)
            atom.charge = *ac.charge_after;
          else if (ac.charge_before)
            atom.charge = 0;
          if (ac.element_after) atom.element = *chem::element_from_number(*ac.element_after);
          touched.insert(img(ac.r));
        }
        for (int i : touched)
          if (keep[static_cast<std::size_t>(i)]) refresh_hydrogens(m, i, before_sums[static_cast<std::size_t>(i)]);

        std::vector<int> remap;
        MolGraph g = compact(m, keep, remap);
        try {
          g.perceive();
          const int anchor = remap[static_cast<std::size_t>(img(t.product_origin.front()))];
          const auto frags = g.fragments();
          std::vector<bool> in_product(g.size(), false);
          for (const auto& f : frags)
            if (std::binary_search(f.begin(), f.end(), anchor))
              for (int i : f) in_product[static_cast<std::size_t>(i)] = true;
          bool single = true;
          for (const auto& o : t.product_origin)
            if (!in_product[static_cast<std::size_t>(remap[static_cast<std::size_t>(img(o))])]) single = false;
          if (!single) {
            note(diagnostics, t, "product atoms span several fragments");
          } else {
            if (frags.size() > 1) g = g.induced_subgraph(in_product);
            auto smiles = chem::write_canonical_smiles(g);
            results.emplace(std::move(smiles), std::move(g));
          }
        } catch (const chem::ValenceError& e) {
          note(diagnostics, t, std::string("product discarded: ") + e.what());
        }
      }
    }

    std::size_t r = 0;
    while (r < k && ++pick[r] == embs[r].size()) pick[r++] = 0;
    if (r == k) break;
  }

  std::vector<Molecule> out;
  out.reserve(results.size());
  for (auto& [s, g] : results) out.push_back({s, std::move(g)});
  return out;
}

std::vector<Molecule> apply_forward(const ReactionTemplate& t, std::span<const MolGraph> reactants,
                                    std::vector<std::string>* diagnostics) {
  if (static_cast<int>(reactants.size()) != t.arity()) throw ContractViolation("reactant count does not match template arity");
  for (std::size_t r = 0; r < reactants.size(); ++r)
    if (!has_match(t.reactants[r], reactants[r]))
      throw TemplateNotApplicable("template not applicable: reactant " + std::to_string(r + 1) + " does not match");
  return forward_products(t, reactants, diagnostics);
}

std::vector<std::vector<Molecule>> apply_backward(const ReactionTemplate& t, const MolGraph& product) {
  const auto embs = match_pattern(t.product, product);
  if (embs.empty()) return {};
  for (const auto& d : t.edits.deleted)
    if (!t.reactants[static_cast<std::size_t>(d.reactant)].atom(d.atom).atomic_number) return {};

  const auto before_sums = valence_sums(product);
  std::map<std::vector<std::string>, std::vector<Molecule>> results;
  const std::size_t arity = t.reactants.size();

  for (const auto& emb : embs) {
    MolGraph m = product;
    std::vector<std::vector<int>> img(arity);
    for (std::size_t r = 0; r < arity; ++r) img[r].assign(t.reactants[r].size(), -1);
    for (std::size_t p = 0; p < emb.size(); ++p) {
      const auto& o = t.product_origin[p];
      img[static_cast<std::size_t>(o.reactant)][static_cast<std::size_t>(o.atom)] = emb[p];
    }
    auto at = [&](const AtomRef& r) { return img[static_cast<std::size_t>(r.reactant)][static_cast<std::size_t>(r.atom)]; };

    std::set<int> touched;
    for (const auto& d : t.edits.deleted) {
      const auto& pa = t.reactants[static_cast<std::size_t>(d.reactant)].atom(d.atom);
      chem::Atom a;
      a.element = *chem::element_from_number(*pa.atomic_number);
      a.aromatic = pa.aromatic.value_or(false);
      a.charge = pa.charge.value_or(0);
      if (a.aromatic && a.element != chem::Element::C && a.element != chem::Element::B) a.explicit_h = pa.h_count.value_or(0);
      img[static_cast<std::size_t>(d.reactant)][static_cast<std::size_t>(d.atom)] = m.add_atom(a);
    }
    bool ok = true;
    for (std::size_t r = 0; r < arity && ok; ++r) {
      for (const auto& b : t.reactants[r].bonds()) {
        const int a = img[r][static_cast<std::size_t>(b.a)], c = img[r][static_cast<std::size_t>(b.b)];
        if (a < static_cast<int>(product.size()) && c < static_cast<int>(product.size())) continue;
        if (m.find_bond(a, c) >= 0) {
          ok = false;
          break;
        }
        m.add_bond(a, c, to_order(b.order, m.atom(a).aromatic && m.atom(c).aromatic));
        if (a < static_cast<int>(product.size())) touched.insert(a);
        if (c < static_cast<int>(product.size())) touched.insert(c);
      }
    }
    if (!ok) continue;
    for (const auto& bc : t.edits.bonds) {
      const int a = at(bc.ra), b = at(bc.rb);
      touched.insert(a);
      touched.insert(b);
      if (!bc.before) {
        m.remove_bond(a, b);
      } else if (!bc.after) {
        if (m.find_bond(a, b) >= 0) {
          ok = false;
          break;
        }
        m.add_bond(a, b, to_order(*bc.before, m.atom(a).aromatic && m.atom(b).aromatic));
      } else if (concrete(*bc.before)) {
        m.set_bond_order(a, b, to_order(*bc.before, false));
      }
    }
    if (!ok) continue;
    for (const auto& ac : t.edits.atoms) {
      auto& atom = m.atom(at(ac.r));
      if (ac.charge_before)
        atom.charge = *ac.charge_before;
      else if (ac.charge_after)
        atom.charge = 0;
      if (ac.element_after && ac.element_before) atom.element = *chem::element_from_number(*ac.element_before);
      touched.insert(at(ac.r));
    }
    for (int i : touched) refresh_hydrogens(m, i, before_sums[static_cast<std::size_t>(i)]);

    try {
      m.perceive();
    } catch (const chem::ValenceError&) {
      continue;
    }
    const auto frags = m.fragments();
    if (frags.size() != arity) continue;

    std::vector<Molecule> set;
    for (std::size_t r = 0; r < arity && ok; ++r) {
      const auto it = std::find_if(frags.begin(), frags.end(), [&](const std::vector<int>& f) {
        return std::binary_search(f.begin(), f.end(), img[r][0]);
      });
      std::vector<bool> keep(m.size(), false);
      for (int i : *it) keep[static_cast<std::size_t>(i)] = true;
      Embedding local;
      for (int i : img[r]) {
        if (!keep[static_cast<std::size_t>(i)]) {
          ok = false;
          break;
        }
        local.push_back(static_cast<int>(std::lower_bound(it->begin(), it->end(), i) - it->begin()));
      }
      if (!ok) break;
      MolGraph sub = m.induced_subgraph(keep);
      if (!embedding_satisfies(t.reactants[r], sub, local)) {
        ok = false;
        break;
      }
      auto smiles = chem::write_canonical_smiles(sub);
      set.push_back({std::move(smiles), std::move(sub)});
    }
    if (!ok) continue;
    std::vector<std::string> key;
    for (const auto& mol : set) key.push_back(mol.smiles);
    results.emplace(std::move(key), std::move(set));
  }

  std::vector<std::vector<Molecule>> out;
  out.reserve(results.size());
  for (auto& [key, set] : results) out.push_back(std::move(set));
  return out;
}

bool check_reversible(const ReactionTemplate& t, std::span<const MolGraph> reactants) {
  std::vector<std::string> target;
  for (const auto& r : reactants) target.push_back(chem::write_canonical_smiles(r));
  std::sort(target.begin(), target.end());
  for (const auto& prod : forward_products(t, reactants)) {
    for (const auto& set : apply_backward(t, prod.mol)) {
      std::vector<std::string> got;
      for (const auto& m : set) got.push_back(m.smiles);
      std::sort(got.begin(), got.end());
      if (got == target) return true;
    }
  }
  return false;
}

}  // namespace synflow::tmpl
