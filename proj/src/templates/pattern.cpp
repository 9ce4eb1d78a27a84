#include <cctype>
#include <fstream>
#include <map>

#include "synflow/templates.hpp"

namespace synflow::tmpl {

int PatternGraph::add_atom(const AtomPattern& atom) {
  atoms_.push_back(atom);
  adjacency_.emplace_back();
  return static_cast<int>(atoms_.size()) - 1;
}

int PatternGraph::add_bond(int a, int b, BondPattern order) {
  const int n = static_cast<int>(atoms_.size());
  if (a == b || a < 0 || b < 0 || a >= n || b >= n) throw ContractViolation("invalid pattern bond endpoints");
  if (find_bond(a, b) >= 0) throw ContractViolation("duplicate pattern bond");
  bonds_.push_back({a, b, order});
  const int idx = static_cast<int>(bonds_.size()) - 1;
  adjacency_[static_cast<std::size_t>(a)].push_back({b, idx});
  adjacency_[static_cast<std::size_t>(b)].push_back({a, idx});
  return idx;
}

int PatternGraph::find_bond(int a, int b) const {
  if (a < 0 || static_cast<std::size_t>(a) >= adjacency_.size()) return -1;
  for (const auto& nb : adjacency_[static_cast<std::size_t>(a)])
    if (nb.atom == b) return nb.bond;
  return -1;
}

bool PatternGraph::connected() const {
  if (atoms_.empty()) return true;
  std::vector<bool> seen(atoms_.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const int u = stack.back();
    stack.pop_back();
    for (const auto& nb : neighbors(u))
      if (!seen[static_cast<std::size_t>(nb.atom)]) {
        seen[static_cast<std::size_t>(nb.atom)] = true;
        ++count;
        stack.push_back(nb.atom);
      }
  }
  return count == atoms_.size();
}

namespace detail {

// Parses one side of a template. `base` is the offset of `text` inside the
// full template string so errors point at the original input.
class PatternParser {
 public:
  PatternParser(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  std::vector<PatternGraph> parse_side() {
    std::vector<PatternGraph> parts(1);
    int prev = -1;
    std::optional<BondPattern> pending;
    std::vector<int> branches;
    std::map<int, std::pair<int, std::optional<BondPattern>>> rings;
    std::map<int, std::size_t> ring_offsets;

    if (text_.empty()) throw err("empty pattern", 0);
    while (pos_ < text_.size()) {
      auto& g = parts.back();
      const char c = text_[pos_];
      if (c == '(') {
        if (prev < 0) throw err("branch without preceding atom", pos_);
        branches.push_back(prev);
        ++pos_;
      } else if (c == ')') {
        if (branches.empty()) throw err("unbalanced branch", pos_);
        if (pending) throw err("bond symbol before ')'", pos_);
        prev = branches.back();
        branches.pop_back();
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '~') {
        if (pending) throw err("consecutive bond symbols", pos_);
        pending = c == '-'   ? BondPattern::Single
                  : c == '=' ? BondPattern::Double
                  : c == '#' ? BondPattern::Triple
                  : c == ':' ? BondPattern::Aromatic
                             : BondPattern::Any;
        ++pos_;
      } else if (c == '@' || c == '/' || c == '\\') {
        throw err("stereo and ring-bond primitives are not supported", pos_);
      } else if (c == '.') {
        if (pending) throw err("bond symbol before '.'", pos_);
        if (!branches.empty()) throw err("'.' inside a branch", pos_);
        if (!rings.empty()) throw err("unclosed ring", ring_offsets.begin()->second);
        if (prev < 0) throw err("empty pattern component", pos_);
        parts.emplace_back();
        offsets_.emplace_back();
        prev = -1;
        ++pos_;
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        if (prev < 0) throw err("ring closure without atom", pos_);
        const int number = c - '0';
        auto it = rings.find(number);
        if (it == rings.end()) {
          rings[number] = {prev, pending};
          ring_offsets[number] = pos_;
        } else {
          const auto [other, order] = it->second;
          if (other == prev || g.find_bond(other, prev) >= 0) throw err("invalid ring closure", pos_);
          g.add_bond(other, prev, order ? *order : pending.value_or(BondPattern::SingleOrAromatic));
          rings.erase(it);
          ring_offsets.erase(number);
        }
        pending.reset();
        ++pos_;
      } else {
        const std::size_t start = pos_;
        const int atom = g.add_atom(parse_atom());
        offsets_.back().push_back(start);
        if (prev >= 0) {
          g.add_bond(prev, atom, pending.value_or(BondPattern::SingleOrAromatic));
        } else if (pending) {
          throw err("bond symbol without preceding atom", start);
        }
        pending.reset();
        prev = atom;
      }
    }
    if (pending) throw err("dangling bond symbol", text_.size());
    if (!branches.empty()) throw err("unbalanced branch", text_.size());
    if (!rings.empty()) throw err("unclosed ring", ring_offsets.begin()->second);
    if (prev < 0) throw err("empty pattern component", text_.size());
    return parts;
  }

  /// Offset of every atom, per component, relative to the full template.
  std::size_t atom_offset(std::size_t part, int atom) const {
    return base_ + offsets_[part][static_cast<std::size_t>(atom)];
  }

 private:
  ParseError err(const std::string& what, std::size_t at) const { return ParseError(what, base_ + at); }

  AtomPattern parse_atom() {
    const char c = text_[pos_];
    if (c == '[') return parse_bracket();
    AtomPattern a;
    if (c == '*') {
      a.wildcard = true;
      ++pos_;
      return a;
    }
    if (text_.substr(pos_, 2) == "Cl" || text_.substr(pos_, 2) == "Br") {
      a.atomic_number = chem::atomic_number(*chem::element_from_symbol(text_.substr(pos_, 2)));
      a.aromatic = false;
      pos_ += 2;
      return a;
    }
    if (!element_token(a, c)) throw err(std::string("unknown atom '") + c + "'", pos_);
    ++pos_;
    return a;
  }

  static bool element_token(AtomPattern& a, char c) {
    const bool lower = std::islower(static_cast<unsigned char>(c)) != 0;
    const std::string sym(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    const auto el = chem::element_from_symbol(sym);
    if (!el) return false;
    if (lower && sym != "B" && sym != "C" && sym != "N" && sym != "O" && sym != "P" && sym != "S") return false;
    a.atomic_number = chem::atomic_number(*el);
    a.aromatic = lower;
    return true;
  }

  int read_number(int fallback) {
    if (pos_ >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_]))) return fallback;
    int v = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) v = v * 10 + (text_[pos_++] - '0');
    return v;
  }

  template <typename T>
  void set_once(std::optional<T>& slot, T value, std::size_t at) {
    if (slot && *slot != value) throw err("conflicting atom constraints", at);
    slot = value;
  }

  AtomPattern parse_bracket() {
    const std::size_t open = pos_;
    ++pos_;
    AtomPattern a;
    bool any = false;
    while (true) {
      if (pos_ >= text_.size()) throw err("unterminated bracket atom", open);
      const char c = text_[pos_];
      const std::size_t at = pos_;
      if (c == ']') {
        ++pos_;
        break;
      }
      if (c == ';' || c == '&') {
        ++pos_;
        continue;
      }
      if (c == '$') throw err("recursive patterns are not supported", at);
      if (c == ',') throw err("disjunctions are not supported", at);
      if (c == '@') throw err("stereo primitives are not supported", at);
      any = true;
      if (c == ':') {
        ++pos_;
        const int m = read_number(-1);
        if (m <= 0) throw err("map index must be a positive integer", at);
        a.map_index = m;
        if (pos_ >= text_.size() || text_[pos_] != ']') throw err("map index must close the bracket", pos_);
        continue;
      }
      if (c == '*') {
        a.wildcard = true;
        ++pos_;
      } else if (c == '#') {
        ++pos_;
        const int z = read_number(-1);
        if (z < 0 || !chem::element_from_number(z)) throw err("unsupported atomic number", at);
        set_once(a.atomic_number, z, at);
      } else if (c == 'H') {
        ++pos_;
        set_once(a.h_count, read_number(1), at);
      } else if (c == 'X') {
        ++pos_;
        set_once(a.connectivity, read_number(1), at);
      } else if (c == 'R') {
        ++pos_;
        set_once(a.in_ring, read_number(1) != 0, at);
      } else if (c == '!') {
        ++pos_;
        if (pos_ < text_.size() && text_[pos_] == 'R' &&
            (pos_ + 1 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])))) {
          ++pos_;
          set_once(a.in_ring, false, at);
        } else {
          throw err("negation is supported only as !R", at);
        }
      } else if (c == 'a' || c == 'A') {
        ++pos_;
        set_once(a.aromatic, c == 'a', at);
      } else if (c == '+' || c == '-') {
        const int sign = c == '+' ? 1 : -1;
        ++pos_;
        int mag = 1;
        if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
          mag = read_number(1);
        } else {
          while (pos_ < text_.size() && text_[pos_] == c) {
            ++mag;
            ++pos_;
          }
        }
        set_once(a.charge, sign * mag, at);
      } else {
        AtomPattern e;
        std::size_t len = 0;
        if (pos_ + 1 < text_.size() && std::isupper(static_cast<unsigned char>(c)) &&
            std::islower(static_cast<unsigned char>(text_[pos_ + 1])) && chem::element_from_symbol(text_.substr(pos_, 2))) {
          e.atomic_number = chem::atomic_number(*chem::element_from_symbol(text_.substr(pos_, 2)));
          e.aromatic = false;
          len = 2;
        } else if (element_token(e, c)) {
          len = 1;
        } else {
          throw err(std::string("unknown atom primitive '") + c + "'", at);
        }
        pos_ += len;
        set_once(a.atomic_number, *e.atomic_number, at);
        set_once(a.aromatic, *e.aromatic, at);
      }
    }
    if (!any) throw err("empty bracket atom", open);
    if (a.wildcard && a.atomic_number) throw err("wildcard with an element constraint", open);
    return a;
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
  std::vector<std::vector<std::size_t>> offsets_{1};
};

}  // namespace detail

PatternGraph parse_pattern(std::string_view text) {
  detail::PatternParser parser(text, 0);
  auto parts = parser.parse_side();
  if (parts.size() != 1) throw ParseError("pattern must be a single component", text.find('.'));
  if (!parts[0].connected()) throw ParseError("pattern must be connected", 0);
  return std::move(parts[0]);
}

namespace {

bool same_kind(const AtomPattern& a, const AtomPattern& b) {
  return !a.wildcard && !b.wildcard && a.atomic_number == b.atomic_number && a.aromatic == b.aromatic;
}

EditSet derive_edits(const ReactionTemplate& t) {
  EditSet e;
  std::vector<std::vector<bool>> used(t.reactants.size());
  for (std::size_t k = 0; k < t.reactants.size(); ++k) used[k].assign(t.reactants[k].size(), false);
  for (const auto& r : t.product_origin) used[static_cast<std::size_t>(r.reactant)][static_cast<std::size_t>(r.atom)] = true;
  for (std::size_t k = 0; k < t.reactants.size(); ++k)
    for (std::size_t j = 0; j < used[k].size(); ++j)
      if (!used[k][j]) e.deleted.push_back({static_cast<int>(k), static_cast<int>(j)});

  const int np = static_cast<int>(t.product.size());
  for (int p = 0; p < np; ++p) {
    for (int q = p + 1; q < np; ++q) {
      const AtomRef ra = t.product_origin[static_cast<std::size_t>(p)];
      const AtomRef rb = t.product_origin[static_cast<std::size_t>(q)];
      std::optional<BondPattern> before, after;
      if (ra.reactant == rb.reactant) {
        const auto& rg = t.reactants[static_cast<std::size_t>(ra.reactant)];
        const int b = rg.find_bond(ra.atom, rb.atom);
        if (b >= 0) before = rg.bond(b).order;
      }
      const int b = t.product.find_bond(p, q);
      if (b >= 0) after = t.product.bond(b).order;
      if (before == after) continue;
      e.bonds.push_back({ra, rb, p, q, before, after});
    }
  }

  for (int p = 0; p < np; ++p) {
    const AtomRef r = t.product_origin[static_cast<std::size_t>(p)];
    const auto& ra = t.reactants[static_cast<std::size_t>(r.reactant)].atom(r.atom);
    const auto& pa = t.product.atom(p);
    EditSet::AtomChange ch{r, p, ra.charge, pa.charge, ra.atomic_number, std::nullopt};
    const bool charge_changes = ra.charge != pa.charge;
    if (pa.atomic_number && ra.atomic_number != pa.atomic_number) ch.element_after = pa.atomic_number;
    if (charge_changes || ch.element_after) e.atoms.push_back(ch);
  }
  return e;
}

}  // namespace

ReactionTemplate parse_template(std::string_view text, std::string id) {
  const auto arrow = text.find(">>");
  if (arrow == std::string_view::npos) throw ParseError("template must contain '>>'", text.size());
  if (text.find('>', arrow + 2) != std::string_view::npos) throw ParseError("more than one '>>'", text.find('>', arrow + 2));
  if (text.substr(0, arrow).find('>') != std::string_view::npos) throw ParseError("agents are not supported", text.find('>'));

  ReactionTemplate t;
  t.id = std::move(id);
  t.text = std::string(text);
  detail::PatternParser lhs(text.substr(0, arrow), 0);
  t.reactants = lhs.parse_side();
  if (t.reactants.size() > 2) throw ParseError("templates take one or two reactants", text.find('.'));
  detail::PatternParser rhs(text.substr(arrow + 2), arrow + 2);
  auto products = rhs.parse_side();
  if (products.size() != 1) throw ParseError("product must be a single component", arrow + 2);
  t.product = std::move(products[0]);

  std::map<int, AtomRef> reactant_maps;
  for (std::size_t k = 0; k < t.reactants.size(); ++k) {
    const auto& g = t.reactants[k];
    for (int j = 0; j < static_cast<int>(g.size()); ++j) {
      const auto& a = g.atom(j);
      if (a.wildcard) throw ParseError("wildcard in reactant side", lhs.atom_offset(k, j));
      if (a.map_index == 0) continue;
      if (!reactant_maps.emplace(a.map_index, AtomRef{static_cast<int>(k), j}).second)
        throw ParseError("duplicate map index " + std::to_string(a.map_index), lhs.atom_offset(k, j));
    }
  }

  const int np = static_cast<int>(t.product.size());
  std::vector<std::optional<AtomRef>> origin(static_cast<std::size_t>(np));
  std::vector<std::vector<bool>> taken(t.reactants.size());
  for (std::size_t k = 0; k < t.reactants.size(); ++k) taken[k].assign(t.reactants[k].size(), false);
  std::map<int, int> product_maps;
  for (int p = 0; p < np; ++p) {
    const auto& a = t.product.atom(p);
    if (a.map_index == 0) continue;
    if (!product_maps.emplace(a.map_index, p).second)
      throw ParseError("duplicate map index " + std::to_string(a.map_index), rhs.atom_offset(0, p));
    const auto it = reactant_maps.find(a.map_index);
    if (it == reactant_maps.end()) throw ParseError("unmapped product atom", rhs.atom_offset(0, p));
    origin[static_cast<std::size_t>(p)] = it->second;
    taken[static_cast<std::size_t>(it->second.reactant)][static_cast<std::size_t>(it->second.atom)] = true;
  }

  // Pair unmapped product atoms with unmapped reactant atoms reached through
  // the same bond from corresponding atoms, until nothing changes.
  for (bool changed = true; changed;) {
    changed = false;
    for (int p = 0; p < np; ++p) {
      if (origin[static_cast<std::size_t>(p)]) continue;
      const auto& pa = t.product.atom(p);
      for (const auto& nb : t.product.neighbors(p)) {
        const auto& anchor = origin[static_cast<std::size_t>(nb.atom)];
        if (!anchor) continue;
        const auto& rg = t.reactants[static_cast<std::size_t>(anchor->reactant)];
        const BondPattern want = t.product.bond(nb.bond).order;
        std::optional<int> pick;
        for (const auto& rnb : rg.neighbors(anchor->atom)) {
          if (taken[static_cast<std::size_t>(anchor->reactant)][static_cast<std::size_t>(rnb.atom)]) continue;
          if (rg.atom(rnb.atom).map_index != 0) continue;
          if (!same_kind(rg.atom(rnb.atom), pa) || rg.bond(rnb.bond).order != want) continue;
          if (!pick || rnb.atom < *pick) pick = rnb.atom;
        }
        if (!pick) continue;
        origin[static_cast<std::size_t>(p)] = AtomRef{anchor->reactant, *pick};
        taken[static_cast<std::size_t>(anchor->reactant)][static_cast<std::size_t>(*pick)] = true;
        changed = true;
        break;
      }
    }
  }
  for (int p = 0; p < np; ++p)
    if (!origin[static_cast<std::size_t>(p)]) throw ParseError("unmapped product atom", rhs.atom_offset(0, p));

  t.product_origin.reserve(static_cast<std::size_t>(np));
  for (const auto& o : origin) t.product_origin.push_back(*o);
  t.edits = derive_edits(t);
  return t;
}

std::vector<ReactionTemplate> read_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open template file " + path.string());
  std::vector<ReactionTemplate> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(path.string() + ":" + std::to_string(lineno) + ": expected id<TAB>template");
    try {
      out.push_back(parse_template(line.substr(tab + 1), line.substr(0, tab)));
    } catch (const ParseError& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace synflow::tmpl
