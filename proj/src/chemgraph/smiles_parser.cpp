#include <cctype>
#include <map>

#include "synflow/chemgraph.hpp"

namespace synflow::chem {

namespace {

struct PendingRing {
  int atom;
  std::optional<BondOrder> order;
  std::size_t offset;
};

class SmilesParser {
 public:
  SmilesParser(std::string_view text, SmilesFlags* flags) : text_(text), flags_(flags) {}

  MolGraph parse() {
    if (text_.empty()) return mol_;
    int prev = -1;
    std::optional<BondOrder> pending_bond;
    bool pending_bond_set = false;
    std::vector<std::pair<int, std::size_t>> branches;  // (atom, offset of '(')

    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(') {
        if (prev < 0) throw ParseError("branch without preceding atom", pos_);
        branches.emplace_back(prev, pos_);
        ++pos_;
      } else if (c == ')') {
        if (branches.empty()) throw ParseError("unbalanced branch", pos_);
        if (pending_bond_set) throw ParseError("bond symbol before ')'", pos_);
        prev = branches.back().first;
        branches.pop_back();
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\') {
        if (pending_bond_set) throw ParseError("consecutive bond symbols", pos_);
        pending_bond = bond_symbol(c);
        pending_bond_set = true;
        ++pos_;
      } else if (c == '.') {
        if (pending_bond_set) throw ParseError("bond symbol before '.'", pos_);
        prev = -1;
        ++pos_;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (prev < 0) throw ParseError("ring closure without atom", pos_);
        const std::size_t start = pos_;
        const int number = ring_number();
        ring_bond(prev, number, pending_bond, start);
        pending_bond.reset();
        pending_bond_set = false;
      } else {
        const std::size_t start = pos_;
        const int atom = parse_atom();
        atom_offsets_.push_back(start);
        if (prev >= 0) {
          connect(prev, atom, pending_bond, start);
        } else if (pending_bond_set) {
          throw ParseError("bond symbol without preceding atom", start);
        }
        pending_bond.reset();
        pending_bond_set = false;
        prev = atom;
      }
    }
    if (pending_bond_set) throw ParseError("dangling bond symbol", text_.size());
    if (!branches.empty()) throw ParseError("unbalanced branch", branches.back().second);
    if (!rings_.empty()) throw ParseError("unclosed ring", rings_.begin()->second.offset);

    finalize();
    return mol_;
  }

 private:
  std::optional<BondOrder> bond_symbol(char c) {
    switch (c) {
      case '-': return BondOrder::Single;
      case '=': return BondOrder::Double;
      case '#': return BondOrder::Triple;
      case ':': return BondOrder::Aromatic;
      default:
        if (flags_) flags_->stereo_stripped = true;
        return BondOrder::Single;
    }
  }

  int ring_number() {
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2])))
        throw ParseError("malformed %nn ring closure", pos_);
      const int n = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
      return n;
    }
    return text_[pos_++] - '0';
  }

  void ring_bond(int atom, int number, std::optional<BondOrder> order, std::size_t offset) {
    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_[number] = {atom, order, offset};
      return;
    }
    const PendingRing open = it->second;
    rings_.erase(it);
    if (open.atom == atom) throw ParseError("ring closure to the same atom", offset);
    if (open.order && order && *open.order != *order) throw ParseError("conflicting ring bond orders", offset);
    connect(open.atom, atom, open.order ? open.order : order, offset);
  }

  void connect(int a, int b, std::optional<BondOrder> order, std::size_t offset) {
    if (mol_.find_bond(a, b) >= 0) throw ParseError("duplicate bond", offset);
    BondOrder o = BondOrder::Single;
    if (order) {
      o = *order;
    } else if (mol_.atom(a).aromatic && mol_.atom(b).aromatic) {
      o = BondOrder::Aromatic;
      implicit_aromatic_.push_back(mol_.add_bond(a, b, o));
      return;
    }
    mol_.add_bond(a, b, o);
  }

  int parse_atom() {
    const char c = text_[pos_];
    if (c == '[') return parse_bracket();
    if (c == '*') throw ParseError("wildcard atoms are not supported", pos_);
    Atom atom;
    if (c == 'C' && pos_ + 1 < text_.size() && text_[pos_ + 1] == 'l') {
      atom.element = Element::Cl;
      pos_ += 2;
    } else if (c == 'B' && pos_ + 1 < text_.size() && text_[pos_ + 1] == 'r') {
      atom.element = Element::Br;
      pos_ += 2;
    } else {
      switch (c) {
        case 'B': atom.element = Element::B; break;
        case 'C': atom.element = Element::C; break;
        case 'N': atom.element = Element::N; break;
        case 'O': atom.element = Element::O; break;
        case 'P': atom.element = Element::P; break;
        case 'S': atom.element = Element::S; break;
        case 'F': atom.element = Element::F; break;
        case 'I': atom.element = Element::I; break;
        case 'b': atom.element = Element::B; atom.aromatic = true; break;
        case 'c': atom.element = Element::C; atom.aromatic = true; break;
        case 'n': atom.element = Element::N; atom.aromatic = true; break;
        case 'o': atom.element = Element::O; atom.aromatic = true; break;
        case 'p': atom.element = Element::P; atom.aromatic = true; break;
        case 's': atom.element = Element::S; atom.aromatic = true; break;
        default: throw ParseError(std::string("unknown element '") + c + "'", pos_);
      }
      ++pos_;
    }
    return mol_.add_atom(atom);
  }

  int parse_bracket() {
    const std::size_t open = pos_;
    ++pos_;
    if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
      throw ParseError("isotopes are not supported", pos_);
    Atom atom;
    if (pos_ >= text_.size()) throw ParseError("unterminated bracket atom", open);
    if (text_[pos_] == '*') throw ParseError("wildcard atoms are not supported", pos_);
    // Element symbol: two-letter forms first.
    std::string sym;
    if (pos_ + 1 < text_.size() && std::isupper(static_cast<unsigned char>(text_[pos_])) &&
        std::islower(static_cast<unsigned char>(text_[pos_ + 1])) &&
        element_from_symbol(text_.substr(pos_, 2))) {
      sym = std::string(text_.substr(pos_, 2));
      pos_ += 2;
    } else {
      sym = std::string(1, text_[pos_]);
      ++pos_;
    }
    if (std::islower(static_cast<unsigned char>(sym[0])) && sym.size() == 1) {
      atom.aromatic = true;
      sym[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(sym[0])));
      if (sym != "B" && sym != "C" && sym != "N" && sym != "O" && sym != "P" && sym != "S")
        throw ParseError("unknown aromatic element", open + 1);
    }
    const auto el = element_from_symbol(sym);
    if (!el) throw ParseError("unknown element '" + sym + "'", open + 1);
    atom.element = *el;

    while (pos_ < text_.size() && text_[pos_] == '@') {
      if (flags_) flags_->stereo_stripped = true;
      ++pos_;
    }
    int h = 0;
    if (pos_ < text_.size() && text_[pos_] == 'H') {
      ++pos_;
      h = 1;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) h = text_[pos_++] - '0';
    }
    atom.explicit_h = h;
    while (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const int sign = text_[pos_] == '+' ? 1 : -1;
      ++pos_;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        atom.charge += sign * (text_[pos_++] - '0');
      } else {
        atom.charge += sign;
      }
    }
    if (pos_ < text_.size() && text_[pos_] == ':') {
      ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    if (pos_ >= text_.size() || text_[pos_] != ']') throw ParseError("unterminated bracket atom", open);
    ++pos_;
    return mol_.add_atom(atom);
  }

  void finalize();

  std::string_view text_;
  SmilesFlags* flags_;
  std::size_t pos_ = 0;
  MolGraph mol_;
  std::map<int, PendingRing> rings_;
  std::vector<int> implicit_aromatic_;
  std::vector<std::size_t> atom_offsets_;
};

// Bonds written implicitly between aromatic atoms are aromatic only inside
// rings; biaryl links become single bonds.
void SmilesParser::finalize() {
  mol_.compute_rings();
  for (int b : implicit_aromatic_) {
    if (!mol_.bond_in_ring(b)) {
      const auto& bd = mol_.bond(b);
      mol_.set_bond_order(bd.a, bd.b, BondOrder::Single);
    }
  }
  try {
    mol_.perceive();
  } catch (const ValenceError& e) {
    throw ParseError(e.what(), atom_offsets_.at(static_cast<std::size_t>(e.atom())));
  }
}

}  // namespace

MolGraph parse_smiles(std::string_view text, SmilesFlags* flags) {
  SmilesParser parser(text, flags);
  return parser.parse();
}

}  // namespace synflow::chem
