#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "par/chem.hpp"

namespace par::chem {

namespace {

constexpr std::array<std::string_view, 119> kElements = {
    "",   "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",
    "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho",
    "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po",
    "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md",
    "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

struct PendingBond {
  bool present = false;
  BondFeature feature;
  std::size_t offset = 0;
};

struct RingOpen {
  std::size_t atom;
  PendingBond bond;
  std::size_t offset;
};

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  MolecularGraph run() {
    if (s_.empty()) throw ParseError(0, "empty SMILES");
    while (pos_ < s_.size()) step();
    if (pending_.present) throw ParseError(pending_.offset, "dangling bond symbol");
    if (!branches_.empty()) throw ParseError(branch_offsets_.back(), "unbalanced parenthesis: unclosed '('");
    if (!rings_.empty()) {
      const auto& [digit, open] = *rings_.begin();
      throw ParseError(open.offset, "unclosed ring closure " + std::to_string(digit));
    }
    if (g_.atoms.empty()) throw ParseError(0, "no atoms");
    return std::move(g_);
  }

 private:
  void step() {
    const char c = s_[pos_];
    switch (c) {
      case '(':
        if (!prev_) throw ParseError(pos_, "branch opened before any atom");
        if (pending_.present) throw ParseError(pending_.offset, "dangling bond symbol");
        branches_.push_back(*prev_);
        branch_offsets_.push_back(pos_);
        ++pos_;
        return;
      case ')':
        if (branches_.empty()) throw ParseError(pos_, "unbalanced parenthesis: unmatched ')'");
        if (pending_.present) throw ParseError(pending_.offset, "dangling bond symbol");
        prev_ = branches_.back();
        branches_.pop_back();
        branch_offsets_.pop_back();
        ++pos_;
        return;
      case '.':
        if (pending_.present) throw ParseError(pending_.offset, "dangling bond symbol");
        if (!branches_.empty()) throw ParseError(pos_, "component separator inside a branch");
        prev_.reset();
        ++pos_;
        return;
      case '-':
      case '=':
      case '#':
      case ':':
      case '/':
      case '\\':
        bond_symbol(c);
        return;
      case '[':
        bracket_atom();
        return;
      case '%':
        ring_closure();
        return;
      default:
        if (std::isdigit(static_cast<unsigned char>(c))) {
          ring_closure();
          return;
        }
        organic_atom();
    }
  }

  void bond_symbol(char c) {
    if (pending_.present) throw ParseError(pos_, "two consecutive bond symbols");
    if (!prev_) throw ParseError(pos_, "dangling bond symbol");
    pending_.present = true;
    pending_.offset = pos_;
    pending_.feature = {};
    switch (c) {
      case '-': pending_.feature.type = BondType::kSingle; break;
      case '=': pending_.feature.type = BondType::kDouble; break;
      case '#': pending_.feature.type = BondType::kTriple; break;
      case ':': pending_.feature.type = BondType::kAromatic; break;
      case '/': pending_.feature.direction = BondDir::kEndUpRight; break;
      case '\\': pending_.feature.direction = BondDir::kEndDownRight; break;
      default: break;
    }
    ++pos_;
  }

  void organic_atom() {
    const std::size_t start = pos_;
    const char c = s_[pos_];
    AtomFeature atom;
    std::string_view sym;
    if (c == 'C' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'l') {
      sym = "Cl";
    } else if (c == 'B' && pos_ + 1 < s_.size() && s_[pos_ + 1] == 'r') {
      sym = "Br";
    } else {
      sym = s_.substr(pos_, 1);
    }
    static const std::set<std::string_view> organic = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"};
    static const std::set<std::string_view> aromatic = {"b", "c", "n", "o", "p", "s"};
    if (organic.count(sym)) {
      atom.atomic_number = atomic_number_of(sym);
    } else if (aromatic.count(sym)) {
      const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(sym[0])));
      atom.atomic_number = atomic_number_of(std::string_view(&up, 1));
      atom.aromatic = true;
    } else {
      throw ParseError(start, "unknown atom symbol '" + std::string(sym) + "'");
    }
    pos_ += sym.size();
    add_atom(atom);
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    const auto close = s_.find(']', pos_);
    if (close == std::string_view::npos) throw ParseError(start, "unterminated bracket atom");
    std::size_t p = pos_ + 1;
    auto peek = [&]() -> char { return p < close ? s_[p] : '\0'; };
    // isotope
    while (std::isdigit(static_cast<unsigned char>(peek()))) ++p;
    // element symbol
    AtomFeature atom;
    if (!std::isalpha(static_cast<unsigned char>(peek()))) throw ParseError(p, "missing element symbol");
    std::string sym(1, s_[p]);
    if (std::islower(static_cast<unsigned char>(sym[0]))) {
      // aromatic: se, as, te or single-letter b c n o p s
      static const std::set<std::string> two = {"se", "as", "te"};
      if (p + 1 < close && two.count(std::string{s_[p], s_[p + 1]})) sym.push_back(s_[p + 1]);
      static const std::set<std::string> arom = {"b", "c", "n", "o", "p", "s", "se", "as", "te"};
      if (!arom.count(sym)) throw ParseError(p, "unknown atom symbol '" + sym + "'");
      atom.aromatic = true;
      std::string upper = sym;
      upper[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(upper[0])));
      atom.atomic_number = atomic_number_of(upper);
      p += sym.size();
    } else {
      // Prefer the two-letter symbol when it names an element.
      if (p + 1 < close && std::islower(static_cast<unsigned char>(s_[p + 1]))) {
        std::string two = sym + s_[p + 1];
        if (atomic_number_of(two) > 0) sym = two;
      }
      atom.atomic_number = atomic_number_of(sym);
      if (atom.atomic_number <= 0) throw ParseError(p, "unknown atom symbol '" + sym + "'");
      p += sym.size();
    }
    // chirality
    if (peek() == '@') {
      ++p;
      if (peek() == '@') {
        ++p;
        atom.chirality = ChiralTag::kClockwise;
      } else if (p + 1 < close && std::set<std::string_view>{"TH", "AL", "SP", "TB", "OH"}.count(s_.substr(p, 2))) {
        p += 2;
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++p;
        atom.chirality = ChiralTag::kOther;
      } else {
        atom.chirality = ChiralTag::kCounterClockwise;
      }
    }
    // hydrogen count
    if (peek() == 'H') {
      ++p;
      while (std::isdigit(static_cast<unsigned char>(peek()))) ++p;
    }
    // charge
    if (peek() == '+' || peek() == '-') {
      const char sign = peek();
      ++p;
      if (std::isdigit(static_cast<unsigned char>(peek()))) {
        while (std::isdigit(static_cast<unsigned char>(peek()))) ++p;
      } else {
        while (peek() == sign) ++p;
      }
    }
    // atom class
    if (peek() == ':') {
      ++p;
      if (!std::isdigit(static_cast<unsigned char>(peek()))) throw ParseError(p, "bad atom class");
      while (std::isdigit(static_cast<unsigned char>(peek()))) ++p;
    }
    if (p != close) throw ParseError(p, "unexpected character in bracket atom");
    pos_ = close + 1;
    add_atom(atom);
  }

  void ring_closure() {
    const std::size_t start = pos_;
    if (!prev_) throw ParseError(start, "ring closure before any atom");
    int digit = 0;
    if (s_[pos_] == '%') {
      if (pos_ + 2 >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(s_[pos_ + 2]))) {
        throw ParseError(start, "'%' must be followed by two digits");
      }
      digit = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      digit = s_[pos_] - '0';
      if (digit == 0) throw ParseError(start, "ring closure digit 0 is not supported");
      ++pos_;
    }
    auto it = rings_.find(digit);
    if (it == rings_.end()) {
      rings_.emplace(digit, RingOpen{*prev_, pending_, start});
      pending_ = {};
      return;
    }
    const RingOpen open = it->second;
    rings_.erase(it);
    if (open.atom == *prev_) throw ParseError(start, "ring closure bonds an atom to itself");
    BondFeature feature;
    bool explicit_bond = false;
    std::size_t from = open.atom, to = *prev_;
    if (pending_.present && open.bond.present) {
      if (pending_.feature.type != open.bond.feature.type) throw ParseError(start, "conflicting ring bond symbols");
      feature = open.bond.feature;
      explicit_bond = true;
    } else if (open.bond.present) {
      feature = open.bond.feature;
      explicit_bond = true;
    } else if (pending_.present) {
      feature = pending_.feature;
      explicit_bond = true;
      std::swap(from, to);
    }
    pending_ = {};
    add_bond(from, to, feature, explicit_bond, start);
  }

  void add_atom(const AtomFeature& atom) {
    const std::size_t idx = g_.atoms.size();
    g_.atoms.push_back(atom);
    if (prev_) {
      add_bond(*prev_, idx, pending_.feature, pending_.present, pending_.offset);
    }
    pending_ = {};
    prev_ = idx;
  }

  void add_bond(std::size_t u, std::size_t v, BondFeature feature, bool explicit_bond, std::size_t offset) {
    if (!explicit_bond && g_.atoms[u].aromatic && g_.atoms[v].aromatic) feature.type = BondType::kAromatic;
    const auto key = std::minmax(u, v);
    if (!seen_.insert(key).second) throw ParseError(offset, "duplicate bond");
    g_.bonds.push_back({u, v, feature});
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  MolecularGraph g_;
  std::optional<std::size_t> prev_;
  PendingBond pending_;
  std::vector<std::size_t> branches_;
  std::vector<std::size_t> branch_offsets_;
  std::map<int, RingOpen> rings_;
  std::set<std::pair<std::size_t, std::size_t>> seen_;
};

}  // namespace

BondDir reversed(BondDir dir) {
  switch (dir) {
    case BondDir::kEndUpRight: return BondDir::kEndDownRight;
    case BondDir::kEndDownRight: return BondDir::kEndUpRight;
    default: return BondDir::kNone;
  }
}

ParseError::ParseError(std::size_t offset, const std::string& reason)
    : std::runtime_error("SMILES parse error at offset " + std::to_string(offset) + ": " + reason),
      offset_(offset),
      reason_(reason) {}

int atomic_number_of(std::string_view symbol) {
  for (std::size_t z = 1; z < kElements.size(); ++z)
    if (kElements[z] == symbol) return static_cast<int>(z);
  return 0;
}

std::string_view element_symbol(int atomic_number) {
  if (atomic_number < 1 || atomic_number > 118) throw std::out_of_range("atomic number out of range");
  return kElements[static_cast<std::size_t>(atomic_number)];
}

std::size_t MolecularGraph::num_aromatic_atoms() const {
  return static_cast<std::size_t>(std::count_if(atoms.begin(), atoms.end(), [](const auto& a) { return a.aromatic; }));
}

std::size_t MolecularGraph::num_components() const {
  std::vector<std::size_t> parent(atoms.size());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::size_t comps = atoms.size();
  for (const auto& b : bonds) {
    auto ru = find(b.u), rv = find(b.v);
    if (ru != rv) {
      parent[ru] = rv;
      --comps;
    }
  }
  return comps;
}

void MolecularGraph::validate() const {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& a : atoms) {
    if (a.atomic_number < 1 || a.atomic_number > 118) throw std::invalid_argument("atomic number out of range");
    if (static_cast<std::size_t>(a.chirality) >= kNumChiralTags) throw std::invalid_argument("bad chirality tag");
  }
  for (const auto& b : bonds) {
    if (b.u == b.v || b.u >= atoms.size() || b.v >= atoms.size()) throw std::invalid_argument("bad bond endpoint");
    if (static_cast<std::size_t>(b.feature.type) >= kNumBondTypes ||
        static_cast<std::size_t>(b.feature.direction) >= kNumBondDirs) {
      throw std::invalid_argument("bad bond feature");
    }
    if (!seen.insert(std::minmax(b.u, b.v)).second) throw std::invalid_argument("duplicate bond");
  }
}

MolecularGraph parse_smiles(std::string_view text) { return Parser(text).run(); }

std::string write_smiles(const MolecularGraph& graph) {
  const std::size_t n = graph.atoms.size();
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& b : graph.bonds) {
    if (b.feature.type != BondType::kSingle || b.feature.direction != BondDir::kNone) {
      throw std::invalid_argument("write_smiles: only plain single bonds are supported");
    }
    adj[b.u].push_back(b.v);
    adj[b.v].push_back(b.u);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());

  // DFS spanning forest; non-tree edges become ring closures.
  std::vector<int> state(n, 0);
  std::vector<std::size_t> parent(n, static_cast<std::size_t>(-1));
  std::vector<std::size_t> order;
  std::vector<std::vector<std::size_t>> children(n);
  std::set<std::pair<std::size_t, std::size_t>> tree_edges;
  for (std::size_t root = 0; root < n; ++root) {
    if (state[root]) continue;
    std::vector<std::size_t> stack{root};
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      if (state[v]) continue;
      state[v] = 1;
      order.push_back(v);
      if (parent[v] != static_cast<std::size_t>(-1)) {
        children[parent[v]].push_back(v);
        tree_edges.insert(std::minmax(v, parent[v]));
      }
      for (auto it = adj[v].rbegin(); it != adj[v].rend(); ++it) {
        if (!state[*it]) {
          parent[*it] = v;
          stack.push_back(*it);
        }
      }
    }
  }
  // Tree edges recorded above follow the last parent assignment; rebuild from `children`.
  tree_edges.clear();
  for (std::size_t v = 0; v < n; ++v)
    for (auto c : children[v]) tree_edges.insert(std::minmax(v, c));

  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < order.size(); ++i) rank[order[i]] = i;
  // Ring closure digits per atom, assigned in emission order.
  std::vector<std::vector<int>> ring_digits(n);
  std::vector<int> free_digits;
  for (int d = 99; d >= 1; --d) free_digits.push_back(d);
  std::vector<std::pair<std::size_t, std::size_t>> ring_edges;
  for (const auto& b : graph.bonds) {
    if (!tree_edges.count(std::minmax(b.u, b.v))) ring_edges.push_back(std::minmax(b.u, b.v));
  }
  std::sort(ring_edges.begin(), ring_edges.end(), [&](const auto& x, const auto& y) {
    auto kx = std::make_pair(std::min(rank[x.first], rank[x.second]), std::max(rank[x.first], rank[x.second]));
    auto ky = std::make_pair(std::min(rank[y.first], rank[y.second]), std::max(rank[y.first], rank[y.second]));
    return kx < ky;
  });
  // Open at the earlier atom, close at the later one; digits are reused once closed.
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::size_t>>> opens_at, closes_at;
  for (const auto& e : ring_edges) {
    auto a = rank[e.first] < rank[e.second] ? e.first : e.second;
    auto b = a == e.first ? e.second : e.first;
    opens_at[a].push_back({a, b});
    closes_at[b].push_back({a, b});
  }
  std::map<std::pair<std::size_t, std::size_t>, int> digit_of;
  for (auto v : order) {
    for (const auto& e : closes_at[v]) {
      int d = digit_of.at(e);
      ring_digits[v].push_back(d);
      free_digits.push_back(d);
      std::sort(free_digits.rbegin(), free_digits.rend());
    }
    for (const auto& e : opens_at[v]) {
      if (free_digits.empty()) throw std::invalid_argument("write_smiles: too many open rings");
      int d = free_digits.back();
      free_digits.pop_back();
      digit_of[e] = d;
      ring_digits[v].push_back(d);
    }
  }

  auto emit_digit = [](std::string& out, int d) {
    if (d < 10) {
      out += static_cast<char>('0' + d);
    } else {
      out += '%';
      out += std::to_string(d);
    }
  };
  std::string out;
  auto emit = [&](auto&& self, std::size_t v) -> void {
    const int z = graph.atoms[v].atomic_number;
    static const std::set<int> organic = {5, 6, 7, 8, 9, 15, 16, 17, 35, 53};
    if (organic.count(z) && graph.atoms[v].chirality == ChiralTag::kUnspecified) {
      out += element_symbol(z);
    } else {
      out += '[';
      out += element_symbol(z);
      if (graph.atoms[v].chirality == ChiralTag::kCounterClockwise) out += '@';
      if (graph.atoms[v].chirality == ChiralTag::kClockwise) out += "@@";
      out += ']';
    }
    for (int d : ring_digits[v]) emit_digit(out, d);
    const auto& ch = children[v];
    for (std::size_t i = 0; i < ch.size(); ++i) {
      const bool last = i + 1 == ch.size();
      if (!last) out += '(';
      self(self, ch[i]);
      if (!last) out += ')';
    }
  };
  bool first = true;
  for (auto v : order) {
    if (parent[v] != static_cast<std::size_t>(-1)) continue;
    if (!first) out += '.';
    first = false;
    emit(emit, v);
  }
  return out;
}

std::string graph_to_json(const MolecularGraph& graph) {
  nlohmann::ordered_json j;
  j["atoms"] = nlohmann::ordered_json::array();
  for (const auto& a : graph.atoms) {
    nlohmann::ordered_json atom;
    atom["z"] = a.atomic_number;
    atom["chirality"] = static_cast<int>(a.chirality);
    j["atoms"].push_back(atom);
  }
  j["bonds"] = nlohmann::ordered_json::array();
  for (const auto& b : graph.bonds) {
    j["bonds"].push_back({b.u, b.v, static_cast<int>(b.feature.type), static_cast<int>(b.feature.direction)});
  }
  return j.dump();
}

MolecularGraph graph_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("graph json: ") + e.what());
  }
  MolecularGraph g;
  try {
    for (const auto& a : j.at("atoms")) {
      AtomFeature atom;
      atom.atomic_number = a.at("z").get<int>();
      const int chir = a.at("chirality").get<int>();
      if (chir < 0 || chir >= static_cast<int>(kNumChiralTags)) throw std::invalid_argument("graph json: bad chirality");
      atom.chirality = static_cast<ChiralTag>(chir);
      g.atoms.push_back(atom);
    }
    for (const auto& b : j.at("bonds")) {
      if (!b.is_array() || b.size() != 4) throw std::invalid_argument("graph json: bond must be [u,v,type,dir]");
      const int type = b[2].get<int>(), dir = b[3].get<int>();
      if (type < 0 || type >= static_cast<int>(kNumBondTypes) || dir < 0 || dir >= static_cast<int>(kNumBondDirs)) {
        throw std::invalid_argument("graph json: bad bond feature");
      }
      g.bonds.push_back({b[0].get<std::size_t>(), b[1].get<std::size_t>(),
                         BondFeature{static_cast<BondType>(type), static_cast<BondDir>(dir)}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("graph json: ") + e.what());
  }
  g.validate();
  for (auto& b : g.bonds)
    if (b.feature.type == BondType::kAromatic) g.atoms[b.u].aromatic = g.atoms[b.v].aromatic = true;
  return g;
}

}  // namespace par::chem
