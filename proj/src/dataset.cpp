#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "par/chem.hpp"

namespace par::chem {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

/// Splits one CSV record; supports double-quoted fields.
std::vector<std::string> csv_fields(std::string_view line, std::size_t row) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw FormatError(row, "unterminated quoted field");
  out.push_back(trim(cur));
  return out;
}

std::int8_t parse_label(const std::string& cell, std::size_t row, const std::string& column) {
  if (cell.empty()) return kMissing;
  if (cell == "0" || cell == "0.0") return 0;
  if (cell == "1" || cell == "1.0") return 1;
  throw FormatError(row, "label '" + cell + "' in column '" + column + "' is not 0, 1 or empty");
}

struct ParsedSplit {
  enum class Kind { kLastCount, kLastPercent, kNamed } kind = Kind::kLastPercent;
  double amount = 20.0;
  std::vector<std::string> test, train, ignore;
};

ParsedSplit parse_split(const SplitSpec& spec) {
  ParsedSplit p;
  const std::string text = trim(spec.text);
  if (text.rfind("last:", 0) == 0) {
    std::string arg = trim(std::string_view(text).substr(5));
    const bool pct = !arg.empty() && arg.back() == '%';
    if (pct) arg.pop_back();
    char* end = nullptr;
    const double v = std::strtod(arg.c_str(), &end);
    if (arg.empty() || end != arg.c_str() + arg.size() || v < 0 || (pct && v > 100) ||
        (!pct && v != std::floor(v))) {
      throw std::invalid_argument("split: bad amount in '" + text + "'");
    }
    p.kind = pct ? ParsedSplit::Kind::kLastPercent : ParsedSplit::Kind::kLastCount;
    p.amount = v;
    return p;
  }
  p.kind = ParsedSplit::Kind::kNamed;
  for (const auto& clause : split(text, ';')) {
    if (clause.empty()) continue;
    const auto eq = clause.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("split: clause '" + clause + "' lacks '='");
    const std::string key = trim(std::string_view(clause).substr(0, eq));
    auto names = split(std::string_view(clause).substr(eq + 1), ',');
    std::erase_if(names, [](const std::string& n) { return n.empty(); });
    if (key == "test") {
      p.test.insert(p.test.end(), names.begin(), names.end());
    } else if (key == "train") {
      p.train.insert(p.train.end(), names.begin(), names.end());
    } else if (key == "ignore") {
      p.ignore.insert(p.ignore.end(), names.begin(), names.end());
    } else {
      throw std::invalid_argument("split: unknown clause '" + key + "'");
    }
  }
  if (p.test.empty()) throw std::invalid_argument("split: no test properties named");
  return p;
}

}  // namespace

FormatError::FormatError(std::size_t row, const std::string& reason)
    : std::runtime_error("row " + std::to_string(row) + ": " + reason), row_(row) {}

std::size_t PropertyDataset::count_label(std::size_t property, std::int8_t value) const {
  std::size_t n = 0;
  for (const auto& row : labels) n += row.at(property) == value;
  return n;
}

std::optional<std::size_t> PropertyDataset::property_index(std::string_view name) const {
  for (std::size_t i = 0; i < property_names.size(); ++i)
    if (property_names[i] == name) return i;
  return std::nullopt;
}

void PropertyDataset::mark_usable(std::size_t k) {
  usable.assign(num_properties(), false);
  for (std::size_t p = 0; p < num_properties(); ++p) usable[p] = count_label(p, 1) >= k && count_label(p, 0) >= k;
}

void apply_split(PropertyDataset& dataset, const SplitSpec& spec) {
  const auto parsed = parse_split(spec);
  const std::size_t n = dataset.num_properties();
  dataset.train_properties.clear();
  dataset.test_properties.clear();
  if (parsed.kind != ParsedSplit::Kind::kNamed) {
    std::size_t n_test = parsed.kind == ParsedSplit::Kind::kLastCount
                             ? static_cast<std::size_t>(parsed.amount)
                             : static_cast<std::size_t>(std::ceil(parsed.amount * static_cast<double>(n) / 100.0 - 1e-9));
    if (n_test > n) throw std::invalid_argument("split: asks for more test properties than exist");
    for (std::size_t p = 0; p < n; ++p) (p + n_test < n ? dataset.train_properties : dataset.test_properties).push_back(p);
    return;
  }
  auto lookup = [&](const std::string& name) {
    auto idx = dataset.property_index(name);
    if (!idx) throw std::invalid_argument("split: unknown property '" + name + "'");
    return *idx;
  };
  std::set<std::size_t> test, train, ignore;
  for (const auto& s : parsed.test) test.insert(lookup(s));
  for (const auto& s : parsed.train) train.insert(lookup(s));
  for (const auto& s : parsed.ignore) ignore.insert(lookup(s));
  for (std::size_t p = 0; p < n; ++p) {
    const int hits = static_cast<int>(test.count(p) + train.count(p) + ignore.count(p));
    if (hits > 1) throw std::invalid_argument("split: property '" + dataset.property_names[p] + "' listed twice");
    if (test.count(p)) {
      dataset.test_properties.push_back(p);
    } else if (train.count(p) || (parsed.train.empty() && !ignore.count(p))) {
      dataset.train_properties.push_back(p);
    }
  }
}

PropertyDataset parse_dataset(std::string_view csv_text, const SplitSpec& split_spec, std::size_t k) {
  PropertyDataset ds;
  std::istringstream in{std::string(csv_text)};
  std::string line;
  std::size_t row = 0;
  std::size_t smiles_col = 0;
  std::vector<std::size_t> prop_cols;
  bool header_seen = false;
  const auto parsed = parse_split(split_spec);
  const std::set<std::string> ignored(parsed.ignore.begin(), parsed.ignore.end());
  std::size_t n_cols = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      if (row == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      auto header = csv_fields(line, row);
      auto it = std::find(header.begin(), header.end(), "smiles");
      if (it == header.end()) throw FormatError(row, "missing 'smiles' column");
      smiles_col = static_cast<std::size_t>(it - header.begin());
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == smiles_col || ignored.count(header[c])) continue;
        prop_cols.push_back(c);
        ds.property_names.push_back(header[c]);
      }
      if (prop_cols.empty()) throw FormatError(row, "no property columns");
      n_cols = header.size();
      header_seen = true;
      continue;
    }
    if (trim(line).empty()) continue;
    auto fields = csv_fields(line, row);
    if (fields.size() != n_cols) {
      throw FormatError(row, "expected " + std::to_string(n_cols) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<std::int8_t> labels;
    labels.reserve(prop_cols.size());
    for (std::size_t i = 0; i < prop_cols.size(); ++i) {
      labels.push_back(parse_label(fields[prop_cols[i]], row, ds.property_names[i]));
    }
    MolecularGraph g;
    try {
      g = parse_smiles(fields[smiles_col]);
    } catch (const ParseError&) {
      ++ds.skipped_rows;
      continue;
    }
    ds.molecules.push_back(std::move(g));
    ds.smiles.push_back(fields[smiles_col]);
    ds.labels.push_back(std::move(labels));
  }
  if (!header_seen) throw FormatError(0, "empty file");
  if (ds.skipped_rows) std::clog << "load_dataset: skipped " << ds.skipped_rows << " unparseable SMILES rows\n";
  // Ignored columns are already dropped; only test/train names remain meaningful.
  SplitSpec effective = split_spec;
  if (parsed.kind == ParsedSplit::Kind::kNamed) {
    std::string text = "test=";
    for (std::size_t i = 0; i < parsed.test.size(); ++i) text += (i ? "," : "") + parsed.test[i];
    if (!parsed.train.empty()) {
      text += ";train=";
      for (std::size_t i = 0; i < parsed.train.size(); ++i) text += (i ? "," : "") + parsed.train[i];
    }
    effective.text = text;
  }
  apply_split(ds, effective);
  ds.mark_usable(k);
  return ds;
}

PropertyDataset load_dataset(const std::string& csv_path, const SplitSpec& split_spec, std::size_t k) {
  std::ifstream f(csv_path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset '" + csv_path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_dataset(ss.str(), split_spec, k);
}

std::string dataset_to_csv(const PropertyDataset& ds) {
  std::string out = "smiles";
  for (const auto& name : ds.property_names) out += "," + name;
  out += '\n';
  for (std::size_t m = 0; m < ds.num_molecules(); ++m) {
    out += ds.smiles.at(m);
    for (auto v : ds.labels[m]) {
      out += ',';
      if (v != kMissing) out += static_cast<char>('0' + v);
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::string Motif::name() const {
  return std::string(element_symbol(end_a)) + "-" + std::string(element_symbol(center)) + "-" +
         std::string(element_symbol(end_b));
}

bool contains_motif(const MolecularGraph& graph, const Motif& motif) {
  std::vector<std::vector<std::size_t>> adj(graph.num_atoms());
  for (const auto& b : graph.bonds) {
    adj[b.u].push_back(b.v);
    adj[b.v].push_back(b.u);
  }
  for (std::size_t c = 0; c < graph.num_atoms(); ++c) {
    if (graph.atoms[c].atomic_number != motif.center) continue;
    const auto& nb = adj[c];
    for (std::size_t i = 0; i < nb.size(); ++i) {
      for (std::size_t j = 0; j < nb.size(); ++j) {
        if (i == j) continue;
        if (graph.atoms[nb[i]].atomic_number == motif.end_a && graph.atoms[nb[j]].atomic_number == motif.end_b)
          return true;
      }
    }
  }
  return false;
}

namespace {

constexpr std::size_t kMinAtoms = 5;
constexpr std::size_t kMaxAtoms = 20;
constexpr std::size_t kMaxDegree = 4;
constexpr int kMaxExtraEdges = 8;
constexpr double kPlantProb = 0.1;
constexpr double kPlantStep = 0.05;
constexpr double kMaxPlantProb = 0.5;
constexpr double kMinActive = 0.3;
constexpr double kMaxActive = 0.7;
constexpr int kMaxRounds = 100;

std::vector<Motif> all_motifs() {
  std::vector<Motif> out;
  for (int c : kSyntheticAlphabet)
    for (std::size_t a = 0; a < std::size(kSyntheticAlphabet); ++a)
      for (std::size_t b = a; b < std::size(kSyntheticAlphabet); ++b)
        out.push_back({c, kSyntheticAlphabet[a], kSyntheticAlphabet[b]});
  return out;
}

struct Skeleton {
  std::size_t n = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::vector<std::size_t>> adj;
};

Skeleton random_skeleton(std::mt19937_64& rng) {
  Skeleton s;
  s.n = std::uniform_int_distribution<std::size_t>(kMinAtoms, kMaxAtoms)(rng);
  s.adj.assign(s.n, {});
  auto connect = [&](std::size_t u, std::size_t v) {
    s.edges.emplace_back(std::min(u, v), std::max(u, v));
    s.adj[u].push_back(v);
    s.adj[v].push_back(u);
  };
  // Preferential attachment tree, capped degree.
  for (std::size_t v = 1; v < s.n; ++v) {
    std::vector<double> w(v);
    for (std::size_t u = 0; u < v; ++u) w[u] = s.adj[u].size() < kMaxDegree ? double(s.adj[u].size() + 1) : 0.0;
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    connect(pick(rng), v);
  }
  const int extra = std::uniform_int_distribution<int>(0, kMaxExtraEdges)(rng);
  std::uniform_int_distribution<std::size_t> node(0, s.n - 1);
  for (int e = 0; e < extra; ++e) {
    const auto u = node(rng), v = node(rng);
    if (u == v || s.adj[u].size() >= kMaxDegree || s.adj[v].size() >= kMaxDegree) continue;
    if (std::find(s.adj[u].begin(), s.adj[u].end(), v) != s.adj[u].end()) continue;
    connect(u, v);
  }
  return s;
}

/// Writes the motif onto a 3-path whose atoms are all unprotected.
bool plant(const Skeleton& s, std::vector<int>& types, std::vector<bool>& protect, const Motif& m,
           std::mt19937_64& rng) {
  std::vector<std::array<std::size_t, 3>> paths;
  for (std::size_t c = 0; c < s.n; ++c) {
    if (protect[c]) continue;
    for (auto a : s.adj[c])
      for (auto b : s.adj[c])
        if (a != b && !protect[a] && !protect[b]) paths.push_back({a, c, b});
  }
  if (paths.empty()) return false;
  const auto& p = paths[std::uniform_int_distribution<std::size_t>(0, paths.size() - 1)(rng)];
  types[p[0]] = m.end_a;
  types[p[1]] = m.center;
  types[p[2]] = m.end_b;
  protect[p[0]] = protect[p[1]] = protect[p[2]] = true;
  return true;
}

MolecularGraph to_graph(const Skeleton& s, const std::vector<int>& types) {
  MolecularGraph g;
  for (int z : types) g.atoms.push_back({z, ChiralTag::kUnspecified, false});
  for (auto [u, v] : s.edges) g.bonds.push_back({u, v, {}});
  return g;
}

}  // namespace

SyntheticDataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.num_tasks == 0 || cfg.num_molecules == 0 || cfg.k == 0) {
    throw GenerationError("gen_synthetic: all counts must be positive");
  }
  const auto pool = all_motifs();
  if (cfg.num_tasks > pool.size()) {
    throw GenerationError("gen_synthetic: at most " + std::to_string(pool.size()) + " distinct motifs exist");
  }
  if (2 * cfg.k > cfg.num_molecules) throw GenerationError("gen_synthetic: too few molecules for k of each class");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Motif> motifs;
  std::size_t next = 0;
  for (; motifs.size() < cfg.num_tasks; ++next) motifs.push_back(pool[order[next]]);

  std::vector<Skeleton> skeletons;
  std::vector<std::vector<int>> types;
  std::uniform_int_distribution<std::size_t> atom_type(0, std::size(kSyntheticAlphabet) - 1);
  for (std::size_t m = 0; m < cfg.num_molecules; ++m) {
    skeletons.push_back(random_skeleton(rng));
    std::vector<int> t(skeletons.back().n);
    for (auto& z : t) z = kSyntheticAlphabet[atom_type(rng)];
    types.push_back(std::move(t));
  }
  // Each molecule gets a reproducible plan stream so re-planting after a
  // motif swap leaves other choices intact.
  std::vector<std::uint64_t> plan_seed(cfg.num_molecules);
  for (auto& s : plan_seed) s = rng();
  std::vector<double> plant_prob(motifs.size(), kPlantProb);

  for (int round = 0;; ++round) {
    std::vector<MolecularGraph> graphs;
    graphs.reserve(cfg.num_molecules);
    for (std::size_t m = 0; m < cfg.num_molecules; ++m) {
      std::mt19937_64 prng(plan_seed[m]);
      auto t = types[m];
      std::vector<bool> protect(skeletons[m].n, false);
      std::vector<std::size_t> props(motifs.size());
      std::iota(props.begin(), props.end(), 0);
      std::shuffle(props.begin(), props.end(), prng);
      for (auto p : props) {
        const double u = std::uniform_real_distribution<double>(0.0, 1.0)(prng);
        if (u < plant_prob[p]) plant(skeletons[m], t, protect, motifs[p], prng);
      }
      graphs.push_back(to_graph(skeletons[m], t));
    }

    std::vector<std::size_t> bad;
    std::vector<int> direction(motifs.size(), 0);
    std::vector<std::vector<std::int8_t>> labels(cfg.num_molecules, std::vector<std::int8_t>(motifs.size()));
    for (std::size_t p = 0; p < motifs.size(); ++p) {
      std::size_t active = 0;
      for (std::size_t m = 0; m < cfg.num_molecules; ++m) {
        labels[m][p] = contains_motif(graphs[m], motifs[p]) ? 1 : 0;
        active += static_cast<std::size_t>(labels[m][p]);
      }
      const double frac = double(active) / double(cfg.num_molecules);
      if (frac < kMinActive || active < cfg.k) direction[p] = 1;
      if (frac > kMaxActive || cfg.num_molecules - active < cfg.k) direction[p] = -1;
      if (direction[p] != 0) bad.push_back(p);
    }
    if (bad.empty()) {
      SyntheticDataset out;
      auto& ds = out.data;
      for (std::size_t p = 0; p < motifs.size(); ++p) ds.property_names.push_back("P" + std::to_string(p) + "_" + motifs[p].name());
      for (auto& g : graphs) {
        ds.smiles.push_back(write_smiles(g));
        ds.molecules.push_back(std::move(g));
      }
      ds.labels = std::move(labels);
      apply_split(ds, SplitSpec{});
      ds.mark_usable(cfg.k);
      out.motifs = std::move(motifs);
      return out;
    }
    if (round + 1 >= kMaxRounds) {
      throw GenerationError("gen_synthetic: could not balance " + std::to_string(bad.size()) +
                            " properties within 30-70% actives");
    }
    // Too rare: plant more often. Too common even without planting: swap the motif.
    for (auto p : bad) {
      if (direction[p] > 0 && plant_prob[p] < kMaxPlantProb) {
        plant_prob[p] = std::min(kMaxPlantProb, plant_prob[p] + kPlantStep);
      } else if (direction[p] < 0 && plant_prob[p] > 0.0) {
        plant_prob[p] = std::max(0.0, plant_prob[p] - kPlantStep);
      } else if (next < pool.size()) {
        motifs[p] = pool[order[next++]];
        plant_prob[p] = kPlantProb;
      } else {
        throw GenerationError("gen_synthetic: ran out of motifs while balancing properties");
      }
    }
  }
}

}  // namespace par::chem
