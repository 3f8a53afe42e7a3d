#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace par::chem {

enum class ChiralTag : std::uint8_t { kUnspecified = 0, kClockwise = 1, kCounterClockwise = 2, kOther = 3 };
enum class BondType : std::uint8_t { kSingle = 0, kDouble = 1, kTriple = 2, kAromatic = 3 };
enum class BondDir : std::uint8_t { kNone = 0, kEndUpRight = 1, kEndDownRight = 2 };

inline constexpr std::size_t kNumAtomicNumbers = 119;  // table rows; index 0 unused
inline constexpr std::size_t kNumChiralTags = 4;
inline constexpr std::size_t kNumBondTypes = 4;
inline constexpr std::size_t kNumBondDirs = 3;

struct AtomFeature {
  int atomic_number = 6;
  ChiralTag chirality = ChiralTag::kUnspecified;
  bool aromatic = false;  // parser bookkeeping only
};

struct BondFeature {
  BondType type = BondType::kSingle;
  BondDir direction = BondDir::kNone;
};

/// Direction as seen when the bond is traversed in the opposite orientation.
BondDir reversed(BondDir dir);

/// One undirected bond; `feature.direction` is relative to the u -> v orientation.
struct Bond {
  std::size_t u = 0;
  std::size_t v = 0;
  BondFeature feature;
};

struct MolecularGraph {
  std::vector<AtomFeature> atoms;
  std::vector<Bond> bonds;

  std::size_t num_atoms() const { return atoms.size(); }
  std::size_t num_aromatic_atoms() const;
  /// Number of connected components.
  std::size_t num_components() const;
  /// Throws ContractViolation-style std::invalid_argument on bad endpoints or duplicates.
  void validate() const;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, const std::string& reason);
  std::size_t offset() const { return offset_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t offset_;
  std::string reason_;
};

/// Restricted SMILES: organic subset (plus aromatic lowercase), bracket atoms,
/// bonds - = # : / \, branches, ring closures 1-9 and %nn, and '.'.
/// Implicit hydrogens are not materialized.
MolecularGraph parse_smiles(std::string_view text);

/// Writes a SMILES string for graphs whose atoms are in the organic subset and
/// whose bonds are single. Used for synthetic datasets.
std::string write_smiles(const MolecularGraph& graph);

/// `{"atoms":[{"z":int,"chirality":int}],"bonds":[[u,v,type,dir],...]}`
std::string graph_to_json(const MolecularGraph& graph);
MolecularGraph graph_from_json(std::string_view json);

int atomic_number_of(std::string_view symbol);
std::string_view element_symbol(int atomic_number);

// ---------------------------------------------------------------------------
// Datasets

class FormatError : public std::runtime_error {
 public:
  FormatError(std::size_t row, const std::string& reason);
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::int8_t kMissing = -1;

struct PropertyDataset {
  std::vector<MolecularGraph> molecules;
  std::vector<std::string> smiles;
  std::vector<std::string> property_names;
  /// labels[molecule][property] in {0, 1, kMissing}.
  std::vector<std::vector<std::int8_t>> labels;
  std::vector<std::size_t> train_properties;
  std::vector<std::size_t> test_properties;
  /// Per property; false when it lacks K actives or K inactives.
  std::vector<bool> usable;
  std::size_t skipped_rows = 0;

  std::size_t num_molecules() const { return molecules.size(); }
  std::size_t num_properties() const { return property_names.size(); }
  std::size_t count_label(std::size_t property, std::int8_t value) const;
  std::optional<std::size_t> property_index(std::string_view name) const;
  /// Recomputes `usable` for shot count k.
  void mark_usable(std::size_t k);
};

/// Assigns property columns to meta-train / meta-test.
///
/// Accepted forms: "last:N", "last:P%" (ceiling), or ';'-separated clauses
/// "test=a,b", "train=c,d", "ignore=e". Unlisted columns go to train when only
/// test is given.
struct SplitSpec {
  std::string text = "last:20%";
};

void apply_split(PropertyDataset& dataset, const SplitSpec& split);

/// Reads `smiles,<prop1>,...`; labels 0/1/empty. Unparseable SMILES rows are
/// skipped and counted. Columns named in an `ignore=` clause are dropped.
PropertyDataset load_dataset(const std::string& csv_path, const SplitSpec& split, std::size_t k);
PropertyDataset parse_dataset(std::string_view csv_text, const SplitSpec& split, std::size_t k);

std::string dataset_to_csv(const PropertyDataset& dataset);

struct SyntheticConfig {
  std::size_t num_tasks = 25;
  std::size_t num_molecules = 400;
  std::size_t k = 10;
  std::uint64_t seed = 0;
};

/// Atom types used by synthetic molecules (C, N, O, S).
inline constexpr int kSyntheticAlphabet[] = {6, 7, 8, 16};

/// A 3-atom path motif: a `center` atom bonded to two distinct atoms of types
/// `end_a` and `end_b` (unordered, end_a <= end_b).
struct Motif {
  int center = 6;
  int end_a = 6;
  int end_b = 6;
  std::string name() const;
  bool operator==(const Motif&) const = default;
};

bool contains_motif(const MolecularGraph& graph, const Motif& motif);

struct SyntheticDataset {
  PropertyDataset data;
  std::vector<Motif> motifs;  // one per property
};

/// Random small graphs (5-20 atoms) labelled by planted motifs; every property
/// has between 30% and 70% actives and at least k of each class.
SyntheticDataset gen_synthetic(const SyntheticConfig& cfg);

}  // namespace par::chem
