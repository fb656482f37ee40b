#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mgtood {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base embedding or projected representation. Entries must be finite.
using Embedding = Vec;

// Error hierarchy. The CLI maps ConfigError to exit code 2 and everything
// else to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct VersionError : Error {
  using Error::Error;
};

void warn(std::string_view message);

enum class Kind { Machine, Human };
enum class Split { Train, Val, Test };

std::string_view to_string(Kind kind);
std::string_view to_string(Split split);
Kind parse_kind(std::string_view text);
Split parse_split(std::string_view text);

struct Label {
  Kind kind = Kind::Machine;
  std::optional<std::string> family;  // present iff kind == Machine

  static Label machine(std::string family) { return {Kind::Machine, std::move(family)}; }
  static Label human() { return {Kind::Human, std::nullopt}; }
};

struct Sample {
  std::string id;
  Embedding embedding;
  std::optional<Label> label;  // absent only for unlabeled scoring inputs
  Split split = Split::Train;
  std::optional<std::string> text;

  bool labeled() const { return label.has_value(); }
  bool is_machine() const { return label && label->kind == Kind::Machine; }
  bool is_human() const { return label && label->kind == Kind::Human; }
};

struct Dataset {
  std::vector<Sample> samples;
  int dim = 0;
  std::vector<std::string> families;  // ordered vocabulary
  std::string encoder;                // from the optional meta header

  std::optional<int> family_index(std::string_view family) const;

  /// Pointers into `samples` for one split, optionally restricted to a kind.
  std::vector<const Sample*> select(Split split, std::optional<Kind> kind = std::nullopt) const;
};

struct ValidationOptions {
  bool require_labels = true;
  bool require_machine_train = true;
};

/// Enforces every Dataset invariant; throws DataError naming the offender.
void validate(const Dataset& dataset, const ValidationOptions& options = {});

/// Registers families in first-seen order.
void rebuild_vocabulary(Dataset& dataset);

enum class DatasetFormat { Jsonl };

Dataset load_dataset(const std::filesystem::path& path,
                     DatasetFormat format = DatasetFormat::Jsonl,
                     const ValidationOptions& options = {});
Dataset parse_dataset(std::string_view contents, const ValidationOptions& options = {});

void save_dataset(const Dataset& dataset, const std::filesystem::path& path, bool write_meta = true);
std::string serialize_dataset(const Dataset& dataset, bool write_meta = true);

double cosine_similarity(const Embedding& a, const Embedding& b);

/// L2-normalized copy; zero vectors are returned unchanged.
Embedding l2_normalized(const Embedding& v);

struct DistanceOptions {
  bool normalize = false;
  std::size_t exhaustive_limit = 2000;  // per class
  std::size_t sampled_pairs = 200000;   // per pair group when subsampling
  std::uint64_t seed = 0;
};

/// Mean cosine distances (1 - cosine similarity), each in [0, 2].
struct DistanceReport {
  double intra_machine = 0.0;
  double intra_human = 0.0;
  double inter = 0.0;
  std::size_t pairs_machine = 0;
  std::size_t pairs_human = 0;
  std::size_t pairs_inter = 0;
  bool subsampled = false;
};

DistanceReport intra_inter_distances(const Dataset& dataset, Split split,
                                     const DistanceOptions& options = {});

}  // namespace mgtood
