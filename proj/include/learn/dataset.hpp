#ifndef LEARN_DATASET_HPP
#define LEARN_DATASET_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "learn/data.hpp"

namespace learn {

enum class Split { train, val, test };
std::string_view split_name(Split split);

struct SampleRecord {
  std::uint64_t id = 0;
  std::size_t label = 0;
  Split split = Split::train;
  std::uint64_t seed = 0;  // renderer seed

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::string name = "synthetic-shapes";
  std::vector<std::string> class_names;
  ImageSpec image;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> samples;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t count(Split split) const;
  std::vector<SampleRecord> records(Split split) const;

  bool operator==(const DatasetManifest& other) const;
};

/// per_class training images per class, plus per_class/10 validation and
/// per_class/5 test images per class.
DatasetManifest generate_synthetic_dataset(std::size_t num_classes,
                                           std::size_t per_class,
                                           std::size_t image_size,
                                           std::uint64_t seed);

/// Line-oriented text: header block, one record per sample, and a trailing
/// checksum line over everything before it.
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
DatasetManifest read_manifest(std::istream& in);
std::uint64_t manifest_hash(const DatasetManifest& manifest);

LabeledImage render_sample(const DatasetManifest& manifest,
                           const SampleRecord& record);

/// Rendered images of a manifest, grouped by split, in manifest order.
class Dataset {
 public:
  explicit Dataset(DatasetManifest manifest);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::vector<LabeledImage>& images(Split split) const;
  const LabeledImage& by_id(std::uint64_t id) const;

 private:
  DatasetManifest manifest_;
  std::array<std::vector<LabeledImage>, 3> images_;
  std::vector<std::pair<Split, std::size_t>> index_;  // by sample id
};

/// Binary PGM (one channel) or PPM (three channels), 8 bits per sample.
void write_pnm(std::ostream& out, const Tensor& image);

// -- Training stream ---------------------------------------------------------

struct OcclusionPolicy {
  std::vector<OccluderType> types{kOccluderTypes.begin(), kOccluderTypes.end()};
  double min_coverage = 0.10;
  double max_coverage = 0.90;
  double clean_fraction = 0.25;
};

struct TrainingPair {
  LabeledImage clean;
  OccludedImage occluded;
  bool clean_pass = false;
};

using Batch = std::vector<TrainingPair>;

/// Epoch-wise shuffled batches of clean/occluded pairs, occluded on the fly.
/// Every draw is a pure function of (seed, epoch, position in epoch).
class BatchStream {
 public:
  BatchStream(std::span<const LabeledImage> images, std::size_t batch_size,
              OcclusionPolicy policy, std::uint64_t seed);

  void start_epoch(std::size_t epoch);
  std::optional<Batch> next();
  std::size_t batches_per_epoch() const;

  /// Audit counters over everything yielded so far.
  const std::array<std::size_t, 4>& type_counts() const { return type_counts_; }
  std::size_t clean_count() const { return clean_count_; }

 private:
  std::span<const LabeledImage> images_;
  std::size_t batch_size_;
  OcclusionPolicy policy_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
  std::array<std::size_t, 4> type_counts_{};
  std::size_t clean_count_ = 0;
};

// -- Frozen evaluation sets --------------------------------------------------

struct FrozenRecord {
  std::uint64_t sample_id = 0;
  OccluderType type = OccluderType::white;
  double target = 0.0;
  std::uint64_t seed = 0;

  bool operator==(const FrozenRecord&) const = default;
};

struct FrozenSet {
  std::string name;  // "L0", "o-L3", ...
  OcclusionLevel level = OcclusionLevel::L0;
  std::optional<OccluderType> type;  // empty for L0 and mixed sets
  std::vector<FrozenRecord> records;

  bool operator==(const FrozenSet&) const = default;
};

struct FrozenSuite {
  FrozenSet clean;
  std::vector<FrozenSet> cells;  // level-major, type-minor

  bool operator==(const FrozenSuite&) const = default;
};

/// Column name of a (type, level) cell, e.g. "o-L3".
std::string cell_name(OccluderType type, OcclusionLevel level);

/// Every image of a split occluded once per (type, level) cell, target drawn
/// uniformly inside the level band shrunk by the coverage tolerance.
FrozenSuite freeze_test_sets(const DatasetManifest& manifest,
                             std::span<const OccluderType> types,
                             std::span<const OcclusionLevel> levels,
                             std::uint64_t seed, Split split = Split::test);

/// One occluded copy per image of a split with type and level drawn at random;
/// used for early-stopping validation.
FrozenSet freeze_mixed_set(const DatasetManifest& manifest, Split split,
                           std::span<const OccluderType> types,
                           std::uint64_t seed);

std::vector<OccludedImage> materialize(const FrozenSet& set,
                                       const Dataset& dataset);

void write_frozen_suite(std::ostream& out, const FrozenSuite& suite);
FrozenSuite read_frozen_suite(std::istream& in);

}  // namespace learn

#endif  // LEARN_DATASET_HPP
