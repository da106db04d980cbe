#ifndef LEARN_TRAINER_HPP
#define LEARN_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "learn/autoencoder.hpp"
#include "learn/backbone.hpp"
#include "learn/dataset.hpp"

namespace learn {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 40;
  std::size_t patience = 5;
  std::uint64_t seed = 0;
  /// Occluded copies of each validation image used for early stopping.
  std::size_t val_occluded_copies = 4;
  LossWeights weights;
  OcclusionPolicy policy;

  void validate() const;
  /// Stable text form used for hashing and provenance.
  std::string canonical() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total = 0.0;
  double rec = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double cls = 0.0;
  double val_clean = 0.0;
  double val_occluded = 0.0;
  double seconds = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  bool stopped_early = false;
  std::array<std::size_t, 4> type_counts{};
  std::size_t clean_count = 0;
  std::uint64_t backbone_hash_before = 0;
  std::uint64_t backbone_hash_after = 0;
};

/// Raw (unnormalized) backbone features with labels, one entry per image.
struct FeatureSet {
  std::string name;
  std::vector<Tensor> features;
  std::vector<std::size_t> labels;
  std::vector<std::uint64_t> ids;
};

FeatureSet extract_feature_set(const FeatureExtractor& extractor,
                               std::span<const LabeledImage> images,
                               std::string name = "clean");
FeatureSet extract_feature_set(const FeatureExtractor& extractor,
                               const FrozenSet& set, const Dataset& dataset);

/// A frozen backbone with its fitted normalizer.
struct Pipeline {
  const BackboneModel* backbone = nullptr;
  const FeatureNormalizer* normalizer = nullptr;
  const LearnAutoencoder* ae = nullptr;  // null for the baseline

  /// Logits for raw features: head(f), or head(denorm(ae(norm(f)))).
  Tensor logits(const Tensor& raw_features) const;
  /// Features entering the head.
  Tensor head_input(const Tensor& raw_features) const;
  double accuracy(const FeatureSet& set) const;
};

/// Optimizes loss_total with Adam over on-the-fly occluded batches. Stops
/// after `patience` epochs without improvement of the mean of clean and
/// occluded validation accuracy and restores the best epoch. Requires a
/// frozen backbone (std::logic_error otherwise); a non-finite loss throws
/// std::runtime_error naming the batch.
TrainingHistory train_learn(LearnAutoencoder& ae, const BackboneModel& backbone,
                            const FeatureNormalizer& normalizer, const Dataset& data,
                            const TrainConfig& config);

// -- Results -----------------------------------------------------------------

struct ResultsTable {
  std::string title;
  std::vector<std::string> columns;  // "L0", "w-L1", ... (level-major)
  std::vector<std::string> rows;
  std::vector<std::vector<double>> cells;  // accuracy fractions
  std::vector<double> means;
  std::vector<std::uint64_t> seeds;
  std::string manifest_hash;
  std::string config_hash;

  void add_row(std::string name, std::vector<double> values);
  double at(const std::string& row, const std::string& column) const;
  double mean(const std::string& row) const;
};

/// Feature sets for the clean split and every frozen cell, in table order.
std::vector<FeatureSet> prepare_evaluation(const FeatureExtractor& extractor,
                                           const FrozenSuite& suite,
                                           const Dataset& dataset);

/// One row per pipeline over the prepared sets; Mean over all cells.
ResultsTable evaluate_pipeline(const std::vector<std::pair<std::string, Pipeline>>& rows,
                               std::span<const FeatureSet> sets,
                               std::string title = "results");

// -- Clustering --------------------------------------------------------------

struct SilhouetteResult {
  std::vector<double> per_class;  // NaN for classes without scored samples
  double mean = 0.0;              // over all scored samples
  std::vector<std::string> warnings;
};

/// Euclidean silhouette over flattened vectors. Singleton classes are
/// excluded with a warning.
SilhouetteResult silhouette(std::span<const Tensor> points,
                            std::span<const std::size_t> labels);

// -- Held-out occluder -------------------------------------------------------

struct HeldoutResult {
  ResultsTable seen;
  ResultsTable heldout;
  TrainingHistory history;
  LearnAutoencoder ae;
};

/// Trains a fresh autoencoder with `heldout` excluded from every training
/// batch, then evaluates baseline and proposed rows on the seen types and on
/// the held-out type.
HeldoutResult heldout_occluder_protocol(const BackboneModel& backbone,
                                        const FeatureNormalizer& normalizer,
                                        const Dataset& data, const FrozenSuite& suite,
                                        TrainConfig config, OccluderType heldout,
                                        std::uint64_t ae_seed);

/// The subset of prepared sets (L0 first) whose cells use one of `types`.
std::vector<FeatureSet> select_sets(std::span<const FeatureSet> sets,
                                    std::span<const OccluderType> types);

// -- Reports -----------------------------------------------------------------

struct Provenance {
  std::vector<std::pair<std::string, std::string>> entries;
  void add(std::string key, std::string value) { entries.emplace_back(std::move(key), std::move(value)); }
};

std::string table_csv(const ResultsTable& table);
std::string table_text(const ResultsTable& table);
std::string history_tsv(const TrainingHistory& history);

/// Writes <title>.csv and <title>.txt per table, history.tsv and
/// provenance.txt into `dir`, creating it if needed.
void emit_report(std::span<const ResultsTable> tables, const TrainingHistory* history,
                 const Provenance& provenance, const std::filesystem::path& dir);

std::string hex64(std::uint64_t value);

}  // namespace learn

#endif  // LEARN_TRAINER_HPP
