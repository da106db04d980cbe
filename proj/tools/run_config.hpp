#ifndef LEARN_RUN_CONFIG_HPP
#define LEARN_RUN_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "learn/trainer.hpp"

namespace learn {

/// Everything a run needs, flattened into INI sections. All randomness is
/// derived from `seed`.
struct RunConfig {
  // [run]
  std::uint64_t seed = 7;
  std::string root = "run";

  // [data]
  std::size_t classes = 4;
  std::size_t per_class = 500;
  std::size_t image_size = 32;

  // [backbone]
  std::size_t backbone_epochs = 15;
  double backbone_lr = 0.01;
  double backbone_momentum = 0.9;
  std::size_t backbone_batch = 32;

  // [occlusion]
  std::vector<OccluderType> types{kOccluderTypes.begin(), kOccluderTypes.end()};
  double min_coverage = 0.10;
  double max_coverage = 0.90;
  double clean_fraction = 0.25;

  // [learn]
  double learn_lr = 1e-3;
  std::size_t learn_batch = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  std::size_t val_copies = 4;
  std::optional<OccluderType> heldout;

  // [loss]
  LossWeights weights;

  // [eval]
  double clean_tolerance = 0.01;
  std::string ablation;  // optional second AE checkpoint, reported as "ablation"

  bool operator==(const RunConfig&) const = default;

  FinetuneConfig finetune_config() const;
  TrainConfig train_config() const;
  void validate() const;
};

/// Every key, in emission order, as "section.key".
const std::vector<std::string>& config_keys();

std::string emit_config(const RunConfig& config);

/// Parses INI text on top of the defaults. Unknown keys and malformed values
/// throw std::invalid_argument naming the key; with `require_all` so do
/// missing keys.
RunConfig parse_config(const std::string& text, bool require_all = false);

/// defaults < file < overrides ("section.key=value").
RunConfig resolve_config(const std::string& path,
                         const std::vector<std::string>& overrides);

std::uint64_t config_hash(const RunConfig& config);

}  // namespace learn

#endif  // LEARN_RUN_CONFIG_HPP
