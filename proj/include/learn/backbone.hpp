#ifndef LEARN_BACKBONE_HPP
#define LEARN_BACKBONE_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "learn/dataset.hpp"
#include "learn/serialize.hpp"
#include "learn/tensor.hpp"

namespace learn {

struct ConvBlock {
  Tensor kernels;  // [C_out,C_in,3,3]
  Tensor bias;     // [C_out]
};

/// Conv blocks (conv3x3 pad 1, relu, maxpool2) producing the feature map
/// the autoencoder is built against.
class FeatureExtractor {
 public:
  std::vector<ConvBlock> blocks;
  ImageSpec input;
  Shape feature_shape;

  Tensor operator()(const Tensor& image) const;
  std::vector<Tensor> parameters() const;
};

/// One fully connected layer from the flattened feature map to D logits.
class ClassifierHead {
 public:
  Tensor weights;  // [D, c*h*w]
  Tensor bias;     // [D]

  Tensor operator()(const Tensor& features) const;
  std::size_t num_classes() const { return bias.size(); }
  std::size_t parameter_count() const { return weights.size() + bias.size(); }
  std::vector<Tensor> parameters() const { return {weights, bias}; }
};

struct BackboneModel {
  FeatureExtractor extractor;
  ClassifierHead head;
  bool frozen = false;
  std::uint64_t frozen_hash = 0;

  Tensor operator()(const Tensor& image) const { return head(extractor(image)); }
  std::vector<Tensor> parameters() const;
};

inline constexpr std::array<std::size_t, 4> kBackboneWidths{16, 32, 64, 64};

BackboneModel build_backbone(std::size_t num_classes, std::size_t image_size,
                             std::uint64_t seed, std::size_t channels = 1);

/// Handles share parameter storage with the model.
std::pair<FeatureExtractor, ClassifierHead> split(const BackboneModel& model);

std::uint64_t parameter_hash(std::span<const Tensor> params);
std::uint64_t parameter_hash(const BackboneModel& model);

/// Stops parameter updates while gradients still pass through. Records and
/// returns the parameter hash; calling it again is a no-op.
std::uint64_t freeze(BackboneModel& model);
void freeze(FeatureExtractor& extractor);
void freeze(ClassifierHead& head);
bool is_frozen(const BackboneModel& model);

std::size_t predict(const Tensor& logits);
double accuracy(const BackboneModel& model, std::span<const LabeledImage> images);

// -- Features ----------------------------------------------------------------

struct FeatureMap {
  Tensor values;  // [c,h,w]
  bool normalized = false;
  std::uint64_t source_sample = 0;
  bool is_occluded = false;
};

/// Per-channel scaling of feature maps into [-1, 1].
class FeatureNormalizer {
 public:
  FeatureNormalizer() = default;
  explicit FeatureNormalizer(Vector scale);

  static constexpr double kFloor = 1e-6;
  static constexpr double kPercentile = 0.995;

  const Vector& scale() const { return scale_; }
  std::size_t channels() const { return static_cast<std::size_t>(scale_.size()); }

  /// Divides by the channel scale and clamps to [-1, 1]; not differentiable.
  Tensor normalize(const Tensor& features) const;
  /// Multiplies by the channel scale; differentiable.
  Tensor denormalize(const Tensor& normalized) const;

 private:
  Vector scale_;
};

FeatureMap extract_features(const FeatureExtractor& extractor,
                            const LabeledImage& image,
                            const FeatureNormalizer* normalizer = nullptr);
FeatureMap extract_features(const FeatureExtractor& extractor,
                            const OccludedImage& image,
                            const FeatureNormalizer* normalizer = nullptr);

/// Scale per channel: the 99.5th percentile of |activation| over the images,
/// floored at kFloor.
FeatureNormalizer fit_normalizer(const FeatureExtractor& extractor,
                                 std::span<const LabeledImage> images);
/// Same construction from precomputed raw feature maps.
FeatureNormalizer fit_normalizer(std::span<const Tensor> features);

// -- Finetuning --------------------------------------------------------------

struct FinetuneConfig {
  std::size_t epochs = 15;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct FinetuneResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
};

/// Cross-entropy on clean training images with momentum SGD. The model ends
/// holding the parameters of the epoch with the best validation accuracy.
/// Throws std::runtime_error on a non-finite loss.
FinetuneResult finetune(BackboneModel& model, const Dataset& data,
                        const FinetuneConfig& config);

// -- Checkpoints -------------------------------------------------------------

Checkpoint backbone_checkpoint(const BackboneModel& model,
                               const FeatureNormalizer* normalizer = nullptr);
BackboneModel backbone_from_checkpoint(const Checkpoint& checkpoint);
std::optional<FeatureNormalizer> normalizer_from_checkpoint(
    const Checkpoint& checkpoint);

}  // namespace learn

#endif  // LEARN_BACKBONE_HPP
