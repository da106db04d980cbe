#ifndef LEARN_AUTOENCODER_HPP
#define LEARN_AUTOENCODER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "learn/backbone.hpp"
#include "learn/random.hpp"
#include "learn/serialize.hpp"
#include "learn/tensor.hpp"

namespace learn {

struct LossWeights {
  double lambda_intra = 1.0;
  double lambda_inter = 0.5;
  double lambda_cls = 1.0;
  double margin = 1.0;

  /// Throws std::invalid_argument on negative or non-finite weights or a
  /// non-positive margin.
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct AeLayer {
  Tensor kernels;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

/// Convolutional autoencoder over normalized feature maps. The encoder has
/// three 3x3 conv layers with 64, 64 and 32 output channels, ReLU and 2x2
/// max pooling after the first two; the decoder mirrors it with transposed
/// convolutions (4x4 stride 2 where the encoder pooled) and ends in a hard
/// tanh.
class LearnAutoencoder {
 public:
  static constexpr std::array<std::size_t, 3> kChannels{64, 64, 32};

  Shape feature_shape;
  Shape latent_shape;
  std::vector<AeLayer> encoder;
  std::vector<bool> pooled;       // per encoder layer
  std::vector<AeLayer> decoder;   // applied in order, last one outputs features
  std::vector<std::string> warnings;

  Tensor encode(const Tensor& features) const;
  Tensor decode(const Tensor& latent) const;
  Tensor operator()(const Tensor& features) const { return decode(encode(features)); }

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

/// Pooling stages that would not halve an even spatial size are dropped and
/// a warning is recorded in `warnings`.
LearnAutoencoder build_learn(const Shape& feature_shape, std::uint64_t seed);

struct LatentCode {
  Tensor values;
  std::uint64_t source_sample = 0;
  bool is_occluded = false;
};

LatentCode encode(const LearnAutoencoder& ae, const FeatureMap& f);
FeatureMap decode(const LearnAutoencoder& ae, const LatentCode& z);

// -- Losses ------------------------------------------------------------------

/// Mean squared error between the reconstruction and the clean features.
Tensor loss_rec(const Tensor& f_tilde, const Tensor& f_clean);
/// Mean squared difference of two same-class latents.
Tensor loss_intra(const Tensor& z_a, const Tensor& z_b);
/// Contrastive margin loss on d2 = ||z_a - z_b||^2: d2 when same_class,
/// max(0, margin - d2) otherwise.
Tensor loss_inter(const Tensor& z_a, const Tensor& z_b, bool same_class,
                  double margin);
/// Cross-entropy of the frozen head on the denormalized reconstruction.
Tensor loss_cls(const Tensor& f_tilde, const ClassifierHead& head,
                std::size_t label, const FeatureNormalizer& normalizer);

/// Normalized features of a clean image and of its occluded variant (equal
/// to the clean features for clean-pass samples).
struct FeaturePair {
  Tensor clean;
  Tensor occluded;
  std::size_t label = 0;
};

struct LossBreakdown {
  Tensor total;
  double rec = 0.0;
  double intra = 0.0;
  double inter = 0.0;
  double cls = 0.0;
  std::size_t intra_pairs = 0;
  std::size_t inter_pairs = 0;
};

/// rec + lambda_intra*intra + lambda_inter*inter + lambda_cls*cls, with rec
/// and cls averaged over occluded and clean reconstructions, intra over
/// clean-occluded and sampled clean-clean same-class pairs, inter over
/// sampled cross-class and same-class pairs. Pairs per term are capped at
/// four times the batch size. Breakdown values are unweighted.
LossBreakdown loss_total(std::span<const FeaturePair> batch,
                         const LearnAutoencoder& ae, const ClassifierHead& head,
                         const FeatureNormalizer& normalizer,
                         const LossWeights& weights, Rng& rng);

// -- Checkpoints -------------------------------------------------------------

Checkpoint learn_checkpoint(const LearnAutoencoder& ae, const LossWeights& weights);
LearnAutoencoder learn_from_checkpoint(const Checkpoint& checkpoint);
LossWeights loss_weights_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace learn

#endif  // LEARN_AUTOENCODER_HPP
