#include "learn/backbone.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "learn/ops.hpp"
#include "learn/optim.hpp"
#include "learn/random.hpp"

namespace learn {

namespace {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  Vector v(static_cast<Eigen::Index>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor zeros_param(Shape shape) {
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  return t;
}

void set_trainable(std::vector<Tensor> params, bool on) {
  for (auto& p : params) p.set_requires_grad(on);
}

}  // namespace

Tensor FeatureExtractor::operator()(const Tensor& image) const {
  Tensor x = image;
  for (const auto& b : blocks) x = max_pool2d(relu(conv2d(x, b.kernels, b.bias, 1, 1)));
  return x;
}

std::vector<Tensor> FeatureExtractor::parameters() const {
  std::vector<Tensor> out;
  for (const auto& b : blocks) {
    out.push_back(b.kernels);
    out.push_back(b.bias);
  }
  return out;
}

Tensor ClassifierHead::operator()(const Tensor& features) const {
  return linear(features, weights, bias);
}

std::vector<Tensor> BackboneModel::parameters() const {
  auto out = extractor.parameters();
  out.push_back(head.weights);
  out.push_back(head.bias);
  return out;
}

BackboneModel build_backbone(std::size_t num_classes, std::size_t image_size,
                             std::uint64_t seed, std::size_t channels) {
  if (num_classes < 2) throw std::invalid_argument("backbone needs at least 2 classes");
  if (image_size % 16 != 0 || image_size == 0) {
    throw std::invalid_argument("image size must be a positive multiple of 16, got " +
                                std::to_string(image_size));
  }
  Rng rng(derive_seed(seed, 0xbacb0e));
  BackboneModel m;
  m.extractor.input = {channels, image_size, image_size};
  std::size_t c_in = channels;
  for (auto width : kBackboneWidths) {
    m.extractor.blocks.push_back(
        {fan_in_uniform({width, c_in, 3, 3}, c_in * 9, std::sqrt(6.0), rng),
         zeros_param({width})});
    c_in = width;
  }
  const std::size_t side = image_size / 16;
  m.extractor.feature_shape = {c_in, side, side};
  const std::size_t n = c_in * side * side;
  m.head.weights = fan_in_uniform({num_classes, n}, n, 1.0, rng);
  m.head.bias = zeros_param({num_classes});
  return m;
}

std::pair<FeatureExtractor, ClassifierHead> split(const BackboneModel& model) {
  return {model.extractor, model.head};
}

std::uint64_t parameter_hash(std::span<const Tensor> params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& p : params) h = content_hash(p, h);
  return h;
}

std::uint64_t parameter_hash(const BackboneModel& model) {
  const auto params = model.parameters();
  return parameter_hash(params);
}

std::uint64_t freeze(BackboneModel& model) {
  if (model.frozen) return model.frozen_hash;
  set_trainable(model.parameters(), false);
  model.frozen = true;
  model.frozen_hash = parameter_hash(model);
  return model.frozen_hash;
}

void freeze(FeatureExtractor& extractor) { set_trainable(extractor.parameters(), false); }
void freeze(ClassifierHead& head) { set_trainable(head.parameters(), false); }

bool is_frozen(const BackboneModel& model) {
  const auto params = model.parameters();
  return std::none_of(params.begin(), params.end(),
                      [](const Tensor& p) { return p.requires_grad(); });
}

std::size_t predict(const Tensor& logits) {
  Eigen::Index best = 0;
  logits.values().maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

double accuracy(const BackboneModel& model, std::span<const LabeledImage> images) {
  if (images.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& img : images) correct += predict(model(img.pixels.detach())) == img.label;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

// -- Features ----------------------------------------------------------------

FeatureNormalizer::FeatureNormalizer(Vector scale) : scale_(std::move(scale)) {
  if ((scale_.array() <= 0.0).any() || !scale_.allFinite()) {
    throw std::invalid_argument("normalizer scales must be positive and finite");
  }
}

Tensor FeatureNormalizer::normalize(const Tensor& features) const {
  if (features.dim(0) != channels()) {
    throw std::invalid_argument("normalizer has " + std::to_string(channels()) +
                                " channels, features " + to_string(features.shape()));
  }
  const Eigen::Index plane = static_cast<Eigen::Index>(features.size() / channels());
  Vector v = features.values();
  for (Eigen::Index c = 0; c < scale_.size(); ++c) {
    v.segment(c * plane, plane) =
        (v.segment(c * plane, plane) / scale_[c]).cwiseMax(-1.0).cwiseMin(1.0);
  }
  return Tensor(features.shape(), std::move(v));
}

Tensor FeatureNormalizer::denormalize(const Tensor& normalized) const {
  return scale_channels(normalized, scale_);
}

namespace {

FeatureMap make_feature_map(const FeatureExtractor& extractor, const Tensor& pixels,
                            std::uint64_t source, bool occluded,
                            const FeatureNormalizer* normalizer) {
  FeatureMap f;
  f.values = extractor(pixels.detach()).detach();
  if (normalizer) {
    f.values = normalizer->normalize(f.values);
    f.normalized = true;
  }
  f.source_sample = source;
  f.is_occluded = occluded;
  return f;
}

}  // namespace

FeatureMap extract_features(const FeatureExtractor& extractor,
                            const LabeledImage& image,
                            const FeatureNormalizer* normalizer) {
  return make_feature_map(extractor, image.pixels, image.sample_id, false, normalizer);
}

FeatureMap extract_features(const FeatureExtractor& extractor,
                            const OccludedImage& image,
                            const FeatureNormalizer* normalizer) {
  return make_feature_map(extractor, image.pixels, image.source,
                          image.coverage > 0.0, normalizer);
}

FeatureNormalizer fit_normalizer(std::span<const Tensor> features) {
  if (features.empty()) throw std::invalid_argument("fit_normalizer: no features");
  const std::size_t channels = features.front().dim(0);
  const std::size_t plane = features.front().size() / channels;
  Vector scale(static_cast<Eigen::Index>(channels));
  std::vector<double> mags;
  mags.reserve(plane * features.size());
  for (std::size_t c = 0; c < channels; ++c) {
    mags.clear();
    for (const auto& f : features) {
      for (std::size_t i = 0; i < plane; ++i) mags.push_back(std::abs(f[c * plane + i]));
    }
    const auto rank = static_cast<std::size_t>(
        std::ceil(FeatureNormalizer::kPercentile * static_cast<double>(mags.size())));
    const auto k = std::clamp<std::size_t>(rank, 1, mags.size()) - 1;
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k), mags.end());
    scale[static_cast<Eigen::Index>(c)] = std::max(mags[k], FeatureNormalizer::kFloor);
  }
  return FeatureNormalizer(std::move(scale));
}

FeatureNormalizer fit_normalizer(const FeatureExtractor& extractor,
                                 std::span<const LabeledImage> images) {
  std::vector<Tensor> features;
  features.reserve(images.size());
  for (const auto& img : images) features.push_back(extractor(img.pixels.detach()).detach());
  return fit_normalizer(features);
}

// -- Finetuning --------------------------------------------------------------

FinetuneResult finetune(BackboneModel& model, const Dataset& data,
                        const FinetuneConfig& config) {
  if (model.frozen) throw std::logic_error("finetune: backbone is frozen");
  if (config.batch_size == 0 || config.epochs == 0) {
    throw std::invalid_argument("finetune: epochs and batch size must be positive");
  }
  const auto& train = data.images(Split::train);
  const auto& val = data.images(Split::val);
  const auto params = model.parameters();
  Sgd opt(params, config.learning_rate, config.momentum);

  FinetuneResult result;
  std::vector<Vector> best;
  double best_acc = -1.0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(config.seed, epoch));
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> losses;
      for (std::size_t i = start; i < end; ++i) {
        const auto& img = train[order[i]];
        Tensor logits = model(img.pixels);
        correct += predict(logits) == img.label;
        losses.push_back(softmax_cross_entropy(logits, img.label));
      }
      Tensor loss = mean_of(losses);
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << "finetune diverged: loss " << loss.item() << " at epoch " << epoch
            << ", batch starting at " << start << " (lr " << config.learning_rate << ")";
        throw std::runtime_error(msg.str());
      }
      loss_sum += loss.item() * static_cast<double>(end - start);
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    m.val_accuracy = accuracy(model, val);
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(m);
    if (m.val_accuracy > best_acc) {
      best_acc = m.val_accuracy;
      result.best_epoch = epoch;
      best.clear();
      for (const auto& p : params) best.push_back(p.values());
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    p.values() = best[i];
  }
  return result;
}

// -- Checkpoints -------------------------------------------------------------

Checkpoint backbone_checkpoint(const BackboneModel& model,
                               const FeatureNormalizer* normalizer) {
  Checkpoint cp;
  cp.kind = "backbone";
  cp.set("num_classes", std::to_string(model.head.num_classes()));
  cp.set("channels", std::to_string(model.extractor.input.channels));
  cp.set("image_size", std::to_string(model.extractor.input.height));
  cp.set("feature_shape", to_string(model.extractor.feature_shape));
  cp.set("frozen", model.frozen ? "1" : "0");
  std::ostringstream hash;
  hash << std::hex << parameter_hash(model);
  cp.set("parameter_hash", hash.str());
  for (std::size_t i = 0; i < model.extractor.blocks.size(); ++i) {
    const auto& b = model.extractor.blocks[i];
    cp.add("conv" + std::to_string(i) + ".kernels", "extractor", b.kernels, model.frozen);
    cp.add("conv" + std::to_string(i) + ".bias", "extractor", b.bias, model.frozen);
  }
  cp.add("head.weights", "head", model.head.weights, model.frozen);
  cp.add("head.bias", "head", model.head.bias, model.frozen);
  if (normalizer) {
    const auto& s = normalizer->scale();
    cp.add("normalizer.scale", "normalizer",
           Tensor({static_cast<std::size_t>(s.size())}, s));
  }
  return cp;
}

BackboneModel backbone_from_checkpoint(const Checkpoint& cp) {
  if (cp.kind != "backbone") {
    throw std::runtime_error("expected a backbone checkpoint, got '" + cp.kind + "'");
  }
  const auto num_classes = std::stoul(cp.get("num_classes"));
  const auto image_size = std::stoul(cp.get("image_size"));
  const auto channels = std::stoul(cp.get("channels"));
  BackboneModel m = build_backbone(num_classes, image_size, 0, channels);
  auto load = [&](Tensor& dst, const std::string& name) {
    const Tensor& src = cp.tensor(name);
    if (src.shape() != dst.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               to_string(src.shape()) + ", expected " +
                               to_string(dst.shape()));
    }
    dst.values() = src.values();
  };
  for (std::size_t i = 0; i < m.extractor.blocks.size(); ++i) {
    load(m.extractor.blocks[i].kernels, "conv" + std::to_string(i) + ".kernels");
    load(m.extractor.blocks[i].bias, "conv" + std::to_string(i) + ".bias");
  }
  load(m.head.weights, "head.weights");
  load(m.head.bias, "head.bias");
  if (cp.get("frozen") == "1") freeze(m);
  return m;
}

std::optional<FeatureNormalizer> normalizer_from_checkpoint(const Checkpoint& cp) {
  for (const auto& e : cp.entries) {
    if (e.name == "normalizer.scale") return FeatureNormalizer(e.tensor.values());
  }
  return std::nullopt;
}

}  // namespace learn
