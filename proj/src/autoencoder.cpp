#include "learn/autoencoder.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "learn/ops.hpp"

namespace learn {

void LossWeights::validate() const {
  for (double w : {lambda_intra, lambda_inter, lambda_cls}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw std::invalid_argument("loss weights must be finite and non-negative");
    }
  }
  if (!std::isfinite(margin) || margin <= 0.0) {
    throw std::invalid_argument("margin must be positive and finite");
  }
}

namespace {

AeLayer make_layer(Shape kernel_shape, std::size_t fan_in, double gain,
                   std::size_t stride, std::size_t padding, std::size_t out_channels,
                   Rng& rng) {
  const double bound = std::sqrt(gain / static_cast<double>(fan_in));
  Vector v(static_cast<Eigen::Index>(numel(kernel_shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  AeLayer layer{Tensor(std::move(kernel_shape), std::move(v)),
                Tensor({out_channels}, 0.0), stride, padding};
  layer.kernels.set_requires_grad(true);
  layer.bias.set_requires_grad(true);
  return layer;
}

void check_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw std::invalid_argument(std::string(what) + ": expected " +
                                to_string(expected) + ", got " + to_string(t.shape()));
  }
}

std::string join_dims(const Shape& s) {
  std::ostringstream out;
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
  return out.str();
}

}  // namespace

LearnAutoencoder build_learn(const Shape& feature_shape, std::uint64_t seed) {
  if (feature_shape.size() != 3 || numel(feature_shape) == 0) {
    throw std::invalid_argument("feature shape must be [c,h,w] with positive dims, got " +
                                to_string(feature_shape));
  }
  Rng rng(derive_seed(seed, 0xae));
  LearnAutoencoder ae;
  ae.feature_shape = feature_shape;
  std::size_t c = feature_shape[0], h = feature_shape[1], w = feature_shape[2];

  std::array<std::size_t, 3> in_channels{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto out = LearnAutoencoder::kChannels[i];
    in_channels[i] = c;
    ae.encoder.push_back(make_layer({out, c, 3, 3}, c * 9, 6.0, 1, 1, out, rng));
    bool pool = false;
    if (i < 2) {
      pool = h % 2 == 0 && w % 2 == 0;
      if (!pool) {
        std::ostringstream msg;
        msg << "encoder pooling after layer " << i + 1 << " skipped: " << h << "x" << w
            << " feature map cannot be halved";
        ae.warnings.push_back(msg.str());
      } else {
        h /= 2;
        w /= 2;
      }
    }
    ae.pooled.push_back(pool);
    c = out;
  }
  ae.latent_shape = {c, h, w};

  for (std::size_t k = 3; k-- > 0;) {
    const auto in = LearnAutoencoder::kChannels[k];
    const auto out = in_channels[k];
    const bool up = ae.pooled[k];
    const std::size_t ksize = up ? 4 : 3, stride = up ? 2 : 1;
    const double gain = k == 0 ? 3.0 : 6.0;
    ae.decoder.push_back(make_layer({in, out, ksize, ksize},
                                    in * ksize * ksize / (stride * stride), gain,
                                    stride, 1, out, rng));
  }
  return ae;
}

Tensor LearnAutoencoder::encode(const Tensor& features) const {
  check_shape(features, feature_shape, "encode");
  Tensor x = features;
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    x = conv2d(x, encoder[i].kernels, encoder[i].bias, encoder[i].stride,
               encoder[i].padding);
    if (i + 1 < encoder.size()) {
      x = relu(x);
      if (pooled[i]) x = max_pool2d(x);
    }
  }
  return x;
}

Tensor LearnAutoencoder::decode(const Tensor& latent) const {
  check_shape(latent, latent_shape, "decode");
  Tensor x = latent;
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    x = transposed_conv2d(x, decoder[i].kernels, decoder[i].bias, decoder[i].stride,
                          decoder[i].padding);
    x = i + 1 < decoder.size() ? relu(x) : hard_tanh(x);
  }
  return x;
}

std::vector<Tensor> LearnAutoencoder::parameters() const {
  std::vector<Tensor> out;
  for (const auto* layers : {&encoder, &decoder}) {
    for (const auto& l : *layers) {
      out.push_back(l.kernels);
      out.push_back(l.bias);
    }
  }
  return out;
}

std::size_t LearnAutoencoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

LatentCode encode(const LearnAutoencoder& ae, const FeatureMap& f) {
  return {ae.encode(f.values), f.source_sample, f.is_occluded};
}

FeatureMap decode(const LearnAutoencoder& ae, const LatentCode& z) {
  return {ae.decode(z.values), true, z.source_sample, z.is_occluded};
}

// -- Losses ------------------------------------------------------------------

Tensor loss_rec(const Tensor& f_tilde, const Tensor& f_clean) {
  check_shape(f_tilde, f_clean.shape(), "loss_rec");
  return mean_squared_error(f_tilde, f_clean);
}

Tensor loss_intra(const Tensor& z_a, const Tensor& z_b) {
  check_shape(z_a, z_b.shape(), "loss_intra");
  return mean_squared_error(z_a, z_b);
}

Tensor loss_inter(const Tensor& z_a, const Tensor& z_b, bool same_class,
                  double margin) {
  if (!(margin > 0.0)) throw std::invalid_argument("margin must be positive");
  check_shape(z_a, z_b.shape(), "loss_inter");
  Tensor d2 = squared_distance(z_a, z_b);
  return same_class ? d2 : relu(affine(d2, -1.0, margin));
}

Tensor loss_cls(const Tensor& f_tilde, const ClassifierHead& head,
                std::size_t label, const FeatureNormalizer& normalizer) {
  if (label >= head.num_classes()) {
    throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                            std::to_string(head.num_classes()) + " classes");
  }
  return softmax_cross_entropy(head(normalizer.denormalize(f_tilde)), label);
}

namespace {

Tensor mean_or_zero(const std::vector<Tensor>& terms) {
  return terms.empty() ? Tensor::scalar(0.0) : mean_of(terms);
}

// Random partner of i among indices whose label equality with i is `same`.
std::optional<std::size_t> partner(std::span<const FeaturePair> batch, std::size_t i,
                                   bool same, Rng& rng) {
  std::vector<std::size_t> pool;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (j != i && (batch[j].label == batch[i].label) == same) pool.push_back(j);
  }
  if (pool.empty()) return std::nullopt;
  return pool[rng.below(pool.size())];
}

}  // namespace

LossBreakdown loss_total(std::span<const FeaturePair> batch,
                         const LearnAutoencoder& ae, const ClassifierHead& head,
                         const FeatureNormalizer& normalizer,
                         const LossWeights& weights, Rng& rng) {
  if (batch.empty()) throw std::invalid_argument("loss_total: empty batch");
  weights.validate();
  const std::size_t n = batch.size();
  const std::size_t cap = 4 * n;

  std::vector<Tensor> z_clean, z_occ, rec, cls;
  for (const auto& s : batch) {
    z_clean.push_back(ae.encode(s.clean));
    z_occ.push_back(ae.encode(s.occluded));
    for (const auto* z : {&z_occ.back(), &z_clean.back()}) {
      Tensor f_tilde = ae.decode(*z);
      rec.push_back(loss_rec(f_tilde, s.clean));
      cls.push_back(loss_cls(f_tilde, head, s.label, normalizer));
    }
  }

  auto pick = [&](std::size_t i) -> const Tensor& {
    return rng.bernoulli(0.5) ? z_clean[i] : z_occ[i];
  };

  std::vector<Tensor> intra;
  for (std::size_t i = 0; i < n; ++i) intra.push_back(loss_intra(z_clean[i], z_occ[i]));
  for (std::size_t k = 0; k < n && intra.size() < cap; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(n));
    if (auto j = partner(batch, i, true, rng)) intra.push_back(loss_intra(z_clean[i], z_clean[*j]));
  }

  std::vector<Tensor> inter;
  for (bool same : {false, true}) {
    for (std::size_t k = 0; k < n && inter.size() < cap; ++k) {
      const auto i = static_cast<std::size_t>(rng.below(n));
      if (auto j = partner(batch, i, same, rng)) {
        const Tensor& a = pick(i);
        const Tensor& b = pick(*j);
        inter.push_back(loss_inter(a, b, same, weights.margin));
      }
    }
  }

  LossBreakdown out;
  Tensor l_rec = mean_of(rec);
  Tensor l_intra = mean_or_zero(intra);
  Tensor l_inter = mean_or_zero(inter);
  Tensor l_cls = mean_of(cls);
  out.rec = l_rec.item();
  out.intra = l_intra.item();
  out.inter = l_inter.item();
  out.cls = l_cls.item();
  out.intra_pairs = intra.size();
  out.inter_pairs = inter.size();

  out.total = l_rec;
  if (weights.lambda_intra != 0.0) out.total = out.total + weights.lambda_intra * l_intra;
  if (weights.lambda_inter != 0.0) out.total = out.total + weights.lambda_inter * l_inter;
  if (weights.lambda_cls != 0.0) out.total = out.total + weights.lambda_cls * l_cls;
  return out;
}

// -- Checkpoints -------------------------------------------------------------

Checkpoint learn_checkpoint(const LearnAutoencoder& ae, const LossWeights& weights) {
  Checkpoint cp;
  cp.kind = "learn";
  cp.set("feature_shape", join_dims(ae.feature_shape));
  cp.set("latent_shape", join_dims(ae.latent_shape));
  cp.set("channels", "64 64 32");
  std::string pools;
  for (std::size_t i = 0; i < ae.pooled.size(); ++i) pools += (i ? " " : "") + std::to_string(ae.pooled[i] ? 1 : 0);
  cp.set("pooled", pools);
  std::ostringstream w;
  w.precision(17);
  w << weights.lambda_intra << ' ' << weights.lambda_inter << ' ' << weights.lambda_cls
    << ' ' << weights.margin;
  cp.set("loss_weights", w.str());
  for (std::size_t i = 0; i < ae.encoder.size(); ++i) {
    cp.add("enc" + std::to_string(i) + ".kernels", "encoder", ae.encoder[i].kernels);
    cp.add("enc" + std::to_string(i) + ".bias", "encoder", ae.encoder[i].bias);
  }
  for (std::size_t i = 0; i < ae.decoder.size(); ++i) {
    cp.add("dec" + std::to_string(i) + ".kernels", "decoder", ae.decoder[i].kernels);
    cp.add("dec" + std::to_string(i) + ".bias", "decoder", ae.decoder[i].bias);
  }
  return cp;
}

LearnAutoencoder learn_from_checkpoint(const Checkpoint& cp) {
  if (cp.kind != "learn") {
    throw std::runtime_error("expected a learn checkpoint, got '" + cp.kind + "'");
  }
  Shape shape;
  std::istringstream dims(cp.get("feature_shape"));
  for (std::size_t d; dims >> d;) shape.push_back(d);
  LearnAutoencoder ae = build_learn(shape, 0);
  auto load = [&](Tensor& dst, const std::string& name) {
    const Tensor& src = cp.tensor(name);
    if (src.shape() != dst.shape()) {
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               to_string(src.shape()) + ", expected " +
                               to_string(dst.shape()));
    }
    dst.values() = src.values();
  };
  for (std::size_t i = 0; i < ae.encoder.size(); ++i) {
    load(ae.encoder[i].kernels, "enc" + std::to_string(i) + ".kernels");
    load(ae.encoder[i].bias, "enc" + std::to_string(i) + ".bias");
  }
  for (std::size_t i = 0; i < ae.decoder.size(); ++i) {
    load(ae.decoder[i].kernels, "dec" + std::to_string(i) + ".kernels");
    load(ae.decoder[i].bias, "dec" + std::to_string(i) + ".bias");
  }
  return ae;
}

LossWeights loss_weights_from_checkpoint(const Checkpoint& cp) {
  LossWeights w;
  std::istringstream in(cp.get("loss_weights"));
  if (!(in >> w.lambda_intra >> w.lambda_inter >> w.lambda_cls >> w.margin)) {
    throw std::runtime_error("malformed loss_weights in learn checkpoint");
  }
  return w;
}

}  // namespace learn
