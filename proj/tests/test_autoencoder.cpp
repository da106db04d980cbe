#include <cmath>
#include <sstream>

#include "doctest.h"
#include "learn/autoencoder.hpp"
#include "learn/grad_check.hpp"
#include "learn/ops.hpp"
#include "oracles.hpp"

using namespace learn;

namespace {

const Shape kFeature{64, 2, 2};

Tensor features(Rng& rng, const Shape& s = kFeature) {
  return oracle::random_tensor(s, rng, 0.0, 1.0);
}

struct Head {
  BackboneModel model = build_backbone(4, 32, 99);
  FeatureNormalizer norm;
  Head() {
    freeze(model);
    Rng rng(5);
    Vector s(64);
    for (auto& v : s) v = rng.uniform(0.5, 2.0);
    norm = FeatureNormalizer(s);
  }
};

double loop_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

std::vector<FeaturePair> random_batch(Rng& rng, std::size_t n) {
  std::vector<FeaturePair> batch;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor clean = features(rng);
    Tensor occ = rng.bernoulli(0.25) ? clean : features(rng);
    batch.push_back({clean, occ, i % 4});
  }
  return batch;
}

}  // namespace

TEST_CASE("build_learn shapes") {
  auto big = build_learn({64, 8, 8}, 1);
  CHECK(big.latent_shape == Shape{32, 2, 2});
  CHECK(big.warnings.empty());
  Rng rng(1);
  auto f = features(rng, {64, 8, 8});
  CHECK(big.encode(f).shape() == Shape{32, 2, 2});
  CHECK(big(f).shape() == Shape{64, 8, 8});

  auto small = build_learn(kFeature, 1);
  CHECK(small.latent_shape == Shape{32, 1, 1});
  REQUIRE(small.warnings.size() == 1);
  CHECK(small.warnings[0].find("skipped") != std::string::npos);
  CHECK(small(features(rng)).shape() == kFeature);
  CHECK(small.encoder[2].kernels.shape() == Shape{32, 64, 3, 3});
  CHECK(small.decoder[0].kernels.shape() == Shape{32, 64, 3, 3});
  CHECK(small.decoder[2].kernels.shape() == Shape{64, 64, 4, 4});
  CHECK(small.parameter_count() > 0);

  CHECK_THROWS_AS(build_learn({0, 2, 2}, 1), std::invalid_argument);
  CHECK_THROWS_AS(build_learn({64, 2}, 1), std::invalid_argument);
}

TEST_CASE("build_learn is deterministic per seed") {
  auto a = build_learn(kFeature, 4), b = build_learn(kFeature, 4), c = build_learn(kFeature, 5);
  CHECK(parameter_hash(a.parameters()) == parameter_hash(b.parameters()));
  CHECK(parameter_hash(a.parameters()) != parameter_hash(c.parameters()));
}

TEST_CASE("encode and decode contracts") {
  auto ae = build_learn(kFeature, 2);
  Rng rng(3);
  auto f = features(rng);
  CHECK(ae.encode(f).values() == ae.encode(f).values());
  CHECK_THROWS_AS(ae.encode(features(rng, {64, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(ae.decode(Tensor({32, 2, 2})), std::invalid_argument);

  auto zero = ae.decode(Tensor(ae.latent_shape, 0.0));
  CHECK(zero.values().allFinite());
  CHECK(zero.values().cwiseAbs().maxCoeff() <= 1.0);
  for (int i = 0; i < 50; ++i) {
    auto z = oracle::random_tensor(ae.latent_shape, rng, -20.0, 20.0);
    CHECK(ae.decode(z).values().cwiseAbs().maxCoeff() <= 1.0);
  }

  FeatureMap fm{f, true, 17, true};
  auto code = encode(ae, fm);
  CHECK(code.source_sample == 17);
  CHECK(code.is_occluded);
  auto back = decode(ae, code);
  CHECK(back.values.shape() == kFeature);
  CHECK(back.normalized);
}

TEST_CASE("gradients through the autoencoder") {
  Rng rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    auto ae = build_learn(kFeature, 20 + trial);
    auto f = features(rng);
    auto params = ae.parameters();
    auto enc = grad_check([&] { return sum(ae.encode(f)); }, params, 1e-5, 12, trial);
    CHECK(enc.max_relative_error < 1e-4);
    auto w = oracle::random_tensor(kFeature, rng);
    auto full = grad_check([&] { return dot(ae(f), w); }, params, 1e-5, 12, trial);
    CHECK(full.max_relative_error < 1e-4);
  }
}

TEST_CASE("reconstruction loss") {
  Rng rng(4);
  auto a = features(rng);
  CHECK(loss_rec(a, a).item() == 0.0);
  CHECK(loss_rec(affine(a, 1.0, 0.1), a).item() == doctest::Approx(0.01).epsilon(1e-12));
  for (int i = 0; i < 10; ++i) {
    auto x = features(rng), y = features(rng);
    CHECK(std::abs(loss_rec(x, y).item() - loop_mse(x, y)) < 1e-12);
  }
  CHECK_THROWS_AS(loss_rec(a, Tensor({64, 1, 1})), std::invalid_argument);
}

TEST_CASE("intra-class latent loss") {
  Rng rng(6);
  auto z = oracle::random_tensor({32, 1, 1}, rng);
  CHECK(loss_intra(z, z).item() == 0.0);
  CHECK(loss_intra(affine(z, 1.0, 2.0), z).item() == doctest::Approx(4.0).epsilon(1e-12));
  for (int i = 0; i < 10; ++i) {
    auto a = oracle::random_tensor({32, 1, 1}, rng), b = oracle::random_tensor({32, 1, 1}, rng);
    CHECK(std::abs(loss_intra(a, b).item() - loop_mse(a, b)) < 1e-12);
    CHECK(loss_intra(a, b).item() == loss_intra(b, a).item());
  }
}

TEST_CASE("inter-class margin loss") {
  Rng rng(7);
  auto z = oracle::random_tensor({32, 1, 1}, rng);
  CHECK(loss_inter(z, z, false, 1.0).item() == 1.0);
  CHECK(loss_inter(z, z, true, 1.0).item() == 0.0);
  auto far = affine(z, 1.0, 1.0);  // d2 = 32
  CHECK(loss_inter(z, far, false, 1.0).item() == 0.0);
  CHECK(loss_inter(z, far, true, 1.0).item() == doctest::Approx(32.0));
  // Beyond sqrt(M) more distance never increases the loss.
  double prev = loss_inter(z, z, false, 4.0).item();
  for (double t = 0.05; t < 1.0; t += 0.05) {
    const double cur = loss_inter(z, affine(z, 1.0, t), false, 4.0).item();
    CHECK(cur <= prev);
    prev = cur;
  }
  for (int i = 0; i < 10; ++i) {
    auto a = oracle::random_tensor({32, 1, 1}, rng), b = oracle::random_tensor({32, 1, 1}, rng);
    for (bool y : {false, true}) {
      CHECK(loss_inter(a, b, y, 3.0).item() == loss_inter(b, a, y, 3.0).item());
      CHECK(loss_inter(a, b, y, 3.0).item() >= 0.0);
    }
  }
  CHECK_THROWS_AS(loss_inter(z, z, false, 0.0), std::invalid_argument);
}

TEST_CASE("classification loss through the frozen head") {
  Head h;
  Tensor uniform_input(kFeature, 0.0);
  // Zero features and zero bias give uniform logits.
  CHECK(loss_cls(uniform_input, h.model.head, 2, h.norm).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(loss_cls(uniform_input, h.model.head, 4, h.norm), std::out_of_range);

  auto ae = build_learn(kFeature, 8);
  Rng rng(8);
  auto f = features(rng);
  auto params = ae.parameters();
  for (auto& p : params) p.zero_grad();
  loss_cls(ae(f), h.model.head, 1, h.norm).backward();
  double total = 0.0;
  for (const auto& p : params) total += p.grad().norm();
  CHECK(total > 0.0);
  CHECK_FALSE(h.model.head.weights.has_grad());
  CHECK_FALSE(h.model.head.bias.has_grad());

  auto report = grad_check([&] { return loss_cls(ae(f), h.model.head, 1, h.norm); }, params,
                           1e-5, 12, 3);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("loss_total") {
  Head h;
  auto ae = build_learn(kFeature, 12);
  Rng data_rng(12);
  auto batch = random_batch(data_rng, 8);

  SUBCASE("zero weights leave the reconstruction term") {
    LossWeights w{0.0, 0.0, 0.0, 1.0};
    Rng rng(1);
    auto out = loss_total(batch, ae, h.model.head, h.norm, w, rng);
    CHECK(out.total.item() == out.rec);
  }
  SUBCASE("total recomposes from the breakdown") {
    LossWeights w{0.7, 0.3, 1.3, 2.0};
    Rng rng(2);
    auto out = loss_total(batch, ae, h.model.head, h.norm, w, rng);
    const double manual = out.rec + 0.7 * out.intra + 0.3 * out.inter + 1.3 * out.cls;
    CHECK(std::abs(out.total.item() - manual) < 1e-12);
    CHECK(out.rec >= 0.0);
    CHECK(out.intra >= 0.0);
    CHECK(out.inter >= 0.0);
    CHECK(out.cls >= 0.0);
    CHECK(out.intra_pairs >= batch.size());
    CHECK(out.intra_pairs <= 4 * batch.size());
    CHECK(out.inter_pairs <= 4 * batch.size());
  }
  SUBCASE("identical clean samples of one class with an identity map") {
    // The AE is not an identity map, so check the terms that only depend on
    // sample equality: intra vanishes when every latent is the same.
    std::vector<FeaturePair> same(4, FeaturePair{batch[0].clean, batch[0].clean, 0});
    Rng rng(3);
    auto out = loss_total(same, ae, h.model.head, h.norm, {}, rng);
    CHECK(out.intra == 0.0);
    CHECK(out.inter == 0.0);
  }
  SUBCASE("gradients reach the AE only") {
    Rng rng(4);
    auto out = loss_total(batch, ae, h.model.head, h.norm, {}, rng);
    for (auto& p : ae.parameters()) p.zero_grad();
    out.total.backward();
    for (const auto& p : ae.parameters()) CHECK(p.grad().norm() > 0.0);
    for (const auto& p : h.model.parameters()) CHECK_FALSE(p.has_grad());
  }
  SUBCASE("finite differences") {
    auto params = ae.parameters();
    auto report = grad_check(
        [&] {
          Rng rng(5);
          return loss_total(batch, ae, h.model.head, h.norm, {}, rng).total;
        },
        params, 1e-5, 6, 9);
    CHECK(report.max_relative_error < 1e-4);
  }
  SUBCASE("rejections") {
    Rng rng(6);
    std::vector<FeaturePair> empty;
    CHECK_THROWS_AS(loss_total(empty, ae, h.model.head, h.norm, {}, rng), std::invalid_argument);
    LossWeights bad;
    bad.margin = -1.0;
    CHECK_THROWS_AS(loss_total(batch, ae, h.model.head, h.norm, bad, rng), std::invalid_argument);
  }
}

TEST_CASE("learn checkpoint round trip") {
  auto ae = build_learn(kFeature, 30);
  LossWeights w{2.0, 0.25, 1.0, 3.0};
  std::stringstream buf;
  write_checkpoint(buf, learn_checkpoint(ae, w));
  auto cp = read_checkpoint(buf);
  auto back = learn_from_checkpoint(cp);
  CHECK(parameter_hash(back.parameters()) == parameter_hash(ae.parameters()));
  CHECK(loss_weights_from_checkpoint(cp) == w);
  CHECK(back.pooled == ae.pooled);
  CHECK(cp.get("feature_shape") == "64 2 2");
}
