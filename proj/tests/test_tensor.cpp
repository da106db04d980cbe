#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "learn/grad_check.hpp"
#include "learn/ops.hpp"
#include "learn/serialize.hpp"
#include "oracles.hpp"

using namespace learn;

namespace {

Tensor param(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return oracle::random_tensor(std::move(shape), rng, lo, hi)
      .set_requires_grad(true);
}

}  // namespace

TEST_CASE("conv2d of ones with ones kernel sums the window") {
  Tensor x(Shape{1, 3, 3}, 1.0), w(Shape{1, 1, 3, 3}, 1.0), b(Shape{1}, 0.0);
  auto y = conv2d(x, w, b);
  CHECK(y.shape() == Shape{1, 1, 1});
  CHECK(y[0] == 9.0);
}

TEST_CASE("conv2d with identity 1x1 kernel returns input") {
  Rng rng(3);
  auto x = oracle::random_tensor({1, 5, 4}, rng);
  Tensor w(Shape{1, 1, 1, 1}, 1.0), b(Shape{1}, 0.0);
  auto y = conv2d(x, w, b);
  CHECK(y.shape() == x.shape());
  CHECK((y.values() - x.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d matches quadruple loop oracle") {
  Rng rng(11);
  for (std::size_t stride : {1u, 2u}) {
    auto x = oracle::random_tensor({2, 5, 5}, rng);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor({3}, rng);
    auto y = conv2d(x, w, b, stride, 1);
    auto ref = oracle::conv2d(x, w, b, stride, 1);
    REQUIRE(y.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("conv2d rejects channel mismatch naming both shapes") {
  Tensor x(Shape{2, 4, 4}), w(Shape{1, 3, 3, 3}), b(Shape{1});
  try {
    conv2d(x, w, b);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,4,4]") != std::string::npos);
    CHECK(msg.find("[1,3,3,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 2, 2}), Tensor(Shape{1, 1, 3, 3}),
                         Tensor(Shape{1})),
                  std::invalid_argument);
}

TEST_CASE("transposed_conv2d stamps kernel") {
  Tensor x(Shape{1, 1, 1}, 1.0), w(Shape{1, 1, 2, 2}, 1.0), b(Shape{1}, 0.0);
  auto y = transposed_conv2d(x, w, b);
  CHECK(y.shape() == Shape{1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) CHECK(y[i] == 1.0);
}

TEST_CASE("transposed_conv2d stride 2 matches block placement oracle") {
  Rng rng(5);
  auto x = oracle::random_tensor({1, 2, 2}, rng);
  auto w = oracle::random_tensor({1, 1, 2, 2}, rng);
  Tensor b(Shape{1}, 0.0);
  auto y = transposed_conv2d(x, w, b, 2, 0);
  CHECK(y.shape() == Shape{1, 4, 4});
  auto ref = oracle::transposed_conv2d(x, w, b, 2, 0);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);

  // General shapes, padding and bias.
  auto x2 = oracle::random_tensor({3, 3, 4}, rng);
  auto w2 = oracle::random_tensor({3, 2, 4, 4}, rng);
  auto b2 = oracle::random_tensor({2}, rng);
  auto y2 = transposed_conv2d(x2, w2, b2, 2, 1);
  CHECK(y2.shape() == Shape{2, 6, 8});
  auto ref2 = oracle::transposed_conv2d(x2, w2, b2, 2, 1);
  for (std::size_t i = 0; i < ref2.size(); ++i) CHECK(std::abs(y2[i] - ref2[i]) < 1e-12);
}

TEST_CASE("transposed_conv2d is the input adjoint of conv2d") {
  Rng rng(17);
  struct Case { std::size_t ci, co, h, k, s, p; };
  for (auto c : {Case{2, 3, 5, 3, 1, 1}, Case{3, 2, 7, 3, 2, 1},
                 Case{1, 4, 8, 4, 2, 1}, Case{2, 2, 6, 2, 2, 0}}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto x = oracle::random_tensor({c.ci, c.h, c.h}, rng);
      auto w = oracle::random_tensor({c.co, c.ci, c.k, c.k}, rng);
      Tensor b0(Shape{c.co}, 0.0), bt0(Shape{c.ci}, 0.0);
      auto y_shape = conv2d(x, w, b0, c.s, c.p).shape();
      auto y = oracle::random_tensor(y_shape, rng);
      const double lhs = conv2d(x, w, b0, c.s, c.p).values().dot(y.values());
      auto xt = transposed_conv2d(y, w, bt0, c.s, c.p);
      REQUIRE(xt.shape() == x.shape());
      const double rhs = x.values().dot(xt.values());
      CHECK(std::abs(lhs - rhs) < 1e-10);
    }
  }
}

TEST_CASE("max_pool2d") {
  SUBCASE("constant input") {
    Tensor x(Shape{2, 4, 4}, 0.7);
    auto y = max_pool2d(x, 2, 2);
    CHECK(y.shape() == Shape{2, 2, 2});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.7);
  }
  SUBCASE("enumerated window") {
    auto y = max_pool2d(Tensor::from({1, 2, 2}, {1, 2, 3, 4}), 2, 2);
    CHECK(y.size() == 1);
    CHECK(y[0] == 4.0);
  }
  SUBCASE("windowed max oracle") {
    Rng rng(23);
    auto x = oracle::random_tensor({3, 8, 8}, rng);
    auto r = max_pool2d_with_indices(x, 2, 2);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t oy = 0; oy < 4; ++oy)
        for (std::size_t ox = 0; ox < 4; ++ox) {
          double m = -1e300;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              m = std::max(m, x[(c * 8 + 2 * oy + dy) * 8 + 2 * ox + dx]);
          const auto o = (c * 4 + oy) * 4 + ox;
          CHECK(r.output[o] == m);
          CHECK(x[r.argmax[o]] == m);
        }
  }
  SUBCASE("gradient routes to argmax only") {
    auto x = Tensor::from({1, 2, 2}, {1, 5, 3, 4}).set_requires_grad(true);
    sum(max_pool2d(x, 2, 2)).backward();
    Vector g = x.grad();
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 0.0);
  }
  SUBCASE("window larger than input") {
    CHECK_THROWS_AS(max_pool2d(Tensor(Shape{1, 1, 3}), 2, 2), std::invalid_argument);
  }
}

TEST_CASE("relu") {
  auto y = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  auto z = relu(Tensor::from({3}, {-1, -2, -0.5}));
  CHECK(z.values().isZero(0.0));
  auto x = Tensor::from({2}, {-1, 2}).set_requires_grad(true);
  sum(relu(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  auto kink = Tensor::from({1}, {0.0}).set_requires_grad(true);
  sum(relu(kink)).backward();
  CHECK(kink.grad()[0] == 0.0);
}

TEST_CASE("hard_tanh") {
  auto y = hard_tanh(Tensor::from({3}, {-3, 0.5, 3}));
  CHECK(y[0] == -1.0);
  CHECK(y[1] == 0.5);
  CHECK(y[2] == 1.0);
  auto in_range = Tensor::from({4}, {-1, -0.25, 0.0, 1});
  CHECK(hard_tanh(in_range).values() == in_range.values());
  auto x = Tensor::from({3}, {-2, 0, 2}).set_requires_grad(true);
  sum(hard_tanh(x)).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
  auto edge = Tensor::from({2}, {-1, 1}).set_requires_grad(true);
  sum(hard_tanh(edge)).backward();
  CHECK(edge.grad().isZero(0.0));
}

TEST_CASE("linear") {
  Rng rng(29);
  auto x = oracle::random_tensor({4}, rng);
  RowMatrix eye = RowMatrix::Identity(4, 4);
  Tensor ident(Shape{4, 4}, Eigen::Map<Vector>(eye.data(), 16));
  CHECK(linear(x, ident, Tensor(Shape{4}, 0.0)).values() == x.values());
  auto b = oracle::random_tensor({3}, rng);
  CHECK(linear(x, Tensor(Shape{3, 4}, 0.0), b).values() == b.values());

  auto w = oracle::random_tensor({3, 4}, rng);
  auto y = linear(x, w, b);
  for (std::size_t d = 0; d < 3; ++d) {
    double acc = b[d];
    for (std::size_t n = 0; n < 4; ++n) acc += w[d * 4 + n] * x[n];
    CHECK(std::abs(y[d] - acc) < 1e-12);
  }
  try {
    linear(Tensor(Shape{5}), w, b);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[5]") != std::string::npos);
    CHECK(msg.find("[3,4]") != std::string::npos);
  }
}

TEST_CASE("softmax_cross_entropy") {
  CHECK(softmax_cross_entropy(Tensor(Shape{4}, 0.3), 2).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-15));
  auto stable = softmax_cross_entropy(Tensor::from({2}, {1000, 0}), 0).item();
  CHECK(std::isfinite(stable));
  CHECK(stable == doctest::Approx(0.0));
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor(Shape{3}), 3), std::out_of_range);

  Rng rng(31);
  auto z = param({5}, rng, -3, 3);
  std::vector<Tensor> ps{z};
  auto report = grad_check([&] { return softmax_cross_entropy(z, 1); }, ps, 1e-6);
  CHECK(report.max_relative_error < 1e-6);
  Vector expected = softmax(z.values());
  expected[1] -= 1.0;
  CHECK((z.grad() - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("grad_check steps around kinks but still catches wrong gradients") {
  // relu at 3e-6: the 1e-5 stencil straddles the kink, the 1e-6 one does not.
  auto x = Tensor(Shape{1}, 3e-6).set_requires_grad(true);
  std::vector<Tensor> ps{x};
  auto rep = grad_check([&] { return sum(relu(x)); }, ps, 1e-5);
  CHECK(rep.checked == 1);
  CHECK(rep.kinks == 0);
  CHECK(rep.max_relative_error < 1e-8);

  // Exactly on the kink no step is clean.
  x[0] = 0.0;
  rep = grad_check([&] { return sum(relu(x)); }, ps, 1e-5);
  CHECK(rep.kinks == 1);
  CHECK(rep.checked == 0);

  // Kink at a quarter step: h straddles it, h/2 does not, h/10 is clean.
  x[0] = 2.5e-6;
  rep = grad_check([&] { return sum(relu(x)); }, ps, 1e-5);
  CHECK(rep.kinks == 0);
  CHECK(rep.max_relative_error < 1e-8);

  // A smooth function with a wrong analytic gradient fails.
  x[0] = 0.7;
  rep = grad_check([&] { return affine(mul(x, x), 1.0).detach().set_requires_grad(true) + sum(x); }, ps,
                   1e-5);
  CHECK(rep.kinks == 0);
  CHECK(rep.max_relative_error > 0.5);
}

TEST_CASE("backward basics") {
  auto x = Tensor(Shape{5}, 0.3).set_requires_grad(true);
  sum(x).backward();
  CHECK(x.grad() == Vector::Ones(5));
  sum(x).backward();
  CHECK(x.grad() == Vector::Constant(5, 2.0));  // additive accumulation
  x.zero_grad();
  CHECK(x.grad().isZero(0.0));

  auto v = Tensor::from({2}, {1, 2}).set_requires_grad(true);
  dot(v, v).backward();
  CHECK(v.grad()[0] == 4.0 / 2.0);
  CHECK(v.grad()[1] == 4.0);

  CHECK_THROWS_AS(x.backward(), std::invalid_argument);
}

TEST_CASE("computation record is topological and visits each op once") {
  auto a = Tensor::from({2}, {1, -2}).set_requires_grad(true);
  auto h = relu(a);
  auto loss = add(sum(h), dot(h, h));  // h is shared by two consumers
  auto record = computation_record(loss);
  CHECK(record.size() == 4);  // relu, sum, dot, add
  CHECK(record.back() != nullptr);
  std::set<const detail::Node*> unique(record.begin(), record.end());
  CHECK(unique.size() == record.size());
  loss.backward();
  CHECK(a.grad()[0] == 1.0 + 2.0 * 1.0);
  CHECK(a.grad()[1] == 0.0);
}

TEST_CASE("gradient correctness at 10 random points per op") {
  Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    CAPTURE(trial);
    {
      auto x = param({2, 5, 5}, rng), w = param({3, 2, 3, 3}, rng),
           b = param({3}, rng);
      auto r = oracle::random_tensor({3, 3, 3}, rng);
      std::vector<Tensor> ps{x, w, b};
      auto rep = grad_check([&] { return dot(conv2d(x, w, b, 2, 1), r); }, ps);
      CHECK(rep.max_relative_error < 1e-6);
    }
    {
      auto x = param({3, 2, 3}, rng), w = param({3, 2, 4, 4}, rng),
           b = param({2}, rng);
      Rng proj = rng.split(1);
      auto y = transposed_conv2d(x, w, b, 2, 1);
      auto r = oracle::random_tensor(y.shape(), proj);
      std::vector<Tensor> ps{x, w, b};
      auto rep = grad_check(
          [&] { return dot(transposed_conv2d(x, w, b, 2, 1), r); }, ps);
      CHECK(rep.max_relative_error < 1e-6);
    }
    {
      auto x = param({2, 4, 6}, rng);
      auto r = oracle::random_tensor({2, 2, 3}, rng);
      std::vector<Tensor> ps{x};
      auto rep = grad_check([&] { return dot(max_pool2d(x, 2, 2), r); }, ps);
      CHECK(rep.max_relative_error < 1e-6);
    }
    {
      // Keep samples away from the kink.
      auto x = param({12}, rng);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(x[i]) < 1e-3) x[i] = 0.5;
      auto r = oracle::random_tensor({12}, rng);
      std::vector<Tensor> ps{x};
      CHECK(grad_check([&] { return dot(relu(x), r); }, ps).max_relative_error < 1e-6);
    }
    {
      auto x = param({12}, rng, -2, 2);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (std::abs(std::abs(x[i]) - 1.0) < 1e-3) x[i] = 0.3;
      auto r = oracle::random_tensor({12}, rng);
      std::vector<Tensor> ps{x};
      CHECK(grad_check([&] { return dot(hard_tanh(x), r); }, ps).max_relative_error < 1e-6);
    }
    {
      auto x = param({4}, rng), w = param({3, 4}, rng), b = param({3}, rng);
      std::vector<Tensor> ps{x, w, b};
      auto rep = grad_check(
          [&] { return softmax_cross_entropy(linear(x, w, b), 2); }, ps);
      CHECK(rep.max_relative_error < 1e-6);
    }
    {
      auto x = param({2, 6, 6}, rng), w = param({2, 2, 3, 3}, rng),
           b = param({2}, rng);
      // Redraw until no pre-activation sits within finite-difference reach
      // of the kink.
      while (conv2d(x, w, b, 1, 1).values().cwiseAbs().minCoeff() < 1e-3) {
        b = param({2}, rng);
      }
      std::vector<Tensor> ps{x, w, b};
      auto rep = grad_check([&] { return sum(relu(conv2d(x, w, b, 1, 1))); }, ps);
      CHECK(rep.max_relative_error < 1e-5);
    }
    {
      auto a = param({6}, rng), b = param({6}, rng);
      Vector f = oracle::random_tensor({3}, rng).values();
      std::vector<Tensor> ps{a, b};
      auto rep = grad_check(
          [&] {
            auto s = mean_squared_error(a, b);
            auto t = squared_distance(mul(a, b), b);
            auto c = sum(scale_channels(reshape(a, {3, 2}), f));
            std::vector<Tensor> parts{s, t, affine(c, 0.5, 1.0), mean(a)};
            return mean_of(parts);
          },
          ps);
      CHECK(rep.max_relative_error < 1e-6);
    }
  }
}

TEST_CASE("determinism and no graph leakage") {
  auto run = [](bool accumulate_twice) {
    Rng rng(77);
    auto x = param({1, 6, 6}, rng), w = param({4, 1, 3, 3}, rng),
         b = param({4}, rng);
    auto loss = [&] { return sum(relu(conv2d(x, w, b, 1, 1))); };
    auto out = loss();
    out.backward();
    if (accumulate_twice) {
      w.zero_grad();
      x.zero_grad();
      b.zero_grad();
      loss().backward();
    }
    return std::pair{out.item(), Vector(w.grad())};
  };
  auto [v1, g1] = run(false);
  auto [v2, g2] = run(true);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("frozen tensors pass gradients through without receiving any") {
  Rng rng(8);
  auto x = param({4}, rng);
  auto w = oracle::random_tensor({3, 4}, rng);
  auto b = oracle::random_tensor({3}, rng);
  softmax_cross_entropy(linear(x, w, b), 0).backward();
  CHECK(!w.has_grad());
  CHECK(!b.has_grad());
  CHECK(x.grad().norm() > 0.0);
}

TEST_CASE("tensor container round trip and format") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Shape shape;
    const auto rank = 1 + rng.below(4);
    for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(1 + rng.below(5));
    auto t = oracle::random_tensor(shape, rng, -1e6, 1e6);
    std::stringstream buf;
    write_tensor(buf, t);
    auto back = read_tensor(buf);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
    CHECK(content_hash(back) == content_hash(t));
  }
  std::stringstream buf;
  write_tensor(buf, Tensor::from({2}, {1.0, -2.0}));
  const std::string bytes = buf.str();
  REQUIRE(bytes.size() == 4 + 2 + 2 + 8 + 16);
  CHECK(bytes.substr(0, 4) == "OCLT");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);
  CHECK(bytes[8] == 2);
  CHECK(static_cast<unsigned char>(bytes[16 + 7]) == 0x3f);  // 1.0, LE
  std::stringstream bad("XXXX");
  CHECK_THROWS(read_tensor(bad));
}
