#include <cmath>

#include "doctest.h"
#include "rfg/align.hpp"
#include "rfg/error.hpp"
#include "rfg/gradcheck.hpp"

using namespace rfg;

namespace {

Tensor gaussian(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

TEST_CASE("project_features examples") {
  Rng rng(61);
  const Tensor f = gaussian(rng, {1, 2, 4});
  CompressionParams p;
  p.proj = {{Tensor::identity(4), Tensor::zeros({4})}};
  CHECK(project_features(f, p) == f);

  p.proj = {{Tensor::zeros({4, 3}), Tensor::vector({1, -2, 0.5})}};
  const Tensor b = project_features(f, p);
  CHECK(b.shape() == Shape{1, 2, 3});
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(b.at({0, k, 0}) == 1.0);
    CHECK(b.at({0, k, 1}) == -2.0);
    CHECK(b.at({0, k, 2}) == 0.5);
  }

  const Tensor w = gaussian(rng, {4, 3}), bias = gaussian(rng, {3});
  p.proj = {{w, bias}};
  const Tensor y = project_features(f, p);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t c = 0; c < 3; ++c) {
      double s = bias[c];
      for (std::size_t i = 0; i < 4; ++i) s += f.at({0, k, i}) * w.at({i, c});
      CHECK(std::abs(y.at({0, k, c}) - s) <= 1e-15);
    }

  p.proj = {{gaussian(rng, {5, 3}), bias}};
  CHECK_THROWS_AS(project_features(f, p), DimensionError);
}

TEST_CASE("attention over identical patches returns the value token") {
  Rng rng(62);
  CompressionParams p = CompressionParams::random(4, 4, 3, rng);
  Tensor f({1, 5, 4});
  const double token[] = {0.3, -1.2, 2.0, 0.7};
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t d = 0; d < 4; ++d) f.at({0, k, d}) = token[d];
  const Tensor g = compress_tokens(f, p, rng, false);
  CHECK(g.shape() == Shape{1, 3, 4});
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t d = 0; d < 4; ++d) CHECK(std::abs(g.at({0, t, d}) - token[d]) <= 1e-15);
}

TEST_CASE("attention matches a softmax-weighted-sum oracle") {
  Rng rng(63);
  for (bool projections : {false, true}) {
    for (int trial = 0; trial < 20; ++trial) {
      CompressionParams p = CompressionParams::random(3, 3, 1, rng);
      p.use_projections = projections;
      if (projections) {
        p.w_q = gaussian(rng, {3, 3});
        p.w_k = gaussian(rng, {3, 3});
        p.w_v = gaussian(rng, {3, 3});
      }
      const Tensor f = gaussian(rng, {1, 2, 3});
      const AttentionOutput out = cross_attention(f, p, rng, false);
      auto row_times = [](std::span<const double> v, const Tensor& m) {
        std::vector<double> r(3, 0.0);
        for (std::size_t j = 0; j < 3; ++j)
          for (std::size_t i = 0; i < 3; ++i) r[j] += v[i] * m.at({i, j});
        return r;
      };
      const Tensor eye = Tensor::identity(3);
      const Tensor& wq = projections ? p.w_q : eye;
      const Tensor& wk = projections ? p.w_k : eye;
      const Tensor& wv = projections ? p.w_v : eye;
      const auto q = row_times(p.queries.data(), wq);
      const auto k0 = row_times(f.data().subspan(0, 3), wk), k1 = row_times(f.data().subspan(3, 3), wk);
      const auto v0 = row_times(f.data().subspan(0, 3), wv), v1 = row_times(f.data().subspan(3, 3), wv);
      double s0 = 0, s1 = 0;
      for (std::size_t i = 0; i < 3; ++i) {
        s0 += q[i] * k0[i];
        s1 += q[i] * k1[i];
      }
      s0 /= std::sqrt(3.0);
      s1 /= std::sqrt(3.0);
      const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), a1 = 1.0 - a0;
      CHECK(std::abs(out.weights.at({0, 0, 0}) - a0) <= 1e-12);
      CHECK(std::abs(out.weights.at({0, 0, 0}) + out.weights.at({0, 0, 1}) - 1.0) <= 1e-12);
      for (std::size_t d = 0; d < 3; ++d) {
        const double expect = a0 * v0[d] + a1 * v1[d];
        CHECK(std::abs(out.tokens.at({0, 0, d}) - expect) <= 1e-12);
        CHECK(out.tokens.at({0, 0, d}) <= std::max(v0[d], v1[d]) + 1e-12);
        CHECK(out.tokens.at({0, 0, d}) >= std::min(v0[d], v1[d]) - 1e-12);
      }
    }
  }
}

TEST_CASE("dropout replaces samples with the null tokens") {
  Rng rng(64);
  CompressionParams p = CompressionParams::random(4, 4, 2, rng);
  p.p_drop = 1.0;
  const Tensor f = gaussian(rng, {3, 5, 4});
  const AttentionOutput out = cross_attention(f, p, rng, true);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(out.dropped[s]);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t d = 0; d < 4; ++d) CHECK(out.tokens.at({s, t, d}) == p.null_tokens.at({t, d}));
  }
  Rng untouched(7), reference(7);
  const AttentionOutput inf = cross_attention(f, p, untouched, false);
  CHECK(untouched.next_u64() == reference.next_u64());
  for (bool d : inf.dropped) CHECK(!d);
}

TEST_CASE("dropout rate over 10000 draws is within 0.01 of p_drop") {
  Rng rng(65);
  CompressionParams p = CompressionParams::random(2, 2, 1, rng);
  p.p_drop = 0.1;
  const Tensor f = gaussian(rng, {10000, 1, 2});
  const AttentionOutput out = cross_attention(f, p, rng, true);
  std::size_t dropped = 0;
  for (bool d : out.dropped) dropped += d ? 1 : 0;
  CHECK(std::abs(static_cast<double>(dropped) / 10000.0 - 0.1) <= 0.01);
}

TEST_CASE("pool_appearance examples") {
  Rng rng(66);
  const Tensor one = gaussian(rng, {2, 1, 3});
  const Tensor r1 = pool_appearance({one});
  CHECK(r1.shape() == Shape{2, 3});
  for (std::size_t i = 0; i < 6; ++i) CHECK(r1[i] == one[i]);

  const Tensor c = pool_appearance({Tensor::full({2, 4, 3}, 0.25), Tensor::full({2, 4, 3}, 0.25)});
  for (double v : c.data()) CHECK(v == 0.25);

  const Tensor l0 = gaussian(rng, {2, 3, 4}), l1 = gaussian(rng, {2, 3, 4});
  const Tensor r = pool_appearance({l0, l1});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t d = 0; d < 4; ++d) {
      double m0 = 0, m1 = 0;
      for (std::size_t k = 0; k < 3; ++k) {
        m0 += l0.at({s, k, d});
        m1 += l1.at({s, k, d});
      }
      CHECK(std::abs(r.at({s, d}) - (m0 / 3 + m1 / 3) / 2) <= 1e-15);
    }
  CHECK_THROWS_AS(pool_appearance({}), DomainError);
  CHECK_THROWS_AS(pool_appearance({l0, gaussian(rng, {2, 2, 4})}), DimensionError);
}

TEST_CASE("alignment_loss examples") {
  // Tokens whose mean is (1, 2) and (0, -1).
  const Tensor g({2, 2, 2}, std::vector<double>{0, 1, 2, 3, 1, -2, -1, 0});
  const Tensor r_same = Tensor::matrix({{3, 6}, {0, -0.5}});
  const Tensor r_anti = Tensor::matrix({{-1, -2}, {0, 1}});
  const Tensor r_perp = Tensor::matrix({{-2, 1}, {5, 0}});
  // Without the epsilon guard the cosines are exact up to rounding.
  CHECK(std::abs(alignment_loss(g, r_same, 0.0).loss) <= 1e-15);
  CHECK(std::abs(alignment_loss(g, r_anti, 0.0).loss - 2.0) <= 1e-15);
  CHECK(std::abs(alignment_loss(g, r_perp, 0.0).loss - 1.0) <= 1e-15);
  // The default guard shifts each norm by 1e-12.
  CHECK(std::abs(alignment_loss(g, r_same).loss) <= 1e-11);
  CHECK(std::abs(alignment_loss(g, r_anti).loss - 2.0) <= 1e-11);
  CHECK(std::abs(alignment_loss(g, r_perp).loss - 1.0) <= 1e-11);

  CHECK_THROWS_AS(alignment_loss(g, Tensor::matrix({{1, 2, 3}, {4, 5, 6}})), DimensionError);
  CHECK_THROWS_AS(alignment_loss(Tensor::zeros({2, 2, 2}), r_same, 0.0), DomainError);
  CHECK(alignment_loss(Tensor::zeros({2, 2, 2}), r_same).loss == 1.0);
}

TEST_CASE("alignment loss is bounded, scale invariant and matches a cosine oracle") {
  Rng rng(67);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor g = gaussian(rng, {2, 4, 8}), r = gaussian(rng, {2, 8});
    const double loss = alignment_loss(g, r).loss;
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0);

    double oracle = 0.0;
    for (std::size_t s = 0; s < 2; ++s) {
      std::vector<double> mean(8, 0.0);
      for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t d = 0; d < 8; ++d) mean[d] += g.at({s, t, d}) / 4;
      oracle += cosine(mean, r.data().subspan(s * 8, 8));
    }
    CHECK(std::abs(loss - (1.0 - oracle / 2)) <= 1e-12);

    Tensor g2 = g, r2 = r;
    const double c1 = rng.uniform(0.1, 10), c2 = rng.uniform(0.1, 10);
    for (auto& v : g2.data()) v *= c1;
    for (auto& v : r2.data()) v *= c2;
    CHECK(std::abs(alignment_loss(g2, r2).loss - loss) <= 1e-12);
  }
}

TEST_CASE("alignment gradients match central differences on 2x4x8 inputs") {
  Rng rng(68);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor g = gaussian(rng, {2, 4, 8}), r = gaussian(rng, {2, 8});
    const AlignmentResult res = alignment_loss(g, r);
    const auto num_g = central_difference(
        [&](std::span<const double> x) { return alignment_loss(Tensor(g.shape(), {x.begin(), x.end()}), r).loss; },
        g.data());
    const auto num_r = central_difference(
        [&](std::span<const double> x) { return alignment_loss(g, Tensor(r.shape(), {x.begin(), x.end()})).loss; },
        r.data());
    CHECK(gradient_relative_error(res.grad_tokens.data(), num_g) <= 1e-6);
    CHECK(gradient_relative_error(res.grad_appearance.data(), num_r) <= 1e-6);
  }
}

TEST_CASE("gradient helpers") {
  const std::vector<double> x{1.0, -2.0};
  const auto g = central_difference([](std::span<const double> v) { return v[0] * v[0] + 3 * v[1]; }, x);
  CHECK(std::abs(g[0] - 2.0) < 1e-9);
  CHECK(std::abs(g[1] - 3.0) < 1e-9);
  const std::vector<double> zero{0.0, 0.0};
  CHECK(gradient_relative_error(zero, zero) == 0.0);
  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  CHECK(std::abs(gradient_relative_error(a, b) - std::sqrt(2.0)) < 1e-15);
}
