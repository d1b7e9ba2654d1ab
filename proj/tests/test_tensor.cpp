#include <cmath>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "rfg/error.hpp"
#include "rfg/rng.hpp"
#include "rfg/tensor.hpp"

using namespace rfg;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("construction checks the element count") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.at({1, 2}) == 1.5);
  CHECK_THROWS_AS((void)t.at({2, 0}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
  CHECK(t.reshaped({3, 2}).shape() == Shape{3, 2});
}

TEST_CASE("matmul examples") {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::identity(2), a) == a);
  CHECK(matmul(a, Tensor::zeros({2, 2})) == Tensor::zeros({2, 2}));
  CHECK(matmul(a, Tensor::matrix({{5, 6}, {7, 8}})) == Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  try {
    (void)matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2×3") != std::string::npos);
    CHECK(msg.find(" and ") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on random tensors") {
  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 5}), c = random_tensor(rng, {5, 2});
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-9);
  }
}

TEST_CASE("softmax_rows examples") {
  const Tensor s = softmax_rows(Tensor::matrix({{0, 0, 0}, {1, 2, 3}}));
  for (int j = 0; j < 3; ++j) CHECK(s.at({0, static_cast<std::size_t>(j)}) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  // Oracle: plain exponentials, no shift.
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(std::abs(s.at({1, 0}) - std::exp(1.0) / z) < 1e-15);
  CHECK(std::abs(s.at({1, 1}) - std::exp(2.0) / z) < 1e-15);
  CHECK(std::abs(s.at({1, 2}) - std::exp(3.0) / z) < 1e-15);
  CHECK(std::abs(s.at({1, 0}) - 0.09003) < 1e-5);
  CHECK(std::abs(s.at({1, 2}) - 0.66524) < 1e-5);

  const double c = 7.25;
  const Tensor pair = softmax_rows(Tensor::matrix({{c, c + std::numbers::ln2}}));
  CHECK(std::abs(pair[0] - 1.0 / 3) < 1e-12);
  CHECK(std::abs(pair[1] - 2.0 / 3) < 1e-12);
}

TEST_CASE("softmax rows sum to one for inputs in [-50, 50]") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor s = softmax_rows(random_tensor(rng, {4, 7}, -50.0, 50.0));
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s.at({r, c}) >= 0.0);
        sum += s.at({r, c});
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax rejects NaN") {
  CHECK_THROWS_AS(softmax_rows(Tensor::matrix({{0.0, std::nan("")}})), DomainError);
}

TEST_CASE("temporal_diff examples") {
  CHECK(temporal_diff(Tensor::full({5}, 3.0), 0) == Tensor::zeros({4}));
  CHECK(temporal_diff(Tensor::vector({1, 3, 2}), 0) == Tensor::vector({2, 1}));
  CHECK_THROWS_AS(temporal_diff(Tensor({3, 1}), 1), DimensionError);

  Rng rng(3);
  for (std::size_t axis : {0u, 1u}) {
    const Tensor x = random_tensor(rng, {2, 4});
    const Tensor d = temporal_diff(x, axis);
    if (axis == 0) {
      REQUIRE(d.shape() == Shape{1, 4});
      for (std::size_t j = 0; j < 4; ++j) CHECK(d.at({0, j}) == std::abs(x.at({1, j}) - x.at({0, j})));
    } else {
      REQUIRE(d.shape() == Shape{2, 3});
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(d.at({i, j}) == std::abs(x.at({i, j + 1}) - x.at({i, j})));
    }
  }
}

TEST_CASE("elementwise ops require equal shapes") {
  CHECK_THROWS_AS(add(Tensor({2}), Tensor({3})), DimensionError);
  CHECK(hadamard(Tensor::vector({0.5}), Tensor::vector({0.8})) == Tensor::vector({0.5 * 0.8}));
  CHECK(clip(Tensor::vector({-1, 0.5, 2}), 0, 1) == Tensor::vector({0, 0.5, 1}));
}

TEST_CASE("binary tensor format round-trips and matches the byte layout") {
  Rng rng(4);
  const Tensor t = random_tensor(rng, {2, 3, 1});
  const auto bytes = encode_tensor(t);
  REQUIRE(bytes.size() == 8 + 4 + 3 * 8 + 6 * 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "RFGT0001");
  CHECK(bytes[8] == 3);
  CHECK(bytes[9] == 0);
  CHECK(bytes[12] == 2);
  CHECK(bytes[20] == 3);
  CHECK(decode_tensor(bytes) == t);

  auto broken = bytes;
  broken[0] = 'X';
  CHECK_THROWS_AS(decode_tensor(broken), IoError);
  CHECK_THROWS_AS(decode_tensor(std::span(bytes).first(bytes.size() - 1)), IoError);

  const auto path = std::filesystem::temp_directory_path() / "rfg_test_tensor.rfgt";
  save_tensor(t, path);
  CHECK(load_tensor(path) == t);
  std::filesystem::remove(path);
}

TEST_CASE("rng integer stream is the standard mt19937_64 sequence") {
  // The standard fixes the 10000th output of a default-seeded mt19937_64.
  Rng rng(5489);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = rng.next_u64();
  CHECK(v == 9981545732273789042ULL);
}

TEST_CASE("rng reproduces its first 1000 draws and derives distinct children") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double ua = a.uniform(), ub = b.uniform();
    CHECK(ua == ub);
    CHECK(ua >= 0.0);
    CHECK(ua < 1.0);
    CHECK(a.normal() == b.normal());
  }
  Rng c(42);
  CHECK(Rng(42).derive(0).next_u64() == c.derive(0).next_u64());
  CHECK(Rng(42).derive(0).next_u64() != Rng(42).derive(1).next_u64());

  // uniform() keeps the top 53 bits of the engine output.
  Rng d(9), e(9);
  CHECK(d.uniform() == static_cast<double>(e.next_u64() >> 11) * 0x1.0p-53);
}

TEST_CASE("rng normal draws have unit moments") {
  Rng rng(11);
  double s = 0.0, s2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
}
