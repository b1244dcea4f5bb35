#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "aggnet/errors.hpp"
#include "aggnet/tensor.hpp"
#include "oracles.hpp"

using aggnet::Tensor;

TEST_CASE("matmul with the identity returns the input", "[tensor]") {
  const Tensor i2 = Tensor::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  const Tensor out = aggnet::matmul(i2, i2);
  REQUIRE(out(0, 0) == 1.0);
  REQUIRE(out(0, 1) == 0.0);
  REQUIRE(out(1, 0) == 0.0);
  REQUIRE(out(1, 1) == 1.0);

  const Tensor a = Tensor::from_rows({{3.0, -2.0}, {0.5, 7.0}});
  const Tensor b = aggnet::matmul(a, i2);
  REQUIRE(oracle::max_abs_diff(a, b) == 0.0);
}

TEST_CASE("matmul hand example", "[tensor]") {
  const Tensor a = Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Tensor b = Tensor::from_rows({{0.0}, {1.0}});
  const Tensor out = aggnet::matmul(a, b);
  REQUIRE(out.rows() == 2);
  REQUIRE(out.cols() == 1);
  REQUIRE(out(0, 0) == 2.0);
  REQUIRE(out(1, 0) == 4.0);
}

TEST_CASE("matmul agrees with the naive triple loop", "[tensor]") {
  aggnet::Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor a = oracle::random_matrix(rng, 5, 7);
    const Tensor b = oracle::random_matrix(rng, 7, 3);
    const Tensor fast = aggnet::matmul(a, b);
    const Tensor slow = oracle::naive_matmul(a, b);
    REQUIRE(oracle::max_abs_diff(fast, slow) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions", "[tensor]") {
  const Tensor a({2, 3});
  const Tensor b({4, 2});
  REQUIRE_THROWS_AS(aggnet::matmul(a, b), aggnet::DimensionError);
}

TEST_CASE("tensor construction validates shapes", "[tensor]") {
  REQUIRE_THROWS_AS(Tensor({2, 0}), aggnet::DimensionError);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), aggnet::DimensionError);
  REQUIRE_THROWS_AS(Tensor::from_rows({{1.0, 2.0}, {3.0}}), aggnet::DimensionError);
  const Tensor t({2, 3, 4});
  REQUIRE(t.ndim() == 3);
  REQUIRE(t.size() == 24);
  REQUIRE(t.dim(2) == 4);
}

TEST_CASE("indexing is row-major across 2-d and 3-d", "[tensor]") {
  Tensor t({2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) t(i, j) = static_cast<double>(10 * i + j);
  REQUIRE(t[4] == 11.0);
  const auto row1 = t.row(1);
  REQUIRE(row1.size() == 3);
  REQUIRE(row1[2] == 12.0);

  Tensor u({2, 2, 3});
  u(1, 0, 2) = 5.0;
  REQUIRE(u.row(1, 0)[2] == 5.0);
  REQUIRE(u[1 * 6 + 0 * 3 + 2] == 5.0);
}

TEST_CASE("transpose round trips", "[tensor]") {
  aggnet::Rng rng(3);
  const Tensor a = oracle::random_matrix(rng, 4, 6);
  const Tensor t = aggnet::transpose(a);
  REQUIRE(t.rows() == 6);
  REQUIRE(t.cols() == 4);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) REQUIRE(t(j, i) == a(i, j));
  const Tensor back = aggnet::transpose(t);
  REQUIRE(oracle::max_abs_diff(a, back) == 0.0);
}

TEST_CASE("axpy, dot, and norm2 basics", "[tensor]") {
  Tensor y = Tensor::from_rows({{1.0, 2.0, 3.0}});
  const Tensor x = Tensor::from_rows({{10.0, 20.0, 30.0}});
  aggnet::axpy(0.5, x, y);
  REQUIRE(y[0] == 6.0);
  REQUIRE(y[1] == 12.0);
  REQUIRE(y[2] == 18.0);

  const std::vector<double> u{3.0, 4.0};
  const std::vector<double> v{-1.0, 2.0};
  REQUIRE(aggnet::dot(u, v) == 5.0);
  REQUIRE(aggnet::norm2(u) == 5.0);
}

TEST_CASE("finiteness guards catch bad values", "[tensor]") {
  Tensor t({2, 2});
  REQUIRE(t.all_finite());
  t(0, 1) = std::nan("");
  REQUIRE_FALSE(t.all_finite());
  REQUIRE_THROWS_AS(aggnet::require_finite(t, "probe"), aggnet::NumericError);
  t(0, 1) = std::numeric_limits<double>::infinity();
  REQUIRE_THROWS_AS(aggnet::require_finite(t, "probe"), aggnet::NumericError);
}

TEST_CASE("fill helpers populate every element", "[tensor]") {
  aggnet::Rng rng(4);
  Tensor t({3, 3});
  aggnet::fill_uniform(t, rng, -1.0, 1.0);
  bool any_nonzero = false;
  for (double v : t.vec()) {
    REQUIRE(v >= -1.0);
    REQUIRE(v < 1.0);
    any_nonzero |= (v != 0.0);
  }
  REQUIRE(any_nonzero);

  Tensor z = Tensor::zeros({2, 2});
  for (double v : z.vec()) REQUIRE(v == 0.0);
  const Tensor f = Tensor::full({2, 2}, 3.5);
  for (double v : f.vec()) REQUIRE(v == 3.5);
  const Tensor s = Tensor::scalar(1.25);
  REQUIRE(s.size() == 1);
  REQUIRE(s[0] == 1.25);
}
