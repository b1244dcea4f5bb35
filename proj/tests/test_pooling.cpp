#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "aggnet/errors.hpp"
#include "aggnet/gradcheck.hpp"
#include "aggnet/pooling.hpp"
#include "oracles.hpp"

using aggnet::GemCache;
using aggnet::GemParams;
using aggnet::grad_check;
using aggnet::Rng;
using aggnet::Tensor;

namespace {

double weighted_sum(const Tensor& y, const Tensor& c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * c[i];
  return acc;
}

// Strictly positive rows, entries in [0.2, 1.5]: away from the clamp floor
// and from zero so both pooling paths are smooth.
Tensor positive_rows(Rng& rng, std::size_t n, std::size_t d) {
  Tensor x({n, d});
  for (double& v : x.vec()) v = 0.2 + 1.3 * rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("sum pooling of a single unit row is the row itself", "[pooling]") {
  const Tensor x = Tensor::from_rows({{0.6, 0.8}});
  const Tensor y = aggnet::sum_pool(x);
  REQUIRE(y.size() == 2);
  REQUIRE(y[0] == Catch::Approx(0.6).margin(1e-12));
  REQUIRE(y[1] == Catch::Approx(0.8).margin(1e-12));
}

TEST_CASE("sum pooling of exactly cancelling rows is a numeric error", "[pooling]") {
  const Tensor x = Tensor::from_rows({{0.6, 0.8}, {-0.6, -0.8}});
  REQUIRE_THROWS_AS(aggnet::sum_pool(x), aggnet::NumericError);
}

TEST_CASE("sum pooling matches the scalar oracle", "[pooling]") {
  Rng rng(61);
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = oracle::random_unit_rows(rng, 4, 6);
    const Tensor y = aggnet::sum_pool(x);
    const std::vector<double> ref = oracle::sum_pool_rows(x);
    REQUIRE(oracle::max_abs_diff(y.vec(), ref) < 1e-12);
    REQUIRE(aggnet::norm2(y.vec()) == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("sum pooling backward matches finite differences", "[pooling]") {
  Rng rng(67);
  const Tensor x = oracle::random_unit_rows(rng, 5, 4);
  Tensor c({4});
  aggnet::fill_normal(c, rng, 1.0);

  aggnet::SumPoolCache cache;
  aggnet::sum_pool(x, &cache);
  const Tensor dx = aggnet::sum_pool_backward(cache, c);

  const auto f = [&](const Tensor& t) { return weighted_sum(aggnet::sum_pool(t), c); };
  REQUIRE(grad_check(f, x, dx, 1e-6, 1e-6).ok);
}

TEST_CASE("generalized mean with exponent 1 is the column mean", "[pooling]") {
  Rng rng(71);
  const Tensor x = positive_rows(rng, 5, 3);
  GemParams params;
  params.p = Tensor::scalar(1.0);
  const Tensor y = aggnet::gem_pool(params, x);

  std::vector<double> ref = oracle::gem_pool_raw(x, 1.0, aggnet::kGemClamp);
  ref = oracle::l2_normalize(std::move(ref));
  REQUIRE(oracle::max_abs_diff(y.vec(), ref) < 1e-12);
}

TEST_CASE("large exponents approach the column maximum", "[pooling]") {
  Rng rng(73);
  const Tensor x = positive_rows(rng, 6, 4);
  GemParams params;
  params.p = Tensor::scalar(64.0);
  GemCache cache;
  aggnet::gem_pool(params, x, &cache);

  for (std::size_t j = 0; j < 4; ++j) {
    double mx = x(0, j);
    for (std::size_t i = 1; i < 6; ++i) mx = std::max(mx, x(i, j));
    // Pre-normalization pooled value sits between mx * n^(-1/p) and mx.
    REQUIRE(cache.g_raw(0, j) <= mx + 1e-12);
    REQUIRE(cache.g_raw(0, j) >= mx * 0.95);
  }
}

TEST_CASE("generalized mean matches the direct formula at intermediate exponents", "[pooling]") {
  Rng rng(79);
  for (const double p : {1.5, 3.0, 8.0}) {
    const Tensor x = positive_rows(rng, 4, 5);
    GemParams params;
    params.p = Tensor::scalar(p);
    const Tensor y = aggnet::gem_pool(params, x);
    std::vector<double> ref = oracle::gem_pool_raw(x, p, aggnet::kGemClamp);
    ref = oracle::l2_normalize(std::move(ref));
    REQUIRE(oracle::max_abs_diff(y.vec(), ref) < 1e-10);
  }
}

TEST_CASE("exponents below one are rejected", "[pooling]") {
  Rng rng(83);
  const Tensor x = positive_rows(rng, 3, 3);
  GemParams params;
  params.p = Tensor::scalar(0.5);
  REQUIRE_THROWS_AS(aggnet::gem_pool(params, x), aggnet::ConfigError);
}

TEST_CASE("generalized mean input gradient matches finite differences", "[pooling]") {
  Rng rng(89);
  const Tensor x = positive_rows(rng, 4, 3);
  Tensor c({3});
  aggnet::fill_normal(c, rng, 1.0);
  GemParams params;
  params.p = Tensor::scalar(3.0);

  GemCache cache;
  aggnet::gem_pool(params, x, &cache);
  const aggnet::GemGrads grads = aggnet::gem_pool_backward(params, cache, c);

  const auto f = [&](const Tensor& t) { return weighted_sum(aggnet::gem_pool(params, t), c); };
  const auto res = grad_check(f, x, grads.x, 1e-5, 1e-4);
  INFO("max rel err " << res.max_rel_err);
  REQUIRE(res.ok);
}

TEST_CASE("generalized mean exponent gradient matches finite differences", "[pooling]") {
  Rng rng(97);
  const Tensor x = positive_rows(rng, 4, 3);
  Tensor c({3});
  aggnet::fill_normal(c, rng, 1.0);
  GemParams params;
  params.p = Tensor::scalar(2.5);

  GemCache cache;
  aggnet::gem_pool(params, x, &cache);
  const aggnet::GemGrads grads = aggnet::gem_pool_backward(params, cache, c);

  const auto f = [&](const Tensor& pt) {
    GemParams probe;
    probe.p = pt;
    return weighted_sum(aggnet::gem_pool(probe, x), c);
  };
  const Tensor analytic = Tensor::scalar(grads.p);
  const auto res = grad_check(f, params.p, analytic, 1e-5, 1e-4);
  INFO("max rel err " << res.max_rel_err);
  REQUIRE(res.ok);
}

TEST_CASE("entries at the clamp floor receive zero gradient", "[pooling]") {
  Tensor x = Tensor::from_rows({{0.5, 0.8}, {-0.3, 0.7}});  // x(1,0) clamps
  Tensor c({2}, {1.0, 1.0});
  GemParams params;
  params.p = Tensor::scalar(3.0);

  GemCache cache;
  aggnet::gem_pool(params, x, &cache);
  const aggnet::GemGrads grads = aggnet::gem_pool_backward(params, cache, c);
  REQUIRE(grads.x(1, 0) == 0.0);
  REQUIRE(grads.x(0, 0) != 0.0);
}
