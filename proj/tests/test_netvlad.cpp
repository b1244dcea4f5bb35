#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "aggnet/errors.hpp"
#include "aggnet/gradcheck.hpp"
#include "aggnet/netvlad.hpp"
#include "oracles.hpp"

using aggnet::grad_check;
using aggnet::NetVladParams;
using aggnet::Rng;
using aggnet::Tensor;

namespace {

double weighted_sum(const Tensor& y, const Tensor& c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += y[i] * c[i];
  return acc;
}

// Two well-separated Gaussian clouds in d dimensions.
Tensor two_clouds(Rng& rng, std::size_t per_cloud, std::size_t d, double sigma) {
  Tensor pts({2 * per_cloud, d});
  for (std::size_t i = 0; i < 2 * per_cloud; ++i) {
    const double center = (i < per_cloud) ? 2.0 : -2.0;
    for (std::size_t j = 0; j < d; ++j) pts(i, j) = center + sigma * rng.normal();
  }
  return pts;
}

}  // namespace

TEST_CASE("k-means with as many clusters as points reaches zero inertia", "[netvlad][kmeans]") {
  Rng rng(103);
  const Tensor pts = oracle::random_matrix(rng, 6, 3);
  const aggnet::KMeansResult km = aggnet::kmeans(pts, 6, rng);
  REQUIRE(km.inertia == Catch::Approx(0.0).margin(1e-18));
  REQUIRE(km.centroids.rows() == 6);

  // The centroid set must equal the point set (in some order).
  std::set<std::vector<double>> point_set, centroid_set;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto pr = pts.row(i);
    const auto cr = km.centroids.row(i);
    point_set.insert(std::vector<double>(pr.begin(), pr.end()));
    centroid_set.insert(std::vector<double>(cr.begin(), cr.end()));
  }
  REQUIRE(point_set == centroid_set);
}

TEST_CASE("k-means recovers well-separated cluster means", "[netvlad][kmeans]") {
  Rng rng(107);
  const double sigma = 0.1;
  const Tensor pts = two_clouds(rng, 50, 4, sigma);
  const aggnet::KMeansResult km = aggnet::kmeans(pts, 2, rng);
  REQUIRE(km.centroids.rows() == 2);

  for (std::size_t k = 0; k < 2; ++k) {
    // Distance to the nearer true center must be under one noise deviation.
    double best = std::numeric_limits<double>::infinity();
    for (const double center : {2.0, -2.0}) {
      double dist = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        const double diff = km.centroids(k, j) - center;
        dist += diff * diff;
      }
      best = std::min(best, std::sqrt(dist));
    }
    REQUIRE(best < sigma);
  }
}

TEST_CASE("k-means needs at least as many points as clusters", "[netvlad][kmeans]") {
  Rng rng(109);
  const Tensor pts = oracle::random_matrix(rng, 3, 2);
  REQUIRE_THROWS_AS(aggnet::kmeans(pts, 4, rng), aggnet::InitError);
}

TEST_CASE("warm-start initialization sets the advertised parameters", "[netvlad]") {
  Rng rng(113);
  NetVladParams p = NetVladParams::init(2, 4, rng);
  const Tensor pts = two_clouds(rng, 30, 4, 0.05);
  aggnet::netvlad_init_kmeans(p, pts, rng, 10.0);

  for (std::size_t k = 0; k < 2; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE(p.a(k, j) == Catch::Approx(2.0 * 10.0 * p.c(k, j)).margin(1e-12));
      sq += p.c(k, j) * p.c(k, j);
    }
    REQUIRE(p.b[k] == Catch::Approx(-10.0 * sq).margin(1e-12));
  }
}

TEST_CASE("initialized assignments are nearly hard on separated data", "[netvlad]") {
  Rng rng(127);
  NetVladParams p = NetVladParams::init(2, 4, rng);
  const Tensor pts = two_clouds(rng, 30, 4, 0.05);
  aggnet::netvlad_init_kmeans(p, pts, rng, 10.0);

  const Tensor w = aggnet::netvlad_assign(p, pts);
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    const double top = std::max(w(i, 0), w(i, 1));
    REQUIRE(top >= 0.99);
  }
}

TEST_CASE("assignment weights always sum to one", "[netvlad]") {
  Rng rng(131);
  const NetVladParams p = oracle::random_netvlad(rng, 4, 6);
  const Tensor x = oracle::random_unit_rows(rng, 7, 6);
  const Tensor w = aggnet::netvlad_assign(p, x);
  REQUIRE(w.rows() == 7);
  REQUIRE(w.cols() == 4);
  for (std::size_t i = 0; i < 7; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      REQUIRE(w(i, k) >= 0.0);
      s += w(i, k);
    }
    REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("a single cluster reduces to summed residuals", "[netvlad]") {
  Rng rng(137);
  NetVladParams p = oracle::random_netvlad(rng, 1, 5);
  const Tensor x = oracle::random_unit_rows(rng, 4, 5);

  // With K = 1 the soft assignment is identically 1, so H(:, 0) is the plain
  // residual sum against the single centroid.
  aggnet::NetVladCoreCache cache;
  aggnet::netvlad_core_forward(p, x, &cache);
  for (std::size_t j = 0; j < 5; ++j) {
    double expect = 0.0;
    for (std::size_t i = 0; i < 4; ++i) expect += x(i, j) - p.c(0, j);
    REQUIRE(cache.h_mat(j, 0) == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("descriptors equal to their centroid leave almost no residual", "[netvlad]") {
  Rng rng(139);
  NetVladParams p = NetVladParams::init(2, 4, rng);
  // Hand-build separated centroids with a sharp assignment (alpha = 50).
  p.c = Tensor::from_rows({{1.0, 0.0, 0.0, 0.0}, {-1.0, 0.0, 0.0, 0.0}});
  const double alpha = 50.0;
  for (std::size_t k = 0; k < 2; ++k) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      p.a(k, j) = 2.0 * alpha * p.c(k, j);
      sq += p.c(k, j) * p.c(k, j);
    }
    p.b[k] = -alpha * sq;
  }

  Tensor x({1, 4});
  for (std::size_t j = 0; j < 4; ++j) x(0, j) = p.c(0, j);
  aggnet::NetVladCoreCache cache;
  aggnet::netvlad_core_forward(p, x, &cache);

  REQUIRE(cache.weights(0, 0) >= 0.999);
  double frob = 0.0;
  for (double v : cache.h_mat.vec()) frob += v * v;
  REQUIRE(std::sqrt(frob) < 1e-3);
}

TEST_CASE("core aggregation matches the scalar transcription", "[netvlad]") {
  Rng rng(149);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(8);
    const std::size_t d = 2 + rng.uniform_below(15);
    const std::size_t K = 1 + rng.uniform_below(4);
    const NetVladParams p = oracle::random_netvlad(rng, K, d);
    const Tensor x = oracle::random_unit_rows(rng, n, d);

    const Tensor h = aggnet::netvlad_core_forward(p, x);
    const std::vector<double> ref = oracle::netvlad_core_vec(p, x);
    REQUIRE(oracle::max_abs_diff(h.vec(), ref) < 1e-12);
    REQUIRE(aggnet::norm2(h.vec()) == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("full aggregation matches the scalar transcription", "[netvlad]") {
  Rng rng(151);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(8);
    const std::size_t d = 2 + rng.uniform_below(15);
    const std::size_t K = 1 + rng.uniform_below(4);
    const NetVladParams p = oracle::random_netvlad(rng, K, d);
    const Tensor x = oracle::random_unit_rows(rng, n, d);

    const Tensor out = aggnet::netvlad_forward(p, x);
    const std::vector<double> ref = oracle::netvlad_full_vec(p, x);
    REQUIRE(out.size() == d);
    REQUIRE(oracle::max_abs_diff(out.vec(), ref) < 1e-12);
    REQUIRE(aggnet::norm2(out.vec()) == Catch::Approx(1.0).margin(1e-9));
  }
}

TEST_CASE("core backward matches finite differences for every input", "[netvlad]") {
  Rng rng(157);
  const std::size_t n = 4, d = 5, K = 3;
  const NetVladParams p = oracle::random_netvlad(rng, K, d);
  const Tensor x = oracle::random_unit_rows(rng, n, d);
  Tensor c({d * K});
  aggnet::fill_normal(c, rng, 1.0);

  aggnet::NetVladCoreCache cache;
  aggnet::netvlad_core_forward(p, x, &cache);
  aggnet::NetVladGrads grads;
  const Tensor dx = aggnet::netvlad_core_backward(p, cache, c, grads);

  SECTION("descriptors") {
    const auto f = [&](const Tensor& t) {
      return weighted_sum(aggnet::netvlad_core_forward(p, t), c);
    };
    const auto res = grad_check(f, x, dx, 1e-6, 1e-5);
    INFO("max rel err " << res.max_rel_err);
    REQUIRE(res.ok);
  }
  SECTION("assignment weights") {
    const auto f = [&](const Tensor& t) {
      NetVladParams probe = p;
      probe.a = t;
      return weighted_sum(aggnet::netvlad_core_forward(probe, x), c);
    };
    REQUIRE(grad_check(f, p.a, grads.a, 1e-6, 1e-5).ok);
  }
  SECTION("assignment biases") {
    const auto f = [&](const Tensor& t) {
      NetVladParams probe = p;
      probe.b = t;
      return weighted_sum(aggnet::netvlad_core_forward(probe, x), c);
    };
    REQUIRE(grad_check(f, p.b, grads.b, 1e-6, 1e-5).ok);
  }
  SECTION("centroids") {
    const auto f = [&](const Tensor& t) {
      NetVladParams probe = p;
      probe.c = t;
      return weighted_sum(aggnet::netvlad_core_forward(probe, x), c);
    };
    REQUIRE(grad_check(f, p.c, grads.c, 1e-6, 1e-5).ok);
  }
}

TEST_CASE("reduction backward matches finite differences", "[netvlad]") {
  Rng rng(163);
  const std::size_t d = 4, K = 2, m = 5;
  NetVladParams p = oracle::random_netvlad(rng, K, d);
  const Tensor v = oracle::random_unit_rows(rng, m, d * K);
  const Tensor c = oracle::random_matrix(rng, m, d);

  for (const aggnet::Mode mode : {aggnet::Mode::kTrain, aggnet::Mode::kEval}) {
    const NetVladParams frozen = p;
    aggnet::ReductionCache cache;
    NetVladParams work = p;
    aggnet::reduction_forward(work, v, mode, &cache);
    aggnet::NetVladGrads grads;
    const Tensor dv = aggnet::reduction_backward(frozen, cache, c, grads);

    const auto run = [&](const NetVladParams& params, const Tensor& input) {
      NetVladParams probe = params;
      return weighted_sum(aggnet::reduction_forward(probe, input, mode), c);
    };

    INFO("mode " << (mode == aggnet::Mode::kTrain ? "train" : "eval"));
    const auto fv = [&](const Tensor& t) { return run(frozen, t); };
    REQUIRE(grad_check(fv, v, dv, 1e-6, 1e-5).ok);

    const auto fw = [&](const Tensor& t) {
      NetVladParams probe = frozen;
      probe.fc.W = t;
      return run(probe, v);
    };
    REQUIRE(grad_check(fw, frozen.fc.W, grads.fc.W, 1e-6, 1e-5).ok);

    const auto fg = [&](const Tensor& t) {
      NetVladParams probe = frozen;
      probe.bn.gamma = t;
      return run(probe, v);
    };
    REQUIRE(grad_check(fg, frozen.bn.gamma, grads.bn.gamma, 1e-6, 1e-5).ok);
  }
}
