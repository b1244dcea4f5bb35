#pragma once

#include <cstddef>
#include <vector>

#include "aggnet/layers.hpp"
#include "aggnet/rng.hpp"
#include "aggnet/tensor.hpp"

namespace aggnet {

// The feature extractor: a small fully-connected net on vector inputs.
// Hidden layers use tanh, the final layer is linear, and every output row is
// L2-normalized so descriptors live on the unit sphere.
struct FeatureNet {
  std::vector<std::size_t> widths;  // [d_in, h1, ..., d]
  std::vector<Linear> layers;

  std::size_t d_in() const { return widths.front(); }
  std::size_t d_out() const { return widths.back(); }

  static FeatureNet init(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("feature net needs at least one layer");
    FeatureNet net;
    net.widths = widths;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      net.layers.push_back(Linear::init(widths[l], widths[l + 1], rng));
    }
    return net;
  }
};

struct FeatureNetGrads {
  std::vector<LinearGrads> layers;
};

struct FeatureNetCache {
  std::vector<Tensor> inputs;       // input to each linear layer
  std::vector<Tensor> activations;  // tanh outputs (all but the last layer)
  L2NormCache l2;
};

// x_raw {m, d_in} -> unit-norm descriptors {m, d}.
inline Tensor feature_forward(const FeatureNet& net, const Tensor& x_raw,
                              FeatureNetCache* cache = nullptr) {
  if (x_raw.ndim() != 2 || x_raw.cols() != net.d_in()) {
    throw DimensionError("feature_forward: input width mismatch");
  }
  FeatureNetCache local;
  FeatureNetCache& c = cache ? *cache : local;
  c.inputs.clear();
  c.activations.clear();

  Tensor h = x_raw;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    c.inputs.push_back(h);
    h = linear_forward(net.layers[l], h);
    if (l + 1 < net.layers.size()) {
      for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::tanh(h[i]);
      c.activations.push_back(h);
    }
  }
  return l2norm_rows_forward(h, &c.l2);
}

inline Tensor feature_backward(const FeatureNet& net, const FeatureNetCache& cache,
                               const Tensor& grad_y, FeatureNetGrads& grads) {
  if (grads.layers.empty()) grads.layers.resize(net.layers.size());
  Tensor g = l2norm_rows_backward(cache.l2, grad_y);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    if (l + 1 < net.layers.size()) {
      const Tensor& act = cache.activations[l];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - act[i] * act[i];
    }
    g = linear_backward(net.layers[l], cache.inputs[l], g, grads.layers[l]);
  }
  return g;
}

}  // namespace aggnet
