/*
 * Copyright (c) 2026, The agestyle Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "agestyle/ops.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace agestyle {

inline constexpr double kAdainEpsilon = 1e-5;

/// Per-sample, per-channel moments of a feature map; rows are samples.
template <typename Scalar>
struct ChannelStats {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix mean;
  Matrix std;
};

/// Mean and population standard deviation over the spatial extent.
template <typename Scalar>
ChannelStats<Scalar> channel_stats(const Tensor<Scalar>& f) {
  const Shape& s = f.shape();
  const auto planes = f.planes();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean = planes.rowwise().mean().array();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> var =
      (planes.colwise() - mean.matrix()).array().square().rowwise().mean();
  ChannelStats<Scalar> out;
  // planes() is (n*c) rows in sample-major order; reshape to (n x c).
  out.mean = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      mean.data(), s.n, s.c);
  out.std = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      var.sqrt().eval().data(), s.n, s.c);
  return out;
}

/// Differentiable moments, each shaped (N, C, 1, 1).
template <typename Scalar>
std::pair<Var<Scalar>, Var<Scalar>> channel_stats(const Var<Scalar>& f) {
  const Shape& s = f.shape();
  const Shape stat{s.n, s.c, 1, 1};
  Var<Scalar> mu = mean_to(f, stat);
  Var<Scalar> centered = sub(f, expand(mu, s));
  Var<Scalar> sd = sqrt(mean_to(square(centered), stat));
  return {mu, sd};
}

/// Adaptive instance normalization:
///   out = style_std * (content - mu_c) / (sigma_c + eps) + style_mean
/// Style moments may be (N, C, 1, 1) or shared across the batch as (1, C, 1, 1).
template <typename Scalar>
Var<Scalar> adain(const Var<Scalar>& content, const Var<Scalar>& style_mean,
                  const Var<Scalar>& style_std, Scalar eps = Scalar(kAdainEpsilon)) {
  const Shape& s = content.shape();
  const Shape stat{s.n, s.c, 1, 1};
  for (const auto* v : {&style_mean, &style_std}) {
    const Shape& vs = v->shape();
    if (vs.c != s.c || vs.h != 1 || vs.w != 1 || (vs.n != s.n && vs.n != 1)) {
      throw ShapeError("adain: style moments " + vs.str() + " do not match content " + s.str());
    }
  }
  Var<Scalar> mu = mean_to(content, stat);
  Var<Scalar> centered = sub(content, expand(mu, s));
  Var<Scalar> sd = sqrt(mean_to(square(centered), stat));
  Var<Scalar> gain = mul(expand(style_std, stat), safe_reciprocal(add_scalar(sd, eps)));
  return add(mul(centered, expand(gain, s)), expand(expand(style_mean, stat), s));
}

/// Convenience overload taking per-channel vectors shared by every sample.
template <typename Scalar>
Tensor<Scalar> adain(const Tensor<Scalar>& content,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& style_mean,
                     const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& style_std,
                     Scalar eps = Scalar(kAdainEpsilon)) {
  const Index c = content.shape().c;
  if (style_mean.size() != c || style_std.size() != c) {
    throw ShapeError("adain: channel mismatch, content has " + std::to_string(c) +
                     " channels, style has " + std::to_string(style_mean.size()));
  }
  NoGradGuard no_grad;
  const Shape stat{1, c, 1, 1};
  Tensor<Scalar> m(stat, style_mean.array());
  Tensor<Scalar> sd(stat, style_std.array());
  return adain(constant(content), constant(std::move(m)), constant(std::move(sd)), eps).value();
}

/// (discriminator layer -> decoder layer) correspondence.
struct LayerPair {
  int discriminator_layer = 0;
  int decoder_layer = 0;
  constexpr bool operator==(const LayerPair&) const = default;
};

class LayerMap {
 public:
  LayerMap() = default;
  explicit LayerMap(std::vector<LayerPair> pairs) : pairs_(std::move(pairs)) {
    std::set<int> seen;
    for (const auto& p : pairs_) {
      if (p.discriminator_layer < 0 || p.decoder_layer < 0) {
        throw std::invalid_argument("layer map: negative layer id");
      }
      if (!seen.insert(p.decoder_layer).second) {
        throw std::invalid_argument("layer map: decoder layer " + std::to_string(p.decoder_layer) +
                                    " mapped twice");
      }
    }
    std::sort(pairs_.begin(), pairs_.end(),
              [](const LayerPair& a, const LayerPair& b) { return a.decoder_layer < b.decoder_layer; });
  }

  /// Decoder layer j is fed by discriminator layer n - 1 - j (same resolution).
  static LayerMap mirrored(int n_layers) {
    std::vector<LayerPair> pairs;
    for (int j = 0; j < n_layers; ++j) pairs.push_back({n_layers - 1 - j, j});
    return LayerMap(std::move(pairs));
  }

  const std::vector<LayerPair>& pairs() const { return pairs_; }
  std::size_t size() const { return pairs_.size(); }

 private:
  std::vector<LayerPair> pairs_;
};

template <typename Scalar>
struct LayerStyle {
  int discriminator_layer = 0;
  int decoder_layer = 0;
  Var<Scalar> mean;  // (N, C, 1, 1)
  Var<Scalar> std;   // (N, C, 1, 1)
};

/// Age style payload: one moment pair per modulated decoder layer, ordered by decoder layer.
template <typename Scalar>
struct StyleStats {
  std::vector<LayerStyle<Scalar>> layers;

  std::size_t size() const { return layers.size(); }
  const LayerStyle<Scalar>& operator[](std::size_t i) const { return layers[i]; }

  StyleStats detach() const {
    StyleStats out = *this;
    for (auto& l : out.layers) {
      l.mean = l.mean.detach();
      l.std = l.std.detach();
    }
    return out;
  }

  /// Euclidean distance over all stacked moments.
  double distance(const StyleStats& other) const {
    if (other.size() != size()) throw std::invalid_argument("style distance: layer count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      require_same_shape(layers[i].mean.shape(), other.layers[i].mean.shape(), "style distance");
      acc += (layers[i].mean.value().array() - other.layers[i].mean.value().array())
                 .template cast<double>().square().sum();
      acc += (layers[i].std.value().array() - other.layers[i].std.value().array())
                 .template cast<double>().square().sum();
    }
    return std::sqrt(acc);
  }
};

/// Channel moments of the mapped discriminator activations; `activations[k]`
/// holds layer k.
template <typename Scalar>
StyleStats<Scalar> extract_style(const std::vector<Var<Scalar>>& activations,
                                 const LayerMap& layer_map) {
  StyleStats<Scalar> style;
  for (const auto& p : layer_map.pairs()) {
    if (p.discriminator_layer >= static_cast<int>(activations.size())) {
      throw std::out_of_range("extract_style: missing discriminator layer " +
                              std::to_string(p.discriminator_layer));
    }
    auto [mu, sd] = channel_stats(activations[static_cast<std::size_t>(p.discriminator_layer)]);
    style.layers.push_back({p.discriminator_layer, p.decoder_layer, mu, sd});
  }
  return style;
}

}  // namespace agestyle
