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

#include "agestyle/age_group.hpp"
#include "agestyle/ops.hpp"
#include "agestyle/stylestats.hpp"

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace agestyle {

/// Ordered, named collection of trainable leaves.
template <typename Scalar>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Var<Scalar> var;
  };

  Var<Scalar> add(std::string name, Tensor<Scalar> init) {
    entries_.push_back({std::move(name), parameter(std::move(init))});
    return entries_.back().var;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Index count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.var.value().size();
    return n;
  }

  void set_requires_grad(bool flag) {
    for (auto& e : entries_) e.var.set_requires_grad(flag);
  }
  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& e : entries_) h = hash_tensor(e.var.value(), h);
    return h;
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> he_normal(const Shape& shape, double fan_in, double slope, std::mt19937_64& rng) {
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * fan_in));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.array()[i] = static_cast<Scalar>(dist(rng));
  return t;
}

inline void check_pyramid(int n_layers, int base_channels, int image_size, int image_channels) {
  if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be >= 1");
  if (image_channels < 1) throw std::invalid_argument("image_channels must be >= 1");
  if (image_size < 1 || image_size % (1 << n_layers) != 0) {
    throw std::invalid_argument("image_size " + std::to_string(image_size) +
                                " must be a positive multiple of 2^n_layers");
  }
}

}  // namespace detail

inline constexpr double kLeakySlope = 0.2;

/// Encoder/decoder generator shape. Layer k of the encoder runs at
/// image_size / 2^(k+1) with channels(k) feature maps.
struct GeneratorSpec {
  int n_layers = 6;
  int base_channels = 32;
  int max_channel_multiplier = 8;
  int image_size = 128;
  int image_channels = 3;

  int channels(int k) const {
    return base_channels * std::min(1 << k, max_channel_multiplier);
  }
  int resolution(int k) const { return image_size >> (k + 1); }

  /// Output of decoder layer j before the skip concatenation.
  Shape decoder_layer_shape(int j, Index batch = 1) const {
    const int k = n_layers - 1 - j;
    return Shape{batch, channels(k), resolution(k), resolution(k)};
  }

  void validate() const {
    detail::check_pyramid(n_layers, base_channels, image_size, image_channels);
    if (max_channel_multiplier < 1) throw std::invalid_argument("max_channel_multiplier must be >= 1");
  }
  bool operator==(const GeneratorSpec&) const = default;
};

/// Multi-task discriminator; its layer widths mirror the generator decoder.
struct DiscriminatorSpec {
  int n_layers = 6;
  int base_channels = 32;
  int max_channel_multiplier = 8;
  int image_size = 128;
  int image_channels = 3;
  int heads = kNumAgeGroups;

  static DiscriminatorSpec mirror_of(const GeneratorSpec& g) {
    return DiscriminatorSpec{g.n_layers, g.base_channels, g.max_channel_multiplier, g.image_size,
                             g.image_channels, kNumAgeGroups};
  }

  int channels(int k) const {
    return base_channels * std::min(1 << k, max_channel_multiplier);
  }
  int resolution(int k) const { return image_size >> (k + 1); }
  Shape activation_shape(int k, Index batch = 1) const {
    return Shape{batch, channels(k), resolution(k), resolution(k)};
  }

  void validate() const {
    detail::check_pyramid(n_layers, base_channels, image_size, image_channels);
    if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  }
  bool operator==(const DiscriminatorSpec&) const = default;
};

template <typename Scalar>
struct GeneratorOutput {
  Var<Scalar> image;
  std::vector<Var<Scalar>> decoder_activations;
};

template <typename Scalar>
struct DiscriminatorOutput {
  Var<Scalar> logits;  // (N, heads, 1, 1), pre-sigmoid
  std::vector<Var<Scalar>> activations;
};

inline const ConvGeometry kDownsample{4, 2, 1};
inline const ConvGeometry kUpsample{4, 2, 1};
inline const ConvGeometry kBottleneck{3, 1, 1};

/// U-Net style generator. Encoder layers are stride-2 convolutions with
/// instance normalization (except the innermost one); each decoder layer's
/// features are AdaIN-modulated by one style entry, passed through a leaky
/// ReLU, then concatenated with the mirrored encoder output.
template <typename Scalar>
class Generator {
 public:
  Generator(const GeneratorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    const int n = spec_.n_layers;
    const double slope = kLeakySlope;
    int in_c = spec_.image_channels;
    for (int k = 0; k < n; ++k) {
      const int out_c = spec_.channels(k);
      const double fan = double(in_c) * 16;
      enc_w_.push_back(params_.add("enc" + std::to_string(k) + ".weight",
                                   detail::he_normal<Scalar>(Shape{out_c, in_c, 4, 4}, fan, slope, rng)));
      in_c = out_c;
    }
    enc_b_ = params_.add("enc" + std::to_string(n - 1) + ".bias",
                         Tensor<Scalar>(Shape{1, spec_.channels(n - 1), 1, 1}));
    for (int j = 0; j < n; ++j) {
      const int out_c = spec_.channels(n - 1 - j);
      if (j == 0) {
        const int c = spec_.channels(n - 1);
        dec_w_.push_back(params_.add("dec0.weight", detail::he_normal<Scalar>(
                                                        Shape{out_c, c, 3, 3}, double(c) * 9, slope, rng)));
      } else {
        const int c = 2 * spec_.channels(n - j);
        // Transposed weights are (in, out, k, k); stride 2 gives each output 4 taps.
        dec_w_.push_back(params_.add("dec" + std::to_string(j) + ".weight",
                                     detail::he_normal<Scalar>(Shape{c, out_c, 4, 4}, double(c) * 4,
                                                               slope, rng)));
      }
    }
    const int c = 2 * spec_.channels(0);
    out_w_ = params_.add("out.weight", detail::he_normal<Scalar>(Shape{c, spec_.image_channels, 4, 4},
                                                                double(c) * 4, 1.0, rng));
    out_b_ = params_.add("out.bias", Tensor<Scalar>(Shape{1, spec_.image_channels, 1, 1}));
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }

  GeneratorOutput<Scalar> forward(const Var<Scalar>& x, const StyleStats<Scalar>& style) const {
    const int n = spec_.n_layers;
    const Shape& xs = x.shape();
    if (xs.c != spec_.image_channels || xs.h != spec_.image_size || xs.w != spec_.image_size) {
      throw ShapeError("generator input " + xs.str() + " does not match image size " +
                       std::to_string(spec_.image_size));
    }
    if (static_cast<int>(style.size()) != n) {
      throw std::invalid_argument("generator: style has " + std::to_string(style.size()) +
                                  " layers, decoder has " + std::to_string(n));
    }
    const Scalar slope = Scalar(kLeakySlope);

    std::vector<Var<Scalar>> skips;
    Var<Scalar> h = x;
    for (int k = 0; k < n; ++k) {
      h = conv2d(h, enc_w_[static_cast<std::size_t>(k)], kDownsample);
      if (k + 1 < n) {
        h = instance_norm(h);
      } else {
        h = add_bias(h, enc_b_);
      }
      h = leaky_relu(h, slope);
      skips.push_back(h);
    }

    GeneratorOutput<Scalar> out;
    for (int j = 0; j < n; ++j) {
      const auto& w = dec_w_[static_cast<std::size_t>(j)];
      Var<Scalar> y = j == 0 ? conv2d(h, w, kBottleneck) : conv_transpose2d(h, w, kUpsample);
      const auto& s = style[static_cast<std::size_t>(j)];
      if (s.mean.shape().c != y.shape().c) {
        throw ShapeError("generator: style layer " + std::to_string(j) + " has " +
                         std::to_string(s.mean.shape().c) + " channels, decoder needs " +
                         std::to_string(y.shape().c));
      }
      y = leaky_relu(adain(y, s.mean, s.std), slope);
      out.decoder_activations.push_back(y);
      h = concat_channels(y, skips[static_cast<std::size_t>(n - 1 - j)]);
    }
    out.image = tanh(add_bias(conv_transpose2d(h, out_w_, kUpsample), out_b_));
    return out;
  }

  GeneratorOutput<Scalar> forward(const Tensor<Scalar>& x, const StyleStats<Scalar>& style) const {
    return forward(constant(x), style);
  }

 private:
  static Var<Scalar> instance_norm(const Var<Scalar>& h) {
    const Shape& s = h.shape();
    const Shape stat{s.n, s.c, 1, 1};
    Var<Scalar> mu = mean_to(h, stat);
    Var<Scalar> centered = sub(h, expand(mu, s));
    Var<Scalar> sd = sqrt(mean_to(square(centered), stat));
    return mul(centered, expand(safe_reciprocal(add_scalar(sd, Scalar(kAdainEpsilon))), s));
  }

  GeneratorSpec spec_;
  ParameterSet<Scalar> params_;
  std::vector<Var<Scalar>> enc_w_;
  Var<Scalar> enc_b_;
  std::vector<Var<Scalar>> dec_w_;
  Var<Scalar> out_w_;
  Var<Scalar> out_b_;
};

/// Stack of stride-2 convolutions with leaky ReLU; a full-extent convolution
/// maps the last activation to one real/fake logit per age group.
template <typename Scalar>
class Discriminator {
 public:
  Discriminator(const DiscriminatorSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    int in_c = spec_.image_channels;
    for (int k = 0; k < spec_.n_layers; ++k) {
      const int out_c = spec_.channels(k);
      w_.push_back(params_.add("layer" + std::to_string(k) + ".weight",
                               detail::he_normal<Scalar>(Shape{out_c, in_c, 4, 4}, double(in_c) * 16,
                                                         kLeakySlope, rng)));
      b_.push_back(params_.add("layer" + std::to_string(k) + ".bias",
                               Tensor<Scalar>(Shape{1, out_c, 1, 1})));
      in_c = out_c;
    }
    const int r = spec_.resolution(spec_.n_layers - 1);
    head_w_ = params_.add("head.weight", detail::he_normal<Scalar>(Shape{spec_.heads, in_c, r, r},
                                                                  double(in_c) * r * r, 1.0, rng));
    head_b_ = params_.add("head.bias", Tensor<Scalar>(Shape{1, spec_.heads, 1, 1}));
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  ParameterSet<Scalar>& parameters() { return params_; }
  const ParameterSet<Scalar>& parameters() const { return params_; }

  DiscriminatorOutput<Scalar> forward(const Var<Scalar>& x) const {
    const Shape& xs = x.shape();
    if (xs.c != spec_.image_channels || xs.h != spec_.image_size || xs.w != spec_.image_size) {
      throw ShapeError("discriminator input " + xs.str() + " does not match image size " +
                       std::to_string(spec_.image_size));
    }
    DiscriminatorOutput<Scalar> out;
    Var<Scalar> h = x;
    for (std::size_t k = 0; k < w_.size(); ++k) {
      h = leaky_relu(add_bias(conv2d(h, w_[k], kDownsample), b_[k]), Scalar(kLeakySlope));
      out.activations.push_back(h);
    }
    const int r = spec_.resolution(spec_.n_layers - 1);
    out.logits = add_bias(conv2d(h, head_w_, ConvGeometry{r, 1, 0}), head_b_);
    return out;
  }

  DiscriminatorOutput<Scalar> forward(const Tensor<Scalar>& x) const { return forward(constant(x)); }

 private:
  DiscriminatorSpec spec_;
  ParameterSet<Scalar> params_;
  std::vector<Var<Scalar>> w_;
  std::vector<Var<Scalar>> b_;
  Var<Scalar> head_w_;
  Var<Scalar> head_b_;
};

/// Per-sample logit of each sample's own group, shaped (N, 1, 1, 1).
template <typename Scalar>
Var<Scalar> select_logit(const Var<Scalar>& logits, std::span<const AgeGroup> groups) {
  const Shape& s = logits.shape();
  if (static_cast<Index>(groups.size()) != s.n) {
    throw std::invalid_argument("select_logit: " + std::to_string(groups.size()) +
                                " groups for batch of " + std::to_string(s.n));
  }
  Tensor<Scalar> mask(s);
  for (Index n = 0; n < s.n; ++n) {
    const int g = groups[static_cast<std::size_t>(n)].index();
    if (g >= s.c) throw std::out_of_range("select_logit: group beyond head count");
    mask(n, g, 0, 0) = Scalar(1);
  }
  return sum_to(mul(logits, constant(std::move(mask))), Shape{s.n, 1, 1, 1});
}

/// Logit of `group` for sample `sample` of a discriminator output.
template <typename Scalar>
Scalar select_logit(const DiscriminatorOutput<Scalar>& out, AgeGroup group, Index sample = 0) {
  return out.logits.value()(sample, group.index(), 0, 0);
}

}  // namespace agestyle
