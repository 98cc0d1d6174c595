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

#include "agestyle/autograd.hpp"
#include "agestyle/conv_kernels.hpp"

#include <cmath>

namespace agestyle {

// Differentiable free functions over Var. Backward rules are expressed with
// these same functions so second derivatives come for free.

template <typename Scalar>
using Vars = std::vector<Var<Scalar>>;

template <typename Scalar>
Var<Scalar> ones_like(const Var<Scalar>& a) {
  return constant(Tensor<Scalar>::ones(a.shape()));
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Scalar> out(a.shape(), a.value().array() + b.value().array());
  return make_result<Scalar>(
      std::move(out), {a, b},
      [](const Var<Scalar>& g, const std::vector<bool>&) { return Vars<Scalar>{g, g}; }, "add");
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() * s);
  return make_result<Scalar>(
      std::move(out), {a},
      [s](const Var<Scalar>& g, const std::vector<bool>&) { return Vars<Scalar>{scale(g, s)}; },
      "scale");
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& a) {
  return scale(a, Scalar(-1));
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Scalar> out(a.shape(), a.value().array() - b.value().array());
  return make_result<Scalar>(
      std::move(out), {a, b},
      [](const Var<Scalar>& g, const std::vector<bool>& need) {
        return Vars<Scalar>{g, need[1] ? neg(g) : Var<Scalar>()};
      },
      "sub");
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Scalar> out(a.shape(), a.value().array() * b.value().array());
  return make_result<Scalar>(
      std::move(out), {a, b},
      [a, b](const Var<Scalar>& g, const std::vector<bool>& need) {
        return Vars<Scalar>{need[0] ? mul(g, b) : Var<Scalar>(),
                            need[1] ? mul(g, a) : Var<Scalar>()};
      },
      "mul");
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().array() + s);
  return make_result<Scalar>(
      std::move(out), {a},
      [](const Var<Scalar>& g, const std::vector<bool>&) { return Vars<Scalar>{g}; },
      "add_scalar");
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, const Var<Scalar>& b) { return mul(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator*(Scalar s, const Var<Scalar>& a) { return scale(a, s); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Broadcasting

namespace detail {

inline bool broadcastable(const Shape& from, const Shape& to) {
  auto ok = [](Index f, Index t) { return f == t || f == 1; };
  return ok(from.n, to.n) && ok(from.c, to.c) && ok(from.h, to.h) && ok(from.w, to.w);
}

// Visits every element of `big` with the flat index of the matching element
// of the broadcast `small`.
template <typename Fn>
void for_each_broadcast(const Shape& small, const Shape& big, Fn&& fn) {
  const Index sn = small.n == 1 ? 0 : small.c * small.h * small.w;
  const Index sc = small.c == 1 ? 0 : small.h * small.w;
  const Index sh = small.h == 1 ? 0 : small.w;
  const Index sw = small.w == 1 ? 0 : 1;
  Index flat = 0;
  for (Index n = 0; n < big.n; ++n)
    for (Index c = 0; c < big.c; ++c)
      for (Index h = 0; h < big.h; ++h)
        for (Index w = 0; w < big.w; ++w) fn(flat++, n * sn + c * sc + h * sh + w * sw);
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> sum_to(const Var<Scalar>& a, const Shape& target);

/// Repeats size-1 dimensions of `a` to reach `target`.
template <typename Scalar>
Var<Scalar> expand(const Var<Scalar>& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (!detail::broadcastable(a.shape(), target)) {
    throw ShapeError("expand " + a.shape().str() + " -> " + target.str());
  }
  Tensor<Scalar> out(target);
  const auto& src = a.value().array();
  auto& dst = out.array();
  detail::for_each_broadcast(a.shape(), target, [&](Index i, Index j) { dst[i] = src[j]; });
  const Shape from = a.shape();
  return make_result<Scalar>(
      std::move(out), {a},
      [from](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{sum_to(g, from)};
      },
      "expand");
}

/// Sums over the dimensions where `target` has extent 1.
template <typename Scalar>
Var<Scalar> sum_to(const Var<Scalar>& a, const Shape& target) {
  if (a.shape() == target) return a;
  if (!detail::broadcastable(target, a.shape())) {
    throw ShapeError("sum_to " + a.shape().str() + " -> " + target.str());
  }
  Tensor<Scalar> out(target);
  const Shape& s = a.shape();
  if (target.h == 1 && target.w == 1 && target.n == s.n && target.c == s.c) {
    out.array() = a.value().planes().rowwise().sum().array();
  } else {
    const auto& src = a.value().array();
    auto& dst = out.array();
    detail::for_each_broadcast(target, s, [&](Index i, Index j) { dst[j] += src[i]; });
  }
  const Shape from = a.shape();
  return make_result<Scalar>(
      std::move(out), {a},
      [from](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{expand(g, from)};
      },
      "sum_to");
}

template <typename Scalar>
Var<Scalar> mean_to(const Var<Scalar>& a, const Shape& target) {
  const Scalar ratio = Scalar(target.size()) / Scalar(a.shape().size());
  return scale(sum_to(a, target), ratio);
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  return sum_to(a, Shape{1, 1, 1, 1});
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return mean_to(a, Shape{1, 1, 1, 1});
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().square());
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, scale(a, Scalar(2)))};
      },
      "square");
}

/// 1/x with 0 where x == 0.
template <typename Scalar>
Var<Scalar> safe_reciprocal(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(),
                     a.value().array().unaryExpr([](Scalar v) { return v == Scalar(0) ? Scalar(0) : Scalar(1) / v; }));
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{neg(mul(g, square(safe_reciprocal(a))))};
      },
      "safe_reciprocal");
}

/// Square root whose derivative at 0 is taken as 0.
template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().max(Scalar(0)).sqrt());
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, scale(safe_reciprocal(sqrt(a)), Scalar(0.5)))};
      },
      "sqrt");
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().abs());
  Tensor<Scalar> sign(a.shape(), a.value().array().sign());
  return make_result<Scalar>(
      std::move(out), {a},
      [sign = std::move(sign)](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, constant(sign))};
      },
      "abs");
}

template <typename Scalar>
Var<Scalar> leaky_relu(const Var<Scalar>& a, Scalar slope) {
  Tensor<Scalar> slopes(a.shape(), (a.value().array() > Scalar(0))
                                       .select(Tensor<Scalar>::Array::Ones(a.value().size()),
                                               Tensor<Scalar>::Array::Constant(a.value().size(), slope)));
  Tensor<Scalar> out(a.shape(), a.value().array() * slopes.array());
  return make_result<Scalar>(
      std::move(out), {a},
      [slopes = std::move(slopes)](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, constant(slopes))};
      },
      "leaky_relu");
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().tanh());
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, add_scalar(neg(square(tanh(a))), Scalar(1)))};
      },
      "tanh");
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().unaryExpr([](Scalar v) {
    return v >= Scalar(0) ? Scalar(1) / (Scalar(1) + std::exp(-v))
                          : std::exp(v) / (Scalar(1) + std::exp(v));
  }));
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        Var<Scalar> s = sigmoid(a);
        return Vars<Scalar>{mul(g, mul(s, add_scalar(neg(s), Scalar(1))))};
      },
      "sigmoid");
}

/// log(sigmoid(x)), evaluated without overflow for large |x|.
template <typename Scalar>
Var<Scalar> log_sigmoid(const Var<Scalar>& a) {
  Tensor<Scalar> out(a.shape(), a.value().array().unaryExpr([](Scalar v) {
    return std::min(v, Scalar(0)) - std::log1p(std::exp(-std::abs(v)));
  }));
  return make_result<Scalar>(
      std::move(out), {a},
      [a](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{mul(g, sigmoid(neg(a)))};
      },
      "log_sigmoid");
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& a, Index begin, Index count);

template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels " + sa.str() + " with " + sb.str());
  }
  Tensor<Scalar> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const Index pa = sa.c * sa.plane();
  const Index pb = sb.c * sb.plane();
  for (Index n = 0; n < sa.n; ++n) {
    out.array().segment(n * (pa + pb), pa) = a.value().array().segment(n * pa, pa);
    out.array().segment(n * (pa + pb) + pa, pb) = b.value().array().segment(n * pb, pb);
  }
  const Index ca = sa.c;
  const Index cb = sb.c;
  return make_result<Scalar>(
      std::move(out), {a, b},
      [ca, cb](const Var<Scalar>& g, const std::vector<bool>& need) {
        return Vars<Scalar>{need[0] ? slice_channels(g, 0, ca) : Var<Scalar>(),
                            need[1] ? slice_channels(g, ca, cb) : Var<Scalar>()};
      },
      "concat_channels");
}

/// Adjoint of concat: zero-pads a channel slice back to the full extent.
template <typename Scalar>
Var<Scalar> pad_channels(const Var<Scalar>& a, Index begin, Index total) {
  const Shape& s = a.shape();
  Tensor<Scalar> out(Shape{s.n, total, s.h, s.w});
  const Index plane = s.plane();
  for (Index n = 0; n < s.n; ++n) {
    out.array().segment((n * total + begin) * plane, s.c * plane) =
        a.value().array().segment(n * s.c * plane, s.c * plane);
  }
  const Index count = s.c;
  return make_result<Scalar>(
      std::move(out), {a},
      [begin, count](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{slice_channels(g, begin, count)};
      },
      "pad_channels");
}

template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& a, Index begin, Index count) {
  const Shape& s = a.shape();
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels out of range for " + s.str());
  }
  Tensor<Scalar> out(Shape{s.n, count, s.h, s.w});
  const Index plane = s.plane();
  for (Index n = 0; n < s.n; ++n) {
    out.array().segment(n * count * plane, count * plane) =
        a.value().array().segment((n * s.c + begin) * plane, count * plane);
  }
  const Index total = s.c;
  return make_result<Scalar>(
      std::move(out), {a},
      [begin, total](const Var<Scalar>& g, const std::vector<bool>&) {
        return Vars<Scalar>{pad_channels(g, begin, total)};
      },
      "slice_channels");
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight,
                             const ConvGeometry& g, Index out_h, Index out_w);
template <typename Scalar>
Var<Scalar> conv_weight_op(const Var<Scalar>& x, const Var<Scalar>& gy, const ConvGeometry& g);

/// Cross-correlation; weight is (out_channels, in_channels, k, k).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const ConvGeometry& g) {
  Tensor<Scalar> out = kernels::conv_forward(x.value(), weight.value(), g);
  const Index h = x.shape().h;
  const Index w = x.shape().w;
  return make_result<Scalar>(
      std::move(out), {x, weight},
      [x, weight, g, h, w](const Var<Scalar>& gy, const std::vector<bool>& need) {
        return Vars<Scalar>{need[0] ? conv_transpose2d(gy, weight, g, h, w) : Var<Scalar>(),
                            need[1] ? conv_weight_op(x, gy, g) : Var<Scalar>()};
      },
      "conv2d");
}

/// Transposed convolution; weight is (in_channels, out_channels, k, k), the
/// layout of the convolution it is the adjoint of.
template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight,
                             const ConvGeometry& g, Index out_h, Index out_w) {
  Tensor<Scalar> out = kernels::conv_input_grad(x.value(), weight.value(), g, out_h, out_w);
  return make_result<Scalar>(
      std::move(out), {x, weight},
      [x, weight, g](const Var<Scalar>& go, const std::vector<bool>& need) {
        return Vars<Scalar>{need[0] ? conv2d(go, weight, g) : Var<Scalar>(),
                            need[1] ? conv_weight_op(go, x, g) : Var<Scalar>()};
      },
      "conv_transpose2d");
}

template <typename Scalar>
Var<Scalar> conv_transpose2d(const Var<Scalar>& x, const Var<Scalar>& weight,
                             const ConvGeometry& g) {
  return conv_transpose2d(x, weight, g, g.transposed_extent(x.shape().h),
                          g.transposed_extent(x.shape().w));
}

/// Weight gradient of conv2d as a differentiable op of (x, gy).
template <typename Scalar>
Var<Scalar> conv_weight_op(const Var<Scalar>& x, const Var<Scalar>& gy, const ConvGeometry& g) {
  Tensor<Scalar> out = kernels::conv_weight_grad(x.value(), gy.value(), g);
  const Index h = x.shape().h;
  const Index w = x.shape().w;
  return make_result<Scalar>(
      std::move(out), {x, gy},
      [x, gy, g, h, w](const Var<Scalar>& gw, const std::vector<bool>& need) {
        return Vars<Scalar>{need[0] ? conv_transpose2d(gy, gw, g, h, w) : Var<Scalar>(),
                            need[1] ? conv2d(x, gw, g) : Var<Scalar>()};
      },
      "conv_weight");
}

/// Adds a (1, C, 1, 1) bias to every sample and position.
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  return add(x, expand(bias, x.shape()));
}

}  // namespace agestyle
