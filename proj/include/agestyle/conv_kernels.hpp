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

#include "agestyle/tensor.hpp"

#include <vector>

namespace agestyle {

/// Square-kernel convolution geometry.
struct ConvGeometry {
  Index kernel = 4;
  Index stride = 2;
  Index pad = 1;

  Index out_extent(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
  Index transposed_extent(Index in) const { return (in - 1) * stride - 2 * pad + kernel; }
  constexpr bool operator==(const ConvGeometry&) const = default;
};

namespace kernels {

// The three bilinear maps below close under differentiation:
//   forward(x, w)         y  = W * cols(x)
//   input_grad(gy, w)     gx = col2im(W^T * gy)      (transposed convolution)
//   weight_grad(x, gy)    gw = sum_n gy_n * cols(x_n)^T
// Samples are independent, so the batch loop parallelizes; weight_grad keeps
// per-sample partials and reduces them in a fixed order.

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
void im2col(const Scalar* x, Index channels, Index h, Index w, const ConvGeometry& g,
            Index out_h, Index out_w, RowMatrix<Scalar>& cols) {
  const Index k = g.kernel;
  cols.resize(channels * k * k, out_h * out_w);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = x + c * h * w;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        Scalar* row = cols.data() + ((c * k + ki) * k + kj) * out_h * out_w;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          Scalar* dst = row + oh * out_w;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + out_w, Scalar(0));
            continue;
          }
          const Scalar* src = plane + ih * w;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            dst[ow] = (iw >= 0 && iw < w) ? src[iw] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Index channels, Index h, Index w,
                const ConvGeometry& g, Index out_h, Index out_w, Scalar* x) {
  const Index k = g.kernel;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = x + c * h * w;
    for (Index ki = 0; ki < k; ++ki) {
      for (Index kj = 0; kj < k; ++kj) {
        const Scalar* row = cols.data() + ((c * k + ki) * k + kj) * out_h * out_w;
        for (Index oh = 0; oh < out_h; ++oh) {
          const Index ih = oh * g.stride - g.pad + ki;
          if (ih < 0 || ih >= h) continue;
          Scalar* dst = plane + ih * w;
          const Scalar* src = row + oh * out_w;
          for (Index ow = 0; ow < out_w; ++ow) {
            const Index iw = ow * g.stride - g.pad + kj;
            if (iw >= 0 && iw < w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Eigen::Map<const RowMatrix<Scalar>> weight_matrix(const Tensor<Scalar>& weight) {
  const Shape& s = weight.shape();
  return Eigen::Map<const RowMatrix<Scalar>>(weight.data(), s.n, s.c * s.h * s.w);
}

/// y = conv(x, w); w is (out, in, k, k).
template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                            const ConvGeometry& g) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const Index oh = g.out_extent(xs.h);
  const Index ow = g.out_extent(xs.w);
  if (oh < 1 || ow < 1) throw ShapeError("conv2d: input too small " + xs.str());
  Tensor<Scalar> y(Shape{xs.n, ws.n, oh, ow});
  const auto wm = weight_matrix(weight);
#pragma omp parallel for schedule(static)
  for (Index n = 0; n < xs.n; ++n) {
    RowMatrix<Scalar> cols;
    im2col(x.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, g, oh, ow, cols);
    y.sample_matrix(n).noalias() = wm * cols;
  }
  return y;
}

/// Adjoint of conv_forward w.r.t. its input: maps (N, out, oh, ow) to (N, in, h, w).
template <typename Scalar>
Tensor<Scalar> conv_input_grad(const Tensor<Scalar>& gy, const Tensor<Scalar>& weight,
                               const ConvGeometry& g, Index h, Index w) {
  const Shape& gs = gy.shape();
  const Shape& ws = weight.shape();
  if (ws.n != gs.c || ws.h != g.kernel || ws.w != g.kernel) {
    throw ShapeError("conv_transpose2d: weight " + ws.str() + " incompatible with input " +
                     gs.str());
  }
  if (g.out_extent(h) != gs.h || g.out_extent(w) != gs.w) {
    throw ShapeError("conv_transpose2d: output extent mismatch for " + gs.str());
  }
  Tensor<Scalar> gx(Shape{gs.n, ws.c, h, w});
  const auto wm = weight_matrix(weight);
#pragma omp parallel for schedule(static)
  for (Index n = 0; n < gs.n; ++n) {
    RowMatrix<Scalar> cols = wm.transpose() * gy.sample_matrix(n);
    col2im_add(cols, ws.c, h, w, g, gs.h, gs.w, gx.data() + n * ws.c * h * w);
  }
  return gx;
}

/// Adjoint of conv_forward w.r.t. its weight.
template <typename Scalar>
Tensor<Scalar> conv_weight_grad(const Tensor<Scalar>& x, const Tensor<Scalar>& gy,
                                const ConvGeometry& g) {
  const Shape& xs = x.shape();
  const Shape& gs = gy.shape();
  if (xs.n != gs.n || g.out_extent(xs.h) != gs.h || g.out_extent(xs.w) != gs.w) {
    throw ShapeError("conv weight grad: " + xs.str() + " vs " + gs.str());
  }
  const Index cols_rows = xs.c * g.kernel * g.kernel;
  std::vector<RowMatrix<Scalar>> partial(static_cast<std::size_t>(xs.n));
#pragma omp parallel for schedule(static)
  for (Index n = 0; n < xs.n; ++n) {
    RowMatrix<Scalar> cols;
    im2col(x.data() + n * xs.c * xs.plane(), xs.c, xs.h, xs.w, g, gs.h, gs.w, cols);
    partial[static_cast<std::size_t>(n)].noalias() = gy.sample_matrix(n) * cols.transpose();
  }
  Tensor<Scalar> gw(Shape{gs.c, xs.c, g.kernel, g.kernel});
  Eigen::Map<RowMatrix<Scalar>> out(gw.data(), gs.c, cols_rows);
  for (const auto& p : partial) out += p;
  return gw;
}

}  // namespace kernels
}  // namespace agestyle
