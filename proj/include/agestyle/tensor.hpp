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

#include <Eigen/Dense>

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace agestyle {

using Index = Eigen::Index;

/// Rank-4 extent in (batch, channels, height, width) order.
struct Shape {
  Index n = 1;
  Index c = 1;
  Index h = 1;
  Index w = 1;

  constexpr Index size() const { return n * c * h * w; }
  constexpr Index plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (!(a == b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

/// Dense NCHW tensor backed by a contiguous Eigen array.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(const Shape& shape) : shape_(shape), data_(Array::Zero(shape.size())) {
    validate();
  }
  Tensor(const Shape& shape, Array data) : shape_(shape), data_(std::move(data)) {
    validate();
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data size does not match shape " + shape_.str());
    }
  }

  static Tensor constant(const Shape& shape, Scalar value) {
    return Tensor(shape, Array::Constant(shape.size(), value));
  }
  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor ones(const Shape& shape) { return constant(shape, Scalar(1)); }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  Scalar operator()(Index n, Index c, Index h, Index w) const { return data_[offset(n, c, h, w)]; }

  /// Sample `n` viewed as a (channels x height*width) matrix.
  MatrixMap sample_matrix(Index n) {
    return MatrixMap(data_.data() + n * shape_.c * shape_.plane(), shape_.c, shape_.plane());
  }
  ConstMatrixMap sample_matrix(Index n) const {
    return ConstMatrixMap(data_.data() + n * shape_.c * shape_.plane(), shape_.c,
                          shape_.plane());
  }

  /// Whole tensor viewed as a (n*c x h*w) matrix, one row per channel plane.
  MatrixMap planes() { return MatrixMap(data_.data(), shape_.n * shape_.c, shape_.plane()); }
  ConstMatrixMap planes() const {
    return ConstMatrixMap(data_.data(), shape_.n * shape_.c, shape_.plane());
  }

  /// Copy of samples [begin, begin + count).
  Tensor slice_batch(Index begin, Index count) const {
    if (begin < 0 || count < 1 || begin + count > shape_.n) {
      throw ShapeError("slice_batch out of range for " + shape_.str());
    }
    const Index per = shape_.c * shape_.plane();
    Shape s = shape_;
    s.n = count;
    return Tensor(s, data_.segment(begin * per, count * per));
  }

  Tensor reshaped(const Shape& shape) const {
    if (shape.size() != size()) {
      throw ShapeError("reshape " + shape_.str() + " -> " + shape.str());
    }
    return Tensor(shape, data_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  void validate() const {
    if (shape_.n < 1 || shape_.c < 1 || shape_.h < 1 || shape_.w < 1) {
      throw ShapeError("tensor dimensions must be >= 1, got " + shape_.str());
    }
  }

  Shape shape_{};
  Array data_{};
};

/// Stacks equally shaped tensors along the batch axis.
template <typename Scalar, typename Range>
Tensor<Scalar> stack_batch(const Range& parts) {
  auto it = std::begin(parts);
  if (it == std::end(parts)) throw ShapeError("stack_batch of an empty range");
  Shape s = it->shape();
  Index total = 0;
  for (const auto& p : parts) {
    Shape q = p.shape();
    q.n = s.n;
    require_same_shape(q, s, "stack_batch");
    total += p.shape().n;
  }
  Shape out_shape = s;
  out_shape.n = total;
  Tensor<Scalar> out(out_shape);
  Index offset = 0;
  for (const auto& p : parts) {
    out.array().segment(offset, p.size()) = p.array();
    offset += p.size();
  }
  return out;
}

/// FNV-1a over the raw bytes; used for reproducibility checks and checkpoint integrity.
inline std::uint64_t fnv1a(const void* bytes, std::size_t len,
                           std::uint64_t seed = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename Scalar>
std::uint64_t hash_tensor(const Tensor<Scalar>& t, std::uint64_t seed = 1469598103934665603ULL) {
  return fnv1a(t.data(), static_cast<std::size_t>(t.size()) * sizeof(Scalar), seed);
}

}  // namespace agestyle
