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

#include "agestyle/networks.hpp"

#include <cmath>
#include <vector>

namespace agestyle {

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter entry, in the
/// order of the ParameterSet it was built for.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterSet<Scalar>& params, AdamOptions options) : options_(options) {
    for (const auto& e : params.entries()) {
      m_.push_back(Tensor<Scalar>::zeros(e.var.shape()));
      v_.push_back(Tensor<Scalar>::zeros(e.var.shape()));
    }
  }

  /// Applies one update from the accumulated grads; entries without a grad are left as is.
  void step(ParameterSet<Scalar>& params) {
    if (params.size() != m_.size()) throw std::logic_error("Adam: parameter set changed size");
    ++t_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const Scalar c1 = Scalar(1.0 - std::pow(b1, double(t_)));
    const Scalar c2 = Scalar(1.0 - std::pow(b2, double(t_)));
    const Scalar lr = Scalar(options_.learning_rate);
    const Scalar eps = Scalar(options_.epsilon);
    auto& entries = params.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& var = entries[i].var;
      if (!var.has_grad()) continue;
      const auto& g = var.grad().array();
      auto& m = m_[i].array();
      auto& v = v_[i].array();
      m = Scalar(b1) * m + Scalar(1 - b1) * g;
      v = Scalar(b2) * v + Scalar(1 - b2) * g.square();
      var.mutable_value().array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  const AdamOptions& options() const { return options_; }
  std::vector<Tensor<Scalar>>& first_moments() { return m_; }
  std::vector<Tensor<Scalar>>& second_moments() { return v_; }
  const std::vector<Tensor<Scalar>>& first_moments() const { return m_; }
  const std::vector<Tensor<Scalar>>& second_moments() const { return v_; }

 private:
  AdamOptions options_{};
  std::vector<Tensor<Scalar>> m_;
  std::vector<Tensor<Scalar>> v_;
  long t_ = 0;
};

}  // namespace agestyle
