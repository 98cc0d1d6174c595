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

#include <stdexcept>
#include <string>
#include <vector>

namespace agestyle {

struct LossWeights {
  double lambda_rec = 0.01;
  double lambda_id = 1e-4;
  double lambda_gp = 10.0;

  void validate() const {
    if (!(lambda_rec >= 0) || !(lambda_id >= 0) || !(lambda_gp >= 0)) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
  }
  bool operator==(const LossWeights&) const = default;
};

/// Unweighted objective terms.
struct LossParts {
  double adv = 0.0;
  double fm = 0.0;
  double rec = 0.0;
  double id = 0.0;
  double gp = 0.0;  // already scaled by lambda_gp
};

struct LossReport {
  double adv = 0.0;
  double fm = 0.0;
  double rec = 0.0;
  double id = 0.0;
  double gp = 0.0;
  double total_G = 0.0;
  double total_D = 0.0;
};

class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, const std::string& context)
      : std::runtime_error("non-finite loss term '" + term + "'" +
                           (context.empty() ? std::string() : " " + context)),
        term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

/// total_G = fm + lambda_rec * rec + lambda_id * id;  total_D = -adv + gp.
LossReport compose(const LossParts& parts, const LossWeights& weights,
                   const std::string& context = {});

/// Mean of log sigma(real) + log(1 - sigma(fake)); logits are (N, 1, 1, 1).
template <typename Scalar>
Var<Scalar> adversarial_loss(const Var<Scalar>& real_logits, const Var<Scalar>& fake_logits) {
  return add(mean(log_sigmoid(real_logits)), mean(log_sigmoid(neg(fake_logits))));
}

/// Sum over layers of the per-layer mean squared difference.
template <typename Scalar>
Var<Scalar> feature_matching_loss(const std::vector<Var<Scalar>>& target,
                                  const std::vector<Var<Scalar>>& fake) {
  if (target.size() != fake.size() || target.empty()) {
    throw ShapeError("feature matching: " + std::to_string(target.size()) + " target layers vs " +
                     std::to_string(fake.size()) + " generated layers");
  }
  Var<Scalar> total;
  for (std::size_t l = 0; l < target.size(); ++l) {
    require_same_shape(target[l].shape(), fake[l].shape(), "feature matching");
    Var<Scalar> term = mean(square(sub(target[l], fake[l])));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Mean absolute difference.
template <typename Scalar>
Var<Scalar> l1_loss(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a.shape(), b.shape(), "l1 loss");
  return mean(abs(sub(a, b)));
}

/// Cycle term: input vs. the image translated away and back.
template <typename Scalar>
Var<Scalar> reconstruction_loss(const Var<Scalar>& x_a, const Var<Scalar>& cycled) {
  return l1_loss(x_a, cycled);
}

/// Pixel-wise identity term: input vs. translated output.
template <typename Scalar>
Var<Scalar> identity_loss(const Var<Scalar>& x_a, const Var<Scalar>& translated) {
  return l1_loss(x_a, translated);
}

/// R1 from an already recorded forward pass: `x` must be a leaf that
/// requires grad and `logits` (N, 1, 1, 1) must depend on it through a
/// recorded graph. Differentiable w.r.t. whatever produced `logits`.
template <typename Scalar>
Var<Scalar> r1_penalty_from(const Var<Scalar>& x, const Var<Scalar>& logits, Scalar lambda_gp) {
  if (lambda_gp == Scalar(0)) return constant(Tensor<Scalar>(Shape{1, 1, 1, 1}));
  if (!logits.requires_grad()) {
    throw std::logic_error("r1 penalty: logits were not recorded as a function of x");
  }
  Var<Scalar> g = gradients(sum(logits), {x}, Var<Scalar>(), true)[0];
  return scale(sum(square(g)), lambda_gp / Scalar(x.shape().n));
}

/// lambda_gp * E_x ||d logit(x) / dx||^2 over real samples. `logit_fn` maps
/// a (N, C, H, W) Var to the selected real-class logits (N, 1, 1, 1).
template <typename Scalar, typename LogitFn>
Var<Scalar> r1_penalty(LogitFn&& logit_fn, const Tensor<Scalar>& x_real, Scalar lambda_gp) {
  GradModeGuard recording(true);
  Var<Scalar> x(x_real, true);
  Var<Scalar> logits = logit_fn(x);
  return r1_penalty_from(x, logits, lambda_gp);
}

}  // namespace agestyle
