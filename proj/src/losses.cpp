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

#include "agestyle/losses.hpp"

#include <cmath>

namespace agestyle {

LossReport compose(const LossParts& parts, const LossWeights& weights, const std::string& context) {
  const std::pair<const char*, double> terms[] = {
      {"adv", parts.adv}, {"fm", parts.fm}, {"rec", parts.rec}, {"id", parts.id}, {"gp", parts.gp}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) throw NonFiniteLoss(name, context);
  }
  weights.validate();
  LossReport r;
  r.adv = parts.adv;
  r.fm = parts.fm;
  r.rec = parts.rec;
  r.id = parts.id;
  r.gp = parts.gp;
  r.total_G = parts.fm + weights.lambda_rec * parts.rec + weights.lambda_id * parts.id;
  r.total_D = -parts.adv + parts.gp;
  return r;
}

}  // namespace agestyle
