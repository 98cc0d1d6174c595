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

#include "agestyle/dataset.hpp"

#include <cmath>
#include <string>

namespace agestyle {

/// Shannon entropy (natural log) and evenness H / ln S.
struct ShannonIndex {
  double h = 0.0;
  double e = 0.0;
  /// False when S = 1, where ln S = 0 leaves evenness undefined (e is 0).
  bool evenness_defined = true;
};

/// Inverse Simpson index 1 / sum p^2 and evenness D / S.
struct SimpsonIndex {
  double d = 1.0;
  double e = 1.0;
};

ShannonIndex shannon(const ClassDistribution& dist);
SimpsonIndex simpson(const ClassDistribution& dist);

inline double shannon_evenness(double h, std::size_t classes) {
  return h / std::log(double(classes));
}
inline double simpson_evenness(double d, std::size_t classes) { return d / double(classes); }

struct DiversityReport {
  double shannon_h = 0.0;
  double shannon_e = 0.0;
  double simpson_d = 1.0;
  double simpson_e = 1.0;
  std::size_t S = 0;
  bool shannon_e_defined = true;
  ClassDistribution distribution;
};

DiversityReport diversity_report(const ClassDistribution& dist);
DiversityReport diversity_report(const Manifest& manifest);

/// Fixed-width human-readable table of a report.
std::string format_table(const DiversityReport& report);

}  // namespace agestyle
