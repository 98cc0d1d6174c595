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

#include "agestyle/diversity.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace agestyle {

ShannonIndex shannon(const ClassDistribution& dist) {
  dist.validate();
  ShannonIndex out;
  for (double p : dist.probabilities) {
    if (p > 0.0) out.h -= p * std::log(p);
  }
  if (out.h < 0.0) out.h = 0.0;  // -0 from a single unit class
  const std::size_t s = dist.classes();
  if (s == 1) {
    out.evenness_defined = false;
    out.e = 0.0;
  } else {
    out.e = shannon_evenness(out.h, s);
  }
  return out;
}

SimpsonIndex simpson(const ClassDistribution& dist) {
  dist.validate();
  double sum_sq = 0.0;
  for (double p : dist.probabilities) sum_sq += p * p;
  if (sum_sq <= 0.0) throw std::invalid_argument("simpson index of an all-zero distribution");
  SimpsonIndex out;
  out.d = 1.0 / sum_sq;
  out.e = simpson_evenness(out.d, dist.classes());
  return out;
}

DiversityReport diversity_report(const ClassDistribution& dist) {
  const auto sh = shannon(dist);
  const auto si = simpson(dist);
  DiversityReport r;
  r.shannon_h = sh.h;
  r.shannon_e = sh.e;
  r.shannon_e_defined = sh.evenness_defined;
  r.simpson_d = si.d;
  r.simpson_e = si.e;
  r.S = dist.classes();
  r.distribution = dist;
  return r;
}

DiversityReport diversity_report(const Manifest& manifest) {
  return diversity_report(class_distribution(manifest));
}

std::string format_table(const DiversityReport& report) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %8s\n", "index", "value");
  os << line;
  std::snprintf(line, sizeof line, "%-10s %8.4f\n", "ShH", report.shannon_h);
  os << line;
  if (report.shannon_e_defined) {
    std::snprintf(line, sizeof line, "%-10s %8.4f\n", "ShE", report.shannon_e);
  } else {
    std::snprintf(line, sizeof line, "%-10s %8s\n", "ShE", "n/a");
  }
  os << line;
  std::snprintf(line, sizeof line, "%-10s %8.4f\n", "SiD", report.simpson_d);
  os << line;
  std::snprintf(line, sizeof line, "%-10s %8.4f\n", "SiE", report.simpson_e);
  os << line;
  std::snprintf(line, sizeof line, "%-10s %8zu\n", "S", report.S);
  os << line;
  for (std::size_t i = 0; i < report.distribution.probabilities.size(); ++i) {
    const std::string label =
        i < std::size_t(kNumAgeGroups) ? AgeGroup(int(i)).label() : "class " + std::to_string(i);
    std::snprintf(line, sizeof line, "p[%-7s] %8.4f\n", label.c_str(),
                  report.distribution.probabilities[i]);
    os << line;
  }
  return os.str();
}

}  // namespace agestyle
