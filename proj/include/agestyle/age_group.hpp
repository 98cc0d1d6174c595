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

#include <array>
#include <limits>
#include <stdexcept>
#include <string>

namespace agestyle {

inline constexpr int kNumAgeGroups = 4;

/// Ordinal age bin: [0,30), [30,40), [40,50), [50,inf).
class AgeGroup {
 public:
  constexpr AgeGroup() = default;
  explicit constexpr AgeGroup(int index) : index_(index) {
    if (index < 0 || index >= kNumAgeGroups) {
      throw std::out_of_range("age group index out of range: " + std::to_string(index));
    }
  }

  static constexpr AgeGroup from_age(int age) {
    if (age < 0) throw std::invalid_argument("negative age");
    if (age < 30) return AgeGroup(0);
    if (age < 40) return AgeGroup(1);
    if (age < 50) return AgeGroup(2);
    return AgeGroup(3);
  }

  constexpr int index() const { return index_; }
  constexpr int lower_bound() const { return kLower[static_cast<std::size_t>(index_)]; }
  /// Exclusive; max int for the open-ended oldest group.
  constexpr int upper_bound() const {
    return index_ + 1 < kNumAgeGroups ? kLower[static_cast<std::size_t>(index_ + 1)]
                                      : std::numeric_limits<int>::max();
  }
  /// Age assigned to synthetic records of this group.
  constexpr int representative_age() const {
    return kRepresentative[static_cast<std::size_t>(index_)];
  }

  std::string label() const {
    switch (index_) {
      case 0: return "0-29";
      case 1: return "30-39";
      case 2: return "40-49";
      default: return "50+";
    }
  }

  constexpr bool operator==(const AgeGroup&) const = default;
  constexpr auto operator<=>(const AgeGroup&) const = default;

 private:
  static constexpr std::array<int, kNumAgeGroups> kLower{0, 30, 40, 50};
  static constexpr std::array<int, kNumAgeGroups> kRepresentative{15, 35, 45, 55};
  int index_ = 0;
};

}  // namespace agestyle
