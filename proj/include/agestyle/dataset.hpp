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
#include "agestyle/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agestyle {

struct FaceRecord {
  std::filesystem::path image_path;
  int age = 0;
  AgeGroup group;
  std::string subject_id;

  /// Builds a record with `group` derived from `age`.
  static FaceRecord make(std::filesystem::path path, int age, std::string subject_id = {});
};

using GroupCounts = std::array<std::size_t, kNumAgeGroups>;

struct Manifest {
  std::vector<FaceRecord> records;
  std::string source_name;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  GroupCounts group_counts() const;
  /// Positions of the records in `group`, in manifest order.
  std::vector<std::size_t> indices_of(AgeGroup group) const;
  /// Throws on duplicate image paths or a group/age inconsistency.
  void validate() const;
};

class ManifestError : public std::runtime_error {
 public:
  ManifestError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  /// 1-based line number in the CSV (the header is row 1); 0 when not row-specific.
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

/// Reads a CSV with header `image_path,age[,subject_id]` (columns in any
/// order). Relative image paths resolve against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);

/// Writes the same CSV layout; paths under the manifest's directory are
/// stored relative to it.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct SplitResult {
  Manifest train;
  Manifest test;
  std::vector<std::string> warnings;
};

/// Stratified per age group; each part keeps manifest order. Groups with
/// fewer than two records go wholly to train (with a warning).
SplitResult split(const Manifest& manifest, double test_fraction, std::uint64_t seed);

struct ClassDistribution {
  std::vector<double> probabilities;

  std::size_t classes() const { return probabilities.size(); }
  /// Checks S >= 1, non-negativity and sum-to-one within 1e-9.
  void validate() const;
  static ClassDistribution from_counts(std::span<const std::size_t> counts);
};

ClassDistribution class_distribution(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic corpus: a centered disk with 1 + 2 * group concentric bright
// rings over a per-identity color, plus Gaussian noise. Ring count stands in
// for age, tint and disk radius for identity.

struct ToySpec {
  int image_size = 64;
  int samples_per_group = 200;
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  /// Per-group sample counts; overrides samples_per_group when set.
  std::optional<GroupCounts> group_counts;

  void validate() const;
};

/// Identity factors of one toy sample.
struct ToyIdentity {
  std::array<float, 3> tint{0.8f, 0.6f, 0.4f};  // bright level per channel
  double radius_fraction = 0.44;                // disk radius / image size
};

inline constexpr int toy_ring_count(AgeGroup group) { return 1 + 2 * group.index(); }

ImageTensor render_toy_image(AgeGroup group, int image_size, const ToyIdentity& identity,
                             double noise_level, std::uint64_t noise_seed);

/// Writes out_dir/group_<k>/<n>.png and out_dir/manifest.csv.
Manifest generate_toy(const ToySpec& spec, const std::filesystem::path& out_dir);

struct ToyAgeEstimate {
  double age = 15.0;
  int rings = 0;
  AgeGroup group;
  bool degenerate = false;
};

/// Counts bright rings along the angularly averaged radial profile and maps
/// the count to the nearest group's representative age.
ToyAgeEstimate toy_age_oracle(const ImageTensor& image);

}  // namespace agestyle
