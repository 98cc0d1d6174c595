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
#include "agestyle/diversity.hpp"
#include "agestyle/trainer.hpp"

#include "json.hpp"

#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace agestyle {

/// (input, target) -> input rendered with the target's age style.
using Translator = std::function<ImageTensor(const ImageTensor&, const ImageTensor&)>;

Translator make_translator(const AgingModel& model);

/// Decodes the image behind a record.
using ImageLoader = std::function<ImageTensor(const FaceRecord&)>;

ImageLoader file_loader(Index image_size);

// ---------------------------------------------------------------------------
// Age estimators

class EstimatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Predicts age in years. Implementations must be pure w.r.t. the image and
/// safe to call from several threads.
class AgeEstimator {
 public:
  virtual ~AgeEstimator() = default;
  virtual double estimate(const ImageTensor& image) = 0;
};

/// Ring-counting estimator for the synthetic corpus.
class ToyOracleEstimator final : public AgeEstimator {
 public:
  double estimate(const ImageTensor& image) override { return toy_age_oracle(image).age; }
};

class CallbackEstimator final : public AgeEstimator {
 public:
  explicit CallbackEstimator(std::function<double(const ImageTensor&)> fn) : fn_(std::move(fn)) {}
  double estimate(const ImageTensor& image) override { return fn_(image); }

 private:
  std::function<double(const ImageTensor&)> fn_;
};

/// Runs `<command> <png path>` per image and parses the first output line as
/// a decimal age. Images are written to `scratch_dir` first.
class SubprocessEstimator final : public AgeEstimator {
 public:
  SubprocessEstimator(std::string command, std::filesystem::path scratch_dir);
  double estimate(const ImageTensor& image) override;
  double estimate_file(const std::filesystem::path& png) const;

 private:
  std::string command_;
  std::filesystem::path scratch_dir_;
  std::atomic<std::uint64_t> counter_{0};
};

using EstimatorFactory = std::function<std::unique_ptr<AgeEstimator>()>;

/// In-process registry; "toy-oracle" is always available.
void register_estimator(const std::string& name, EstimatorFactory factory);
std::unique_ptr<AgeEstimator> make_estimator(const std::string& name);
std::vector<std::string> registered_estimators();

// ---------------------------------------------------------------------------
// Target selection

/// Chooses one of `candidates` (indices into `pool`) as the style target for
/// the record at `origin` of the manifest being processed.
using TargetPicker = std::function<std::size_t(std::span<const std::size_t> candidates,
                                               const Manifest& pool, const FaceRecord& origin,
                                               std::mt19937_64& rng)>;

TargetPicker uniform_target_picker();

/// Picks the candidate with the highest estimated age (estimates are cached
/// per pool path); for "older target" style experiments.
TargetPicker oldest_target_picker(std::shared_ptr<AgeEstimator> estimator, ImageLoader loader);

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentOptions {
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  TargetPicker picker;                       // default: uniform
  const Manifest* fallback_targets = nullptr;  // used when the test set lacks a group
  ImageLoader loader;                        // default: file_loader(64)
};

struct AugmentResult {
  Manifest manifest;
  std::vector<std::string> warnings;
};

/// Emits every record plus its translations to the three other groups. The
/// synthetic image for origin i and target j (index in its pool) lands at
/// out_dir/group_<k>/<i>_<j>.png (<i>_f<j>.png for fallback targets) and is
/// labeled with group k's representative age; out_dir/manifest.csv lists all.
AugmentResult augment(const Translator& translate, const Manifest& test_set,
                      const AugmentOptions& options);

/// Per-group counts after augmentation: every group ends at the input total.
GroupCounts augmented_counts(const GroupCounts& counts);

// ---------------------------------------------------------------------------
// Aging accuracy

struct GroupAccuracy {
  AgeGroup target;
  double mean_pred_age = 0.0;
  double std_pred_age = 0.0;
  double gt_mean = 0.0;
  double mae = 0.0;  // |mean_pred_age - gt_mean| from unrounded values
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

struct AgeAccuracyReport {
  std::vector<GroupAccuracy> per_target_group;
  std::size_t skipped = 0;
};

/// Mean and population std of `predictions` and the absolute mean error.
GroupAccuracy summarize_ages(AgeGroup target, std::span<const double> predictions, double gt_mean);

using GroupMeans = std::array<double, kNumAgeGroups>;

/// Ground-truth means of the older test groups; index 0 is unused.
inline constexpr GroupMeans kMorphGtMeans{0.0, 35.9, 44.77, 54.92};
inline constexpr GroupMeans kCacdGtMeans{0.0, 35.41, 45.45, 55.01};
GroupMeans representative_means();

struct AgingEvalOptions {
  std::uint64_t seed = 0;
  TargetPicker picker;   // default: uniform
  ImageLoader loader;    // default: file_loader(64)
};

/// Translates every group-0 source record towards each of groups 1..3 using
/// targets drawn from `targets`, then estimates ages. Estimator failures are
/// skipped and counted.
AgeAccuracyReport aging_accuracy(const Translator& translate, const Manifest& source,
                                 const Manifest& targets, AgeEstimator& estimator,
                                 const GroupMeans& gt_means, const AgingEvalOptions& options);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const DiversityReport& report);
nlohmann::json to_json(const AgeAccuracyReport& report);
std::string format_table(const AgeAccuracyReport& report);

}  // namespace agestyle
