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

#include "agestyle/augment_eval.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <unordered_map>

namespace agestyle {

namespace fs = std::filesystem;

Translator make_translator(const AgingModel& model) {
  return [&model](const ImageTensor& x, const ImageTensor& target) {
    return model.translate(x, target);
  };
}

ImageLoader file_loader(Index image_size) {
  return [image_size](const FaceRecord& r) { return load_image(r.image_path, image_size); };
}

// ---------------------------------------------------------------------------
// Estimators

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  out += "'";
  return out;
}

std::string trim(const std::string& s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

}  // namespace

SubprocessEstimator::SubprocessEstimator(std::string command, fs::path scratch_dir)
    : command_(std::move(command)), scratch_dir_(std::move(scratch_dir)) {
  if (trim(command_).empty()) throw std::invalid_argument("estimator command is empty");
  fs::create_directories(scratch_dir_);
}

double SubprocessEstimator::estimate(const ImageTensor& image) {
  const auto id = counter_.fetch_add(1);
  const auto png = scratch_dir_ / ("estimate_" + std::to_string(id) + ".png");
  write_png(image, png);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove(p, ec);
    }
  } cleanup{png};
  return estimate_file(png);
}

double SubprocessEstimator::estimate_file(const fs::path& png) const {
  const std::string cmd = command_ + " " + shell_quote(png.string());
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) throw EstimatorError("cannot start estimator: " + cmd);
  std::string output;
  char buf[256];
  while (std::fgets(buf, sizeof buf, pipe)) output += buf;
  const int status = ::pclose(pipe);
  if (status != 0) {
    throw EstimatorError("estimator exited with status " + std::to_string(status) + ": " + cmd);
  }
  const std::string line = trim(output.substr(0, output.find('\n')));
  if (line.empty()) throw EstimatorError("estimator printed nothing for " + png.string());
  char* end = nullptr;
  errno = 0;
  const double age = std::strtod(line.c_str(), &end);
  if (errno != 0 || end != line.c_str() + line.size() || !std::isfinite(age)) {
    throw EstimatorError("estimator output is not a number: '" + line + "'");
  }
  return age;
}

namespace {

struct Registry {
  std::mutex mutex;
  std::map<std::string, EstimatorFactory> factories{
      {"toy-oracle", [] { return std::make_unique<ToyOracleEstimator>(); }}};
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_estimator(const std::string& name, EstimatorFactory factory) {
  if (name.empty() || !factory) throw std::invalid_argument("estimator needs a name and a factory");
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[name] = std::move(factory);
}

std::unique_ptr<AgeEstimator> make_estimator(const std::string& name) {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  const auto it = r.factories.find(name);
  if (it == r.factories.end()) throw std::invalid_argument("unknown estimator: " + name);
  return it->second();
}

std::vector<std::string> registered_estimators() {
  auto& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> names;
  for (const auto& [name, _] : r.factories) names.push_back(name);
  return names;
}

// ---------------------------------------------------------------------------
// Target selection

TargetPicker uniform_target_picker() {
  return [](std::span<const std::size_t> candidates, const Manifest&, const FaceRecord&,
            std::mt19937_64& rng) {
    if (candidates.empty()) throw std::invalid_argument("no target candidates");
    std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
    return candidates[pick(rng)];
  };
}

TargetPicker oldest_target_picker(std::shared_ptr<AgeEstimator> estimator, ImageLoader loader) {
  if (!estimator || !loader) throw std::invalid_argument("oldest picker needs estimator and loader");
  struct Cache {
    std::mutex mutex;
    std::unordered_map<std::string, double> ages;
  };
  auto cache = std::make_shared<Cache>();
  return [estimator, loader, cache](std::span<const std::size_t> candidates, const Manifest& pool,
                                    const FaceRecord&, std::mt19937_64&) {
    if (candidates.empty()) throw std::invalid_argument("no target candidates");
    std::size_t best = candidates.front();
    double best_age = -std::numeric_limits<double>::infinity();
    for (std::size_t c : candidates) {
      const auto& rec = pool.records.at(c);
      const std::string key = rec.image_path.string();
      double age;
      {
        std::lock_guard lock(cache->mutex);
        auto it = cache->ages.find(key);
        if (it != cache->ages.end()) {
          age = it->second;
        } else {
          age = estimator->estimate(loader(rec));
          cache->ages.emplace(key, age);
        }
      }
      if (age > best_age) {
        best_age = age;
        best = c;
      }
    }
    return best;
  };
}

// ---------------------------------------------------------------------------
// Augmentation

GroupCounts augmented_counts(const GroupCounts& counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  GroupCounts out;
  out.fill(total);
  return out;
}

AugmentResult augment(const Translator& translate, const Manifest& test_set,
                      const AugmentOptions& options) {
  if (!translate) throw std::invalid_argument("augment: no translator");
  if (options.out_dir.empty()) throw std::invalid_argument("augment: no output directory");
  if (test_set.empty()) throw std::invalid_argument("augment: empty input manifest");
  const TargetPicker picker = options.picker ? options.picker : uniform_target_picker();
  const ImageLoader loader = options.loader ? options.loader : file_loader(64);

  AugmentResult result;
  struct Pool {
    const Manifest* manifest = nullptr;
    std::vector<std::size_t> candidates;
    bool fallback = false;
  };
  std::array<Pool, kNumAgeGroups> pools;
  for (int k = 0; k < kNumAgeGroups; ++k) {
    const AgeGroup g(k);
    auto& pool = pools[static_cast<std::size_t>(k)];
    pool.manifest = &test_set;
    pool.candidates = test_set.indices_of(g);
    if (!pool.candidates.empty()) continue;
    bool needed = false;
    for (const auto& r : test_set.records) needed = needed || r.group != g;
    if (!needed) continue;
    if (options.fallback_targets && !options.fallback_targets->indices_of(g).empty()) {
      pool.manifest = options.fallback_targets;
      pool.candidates = options.fallback_targets->indices_of(g);
      pool.fallback = true;
      result.warnings.push_back("group " + g.label() +
                                " is empty in the input; drawing targets from the fallback set");
    } else {
      throw std::invalid_argument("augment: no target images for group " + g.label());
    }
  }

  for (int k = 0; k < kNumAgeGroups; ++k) {
    fs::create_directories(options.out_dir / ("group_" + std::to_string(k)));
  }

  std::mt19937_64 rng(options.seed);
  auto& out = result.manifest;
  out.source_name = test_set.source_name.empty() ? "augmented" : test_set.source_name + "+augmented";
  out.records.reserve(test_set.size() * kNumAgeGroups);
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& origin = test_set.records[i];
    out.records.push_back(origin);
    const ImageTensor x = loader(origin);
    for (int k = 0; k < kNumAgeGroups; ++k) {
      const AgeGroup g(k);
      if (g == origin.group) continue;
      const auto& pool = pools[static_cast<std::size_t>(k)];
      const std::size_t j = picker(pool.candidates, *pool.manifest, origin, rng);
      const ImageTensor y = translate(x, loader(pool.manifest->records.at(j)));
      const auto name = std::to_string(i) + "_" + (pool.fallback ? "f" : "") + std::to_string(j) + ".png";
      const auto path = options.out_dir / ("group_" + std::to_string(k)) / name;
      write_png(y, path);
      out.records.push_back(FaceRecord::make(path, g.representative_age(), origin.subject_id));
    }
  }
  save_manifest(out, options.out_dir / "manifest.csv");
  return result;
}

// ---------------------------------------------------------------------------
// Aging accuracy

GroupMeans representative_means() {
  GroupMeans m{};
  for (int k = 0; k < kNumAgeGroups; ++k) m[static_cast<std::size_t>(k)] = AgeGroup(k).representative_age();
  return m;
}

GroupAccuracy summarize_ages(AgeGroup target, std::span<const double> predictions, double gt_mean) {
  GroupAccuracy a;
  a.target = target;
  a.gt_mean = gt_mean;
  a.evaluated = predictions.size();
  if (predictions.empty()) {
    a.mean_pred_age = a.std_pred_age = a.mae = std::numeric_limits<double>::quiet_NaN();
    return a;
  }
  double sum = 0.0;
  for (double p : predictions) sum += p;
  a.mean_pred_age = sum / double(predictions.size());
  double ss = 0.0;
  for (double p : predictions) ss += (p - a.mean_pred_age) * (p - a.mean_pred_age);
  a.std_pred_age = std::sqrt(ss / double(predictions.size()));
  a.mae = std::abs(a.mean_pred_age - gt_mean);
  return a;
}

AgeAccuracyReport aging_accuracy(const Translator& translate, const Manifest& source,
                                 const Manifest& targets, AgeEstimator& estimator,
                                 const GroupMeans& gt_means, const AgingEvalOptions& options) {
  if (!translate) throw std::invalid_argument("aging_accuracy: no translator");
  const TargetPicker picker = options.picker ? options.picker : uniform_target_picker();
  const ImageLoader loader = options.loader ? options.loader : file_loader(64);
  const auto src = source.indices_of(AgeGroup(0));
  if (src.empty()) throw std::invalid_argument("aging_accuracy: source has no group 0 records");

  std::mt19937_64 rng(options.seed);
  AgeAccuracyReport report;
  for (int k = 1; k < kNumAgeGroups; ++k) {
    const AgeGroup g(k);
    const auto candidates = targets.indices_of(g);
    std::vector<double> preds;
    std::size_t skipped = 0;
    if (candidates.empty()) {
      skipped = src.size();
    } else {
      for (std::size_t i : src) {
        const auto& origin = source.records[i];
        const std::size_t j = picker(candidates, targets, origin, rng);
        const ImageTensor y = translate(loader(origin), loader(targets.records.at(j)));
        try {
          const double age = estimator.estimate(y);
          if (!std::isfinite(age)) {
            ++skipped;
            continue;
          }
          preds.push_back(age);
        } catch (const EstimatorError&) {
          ++skipped;
        }
      }
    }
    auto acc = summarize_ages(g, preds, gt_means[static_cast<std::size_t>(k)]);
    acc.skipped = skipped;
    report.skipped += skipped;
    report.per_target_group.push_back(acc);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json to_json(const DiversityReport& r) {
  nlohmann::json j;
  j["S"] = r.S;
  j["shannon_h"] = r.shannon_h;
  j["shannon_e"] = r.shannon_e_defined ? nlohmann::json(r.shannon_e) : nlohmann::json(nullptr);
  j["simpson_d"] = r.simpson_d;
  j["simpson_e"] = r.simpson_e;
  j["distribution"] = r.distribution.probabilities;
  return j;
}

nlohmann::json to_json(const AgeAccuracyReport& r) {
  auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : r.per_target_group) {
    groups.push_back({{"target_group", g.target.index()},
                      {"label", g.target.label()},
                      {"mean_pred_age", number(g.mean_pred_age)},
                      {"std_pred_age", number(g.std_pred_age)},
                      {"gt_mean", number(g.gt_mean)},
                      {"mae", number(g.mae)},
                      {"evaluated", g.evaluated},
                      {"skipped", g.skipped}});
  }
  return {{"per_target_group", groups}, {"skipped", r.skipped}};
}

std::string format_table(const AgeAccuracyReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(8) << "target" << std::right << std::setw(10) << "mean" << std::setw(8)
     << "std" << std::setw(10) << "gt" << std::setw(8) << "mae" << std::setw(8) << "n" << std::setw(9)
     << "skipped" << "\n";
  for (const auto& g : r.per_target_group) {
    os << std::left << std::setw(8) << g.target.label() << std::right << std::setw(10)
       << g.mean_pred_age << std::setw(8) << g.std_pred_age << std::setw(10) << g.gt_mean
       << std::setw(8) << g.mae << std::setw(8) << g.evaluated << std::setw(9) << g.skipped << "\n";
  }
  return os.str();
}

}  // namespace agestyle
