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

#include "agestyle/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

namespace agestyle {

FaceRecord FaceRecord::make(std::filesystem::path path, int age, std::string subject_id) {
  return FaceRecord{std::move(path), age, AgeGroup::from_age(age), std::move(subject_id)};
}

GroupCounts Manifest::group_counts() const {
  GroupCounts counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.group.index())];
  return counts;
}

std::vector<std::size_t> Manifest::indices_of(AgeGroup group) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].group == group) out.push_back(i);
  return out;
}

void Manifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!seen.insert(r.image_path.lexically_normal().string()).second) {
      throw ManifestError("duplicate image_path " + r.image_path.string());
    }
    if (r.age < 0) throw ManifestError("negative age for " + r.image_path.string());
    if (!(r.group == AgeGroup::from_age(r.age))) {
      throw ManifestError("group does not match age for " + r.image_path.string());
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  std::string line;
  std::size_t row = 0;
  int col_path = -1, col_age = -1, col_subject = -1;
  Manifest m;
  m.source_name = path.filename().string();
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (col_path < 0) {
      for (int i = 0; i < int(fields.size()); ++i) {
        if (fields[std::size_t(i)] == "image_path") col_path = i;
        else if (fields[std::size_t(i)] == "age") col_age = i;
        else if (fields[std::size_t(i)] == "subject_id") col_subject = i;
      }
      if (col_path < 0 || col_age < 0) {
        throw ManifestError("header must contain image_path and age columns", row);
      }
      continue;
    }
    const int needed = std::max(col_path, col_age) + 1;
    if (int(fields.size()) < needed) throw ManifestError("expected at least " +
                                                         std::to_string(needed) + " columns", row);
    const std::string& age_text = fields[std::size_t(col_age)];
    int age = 0;
    auto [ptr, ec] = std::from_chars(age_text.data(), age_text.data() + age_text.size(), age);
    if (ec != std::errc() || ptr != age_text.data() + age_text.size()) {
      throw ManifestError("malformed age '" + age_text + "'", row);
    }
    if (age < 0) throw ManifestError("negative age " + age_text, row);
    std::filesystem::path img = fields[std::size_t(col_path)];
    if (img.empty()) throw ManifestError("empty image_path", row);
    if (img.is_relative()) img = base / img;
    std::string subject;
    if (col_subject >= 0 && col_subject < int(fields.size())) subject = fields[std::size_t(col_subject)];
    m.records.push_back(FaceRecord::make(img.lexically_normal(), age, std::move(subject)));
  }
  if (col_path < 0) throw ManifestError("manifest " + path.string() + " has no header");
  if (m.records.empty()) throw ManifestError("manifest " + path.string() + " is empty");
  m.validate();
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  const auto base = std::filesystem::absolute(path).parent_path().lexically_normal();
  out << "image_path,age,subject_id\n";
  for (const auto& r : manifest.records) {
    auto p = std::filesystem::absolute(r.image_path).lexically_normal();
    auto rel = p.lexically_relative(base);
    const bool inside = !rel.empty() && rel.native().rfind("..", 0) != 0;
    out << csv_field((inside ? rel : p).generic_string()) << ',' << r.age << ','
        << csv_field(r.subject_id) << '\n';
  }
  if (!out) throw ManifestError("I/O error writing manifest " + path.string());
}

SplitResult split(const Manifest& manifest, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("test_fraction must lie in (0, 1)");
  }
  SplitResult res;
  std::vector<bool> in_test(manifest.size(), false);
  std::mt19937_64 rng(seed);
  for (int g = 0; g < kNumAgeGroups; ++g) {
    auto idx = manifest.indices_of(AgeGroup(g));
    if (idx.empty()) continue;
    if (idx.size() < 2) {
      res.warnings.push_back("age group " + AgeGroup(g).label() + " has " +
                             std::to_string(idx.size()) +
                             " record(s); cannot stratify, assigned to train");
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t i = 0; i < n_test; ++i) in_test[idx[i]] = true;
  }
  res.train.source_name = manifest.source_name + ":train";
  res.test.source_name = manifest.source_name + ":test";
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    (in_test[i] ? res.test : res.train).records.push_back(manifest.records[i]);
  }
  return res;
}

void ClassDistribution::validate() const {
  if (probabilities.empty()) throw std::invalid_argument("class distribution needs S >= 1");
  double total = 0.0;
  for (double p : probabilities) {
    if (!(p >= 0.0)) throw std::invalid_argument("class probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("class probabilities sum to " + std::to_string(total));
  }
}

ClassDistribution ClassDistribution::from_counts(std::span<const std::size_t> counts) {
  const double total = double(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (counts.empty() || total == 0.0) throw std::invalid_argument("class counts are all zero");
  ClassDistribution d;
  for (auto c : counts) d.probabilities.push_back(double(c) / total);
  return d;
}

ClassDistribution class_distribution(const Manifest& manifest) {
  if (manifest.empty()) throw std::invalid_argument("class distribution of an empty manifest");
  const auto counts = manifest.group_counts();
  return ClassDistribution::from_counts(counts);
}

// ---------------------------------------------------------------------------

void ToySpec::validate() const {
  if (image_size < 16) throw std::invalid_argument("toy image_size must be >= 16");
  if (!(noise_level >= 0.0 && noise_level <= 1.0)) {
    throw std::invalid_argument("noise_level must lie in [0, 1]");
  }
  if (group_counts) {
    std::size_t total = 0;
    for (auto c : *group_counts) total += c;
    if (total == 0) throw std::invalid_argument("toy group counts are all zero");
  } else if (samples_per_group < 1) {
    throw std::invalid_argument("samples_per_group must be >= 1");
  }
}

namespace {
constexpr float kDarkLevel = -0.4f;
constexpr float kBackground = -1.0f;
}  // namespace

ImageTensor render_toy_image(AgeGroup group, int image_size, const ToyIdentity& identity,
                             double noise_level, std::uint64_t noise_seed) {
  const int rings = toy_ring_count(group);
  const Index n = image_size;
  const double center = (double(n) - 1.0) / 2.0;
  const double radius = identity.radius_fraction * double(n);
  ImageTensor img = ImageTensor::constant(Shape{1, 3, n, n}, kBackground);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      const double r = std::hypot(double(y) - center, double(x) - center);
      if (r >= radius) continue;
      const int band = int(std::floor(r / radius * 2.0 * rings));
      const bool bright = band % 2 == 0;
      for (Index c = 0; c < 3; ++c)
        img(0, c, y, x) = bright ? identity.tint[std::size_t(c)] : kDarkLevel;
    }
  if (noise_level > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, noise_level);
    for (Index i = 0; i < img.size(); ++i) {
      img.array()[i] = std::clamp(float(img.array()[i] + noise(rng)), -1.0f, 1.0f);
    }
  }
  return img;
}

Manifest generate_toy(const ToySpec& spec, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  spec.validate();
  Manifest m;
  m.source_name = "toy";
  for (int g = 0; g < kNumAgeGroups; ++g) {
    const AgeGroup group(g);
    const std::size_t count = spec.group_counts ? (*spec.group_counts)[std::size_t(g)]
                                                : std::size_t(spec.samples_per_group);
    const fs::path dir = out_dir / ("group_" + std::to_string(g));
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ImageIoError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < count; ++i) {
      // Per-sample stream so samples can be generated independently.
      std::seed_seq seq{std::uint64_t(spec.seed), std::uint64_t(g), std::uint64_t(i)};
      std::mt19937_64 rng(seq);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      ToyIdentity id;
      for (auto& t : id.tint) t = float(0.2 + 0.8 * u(rng));
      id.radius_fraction = 0.40 + 0.06 * u(rng);
      const std::uint64_t noise_seed = rng();
      ImageTensor img = render_toy_image(group, spec.image_size, id, spec.noise_level, noise_seed);
      const fs::path file = dir / (std::to_string(i) + ".png");
      write_png(img, file);
      m.records.push_back(FaceRecord::make(file, group.representative_age(),
                                           "toy-" + std::to_string(g) + "-" + std::to_string(i)));
    }
  }
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

ToyAgeEstimate toy_age_oracle(const ImageTensor& image) {
  const Shape& s = image.shape();
  ToyAgeEstimate est;
  est.group = AgeGroup(0);
  est.age = est.group.representative_age();
  const float lo = image.array().minCoeff();
  const float hi = image.array().maxCoeff();
  if (hi - lo < 1e-3f) {
    est.degenerate = true;
    return est;
  }
  // Angular average of the channel-mean intensity in half-pixel radial bins.
  const double cy = (double(s.h) - 1.0) / 2.0;
  const double cx = (double(s.w) - 1.0) / 2.0;
  const double max_r = std::hypot(cy, cx);
  const auto bins = std::size_t(std::ceil(2.0 * max_r)) + 1;
  std::vector<double> acc(bins, 0.0);
  std::vector<int> cnt(bins, 0);
  for (Index y = 0; y < s.h; ++y)
    for (Index x = 0; x < s.w; ++x) {
      const double r = std::hypot(double(y) - cy, double(x) - cx);
      const auto b = std::size_t(2.0 * r);
      double v = 0.0;
      for (Index c = 0; c < s.c; ++c) v += image(0, c, y, x);
      acc[b] += v / double(s.c);
      ++cnt[b];
    }
  std::vector<double> profile;
  for (std::size_t b = 0; b < bins; ++b)
    if (cnt[b] > 0) profile.push_back(acc[b] / cnt[b]);

  // The disk ends at the outermost bin clearly above the background.
  const double background_cut = kBackground + 0.3;
  std::size_t extent = 0;
  for (std::size_t b = 0; b < profile.size(); ++b)
    if (profile[b] > background_cut) extent = b + 1;
  if (extent == 0) {
    est.degenerate = true;
    return est;
  }
  const auto [mn, mx] = std::minmax_element(profile.begin(), profile.begin() + long(extent));
  const double mid = 0.5 * (*mn + *mx);
  const double band = 0.1 * (*mx - *mn);
  // Bright runs with hysteresis.
  int rings = 0;
  bool bright = false;
  for (std::size_t b = 0; b < extent; ++b) {
    if (!bright && profile[b] > mid + band) {
      bright = true;
      ++rings;
    } else if (bright && profile[b] < mid - band) {
      bright = false;
    }
  }
  est.rings = rings;
  const long g = std::clamp<long>(std::lround((rings - 1) / 2.0), 0, kNumAgeGroups - 1);
  est.group = AgeGroup(int(g));
  est.age = est.group.representative_age();
  return est;
}

}  // namespace agestyle
