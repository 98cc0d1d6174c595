#include "agestyle/augment_eval.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <cmath>
#include <map>

using namespace agestyle;
using agestyle::testing::TempDir;

namespace {

const std::array<int, 4> kAges{20, 35, 42, 66};

Manifest manifest_with(const GroupCounts& counts) {
  Manifest m;
  int n = 0;
  for (int g = 0; g < kNumAgeGroups; ++g) {
    for (std::size_t i = 0; i < counts[std::size_t(g)]; ++i, ++n) {
      m.records.push_back(FaceRecord::make("in/" + std::to_string(n) + ".png", kAges[std::size_t(g)],
                                           "s" + std::to_string(n)));
    }
  }
  return m;
}

// Encodes the record's group in the pixel value so translations can be traced.
ImageTensor tagged(const FaceRecord& r) {
  return ImageTensor::constant(Shape{1, 3, 8, 8}, -0.75f + 0.5f * float(r.group.index()));
}

Translator copy_target() {
  return [](const ImageTensor&, const ImageTensor& target) { return target; };
}

AugmentOptions options_for(const std::filesystem::path& out, std::uint64_t seed) {
  AugmentOptions o;
  o.out_dir = out;
  o.seed = seed;
  o.loader = tagged;
  return o;
}

}  // namespace

TEST_CASE("augmentation evens out every group (brute force)") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> count(1, 6);
  TempDir dir("augment_bf");
  for (int trial = 0; trial < 50; ++trial) {
    GroupCounts counts;
    for (auto& c : counts) c = std::size_t(count(rng));
    const Manifest in = manifest_with(counts);
    const auto out_dir = dir.path() / std::to_string(trial);
    const auto res = augment(copy_target(), in, options_for(out_dir, std::uint64_t(trial)));

    // Enumerate the output instead of trusting the counting argument.
    GroupCounts got{};
    for (const auto& r : res.manifest.records) ++got[std::size_t(r.group.index())];
    const std::size_t total = in.size();
    CHECK(res.manifest.size() == 4 * total);
    for (int g = 0; g < kNumAgeGroups; ++g) {
      CHECK(got[std::size_t(g)] == total);
      CHECK(got[std::size_t(g)] == counts[std::size_t(g)] + (total - counts[std::size_t(g)]));
    }
    CHECK(augmented_counts(counts) == got);
    CHECK(load_manifest(out_dir / "manifest.csv").size() == 4 * total);
  }
}

TEST_CASE("synthetic records are labeled, named and rendered from the target group") {
  TempDir dir("augment_labels");
  const Manifest in = manifest_with(GroupCounts{2, 1, 1, 1});
  const auto res = augment(copy_target(), in, options_for(dir.path(), 3));
  REQUIRE(res.manifest.size() == 20);
  std::map<std::string, int> per_origin;
  for (std::size_t i = 0; i < res.manifest.size(); ++i) {
    const auto& r = res.manifest.records[i];
    if (r.image_path.parent_path().parent_path() != dir.path()) continue;  // an original
    const int g = r.group.index();
    CHECK(r.age == AgeGroup(g).representative_age());
    CHECK(r.image_path.parent_path().filename() == "group_" + std::to_string(g));
    const auto stem = r.image_path.stem().string();
    const auto origin = std::stoul(stem.substr(0, stem.find('_')));
    CHECK(in.records[origin].group != r.group);
    CHECK(r.subject_id == in.records[origin].subject_id);
    ++per_origin[stem.substr(0, stem.find('_'))];
    const ImageTensor img = read_png(r.image_path);
    CHECK(std::abs(img.array()[0] - (-0.75f + 0.5f * float(g))) < 0.01f);
  }
  CHECK(per_origin.size() == in.size());
  for (const auto& [origin, n] : per_origin) CHECK(n == 3);
}

TEST_CASE("augmentation is seeded") {
  TempDir a("augment_seed_a"), b("augment_seed_b");
  const Manifest in = manifest_with(GroupCounts{3, 3, 3, 3});
  const auto r1 = augment(copy_target(), in, options_for(a.path(), 9));
  const auto r2 = augment(copy_target(), in, options_for(b.path(), 9));
  REQUIRE(r1.manifest.size() == r2.manifest.size());
  for (std::size_t i = 0; i < r1.manifest.size(); ++i) {
    CHECK(r1.manifest.records[i].image_path.filename() == r2.manifest.records[i].image_path.filename());
  }
}

TEST_CASE("missing target groups fall back to another pool") {
  TempDir dir("augment_fallback");
  const Manifest in = manifest_with(GroupCounts{2, 2, 0, 1});
  CHECK_THROWS_AS(augment(copy_target(), in, options_for(dir.path() / "x", 1)), std::invalid_argument);

  const Manifest pool = manifest_with(GroupCounts{1, 1, 2, 1});
  auto opts = options_for(dir.path() / "y", 1);
  opts.fallback_targets = &pool;
  const auto res = augment(copy_target(), in, opts);
  CHECK(res.manifest.size() == 20);
  CHECK(res.warnings.size() == 1);
  bool saw_fallback = false;
  for (const auto& r : res.manifest.records) {
    if (r.group.index() == 2) {
      CHECK(r.image_path.stem().string().find("_f") != std::string::npos);
      saw_fallback = true;
    }
  }
  CHECK(saw_fallback);
}

TEST_CASE("augmenting nothing is an error") {
  TempDir dir("augment_empty");
  CHECK_THROWS_AS(augment(copy_target(), Manifest{}, options_for(dir.path(), 1)), std::invalid_argument);
}

TEST_CASE("mean absolute error uses unrounded means") {
  const std::vector<double> preds{56.0, 57.24};
  const auto a = summarize_ages(AgeGroup(3), preds, 54.92);
  CHECK(a.mean_pred_age == doctest::Approx(56.62));
  CHECK(a.std_pred_age == doctest::Approx(0.62));
  CHECK(a.mae == doctest::Approx(1.70));
  CHECK(std::abs(a.mae - 1.69) <= 0.02);
  CHECK(a.evaluated == 2);
  const auto empty = summarize_ages(AgeGroup(1), std::vector<double>{}, 30.0);
  CHECK(std::isnan(empty.mae));
}

TEST_CASE("a constant estimator at the ground truth scores zero error") {
  const Manifest source = manifest_with(GroupCounts{4, 0, 0, 0});
  const Manifest targets = manifest_with(GroupCounts{0, 2, 2, 2});
  const GroupMeans gt{0.0, 36.0, 46.0, 56.0};
  int calls = 0;
  CallbackEstimator est([&](const ImageTensor& img) {
    ++calls;
    const int g = int(std::lround((img.array()[0] + 0.75f) / 0.5f));
    return gt[std::size_t(g)];
  });
  AgingEvalOptions opts;
  opts.loader = tagged;
  const auto r = aging_accuracy(copy_target(), source, targets, est, gt, opts);
  CHECK(calls == 12);
  REQUIRE(r.per_target_group.size() == 3);
  for (const auto& g : r.per_target_group) {
    CHECK(g.mae == 0.0);
    CHECK(g.std_pred_age == 0.0);
    CHECK(g.evaluated == 4);
  }
  CHECK(r.skipped == 0);
}

TEST_CASE("estimator failures are skipped and counted") {
  const Manifest source = manifest_with(GroupCounts{3, 1, 0, 0});
  const Manifest targets = manifest_with(GroupCounts{0, 1, 1, 1});
  int calls = 0;
  CallbackEstimator est([&](const ImageTensor&) -> double {
    if (++calls % 3 == 0) throw EstimatorError("no face found");
    return 40.0;
  });
  AgingEvalOptions opts;
  opts.loader = tagged;
  const auto r = aging_accuracy(copy_target(), source, targets, est, representative_means(), opts);
  CHECK(r.skipped == 3);
  std::size_t evaluated = 0;
  for (const auto& g : r.per_target_group) evaluated += g.evaluated;
  CHECK(evaluated == 6);
  const auto j = to_json(r);
  CHECK(j["skipped"] == 3);
  CHECK(j["per_target_group"].size() == 3);
  CHECK(j["per_target_group"][0].contains("mean_pred_age"));
  CHECK(format_table(r).find("50+") != std::string::npos);

  CHECK_THROWS_AS(aging_accuracy(copy_target(), targets, targets, est, representative_means(), opts),
                  std::invalid_argument);
}

TEST_CASE("subprocess estimator protocol") {
  TempDir dir("estimator");
  const auto png = dir.path() / "face.png";
  write_png(ImageTensor::constant(Shape{1, 3, 4, 4}, 0.0f), png);

  SubprocessEstimator ok("sh -c 'test -f \"$1\" && echo \" 42.5 \"' sh", dir.path() / "scratch");
  CHECK(ok.estimate_file(png) == 42.5);
  CHECK(ok.estimate(ImageTensor::constant(Shape{1, 3, 4, 4}, 0.0f)) == 42.5);

  SubprocessEstimator words("sh -c 'echo unknown' sh", dir.path() / "scratch");
  CHECK_THROWS_AS(words.estimate_file(png), EstimatorError);
  SubprocessEstimator fails("sh -c 'exit 3' sh", dir.path() / "scratch");
  CHECK_THROWS_AS(fails.estimate_file(png), EstimatorError);
  CHECK_THROWS_AS(SubprocessEstimator("  ", dir.path()), std::invalid_argument);
}

TEST_CASE("estimator registry") {
  auto toy = make_estimator("toy-oracle");
  REQUIRE(toy);
  register_estimator("constant-30", [] {
    return std::make_unique<CallbackEstimator>([](const ImageTensor&) { return 30.0; });
  });
  CHECK(make_estimator("constant-30")->estimate(ImageTensor(Shape{1, 3, 2, 2})) == 30.0);
  CHECK_THROWS_AS(make_estimator("nope"), std::invalid_argument);
  const auto names = registered_estimators();
  CHECK(std::find(names.begin(), names.end(), "toy-oracle") != names.end());
}

TEST_CASE("the oldest-target picker chooses the highest estimate") {
  const Manifest pool = manifest_with(GroupCounts{1, 1, 1, 1});
  auto est = std::make_shared<CallbackEstimator>(
      [](const ImageTensor& img) { return double(img.array()[0]); });
  const auto pick = oldest_target_picker(est, tagged);
  std::mt19937_64 rng(1);
  const std::vector<std::size_t> candidates{0, 2, 1};
  CHECK(pick(candidates, pool, pool.records[0], rng) == 2);
  const std::vector<std::size_t> all{3, 0};
  CHECK(pick(all, pool, pool.records[0], rng) == 3);
}

TEST_CASE("the uniform picker covers every candidate") {
  const Manifest pool = manifest_with(GroupCounts{4, 0, 0, 0});
  const auto pick = uniform_target_picker();
  std::mt19937_64 rng(5);
  const std::vector<std::size_t> c{0, 1, 2, 3};
  std::array<int, 4> hits{};
  for (int i = 0; i < 400; ++i) ++hits[pick(c, pool, pool.records[0], rng)];
  for (int h : hits) CHECK(h > 60);
  CHECK_THROWS(pick(std::vector<std::size_t>{}, pool, pool.records[0], rng));
}
