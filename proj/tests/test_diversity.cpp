#include "agestyle/augment_eval.hpp"
#include "agestyle/diversity.hpp"
#include "doctest.h"

#include <cmath>
#include <random>

using namespace agestyle;

namespace {

// Direct evaluation of the index definitions, independent of the library.
double oracle_h(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0) h -= x * std::log(x);
  return h;
}

double oracle_d(const std::vector<double>& p) {
  double s = 0.0;
  for (double x : p) s += x * x;
  return 1.0 / s;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

}  // namespace

TEST_CASE("uniform distribution over four groups") {
  const auto r = diversity_report(ClassDistribution{{0.25, 0.25, 0.25, 0.25}});
  CHECK(r.shannon_h == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(std::abs(r.shannon_h - std::log(4.0)) < 1e-12);
  CHECK(r.shannon_e == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.simpson_d == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(r.simpson_e == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.S == 4);
}

TEST_CASE("degenerate distribution") {
  const auto r = diversity_report(ClassDistribution{{1.0, 0.0, 0.0, 0.0}});
  CHECK(r.shannon_h == 0.0);
  CHECK(r.simpson_d == doctest::Approx(1.0));
  CHECK(r.shannon_e == 0.0);
  CHECK(r.simpson_e == doctest::Approx(0.25));
}

TEST_CASE("skewed distribution matches direct evaluation") {
  const std::vector<double> p{0.93, 0.04, 0.02, 0.01};
  const auto r = diversity_report(ClassDistribution{p});
  CHECK(r.shannon_h == doctest::Approx(oracle_h(p)).epsilon(1e-12));
  CHECK(r.simpson_d == doctest::Approx(oracle_d(p)).epsilon(1e-12));
  // Hand evaluation: H = 0.0675 + 0.1288 + 0.0782 + 0.0461, D = 1 / 0.8670.
  CHECK(std::round(r.shannon_h * 1e4) / 1e4 == doctest::Approx(0.3205));
  CHECK(std::round(r.simpson_d * 1e4) / 1e4 == doctest::Approx(1.1534));
}

TEST_CASE("evenness from published index values") {
  CHECK(round2(shannon_evenness(1.36, 4)) == doctest::Approx(0.98));
  CHECK(round2(simpson_evenness(3.81, 4)) == doctest::Approx(0.95));
}

TEST_CASE("index bounds hold on random distributions") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> classes(1, 8);
  std::exponential_distribution<double> weight(1.0);
  std::bernoulli_distribution drop(0.2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int s = classes(rng);
    std::vector<double> p(static_cast<std::size_t>(s));
    double total = 0.0;
    for (auto& x : p) {
      x = drop(rng) ? 0.0 : weight(rng);
      total += x;
    }
    if (total == 0.0) p[0] = total = 1.0;
    for (auto& x : p) x /= total;
    const auto r = diversity_report(ClassDistribution{p});
    CHECK(r.shannon_h >= -1e-12);
    CHECK(r.shannon_h <= std::log(double(s)) + 1e-12);
    CHECK(r.simpson_d >= 1.0 - 1e-12);
    CHECK(r.simpson_d <= double(s) + 1e-9);
    CHECK(r.simpson_e > 0.0);
    CHECK(r.simpson_e <= 1.0 + 1e-12);
    CHECK(r.simpson_e == doctest::Approx(r.simpson_d / double(s)));
    if (s > 1) {
      REQUIRE(r.shannon_e_defined);
      CHECK(r.shannon_e >= -1e-12);
      CHECK(r.shannon_e <= 1.0 + 1e-12);
      CHECK(r.shannon_e == doctest::Approx(r.shannon_h / std::log(double(s))));
    }
  }
}

TEST_CASE("a single class has undefined Shannon evenness") {
  const auto r = diversity_report(ClassDistribution{{1.0}});
  CHECK_FALSE(r.shannon_e_defined);
  CHECK(r.simpson_e == 1.0);
  const auto j = to_json(r);
  CHECK(j["shannon_e"].is_null());
}

TEST_CASE("invalid distributions are rejected") {
  CHECK_THROWS_AS(diversity_report(ClassDistribution{{0.5, 0.4}}), std::invalid_argument);
  CHECK_THROWS_AS(diversity_report(ClassDistribution{}), std::invalid_argument);
}

TEST_CASE("reports from manifests and their json") {
  Manifest m;
  for (int age : {20, 21, 35, 45, 55, 56, 57, 58}) {
    m.records.push_back(FaceRecord::make(std::to_string(age) + ".png", age));
  }
  const auto r = diversity_report(m);
  const std::vector<double> p{0.25, 0.125, 0.125, 0.5};
  CHECK(r.shannon_h == doctest::Approx(oracle_h(p)));
  const auto j = to_json(r);
  for (const char* key : {"shannon_h", "shannon_e", "simpson_d", "simpson_e", "S", "distribution"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["S"] == 4);
  CHECK(format_table(r).find("ShH") != std::string::npos);
}
