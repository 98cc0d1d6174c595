#include "agestyle/dataset.hpp"
#include "agestyle/trainer.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using namespace agestyle;
using agestyle::testing::read_file;
using agestyle::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run_info.json") continue;
    files[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return files;
}

void write_uniform_manifest(const fs::path& path) {
  Manifest m;
  for (int age : {20, 35, 45, 60}) m.records.push_back(FaceRecord::make(std::to_string(age) + ".png", age));
  save_manifest(m, path);
}

}  // namespace

TEST_CASE("cli: audit-diversity of a uniform manifest") {
  TempDir dir("cli_audit");
  write_uniform_manifest(dir.path() / "m.csv");
  const auto r = run_cli({"audit-diversity", "--manifest", (dir.path() / "m.csv").string(), "--out",
                          (dir.path() / "out").string()});
  REQUIRE(r.code == cli::kExitOk);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["shannon_h"].get<double>() == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(j["simpson_d"].get<double>() == doctest::Approx(4.0));
  CHECK(fs::exists(dir.path() / "out" / "diversity.json"));

  const auto t = run_cli({"audit-diversity", "--manifest", (dir.path() / "m.csv").string(), "--format", "table"});
  CHECK(t.code == cli::kExitOk);
  CHECK(t.out.find("ShH") != std::string::npos);
}

TEST_CASE("cli: usage errors exit with code 1") {
  TempDir dir("cli_errors");
  CHECK(run_cli({}).code == cli::kExitUserError);
  CHECK(run_cli({"audit-diversity", "--manifest", (dir.path() / "none.csv").string()}).code ==
        cli::kExitUserError);
  write_uniform_manifest(dir.path() / "m.csv");
  CHECK(run_cli({"audit-diversity", "--manifest", (dir.path() / "m.csv").string(), "--bogus"}).code ==
        cli::kExitUserError);
  CHECK(run_cli({"audit-diversity", "--manifest", (dir.path() / "m.csv").string(), "--format", "xml"}).code ==
        cli::kExitUserError);
  std::ofstream(dir.path() / "bad.csv") << "image_path,age\na.png,old\n";
  const auto bad = run_cli({"audit-diversity", "--manifest", (dir.path() / "bad.csv").string()});
  CHECK(bad.code == cli::kExitUserError);
  CHECK(bad.err.find("row 2") != std::string::npos);
  const auto help = run_cli({"train", "--help"});
  CHECK(help.code == cli::kExitOk);
  CHECK(help.out.find("--lambda_rec") != std::string::npos);
}

TEST_CASE("cli: toygen is reproducible and records its seed") {
  TempDir dir("cli_toygen");
  const auto args = [&](const std::string& sub) {
    return std::vector<std::string>{"toygen", "--out", (dir.path() / sub).string(), "--seed", "11",
                                    "--image_size", "16", "--samples_per_group", "3",
                                    "--test_fraction", "0.34"};
  };
  REQUIRE(run_cli(args("a")).code == cli::kExitOk);
  REQUIRE(run_cli(args("b")).code == cli::kExitOk);
  CHECK(tree_contents(dir.path() / "a") == tree_contents(dir.path() / "b"));
  CHECK(load_manifest(dir.path() / "a" / "manifest.csv").size() == 12);
  CHECK(load_manifest(dir.path() / "a" / "test.csv").size() == 4);
  const auto info = nlohmann::json::parse(read_file(dir.path() / "a" / "run_info.json"));
  CHECK(info["seed"] == 11);

  const auto unseeded = run_cli({"toygen", "--out", (dir.path() / "c").string(), "--image_size", "16",
                                 "--samples_per_group", "1"});
  CHECK(unseeded.code == cli::kExitOk);
  CHECK(unseeded.err.find("seed: ") != std::string::npos);
  CHECK(nlohmann::json::parse(read_file(dir.path() / "c" / "run_info.json"))["seed"].is_number());
}

TEST_CASE("cli: config files feed the active subcommand") {
  TempDir dir("cli_config");
  {
    std::ofstream f(dir.path() / "c.toml");
    f << "seed = 3\nsamples_per_group = 1\nimage_size = 16\n[toygen]\nimage_size = 24\n"
         "[train]\nsteps = 5\n";
  }
  const auto r = run_cli({"toygen", "--config", (dir.path() / "c.toml").string(), "--out",
                          (dir.path() / "a").string()});
  REQUIRE(r.code == cli::kExitOk);
  const Manifest m = load_manifest(dir.path() / "a" / "manifest.csv");
  CHECK(m.size() == 4);
  CHECK(read_png(m.records[0].image_path).shape() == Shape{1, 3, 24, 24});

  const auto flag_wins = run_cli({"toygen", "--config", (dir.path() / "c.toml").string(), "--out",
                                  (dir.path() / "b").string(), "--image_size", "32"});
  REQUIRE(flag_wins.code == cli::kExitOk);
  CHECK(read_png(load_manifest(dir.path() / "b" / "manifest.csv").records[0].image_path).shape() ==
        Shape{1, 3, 32, 32});

  std::ofstream(dir.path() / "bad.toml") << "no_such_key = 1\n";
  CHECK(run_cli({"toygen", "--config", (dir.path() / "bad.toml").string(), "--out",
                 (dir.path() / "c").string()})
            .code == cli::kExitUserError);
}

TEST_CASE("cli: train, resume, translate and augment a tiny model") {
  TempDir dir("cli_pipeline");
  const auto data = dir.path() / "data";
  REQUIRE(run_cli({"toygen", "--out", data.string(), "--seed", "2", "--image_size", "16",
                   "--group_counts", "8,4,4,4"})
              .code == cli::kExitOk);
  const auto manifest = (data / "manifest.csv").string();
  const auto run_dir = dir.path() / "run";
  const std::vector<std::string> train_args{"train", "--manifest", manifest, "--out", run_dir.string(),
                                            "--seed", "5", "--image_size", "16", "--n_layers", "2",
                                            "--base_channels", "4", "--batch_size", "2", "--steps", "1"};
  const auto t = run_cli(train_args);
  REQUIRE(t.code == cli::kExitOk);
  const auto ckpt = (run_dir / "checkpoint_final.bin").string();
  CHECK(fs::exists(ckpt));

  SUBCASE("resume may only extend the schedule") {
    const auto more = run_cli({"train", "--manifest", manifest, "--out", run_dir.string(), "--resume", ckpt,
                               "--steps", "2"});
    CHECK(more.code == cli::kExitOk);
    CHECK(load_checkpoint(ckpt).step == 2);
    CHECK(run_cli({"train", "--manifest", manifest, "--out", run_dir.string(), "--resume", ckpt,
                   "--learning_rate", "0.1", "--steps", "3"})
              .code == cli::kExitUserError);
    CHECK(run_cli({"train", "--manifest", manifest, "--out", run_dir.string(), "--resume", ckpt, "--seed",
                   "9", "--steps", "3"})
              .code == cli::kExitUserError);
  }

  SUBCASE("invalid configurations are user errors") {
    auto bad = train_args;
    bad.back() = "-1";
    CHECK(run_cli(bad).code == cli::kExitUserError);
    std::ofstream(dir.path() / "junk.bin") << "junk";
    CHECK(run_cli({"translate", "--checkpoint", (dir.path() / "junk.bin").string(), "--input",
                   data.string() + "/group_0/0.png", "--target", data.string() + "/group_3/0.png"})
              .code == cli::kExitUserError);
  }

  SUBCASE("translate writes one image") {
    const Manifest m = load_manifest(data / "manifest.csv");
    const auto in = m.records[0].image_path, tgt = m.records.back().image_path;
    const auto r = run_cli({"translate", "--checkpoint", ckpt, "--input", in.string(), "--target",
                            tgt.string(), "--out", (dir.path() / "tr").string()});
    REQUIRE(r.code == cli::kExitOk);
    const auto expected = dir.path() / "tr" / (in.stem().string() + "_to_" + tgt.stem().string() + ".png");
    CHECK(read_png(expected).shape() == Shape{1, 3, 16, 16});
  }

  SUBCASE("augment balances the manifest") {
    const auto r = run_cli({"augment", "--checkpoint", ckpt, "--manifest", manifest, "--out",
                            (dir.path() / "aug").string(), "--seed", "1"});
    REQUIRE(r.code == cli::kExitOk);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["output_records"] == 80);
    CHECK(load_manifest(dir.path() / "aug" / "manifest.csv").group_counts() == GroupCounts{20, 20, 20, 20});
    CHECK(j["after"]["shannon_e"].get<double>() == doctest::Approx(1.0));
    CHECK(j["before"]["shannon_e"].get<double>() < 0.99);
    CHECK(run_cli({"augment", "--checkpoint", ckpt, "--manifest", manifest, "--out", data.string(),
                   "--seed", "1"})
              .code == cli::kExitUserError);
  }

  SUBCASE("eval-age with the toy oracle") {
    const auto r = run_cli({"eval-age", "--checkpoint", ckpt, "--source", manifest, "--out",
                            (dir.path() / "eval").string(), "--seed", "1", "--estimator", "toy-oracle"});
    REQUIRE(r.code == cli::kExitOk);
    const auto j = nlohmann::json::parse(read_file(dir.path() / "eval" / "age_accuracy.json"));
    CHECK(j["per_target_group"].size() == 3);
    CHECK(run_cli({"eval-age", "--checkpoint", ckpt, "--source", manifest, "--out",
                   (dir.path() / "eval2").string(), "--estimator", "nope"})
              .code == cli::kExitUserError);
  }
}
