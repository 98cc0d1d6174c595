#include "agestyle/trainer.hpp"
#include "doctest.h"
#include "test_util.hpp"

#include <fstream>
#include <sstream>

using namespace agestyle;
using agestyle::testing::read_file;
using agestyle::testing::TempDir;

namespace {

TrainConfig tiny_config(std::uint64_t seed = 1) {
  TrainConfig c;
  c.image_size = 16;
  c.n_layers = 2;
  c.base_channels = 4;
  c.batch_size = 2;
  c.steps = 4;
  c.seed = seed;
  return c;
}

struct TinyData {
  Manifest manifest;
  ImageStore images{std::vector<ImageTensor>{}};

  explicit TinyData(const GroupCounts& counts = {3, 3, 3, 3}) {
    std::vector<ImageTensor> imgs;
    const std::array<int, 4> ages{20, 35, 45, 60};
    int n = 0;
    for (int g = 0; g < kNumAgeGroups; ++g) {
      for (std::size_t i = 0; i < counts[std::size_t(g)]; ++i, ++n) {
        manifest.records.push_back(
            FaceRecord::make("mem/" + std::to_string(n) + ".png", ages[std::size_t(g)]));
        ToyIdentity id;
        id.tint = {0.3f + 0.1f * float(i), 0.8f, 0.5f};
        imgs.push_back(render_toy_image(AgeGroup(g), 16, id, 0.05, std::uint64_t(n)));
      }
    }
    images = ImageStore(std::move(imgs));
  }
};

std::string checkpoint_bytes(const TrainState& s) {
  std::ostringstream os;
  write_checkpoint(s, os);
  return os.str();
}

}  // namespace

TEST_CASE("train config validation") {
  CHECK_NOTHROW(tiny_config().validate());
  auto c = tiny_config();
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.image_size = 18;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = tiny_config();
  c.weights.lambda_gp = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(TrainState{c}, std::invalid_argument);
}

TEST_CASE("target groups are uniform despite imbalance") {
  const TinyData data(GroupCounts{40, 5, 10, 5});
  std::mt19937_64 rng(3);
  const int draws = 8000;
  std::array<double, 4> target{}, source{};
  for (int i = 0; i < draws; ++i) {
    const auto p = sample_pair(data.manifest, rng);
    CHECK(data.manifest.records[p.target].group == p.target_group);
    CHECK(data.manifest.records[p.source].group == p.source_group);
    ++target[std::size_t(p.target_group.index())];
    ++source[std::size_t(p.source_group.index())];
  }
  // Chi-square with 3 degrees of freedom; 16.27 is the 0.001 critical value.
  double chi_t = 0.0, chi_s = 0.0;
  const std::array<double, 4> source_p{40.0 / 60, 5.0 / 60, 10.0 / 60, 5.0 / 60};
  for (std::size_t g = 0; g < 4; ++g) {
    const double et = draws / 4.0;
    chi_t += (target[g] - et) * (target[g] - et) / et;
    const double es = draws * source_p[g];
    chi_s += (source[g] - es) * (source[g] - es) / es;
  }
  CHECK(chi_t < 16.27);
  CHECK(chi_s < 16.27);
}

TEST_CASE("empty target groups are redrawn or rejected") {
  const TinyData data(GroupCounts{3, 0, 2, 0});
  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const auto g = sample_pair(data.manifest, rng).target_group.index();
    CHECK((g == 0 || g == 2));
  }
  bool threw = false;
  for (int i = 0; i < 50 && !threw; ++i) {
    try {
      sample_pair(data.manifest, rng, true);
    } catch (const SamplingError&) {
      threw = true;
    }
  }
  CHECK(threw);
  CHECK_THROWS_AS(sample_pair(Manifest{}, rng), SamplingError);
}

TEST_CASE("batches stack sampled pairs") {
  const TinyData data;
  std::mt19937_64 rng(5);
  const auto b = make_batch(data.manifest, data.images, rng, 3);
  CHECK(b.x_a.shape() == Shape{3, 3, 16, 16});
  CHECK(b.x_b.shape() == Shape{3, 3, 16, 16});
  CHECK(b.groups_a.size() == 3);
  CHECK(b.groups_b.size() == 3);
}

TEST_CASE("each update touches only its own network") {
  const TinyData data;
  TrainState s(tiny_config());
  const auto batch = make_batch(data.manifest, data.images, s.rng, 2);
  const auto g0 = s.model.generator().parameters().hash();
  const auto d0 = s.model.discriminator().parameters().hash();
  LossParts parts;
  discriminator_update(s, batch, parts);
  const auto d1 = s.model.discriminator().parameters().hash();
  CHECK(s.model.generator().parameters().hash() == g0);
  CHECK(d1 != d0);
  generator_update(s, batch, parts);
  CHECK(s.model.discriminator().parameters().hash() == d1);
  CHECK(s.model.generator().parameters().hash() != g0);
  CHECK(s.step == 0);

  const auto r = train_step(s, batch);
  CHECK(s.step == 1);
  CHECK(r.total_D == doctest::Approx(-r.adv + r.gp));
  CHECK(r.total_G == doctest::Approx(r.fm + 0.01 * r.rec + 1e-4 * r.id));
}

TEST_CASE("the discriminator overfits a fixed batch") {
  const TinyData data;
  TrainState s(tiny_config(2));
  s.config.learning_rate = 1e-3;
  s.d_opt = Adam<float>(s.model.discriminator().parameters(), AdamOptions{1e-3, 0.5, 0.99});
  const auto batch = make_batch(data.manifest, data.images, s.rng, 2);
  LossParts first, last;
  discriminator_update(s, batch, first);
  for (int i = 0; i < 60; ++i) discriminator_update(s, batch, last);
  CHECK(last.adv > first.adv + 0.5);
}

TEST_CASE("the generator overfits a fixed batch") {
  const TinyData data;
  TrainState s(tiny_config(3));
  s.g_opt = Adam<float>(s.model.generator().parameters(), AdamOptions{1e-3, 0.5, 0.99});
  const auto batch = make_batch(data.manifest, data.images, s.rng, 2);
  LossParts first, last;
  generator_update(s, batch, first);
  for (int i = 0; i < 60; ++i) generator_update(s, batch, last);
  CHECK(last.fm < 0.5 * first.fm);
}

TEST_CASE("loss log rows") {
  LossReport r{-1.5, 0.25, 0.125, 2.0, 0.5, 0.3, 2.0};
  CHECK(loss_log_row(7, r) == "7,-1.5,0.25,0.125,2,0.5,0.3,2");
  CHECK(std::string(kLossLogHeader) == "step,adv,fm,rec,id,gp,total_G,total_D");
}

TEST_CASE("checkpoints round trip the whole state") {
  const TinyData data;
  TrainState s(tiny_config(4));
  for (int i = 0; i < 2; ++i) train_step(s, make_batch(data.manifest, data.images, s.rng, 2));
  std::stringstream ss(checkpoint_bytes(s));
  TrainState back = read_checkpoint(ss);
  CHECK(back.config == s.config);
  CHECK(back.step == 2);
  CHECK(back.rng == s.rng);
  CHECK(back.g_opt.steps() == s.g_opt.steps());
  CHECK(back.model.generator().parameters().hash() == s.model.generator().parameters().hash());
  CHECK(back.model.discriminator().parameters().hash() == s.model.discriminator().parameters().hash());
  CHECK(checkpoint_bytes(back) == checkpoint_bytes(s));
}

TEST_CASE("corrupt checkpoints are rejected") {
  TrainState s(tiny_config(5));
  const std::string good = checkpoint_bytes(s);
  auto load = [](std::string bytes) {
    std::stringstream ss(std::move(bytes));
    return read_checkpoint(ss);
  };
  CHECK_NOTHROW(load(good));
  std::string flipped = good;
  flipped[flipped.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(load(flipped), CheckpointError);
  CHECK_THROWS_AS(load(good.substr(0, good.size() - 9)), CheckpointError);
  std::string magic = good;
  magic[0] = 'X';
  CHECK_THROWS_AS(load(magic), CheckpointError);
  CHECK_THROWS_AS(load(""), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/agestyle.bin"), CheckpointError);
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  const TinyData data;
  TempDir a("resume_a"), b("resume_b");

  TrainState straight(tiny_config(6));
  train(straight, data.manifest, data.images, TrainOptions{a.path(), {}});

  auto cfg = tiny_config(6);
  cfg.steps = 2;
  TrainState first(cfg);
  train(first, data.manifest, data.images, TrainOptions{b.path(), {}});
  TrainState resumed = load_checkpoint(b.path() / "checkpoint_final.bin");
  CHECK(resumed.step == 2);
  resumed.config.steps = 4;
  train(resumed, data.manifest, data.images, TrainOptions{b.path(), {}});

  CHECK(read_file(a.path() / "loss_log.csv") == read_file(b.path() / "loss_log.csv"));
  CHECK(resumed.model.generator().parameters().hash() == straight.model.generator().parameters().hash());
  CHECK(resumed.model.discriminator().parameters().hash() ==
        straight.model.discriminator().parameters().hash());
}

TEST_CASE("periodic checkpoints") {
  const TinyData data;
  TempDir dir("periodic");
  auto cfg = tiny_config(7);
  cfg.checkpoint_every = 2;
  TrainState s(cfg);
  std::vector<long> seen;
  train(s, data.manifest, data.images, TrainOptions{dir.path(), [&](long k, const LossReport&) { seen.push_back(k); }});
  CHECK(seen == std::vector<long>{1, 2, 3, 4});
  CHECK(std::filesystem::exists(dir.path() / "checkpoint_2.bin"));
  CHECK(std::filesystem::exists(dir.path() / "checkpoint_4.bin"));
  CHECK(load_checkpoint(dir.path() / "checkpoint_2.bin").step == 2);
}

TEST_CASE("zero steps writes the initial state") {
  const TinyData data;
  TempDir dir("zero");
  auto cfg = tiny_config(8);
  cfg.steps = 0;
  TrainState s(cfg);
  const auto g0 = s.model.generator().parameters().hash();
  const auto path = train(s, data.manifest, data.images, TrainOptions{dir.path(), {}});
  CHECK(read_file(dir.path() / "loss_log.csv") == std::string(kLossLogHeader) + "\n");
  const TrainState back = load_checkpoint(path);
  CHECK(back.step == 0);
  CHECK(back.model.generator().parameters().hash() == g0);
}

TEST_CASE("translation is deterministic and shape preserving") {
  const TinyData data;
  TrainState s(tiny_config(9));
  const auto y1 = s.model.translate(data.images[0], data.images[5]);
  const auto y2 = s.model.translate(data.images[0], data.images[5]);
  CHECK(y1.shape() == data.images[0].shape());
  CHECK((y1.array() == y2.array()).all());
  const std::vector<ImageTensor> two{data.images[0], data.images[1]};
  CHECK(s.model.translate(stack_batch<float>(two), data.images[5]).shape() == Shape{2, 3, 16, 16});
  const std::vector<ImageTensor> three{data.images[0], data.images[1], data.images[2]};
  CHECK_THROWS_AS(s.model.translate(stack_batch<float>(two), stack_batch<float>(three)), ShapeError);
}
