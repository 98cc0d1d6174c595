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

#include "agestyle/trainer.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace agestyle {

using json = nlohmann::json;

void TrainConfig::validate() const {
  weights.validate();
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  generator_spec().validate();
}

GeneratorSpec TrainConfig::generator_spec() const {
  GeneratorSpec g;
  g.n_layers = n_layers;
  g.base_channels = base_channels;
  g.image_size = image_size;
  return g;
}

DiscriminatorSpec TrainConfig::discriminator_spec() const {
  return DiscriminatorSpec::mirror_of(generator_spec());
}

// ---------------------------------------------------------------------------

AgingModel::AgingModel(const GeneratorSpec& g, const DiscriminatorSpec& d, std::uint64_t seed)
    : generator_(g, seed ^ 0x9E3779B97F4A7C15ULL),
      discriminator_(d, seed ^ 0xC2B2AE3D27D4EB4FULL),
      layer_map_(LayerMap::mirrored(g.n_layers)) {
  if (g.n_layers != d.n_layers || g.image_size != d.image_size) {
    throw std::invalid_argument("generator and discriminator specs are not mirrored");
  }
  for (int k = 0; k < d.n_layers; ++k) {
    if (!(d.activation_shape(k) == g.decoder_layer_shape(g.n_layers - 1 - k))) {
      throw std::invalid_argument("discriminator layer " + std::to_string(k) +
                                  " does not mirror the generator decoder");
    }
  }
}

StyleStats<float> AgingModel::style_of(const Var<float>& target) const {
  return extract_style(discriminator_.forward(target).activations, layer_map_);
}

ImageTensor AgingModel::translate(const ImageTensor& x, const ImageTensor& target) const {
  if (target.shape().n != x.shape().n && target.shape().n != 1) {
    throw ShapeError("translate: target batch " + target.shape().str() + " vs input " +
                     x.shape().str());
  }
  NoGradGuard no_grad;
  return generator_.forward(constant(x), style_of(constant(target))).image.value();
}

namespace {
// Independent 64-bit seeds for the model initializers and the sampler.
std::uint64_t derive_seed(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{std::uint32_t(seed & 0xffffffffULL), std::uint32_t(seed >> 32), stream};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}
}  // namespace

TrainState::TrainState(const TrainConfig& cfg)
    : config((cfg.validate(), cfg)),
      model(cfg.generator_spec(), cfg.discriminator_spec(), derive_seed(cfg.seed, 1)),
      g_opt(model.generator().parameters(), AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2}),
      d_opt(model.discriminator().parameters(),
            AdamOptions{cfg.learning_rate, cfg.beta1, cfg.beta2}),
      rng(derive_seed(cfg.seed, 2)) {}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'A', 'G', 'E', 'S', 'T', 'Y', 'L', 'E'};

json config_to_json(const TrainConfig& c) {
  return json{{"lambda_rec", c.weights.lambda_rec},
              {"lambda_id", c.weights.lambda_id},
              {"lambda_gp", c.weights.lambda_gp},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"seed", c.seed},
              {"image_size", c.image_size},
              {"use_translated_target_cycle", c.use_translated_target_cycle},
              {"checkpoint_every", c.checkpoint_every},
              {"base_channels", c.base_channels},
              {"n_layers", c.n_layers},
              {"strict_sampling", c.strict_sampling}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.weights.lambda_rec = j.at("lambda_rec").get<double>();
  c.weights.lambda_id = j.at("lambda_id").get<double>();
  c.weights.lambda_gp = j.at("lambda_gp").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<long>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.image_size = j.at("image_size").get<int>();
  c.use_translated_target_cycle = j.at("use_translated_target_cycle").get<bool>();
  c.checkpoint_every = j.at("checkpoint_every").get<long>();
  c.base_channels = j.at("base_channels").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.strict_sampling = j.value("strict_sampling", false);
  return c;
}

json spec_to_json(const GeneratorSpec& g) {
  return json{{"n_layers", g.n_layers},         {"base_channels", g.base_channels},
              {"max_channel_multiplier", g.max_channel_multiplier},
              {"image_size", g.image_size},     {"image_channels", g.image_channels}};
}

json spec_to_json(const DiscriminatorSpec& d) {
  return json{{"n_layers", d.n_layers},         {"base_channels", d.base_channels},
              {"max_channel_multiplier", d.max_channel_multiplier},
              {"image_size", d.image_size},     {"image_channels", d.image_channels},
              {"heads", d.heads}};
}

// Tensors in checkpoint order.
std::vector<std::pair<std::string, Tensor<float>*>> state_tensors(TrainState& s) {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  auto add_set = [&](const std::string& prefix, ParameterSet<float>& params, Adam<float>& opt) {
    auto& entries = params.entries();
    for (auto& e : entries) out.emplace_back(prefix + "/" + e.name, &e.var.mutable_value());
    for (std::size_t i = 0; i < entries.size(); ++i)
      out.emplace_back(prefix + "/adam_m/" + entries[i].name, &opt.first_moments()[i]);
    for (std::size_t i = 0; i < entries.size(); ++i)
      out.emplace_back(prefix + "/adam_v/" + entries[i].name, &opt.second_moments()[i]);
  };
  add_set("G", s.model.generator().parameters(), s.g_opt);
  add_set("D", s.model.discriminator().parameters(), s.d_opt);
  return out;
}

}  // namespace

void write_checkpoint(const TrainState& state, std::ostream& out) {
  auto& s = const_cast<TrainState&>(state);  // state_tensors only reads through these pointers
  const auto tensors = state_tensors(s);
  std::ostringstream rng_text;
  rng_text << state.rng;
  json header{{"format", "agestyle-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", config_to_json(state.config)},
              {"generator", spec_to_json(state.model.generator().spec())},
              {"discriminator", spec_to_json(state.model.discriminator().spec())},
              {"step", state.step},
              {"rng", rng_text.str()},
              {"adam_g_steps", state.g_opt.steps()},
              {"adam_d_steps", state.d_opt.steps()}};
  json list = json::array();
  for (const auto& [name, t] : tensors) {
    const Shape& sh = t->shape();
    list.push_back({{"name", name}, {"shape", {sh.n, sh.c, sh.h, sh.w}}});
  }
  header["tensors"] = std::move(list);
  const std::string text = header.dump();

  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t header_len = text.size();
  std::uint64_t checksum = fnv1a(text.data(), text.size());
  for (const auto& [name, t] : tensors) checksum = hash_tensor(*t, checksum);

  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(text.data(), std::streamsize(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->data()), std::streamsize(t->size() * sizeof(float)));
  }
  out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
  if (!out) throw CheckpointError("I/O error while writing checkpoint");
}

namespace {

TrainState read_checkpoint_unchecked(std::istream& in) {
  char magic[sizeof kMagic];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError("corrupt checkpoint: bad magic");
  }
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  if (!in || version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  if (!in || header_len == 0 || header_len > (1u << 26)) {
    throw CheckpointError("corrupt checkpoint: bad header length");
  }
  std::string text(header_len, '\0');
  in.read(text.data(), std::streamsize(header_len));
  if (!in) throw CheckpointError("corrupt checkpoint: truncated header");

  json header;
  TrainConfig config;
  try {
    header = json::parse(text);
    config = config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  TrainState state(config);
  auto tensors = state_tensors(state);
  const auto& listed = header.at("tensors");
  if (listed.size() != tensors.size()) {
    throw CheckpointError("checkpoint tensor count does not match the configured networks");
  }
  std::uint64_t checksum = fnv1a(text.data(), text.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& [name, t] = tensors[i];
    const auto& entry = listed[i];
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    const Shape& expect = t->shape();
    if (entry.at("name").get<std::string>() != name || shape.size() != 4 ||
        !(Shape{shape[0], shape[1], shape[2], shape[3]} == expect)) {
      throw CheckpointError("checkpoint tensor '" + name + "' does not match the networks");
    }
    in.read(reinterpret_cast<char*>(t->data()), std::streamsize(t->size() * sizeof(float)));
    if (!in) throw CheckpointError("corrupt checkpoint: truncated tensor data");
    checksum = hash_tensor(*t, checksum);
  }
  std::uint64_t stored = 0;
  in.read(reinterpret_cast<char*>(&stored), sizeof stored);
  if (!in || stored != checksum) throw CheckpointError("corrupt checkpoint: checksum mismatch");

  state.step = header.at("step").get<long>();
  state.g_opt.set_steps(header.at("adam_g_steps").get<long>());
  state.d_opt.set_steps(header.at("adam_d_steps").get<long>());
  std::istringstream rng_text(header.at("rng").get<std::string>());
  rng_text >> state.rng;
  if (!rng_text) throw CheckpointError("corrupt checkpoint: rng state");
  return state;
}

}  // namespace

TrainState read_checkpoint(std::istream& in) {
  try {
    return read_checkpoint_unchecked(in);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    write_checkpoint(state, out);
    out.close();
    if (!out) throw CheckpointError("I/O error writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

// ---------------------------------------------------------------------------
// Sampling

SampledPair sample_pair(const Manifest& train_set, std::mt19937_64& rng, bool strict) {
  if (train_set.empty()) throw SamplingError("cannot sample from an empty manifest");
  std::uniform_int_distribution<std::size_t> pick_source(0, train_set.size() - 1);
  SampledPair p;
  p.source = pick_source(rng);
  p.source_group = train_set.records[p.source].group;

  std::uniform_int_distribution<int> pick_group(0, kNumAgeGroups - 1);
  int g = pick_group(rng);
  auto members = train_set.indices_of(AgeGroup(g));
  if (members.empty()) {
    if (strict) {
      throw SamplingError("target group " + AgeGroup(g).label() + " has no records");
    }
    std::vector<int> non_empty;
    const auto counts = train_set.group_counts();
    for (int k = 0; k < kNumAgeGroups; ++k)
      if (counts[std::size_t(k)] > 0) non_empty.push_back(k);
    std::uniform_int_distribution<std::size_t> pick(0, non_empty.size() - 1);
    g = non_empty[pick(rng)];
    members = train_set.indices_of(AgeGroup(g));
  }
  std::uniform_int_distribution<std::size_t> pick_target(0, members.size() - 1);
  p.target = members[pick_target(rng)];
  p.target_group = AgeGroup(g);
  return p;
}

ImageStore::ImageStore(const Manifest& manifest, Index image_size) {
  images_.reserve(manifest.size());
  for (const auto& r : manifest.records) images_.push_back(load_image(r.image_path, image_size));
}

PairBatch make_batch(const Manifest& train_set, const ImageStore& images, std::mt19937_64& rng,
                     int batch_size, bool strict) {
  std::vector<ImageTensor> xa, xb;
  PairBatch b;
  for (int i = 0; i < batch_size; ++i) {
    const auto p = sample_pair(train_set, rng, strict);
    xa.push_back(images[p.source]);
    xb.push_back(images[p.target]);
    b.groups_a.push_back(p.source_group);
    b.groups_b.push_back(p.target_group);
  }
  b.x_a = stack_batch<float>(xa);
  b.x_b = stack_batch<float>(xb);
  return b;
}

// ---------------------------------------------------------------------------
// Optimization

namespace {

double scalar_of(const Var<float>& v) { return double(v.value().array()[0]); }

void require_finite(const char* term, double value, long step) {
  if (!std::isfinite(value)) throw NonFiniteLoss(term, "at step " + std::to_string(step));
}

}  // namespace

namespace {

void check_batch(const PairBatch& batch) {
  if (batch.x_a.shape().n != Index(batch.groups_a.size()) ||
      batch.x_b.shape().n != Index(batch.groups_b.size()) ||
      batch.x_a.shape().n != batch.x_b.shape().n) {
    throw std::invalid_argument("train_step: batch images and groups disagree");
  }
}

}  // namespace

void discriminator_update(TrainState& state, const PairBatch& batch, LossParts& parts) {
  check_batch(batch);
  auto& gen = state.model.generator();
  auto& disc = state.model.discriminator();
  const auto& cfg = state.config;
  const long step = state.step + 1;

  gen.parameters().set_requires_grad(false);
  disc.parameters().set_requires_grad(true);
  ImageTensor fake;
  {
    NoGradGuard no_grad;
    fake = gen.forward(batch.x_a, state.model.style_of(constant(batch.x_b))).image.value();
  }
  {
    Var<float> x_real(batch.x_a, true);
    Var<float> real_logit = select_logit(disc.forward(x_real).logits, batch.groups_a);
    Var<float> fake_logit = select_logit(disc.forward(constant(fake)).logits, batch.groups_b);
    Var<float> adv = adversarial_loss(real_logit, fake_logit);
    Var<float> gp = r1_penalty_from(x_real, real_logit, float(cfg.weights.lambda_gp));
    x_real.set_requires_grad(false);
    parts.adv = scalar_of(adv);
    parts.gp = scalar_of(gp);
    require_finite("adv", parts.adv, step);
    require_finite("gp", parts.gp, step);
    disc.parameters().zero_grad();
    backward(sub(gp, adv));
    state.d_opt.step(disc.parameters());
    disc.parameters().zero_grad();
  }
  gen.parameters().set_requires_grad(true);
}

void generator_update(TrainState& state, const PairBatch& batch, LossParts& parts) {
  check_batch(batch);
  auto& gen = state.model.generator();
  auto& disc = state.model.discriminator();
  const auto& cfg = state.config;
  const long step = state.step + 1;

  disc.parameters().set_requires_grad(false);
  gen.parameters().set_requires_grad(true);
  {
    std::vector<Var<float>> target_acts;
    StyleStats<float> target_style;
    StyleStats<float> source_style;
    const Var<float> x_a = constant(batch.x_a);
    const Var<float> x_b = constant(batch.x_b);
    {
      NoGradGuard no_grad;
      target_acts = disc.forward(x_b).activations;
      target_style = extract_style(target_acts, state.model.layer_map());
      source_style = state.model.style_of(x_a);
    }
    Var<float> translated = gen.forward(x_a, target_style).image;
    Var<float> fm = feature_matching_loss(target_acts, disc.forward(translated).activations);
    Var<float> id = identity_loss(x_a, translated);

    StyleStats<float> cycle_style = source_style;
    if (cfg.use_translated_target_cycle) {
      Var<float> translated_target = gen.forward(x_b, source_style).image;
      cycle_style = state.model.style_of(translated_target);
    }
    Var<float> rec = reconstruction_loss(x_a, gen.forward(translated, cycle_style).image);

    parts.fm = scalar_of(fm);
    parts.rec = scalar_of(rec);
    parts.id = scalar_of(id);
    for (auto [name, value] : {std::pair{"fm", parts.fm}, {"rec", parts.rec}, {"id", parts.id}}) {
      require_finite(name, value, step);
    }
    Var<float> total = add(add(fm, scale(rec, float(cfg.weights.lambda_rec))),
                           scale(id, float(cfg.weights.lambda_id)));
    gen.parameters().zero_grad();
    backward(total);
    state.g_opt.step(gen.parameters());
    gen.parameters().zero_grad();
  }
  disc.parameters().set_requires_grad(true);
}

LossReport train_step(TrainState& state, const PairBatch& batch) {
  LossParts parts;
  discriminator_update(state, batch, parts);
  generator_update(state, batch, parts);
  ++state.step;
  return compose(parts, state.config.weights, "at step " + std::to_string(state.step));
}

std::string loss_log_row(long step, const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", step, r.adv, r.fm, r.rec,
                r.id, r.gp, r.total_G, r.total_D);
  return buf;
}

std::filesystem::path train(TrainState& state, const Manifest& train_set, const ImageStore& images,
                            const TrainOptions& options) {
  namespace fs = std::filesystem;
  if (train_set.size() != images.size()) {
    throw std::invalid_argument("train: image store does not match the manifest");
  }
  fs::create_directories(options.out_dir);
  const fs::path log_path = options.out_dir / "loss_log.csv";
  const bool append = state.step > 0 && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write " + log_path.string());
  if (!append) log << kLossLogHeader << '\n';

  const auto& cfg = state.config;
  while (state.step < cfg.steps) {
    PairBatch batch = make_batch(train_set, images, state.rng, cfg.batch_size, cfg.strict_sampling);
    const LossReport report = train_step(state, batch);
    log << loss_log_row(state.step, report) << '\n';
    if (!log) throw std::runtime_error("I/O error writing " + log_path.string());
    if (options.on_step) options.on_step(state.step, report);
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0) {
      log.flush();
      save_checkpoint(state, options.out_dir / ("checkpoint_" + std::to_string(state.step) + ".bin"));
    }
  }
  log.flush();
  const fs::path final_path = options.out_dir / "checkpoint_final.bin";
  save_checkpoint(state, final_path);
  return final_path;
}

std::filesystem::path train(const TrainConfig& config, const Manifest& train_set,
                            const std::filesystem::path& out_dir) {
  TrainState state(config);
  ImageStore images(train_set, config.image_size);
  return train(state, train_set, images, TrainOptions{out_dir, {}});
}

}  // namespace agestyle
