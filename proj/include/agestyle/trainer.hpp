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
#include "agestyle/losses.hpp"
#include "agestyle/networks.hpp"
#include "agestyle/optim.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace agestyle {

struct TrainConfig {
  LossWeights weights;
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.99;
  int batch_size = 4;
  long steps = 1000;
  std::uint64_t seed = 0;
  int image_size = 128;
  /// Cycle back through G(x'_B, x_A) instead of x_A itself.
  bool use_translated_target_cycle = true;
  /// 0 writes only the final checkpoint.
  long checkpoint_every = 0;
  int base_channels = 32;
  int n_layers = 6;
  /// Fail instead of re-drawing when a target group has no records.
  bool strict_sampling = false;

  void validate() const;
  GeneratorSpec generator_spec() const;
  DiscriminatorSpec discriminator_spec() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Generator, discriminator and the layer correspondence between them.
class AgingModel {
 public:
  AgingModel(const GeneratorSpec& g, const DiscriminatorSpec& d, std::uint64_t seed);

  Generator<float>& generator() { return generator_; }
  const Generator<float>& generator() const { return generator_; }
  Discriminator<float>& discriminator() { return discriminator_; }
  const Discriminator<float>& discriminator() const { return discriminator_; }
  const LayerMap& layer_map() const { return layer_map_; }

  /// Style of real target images as seen by the discriminator.
  StyleStats<float> style_of(const Var<float>& target) const;

  /// G(x, style(D(target))) without recording. `target` has the same batch
  /// size as `x`, or 1 to share one target across the batch.
  ImageTensor translate(const ImageTensor& x, const ImageTensor& target) const;

 private:
  Generator<float> generator_;
  Discriminator<float> discriminator_;
  LayerMap layer_map_;
};

/// Everything needed to continue training bit-for-bit.
struct TrainState {
  explicit TrainState(const TrainConfig& config);

  TrainConfig config;
  long step = 0;
  AgingModel model;
  Adam<float> g_opt;
  Adam<float> d_opt;
  std::mt19937_64 rng;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const TrainState& state, std::ostream& out);
TrainState read_checkpoint(std::istream& in);

// ---------------------------------------------------------------------------
// Sampling

struct SampledPair {
  std::size_t source = 0;
  std::size_t target = 0;
  AgeGroup source_group;
  AgeGroup target_group;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source uniform over records; target group uniform over the 4 groups (the
/// source's own group included); target record uniform within that group.
/// Empty target groups are re-drawn among non-empty ones unless `strict`.
SampledPair sample_pair(const Manifest& train_set, std::mt19937_64& rng, bool strict = false);

/// Decoded training images, indexed like the manifest.
class ImageStore {
 public:
  ImageStore(const Manifest& manifest, Index image_size);
  explicit ImageStore(std::vector<ImageTensor> images) : images_(std::move(images)) {}
  const ImageTensor& operator[](std::size_t i) const { return images_.at(i); }
  std::size_t size() const { return images_.size(); }

 private:
  std::vector<ImageTensor> images_;
};

struct PairBatch {
  ImageTensor x_a;
  std::vector<AgeGroup> groups_a;
  ImageTensor x_b;
  std::vector<AgeGroup> groups_b;
};

PairBatch make_batch(const Manifest& train_set, const ImageStore& images, std::mt19937_64& rng,
                     int batch_size, bool strict = false);

// ---------------------------------------------------------------------------
// Optimization

/// One discriminator update on total_D (adversarial + R1 on the real
/// inputs), then one generator update on total_G. D-side terms are measured
/// before the D update; G-side terms with the updated D, before the G update.
LossReport train_step(TrainState& state, const PairBatch& batch);

/// The two halves of train_step. Each fills its terms of `parts` and leaves
/// the other network's parameters untouched; neither advances `state.step`.
void discriminator_update(TrainState& state, const PairBatch& batch, LossParts& parts);
void generator_update(TrainState& state, const PairBatch& batch, LossParts& parts);

inline constexpr const char* kLossLogHeader = "step,adv,fm,rec,id,gp,total_G,total_D";
std::string loss_log_row(long step, const LossReport& r);

struct TrainOptions {
  std::filesystem::path out_dir;
  /// Called after each step with the step number just completed.
  std::function<void(long, const LossReport&)> on_step;
};

/// Runs until `state.step == state.config.steps`, appending to
/// out_dir/loss_log.csv and writing out_dir/checkpoint_<step>.bin every
/// checkpoint_every steps plus out_dir/checkpoint_final.bin at the end.
/// Returns the path of the final checkpoint.
std::filesystem::path train(TrainState& state, const Manifest& train_set, const ImageStore& images,
                            const TrainOptions& options);

/// Fresh state from `config`, then `train`.
std::filesystem::path train(const TrainConfig& config, const Manifest& train_set,
                            const std::filesystem::path& out_dir);

}  // namespace agestyle
