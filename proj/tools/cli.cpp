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

#include "cli.hpp"

#include "agestyle/augment_eval.hpp"
#include "agestyle/dataset.hpp"
#include "agestyle/diversity.hpp"
#include "agestyle/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace agestyle::cli {

namespace fs = std::filesystem;

namespace {

/// Bad input from the caller; exit code 1.
class UserError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  fs::path out;
  std::optional<std::uint64_t> seed;
  int jobs = 0;
};

void add_out(CLI::App* app, Common& c, bool required) {
  auto* opt = app->add_option("--out", c.out, "Output directory");
  if (required) opt->required();
}

void add_seed(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Root seed; generated and reported when absent");
}

void add_jobs(CLI::App* app, Common& c) {
  app->add_option("--jobs", c.jobs, "Worker thread cap (0 = library default)")
      ->check(CLI::NonNegativeNumber);
}

/// Reads top-level keys and the `[<subcommand>]` section as options of the
/// active subcommand; sections of other subcommands are ignored. A key in
/// the section overrides the same key at the top level.
class SubcommandConfig : public CLI::ConfigTOML {
 public:
  explicit SubcommandConfig(std::string subcommand) : subcommand_(std::move(subcommand)) {}

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    // The first value seen for an option is kept, so section keys go first.
    std::vector<CLI::ConfigItem> section, top;
    for (auto& item : CLI::ConfigTOML::from_config(input)) {
      if (item.name == "++" || item.name == "--") continue;
      if (item.parents.empty()) {
        item.parents.push_back(subcommand_);
        top.push_back(std::move(item));
      } else if (item.parents.front() == subcommand_) {
        section.push_back(std::move(item));
      }
    }
    section.insert(section.end(), std::make_move_iterator(top.begin()), std::make_move_iterator(top.end()));
    return section;
  }

 private:
  std::string subcommand_;
};

std::uint64_t resolve_seed(const Common& c, std::ostream& err) {
  if (c.seed) return *c.seed;
  std::random_device rd;
  const std::uint64_t seed = (std::uint64_t(rd()) << 32) ^ rd();
  err << "seed: " << seed << "\n";
  return seed;
}

void apply_jobs(const Common& c) {
#ifdef _OPENMP
  if (c.jobs > 0) omp_set_num_threads(c.jobs);
#else
  (void)c;
#endif
}

/// Records the command line and seed next to the outputs.
void write_run_info(const Common& c, const std::string& command, const std::vector<std::string>& args,
                    std::optional<std::uint64_t> seed) {
  if (c.out.empty()) return;
  fs::create_directories(c.out);
  nlohmann::json j{{"command", command}, {"args", args}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  std::ofstream f(c.out / "run_info.json");
  f << j.dump(2) << "\n";
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << j.dump(2) << "\n";
}

void refuse_overwrite(const fs::path& input, const fs::path& output) {
  std::error_code ec;
  if (fs::exists(output) && fs::equivalent(input, output, ec)) {
    throw UserError("refusing to overwrite input " + input.string());
  }
}

std::unique_ptr<AgeEstimator> estimator_from(const std::string& name, const std::string& command,
                                             const fs::path& out) {
  if (!command.empty()) {
    return std::make_unique<SubprocessEstimator>(command, out / "estimator_scratch");
  }
  try {
    return make_estimator(name);
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
}

// ---------------------------------------------------------------------------
// toygen

struct ToygenArgs {
  Common common;
  ToySpec spec;
  std::vector<std::size_t> group_counts;
  double test_fraction = 0.0;
};

void setup_toygen(CLI::App& app, ToygenArgs& a) {
  auto* cmd = app.add_subcommand("toygen", "Write the synthetic ring corpus and its manifest");
  add_out(cmd, a.common, true);
  add_seed(cmd, a.common);
  add_jobs(cmd, a.common);
  cmd->add_option("--image_size,--image-size", a.spec.image_size, "Image side in pixels")
      ->capture_default_str();
  cmd->add_option("--samples_per_group,--samples-per-group", a.spec.samples_per_group)
      ->capture_default_str();
  cmd->add_option("--noise_level,--noise-level", a.spec.noise_level)->capture_default_str();
  cmd->add_option("--group_counts,--group-counts", a.group_counts,
                  "Four per-group counts; overrides samples_per_group")
      ->expected(4)
      ->delimiter(',');
  cmd->add_option("--test_fraction,--test-fraction", a.test_fraction,
                  "Also write train.csv/test.csv with this stratified test share")
      ->check(CLI::Range(0.0, 1.0));
}

int run_toygen(ToygenArgs& a, const std::vector<std::string>& args, std::ostream& out,
               std::ostream& err) {
  apply_jobs(a.common);
  const auto seed = resolve_seed(a.common, err);
  a.spec.seed = seed;
  if (!a.group_counts.empty()) {
    GroupCounts gc{};
    std::copy(a.group_counts.begin(), a.group_counts.end(), gc.begin());
    a.spec.group_counts = gc;
  }
  try {
    a.spec.validate();
  } catch (const std::invalid_argument& e) {
    throw UserError(e.what());
  }
  const Manifest m = generate_toy(a.spec, a.common.out);
  nlohmann::json report{{"records", m.size()}, {"manifest", (a.common.out / "manifest.csv").string()}};
  if (a.test_fraction > 0.0) {
    const SplitResult s = split(m, a.test_fraction, seed);
    save_manifest(s.train, a.common.out / "train.csv");
    save_manifest(s.test, a.common.out / "test.csv");
    for (const auto& w : s.warnings) err << "warning: " << w << "\n";
    report["train"] = s.train.size();
    report["test"] = s.test.size();
  }
  write_run_info(a.common, "toygen", args, seed);
  out << report.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  Common common;
  TrainConfig config;
  fs::path manifest;
  fs::path resume;
  long log_every = 100;
  std::vector<CLI::Option*> fixed_on_resume;
  CLI::Option* steps = nullptr;
  CLI::Option* checkpoint_every = nullptr;
};

void setup_train(CLI::App& app, TrainArgs& a) {
  auto* cmd = app.add_subcommand("train", "Train generator and discriminator on a manifest");
  add_out(cmd, a.common, true);
  add_seed(cmd, a.common);
  add_jobs(cmd, a.common);
  cmd->add_option("--manifest", a.manifest, "Training manifest CSV")->required()->check(CLI::ExistingFile);
  cmd->add_option("--resume", a.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  cmd->add_option("--log_every,--log-every", a.log_every, "Progress line interval (0 = silent)")
      ->capture_default_str();
  auto& c = a.config;
  auto fixed = [&](CLI::Option* o) {
    a.fixed_on_resume.push_back(o->capture_default_str());
  };
  fixed(cmd->add_option("--lambda_rec,--lambda-rec", c.weights.lambda_rec));
  fixed(cmd->add_option("--lambda_id,--lambda-id", c.weights.lambda_id));
  fixed(cmd->add_option("--lambda_gp,--lambda-gp", c.weights.lambda_gp));
  fixed(cmd->add_option("--learning_rate,--learning-rate", c.learning_rate));
  fixed(cmd->add_option("--beta1", c.beta1));
  fixed(cmd->add_option("--beta2", c.beta2));
  fixed(cmd->add_option("--batch_size,--batch-size", c.batch_size));
  fixed(cmd->add_option("--image_size,--image-size", c.image_size));
  fixed(cmd->add_option("--use_translated_target_cycle,--use-translated-target-cycle",
                        c.use_translated_target_cycle));
  fixed(cmd->add_option("--base_channels,--base-channels", c.base_channels));
  fixed(cmd->add_option("--n_layers,--n-layers", c.n_layers));
  fixed(cmd->add_option("--strict_sampling,--strict-sampling", c.strict_sampling));
  a.steps = cmd->add_option("--steps", c.steps)->capture_default_str();
  a.checkpoint_every =
      cmd->add_option("--checkpoint_every,--checkpoint-every", c.checkpoint_every)->capture_default_str();
}

int run_train(TrainArgs& a, const std::vector<std::string>& args, std::ostream& out,
              std::ostream& err) {
  apply_jobs(a.common);
  const Manifest train_set = load_manifest(a.manifest);
  if (train_set.empty()) throw UserError("training manifest is empty");

  std::optional<TrainState> state;
  std::optional<std::uint64_t> seed;
  if (!a.resume.empty()) {
    for (auto* o : a.fixed_on_resume) {
      if (o->count() > 0) throw UserError(o->get_name() + " cannot change when resuming");
    }
    if (a.common.seed) throw UserError("--seed cannot change when resuming");
    state.emplace(load_checkpoint(a.resume));
    if (a.steps->count() > 0) state->config.steps = a.config.steps;
    if (a.checkpoint_every->count() > 0) state->config.checkpoint_every = a.config.checkpoint_every;
    seed = state->config.seed;
  } else {
    seed = resolve_seed(a.common, err);
    a.config.seed = *seed;
    try {
      a.config.validate();
    } catch (const std::invalid_argument& e) {
      throw UserError(e.what());
    }
    state.emplace(a.config);
  }
  if (state->step > state->config.steps) throw UserError("checkpoint is already past --steps");
  write_run_info(a.common, "train", args, seed);

  const ImageStore images(train_set, state->config.image_size);
  TrainOptions opts{a.common.out, {}};
  if (a.log_every > 0) {
    opts.on_step = [&](long step, const LossReport& r) {
      if (step % a.log_every == 0 || step == state->config.steps) err << loss_log_row(step, r) << "\n";
    };
  }
  const fs::path final_ckpt = train(*state, train_set, images, opts);
  out << nlohmann::json{{"steps", state->step}, {"checkpoint", final_ckpt.string()}}.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// translate

struct TranslateArgs {
  Common common;
  fs::path checkpoint, input, target;
};

void setup_translate(CLI::App& app, TranslateArgs& a) {
  auto* cmd = app.add_subcommand("translate", "Render one image with the age style of another");
  add_out(cmd, a.common, true);
  add_jobs(cmd, a.common);
  cmd->add_option("--checkpoint", a.checkpoint)->required()->check(CLI::ExistingFile);
  cmd->add_option("--input", a.input, "Source PNG")->required()->check(CLI::ExistingFile);
  cmd->add_option("--target", a.target, "Style target PNG")->required()->check(CLI::ExistingFile);
}

int run_translate(TranslateArgs& a, const std::vector<std::string>& args, std::ostream& out,
                  std::ostream&) {
  apply_jobs(a.common);
  const TrainState state = load_checkpoint(a.checkpoint);
  const Index size = state.config.image_size;
  const ImageTensor y = state.model.translate(load_image(a.input, size), load_image(a.target, size));
  fs::create_directories(a.common.out);
  const fs::path path =
      a.common.out / (a.input.stem().string() + "_to_" + a.target.stem().string() + ".png");
  refuse_overwrite(a.input, path);
  refuse_overwrite(a.target, path);
  write_png(y, path);
  write_run_info(a.common, "translate", args, std::nullopt);
  out << nlohmann::json{{"output", path.string()}}.dump(2) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// augment

struct AugmentArgs {
  Common common;
  fs::path checkpoint, manifest, fallback;
  std::string picker = "uniform";
  std::string estimator = "toy-oracle";
  std::string estimator_cmd;
};

void add_estimator(CLI::App* cmd, std::string& name, std::string& command) {
  cmd->add_option("--estimator", name, "Registered age estimator")->capture_default_str();
  cmd->add_option("--estimator_cmd,--estimator-cmd", command,
                  "External estimator: run as `<cmd> <png>`, prints an age");
}

void setup_augment(CLI::App& app, AugmentArgs& a) {
  auto* cmd = app.add_subcommand("augment", "Translate every record to the other three age groups");
  add_out(cmd, a.common, true);
  add_seed(cmd, a.common);
  add_jobs(cmd, a.common);
  cmd->add_option("--checkpoint", a.checkpoint)->required()->check(CLI::ExistingFile);
  cmd->add_option("--manifest", a.manifest, "Manifest to augment")->required()->check(CLI::ExistingFile);
  cmd->add_option("--fallback_manifest,--fallback-manifest", a.fallback,
                  "Target pool for groups missing from --manifest")
      ->check(CLI::ExistingFile);
  cmd->add_option("--picker", a.picker, "Target choice")
      ->check(CLI::IsMember({"uniform", "oldest"}))
      ->capture_default_str();
  add_estimator(cmd, a.estimator, a.estimator_cmd);
}

int run_augment(AugmentArgs& a, const std::vector<std::string>& args, std::ostream& out,
                std::ostream& err) {
  apply_jobs(a.common);
  const auto seed = resolve_seed(a.common, err);
  refuse_overwrite(a.manifest, a.common.out / "manifest.csv");
  const Manifest input = load_manifest(a.manifest);
  if (input.empty()) throw UserError("manifest is empty");
  std::optional<Manifest> fallback;
  if (!a.fallback.empty()) fallback = load_manifest(a.fallback);

  const TrainState state = load_checkpoint(a.checkpoint);
  AugmentOptions opts;
  opts.out_dir = a.common.out;
  opts.seed = seed;
  opts.fallback_targets = fallback ? &*fallback : nullptr;
  opts.loader = file_loader(state.config.image_size);
  if (a.picker == "oldest") {
    opts.picker = oldest_target_picker(estimator_from(a.estimator, a.estimator_cmd, a.common.out),
                                       opts.loader);
  }
  write_run_info(a.common, "augment", args, seed);
  const AugmentResult r = augment(make_translator(state.model), input, opts);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  out << nlohmann::json{{"input_records", input.size()},
                        {"output_records", r.manifest.size()},
                        {"manifest", (a.common.out / "manifest.csv").string()},
                        {"warnings", r.warnings},
                        {"before", to_json(diversity_report(input))},
                        {"after", to_json(diversity_report(r.manifest))}}
             .dump(2)
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// audit-diversity

struct AuditArgs {
  Common common;
  fs::path manifest;
  std::string format = "json";
};

void setup_audit(CLI::App& app, AuditArgs& a) {
  auto* cmd = app.add_subcommand("audit-diversity", "Shannon and Simpson indices of a manifest");
  add_out(cmd, a.common, false);
  add_jobs(cmd, a.common);
  cmd->add_option("--manifest", a.manifest)->required()->check(CLI::ExistingFile);
  cmd->add_option("--format", a.format)->check(CLI::IsMember({"json", "table"}))->capture_default_str();
}

int run_audit(AuditArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream&) {
  const Manifest m = load_manifest(a.manifest);
  if (m.empty()) throw UserError("manifest is empty");
  const DiversityReport r = diversity_report(m);
  const auto j = to_json(r);
  if (!a.common.out.empty()) {
    write_run_info(a.common, "audit-diversity", args, std::nullopt);
    write_json(j, a.common.out / "diversity.json");
  }
  if (a.format == "json") {
    out << j.dump(2) << "\n";
  } else {
    out << format_table(r);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval-age

struct EvalArgs {
  Common common;
  fs::path checkpoint, source, targets;
  std::string estimator = "toy-oracle";
  std::string estimator_cmd;
  std::string gt_preset = "representative";
  std::vector<double> gt_means;
};

void setup_eval(CLI::App& app, EvalArgs& a) {
  auto* cmd = app.add_subcommand("eval-age", "Age group-0 faces to each older group and score ages");
  add_out(cmd, a.common, true);
  add_seed(cmd, a.common);
  add_jobs(cmd, a.common);
  cmd->add_option("--checkpoint", a.checkpoint)->required()->check(CLI::ExistingFile);
  cmd->add_option("--source", a.source, "Manifest whose group-0 records are aged")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--targets", a.targets, "Target pool manifest (default: --source)")
      ->check(CLI::ExistingFile);
  add_estimator(cmd, a.estimator, a.estimator_cmd);
  auto* preset = cmd->add_option("--gt_preset,--gt-preset", a.gt_preset, "Ground-truth group means")
                     ->check(CLI::IsMember({"representative", "morph", "cacd"}))
                     ->capture_default_str();
  cmd->add_option("--gt_means,--gt-means", a.gt_means, "Means of groups 1,2,3")
      ->expected(3)
      ->delimiter(',')
      ->excludes(preset);
}

int run_eval(EvalArgs& a, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  apply_jobs(a.common);
  const auto seed = resolve_seed(a.common, err);
  const Manifest source = load_manifest(a.source);
  const Manifest targets = a.targets.empty() ? source : load_manifest(a.targets);
  if (source.indices_of(AgeGroup(0)).empty()) throw UserError("source has no group-0 records");

  GroupMeans gt = representative_means();
  if (!a.gt_means.empty()) {
    for (std::size_t k = 0; k < 3; ++k) gt[k + 1] = a.gt_means[k];
  } else if (a.gt_preset == "morph") {
    gt = kMorphGtMeans;
  } else if (a.gt_preset == "cacd") {
    gt = kCacdGtMeans;
  }

  const TrainState state = load_checkpoint(a.checkpoint);
  auto estimator = estimator_from(a.estimator, a.estimator_cmd, a.common.out);
  write_run_info(a.common, "eval-age", args, seed);
  AgingEvalOptions opts;
  opts.seed = seed;
  opts.loader = file_loader(state.config.image_size);
  const AgeAccuracyReport r =
      aging_accuracy(make_translator(state.model), source, targets, *estimator, gt, opts);
  const auto j = to_json(r);
  write_json(j, a.common.out / "age_accuracy.json");
  if (r.skipped > 0) err << "warning: " << r.skipped << " images skipped by the estimator\n";
  err << format_table(r);
  out << j.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Style-based face aging and dataset diversity tools", "agestyle"};
  app.require_subcommand(1);
  app.allow_extras(false);
  app.fallthrough();
  app.set_config("--config", "", "TOML file with option values; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  for (const auto& a : args) {
    if (a == "toygen" || a == "train" || a == "translate" || a == "augment" ||
        a == "audit-diversity" || a == "eval-age") {
      app.config_formatter(std::make_shared<SubcommandConfig>(a));
      break;
    }
  }

  ToygenArgs toygen;
  TrainArgs train_args;
  TranslateArgs translate;
  AugmentArgs augment_args;
  AuditArgs audit;
  EvalArgs eval;
  setup_toygen(app, toygen);
  setup_train(app, train_args);
  setup_translate(app, translate);
  setup_augment(app, augment_args);
  setup_audit(app, audit);
  setup_eval(app, eval);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    out << sub->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUserError;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "toygen") return run_toygen(toygen, args, out, err);
    if (name == "train") return run_train(train_args, args, out, err);
    if (name == "translate") return run_translate(translate, args, out, err);
    if (name == "augment") return run_augment(augment_args, args, out, err);
    if (name == "audit-diversity") return run_audit(audit, args, out, err);
    if (name == "eval-age") return run_eval(eval, args, out, err);
    err << "internal error: unhandled subcommand " << name << "\n";
    return kExitInternalError;
  } catch (const UserError& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ManifestError& e) {
    err << "error: manifest: " << e.what() << "\n";
  } catch (const ImageIoError& e) {
    err << "error: image: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    err << "error: checkpoint: " << e.what() << "\n";
  } catch (const SamplingError& e) {
    err << "error: sampling: " << e.what() << "\n";
  } catch (const EstimatorError& e) {
    err << "error: estimator: " << e.what() << "\n";
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const ShapeError& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternalError;
  }
  return kExitUserError;
}

}  // namespace agestyle::cli
