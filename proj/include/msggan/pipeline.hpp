#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "msggan/classifier.hpp"
#include "msggan/config.hpp"
#include "msggan/data.hpp"
#include "msggan/gan_train.hpp"
#include "msggan/metrics.hpp"

// End-to-end runs: per-class GAN training, synthetic corpus generation,
// classifier training/evaluation and the four-scenario matrix.
namespace msggan::pipeline {

namespace fs = std::filesystem;

// ---- GAN ----

struct GanRunOptions {
  gan::GanTrainingConfig train;
  net::GeneratorSpec generator = net::GeneratorSpec::standard(5);
  int label = 1;
  fs::path data;                      // dataset root with 0/ and 1/
  std::optional<fs::path> split;      // split manifest; restricts to gan_pool
  fs::path out;
  bool resume = true;                 // continue from out/checkpoint when present
  std::function<void(const gan::StepTelemetry&)> on_step;
};

// depth, latent_dim, schedule, dtype, equalized_lr and every GanTrainingConfig
// field (steps is an alias of total_steps). Consumed keys are removed.
void apply_gan_keys(config::KeyValues& kv, GanRunOptions& opts);

struct GanRunResult {
  std::int64_t first_step = 0;  // step the run started from
  std::int64_t last_step = 0;   // state.step at exit
  fs::path checkpoint;
};

// Layout under out/: telemetry.csv (step,d_loss,g_loss,gp), samples/step-N.png,
// checkpoint/ (latest). A non-finite step writes failure/ holding the state
// at that point (the offending update is not applied) plus diagnostic.txt,
// then rethrows.
GanRunResult run_gan_training(const GanRunOptions& opts);

struct GenerateOptions {
  fs::path checkpoint;
  std::int64_t count = 0;
  int label = 1;
  fs::path out;  // files land in out/<label>/
  std::uint64_t seed = 0;
  int batch_size = 16;
};
// Writes `count` finest-scale samples as 8-bit PNGs; returns the number written.
std::int64_t generate_samples(const GenerateOptions& opts);

// ---- classifier ----

struct ClassifierSetup {
  cls::MiniResNetSpec net = cls::MiniResNetSpec::desk();
  cls::TransferConfig transfer;
};
// profile (desk|full), widths, input_size, wide_stem, dtype, epochs,
// learning_rate, beta1, beta2, eps, batch_size, seed, max_steps,
// freeze_backbone, backbone.
void apply_classifier_keys(config::KeyValues& kv, ClassifierSetup& setup);

// Images are decoded on demand at `size`.
cls::LabeledSet disk_set(const data::PatchDataset& ds, const data::IndexList& indices, int size,
                         DType dt);
data::IndexList all_indices(const data::PatchDataset& ds);

// Two-class procedural textures (smooth vs fine-grained stripes over random
// colours), used to pretrain a backbone without touching either corpus.
cls::LabeledSet pretext_set(int count, int size, std::uint64_t seed, DType dt);

struct PretextConfig {
  int images = 256;
  int epochs = 4;
  double learning_rate = 1e-3;
  int batch_size = 32;
};
// Trains a full (unfrozen) network on pretext_set and saves it to dir.
void pretrain_backbone(const ClassifierSetup& setup, const PretextConfig& pretext,
                       std::uint64_t seed, const fs::path& dir, std::ostream* log = nullptr);

struct ClassifierRun {
  cls::TrainReport report;
  fs::path model;
};
// Applies the transfer protocol and trains on every record of data_dir.
// Writes out/classifier and out/loss.csv.
ClassifierRun train_classifier_on(const ClassifierSetup& setup, const fs::path& data_dir,
                                  const fs::path& out, std::ostream* log = nullptr);

// Predicts every record of data_dir with the model stored at model_dir.
// Writes out/predictions.csv and report.{json,csv,md}.
metrics::MetricsRow evaluate_on(const fs::path& model_dir, const fs::path& data_dir,
                                const fs::path& out);

// ---- scenario matrix ----

enum class Source { Real, Synthetic };

struct Scenario {
  Source train;
  Source test;
  std::string name() const;  // "Real/Synthetic"
  std::string slug() const;  // "real-synthetic"
};
// Real/Real, Synthetic/Synthetic, Real/Synthetic, Synthetic/Real.
std::vector<Scenario> default_scenarios();

struct ExperimentPlan {
  ClassifierSetup classifier;
  std::vector<Scenario> scenarios = default_scenarios();
  std::vector<std::uint64_t> seeds{0};
  double train_frac = 0.7;
  PretextConfig pretext;
  bool parallel = false;

  void validate() const;
  // Every setting that influences results, excluding paths.
  std::string canonical_text() const;
};
// Classifier keys plus seeds, train_frac, pretext_images, pretext_epochs,
// pretext_learning_rate, pretext_batch_size, parallel.
void apply_plan_keys(config::KeyValues& kv, ExperimentPlan& plan);

// Per seed: one backbone (the configured checkpoint, or a pretext-trained one
// under out/seed-S/backbone), then each scenario under out/seed-S/<slug>/
// with classifier/, predictions.csv and result.json. Same-source scenarios
// split 70/30; cross scenarios train on one whole corpus and test on the
// other. Split and training seeds depend only on the run seed and on whether
// a scenario is same-source, so swapping the corpora exchanges rows. The
// returned report is assembled from the persisted result.json files and
// emitted to out/report.{json,csv,md}.
metrics::MetricsReport run_experiment_matrix(const ExperimentPlan& plan, const fs::path& real_dir,
                                             const fs::path& synth_dir, const fs::path& out,
                                             std::ostream* log = nullptr);

}  // namespace msggan::pipeline
