// Copyright 2026 The MLFF-Net Authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW training loop, checkpoints, evaluation, prediction, finite-difference
// gradient checking and the ablation ladder.

#ifndef MLFF_TRAINER_HPP
#define MLFF_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlff/data_io.hpp"
#include "mlff/loss.hpp"
#include "mlff/metrics.hpp"
#include "mlff/model.hpp"

namespace mlff {

struct TrainConfig {
  Variant variant = Variant::full;
  ModelConfig model;
  double lr = 1e-4;
  double weight_decay = 1e-4;
  int steps = 300;
  int batch = 4;
  std::uint64_t seed = 0;
  std::optional<double> grad_clip = 1.0;  // global L2 norm

  void validate() const;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// Model, optimizer moments and step counter. Moments are indexed like
/// model.params().entries() and are empty for non-trainable entries.
struct TrainState {
  Model model;
  std::vector<std::vector<Scalar>> adam_m;
  std::vector<std::vector<Scalar>> adam_v;
  std::uint64_t step = 0;
  int train_h = 0;
  int train_w = 0;

  explicit TrainState(Model m);
};

TrainState init_state(const TrainConfig& cfg);

struct GradientResult {
  LossBreakdown loss;
  std::vector<std::vector<Scalar>> grads;  // indexed like the parameter entries
};

/// Training-mode forward and backward over one batch. Running statistics are
/// updated unless update_running is false.
GradientResult compute_gradients(Model& model, const Tensor& images, const Tensor& masks,
                                 bool update_running = true);

double global_norm(const std::vector<std::vector<Scalar>>& grads);

/// Scales the gradients so their global norm is at most max_norm; returns the
/// norm after scaling.
double clip_gradients(std::vector<std::vector<Scalar>>& grads, double max_norm);

/// One decoupled-weight-decay Adam update; increments state.step.
void adamw_step(TrainState& state, const std::vector<std::vector<Scalar>>& grads, double lr,
                double weight_decay);

struct StepRecord {
  std::uint64_t step = 0;
  LossBreakdown loss;
  double grad_norm = 0;     // before clipping
  double applied_norm = 0;  // after clipping
};

struct TrainLog {
  std::vector<StepRecord> steps;

  /// "step,total,lb_p1,lb_p2,lb_p3" followed by one row per step.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs cfg.steps optimizer steps on seeded shuffled batches. A non-finite
/// loss raises NumericError naming the step and the last finite loss.
TrainLog train(TrainState& state, const TrainConfig& cfg, const std::vector<io::Sample>& data,
               const StepCallback& on_step = {});

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<char> serialize_checkpoint(const TrainState& state);
TrainState deserialize_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);

/// Eval-mode forward without a tape.
PredictionSet predict(Model& model, const Tensor& image);

struct Evaluation {
  metrics::MetricReport report;
  std::vector<Tensor> p1;  // one [1,1,H,W] map per sample
};

/// Scores P1 of every sample. Samples must match the training resolution
/// recorded in the state when it is set.
Evaluation evaluate(TrainState& state, const std::vector<io::Sample>& data);

struct GradcheckOptions {
  int size = 32;
  int batch = 4;
  int samples_per_group = 12;
  double step = 1e-5;
  double tolerance = 1e-4;
  double denominator_floor = 1e-6;
  ModelConfig model;
};

struct GradcheckEntry {
  std::string name;
  std::string group;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0;
  std::string worst;
  int kinks_skipped = 0;  // draws replaced because they straddle a relu/clamp kink
  bool passed = false;

  std::vector<GradcheckEntry> failures(double tolerance) const;
};

/// Module group of a parameter name: encoder, mam, hfem, gam, decoder or head.
std::string parameter_group(const std::string& name);

/// Compares analytic gradients of the total loss with central differences on
/// a seeded synthetic batch, in training mode with frozen running statistics.
/// Draws samples_per_group coordinates from every module group present.
GradcheckReport gradcheck(Variant variant, std::uint64_t seed, const GradcheckOptions& opt = {});

struct NamedDataset {
  std::string name;
  std::vector<io::Sample> samples;
};

struct AblationRow {
  Variant variant = Variant::bas;
  std::size_t params = 0;
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<metrics::Overlap> scores;  // mDice / mIoU per evaluation set
};

struct AblationTable {
  std::vector<std::string> eval_sets;
  std::vector<AblationRow> rows;

  /// "model,params,initial_loss,final_loss,<set>_mDice,<set>_mIoU,..."
  std::string csv() const;
};

/// Trains every variant with the same seed and budget and scores each
/// evaluation set.
AblationTable ablate(const TrainConfig& base, const std::vector<io::Sample>& train_data,
                     const std::vector<NamedDataset>& eval_sets);

}  // namespace mlff

#endif  // MLFF_TRAINER_HPP
