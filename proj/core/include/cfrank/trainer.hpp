#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfrank/data.hpp"
#include "cfrank/eval.hpp"
#include "cfrank/losses.hpp"
#include "cfrank/model.hpp"

namespace cfrank {

enum class Phase { WarmStart, Main };
std::string phase_name(Phase p);

struct TrainConfig {
  LossSpec loss_spec = Bpr{};
  bool warm_start = false;
  double gamma_sr = 0.1;
  double lr = 0.1;
  double weight_decay = 0.0;
  std::size_t batch_size = 0;  // 0 picks default_batch_size(loss_spec)
  int max_epochs = 400;        // shared by warm-start and main epochs
  int patience = 20;           // final early stopping
  int warm_patience = 20;      // warm-start -> main switch
  int eval_every = 1;
  Index dim = 64;
  std::uint64_t seed = 0;
  int eval_k = 20;
  /// When false, wall_seconds is reported as 0 so metric logs are byte-reproducible.
  bool record_timing = true;
};

/// 16384 for pairwise/set-wise losses, 4096 for DirectAU-style batches.
std::size_t default_batch_size(const LossSpec& spec);
void validate(const TrainConfig& config);

struct PhaseController {
  Phase phase = Phase::Main;
  double best_val = -std::numeric_limits<double>::infinity();
  int epochs_since_improve = 0;
  int patience = 20;
  std::optional<int> switch_epoch;
};

/// Strict improvement resets the counter; anything else increments it. The
/// flag is raised once the counter reaches the patience.
std::pair<PhaseController, bool> phase_signal(PhaseController controller, double val_metric);

struct EpochMetrics {
  int epoch = 0;
  Phase phase = Phase::Main;
  double loss_total = 0.0;
  std::optional<double> loss_align;
  std::optional<double> loss_uniform;
  std::optional<double> loss_srank;
  std::optional<double> val_recall20;
  std::optional<double> val_ndcg20;
  double srank_user = 0.0;
  double srank_item = 0.0;
  double wall_seconds = 0.0;  // forward + backward only
};

/// One JSON object, no trailing newline.
std::string to_json_line(const EpochMetrics& m);

struct TrainResult {
  EmbeddingModel best_model;
  int best_epoch = 0;
  double best_val_ndcg = -std::numeric_limits<double>::infinity();
  std::vector<EpochMetrics> epochs;
  std::vector<PhaseController> history;  // controller state after each evaluation
  std::optional<int> switch_epoch;
  int warm_epochs = 0;
  int main_epochs = 0;
  bool max_epochs_reached = false;
  double wall_seconds = 0.0;
};

/// Plain SGD with L2 decay on the touched rows:
/// row <- row - lr * (grad + weight_decay * row).
void optimizer_step(EmbeddingModel& model, const ModelGradient& grad, double lr, double weight_decay);

/// Overrides the validation pass; receives the model snapshot and the epoch.
using Validator = std::function<MetricReport(const EmbeddingModel&, int)>;
using EpochCallback = std::function<void(const EpochMetrics&)>;

struct TrainHooks {
  Validator validator;
  EpochCallback on_epoch;
};

TrainResult run_training(const InteractionDataset& ds, const TrainConfig& config,
                         const TrainHooks& hooks = {});

}  // namespace cfrank
