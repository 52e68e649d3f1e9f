#pragma once

// Pretraining, the one-stage search loop, retraining of the pruned model,
// evaluation, and the two-stage global-threshold baseline.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "ofb/config.hpp"
#include "ofb/cost_model.hpp"
#include "ofb/pruner.hpp"
#include "ofb/search_space.hpp"
#include "ofb/vit.hpp"

namespace ofb {

enum ExitStatus : int { kSuccess = 0, kBudgetMiss = 2, kDivergence = 3 };

struct TaskData {
  std::size_t per_sample = 0;  // tokens * patch pixels
  std::size_t patch_pixels = 0;
  std::size_t n_train = 0, n_eval = 0;
  std::vector<double> train_patches, eval_patches;
  std::vector<int> train_labels, eval_labels;
};

// Generates the dataset in memory, or reads it from config.data_dir.
TaskData prepare_data(const RunConfig& config);

struct EvalMetrics {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t n = 0;
};

// Held-out split. `masks` defaults to none.
EvalMetrics evaluate(const ViTModel& model, const TaskData& data, std::size_t batch,
                     const SupernetMasks& masks = {});

struct EpochStats {
  std::size_t epoch;
  double train_loss;
};

// Supervised training without masks; returns per-epoch mean loss.
std::vector<EpochStats> train_supervised(ViTModel& model, const TaskData& data,
                                         std::size_t epochs, const TrainConfig& train,
                                         std::uint64_t stream);

// Full-width model trained for pretrain_epochs.
ViTModel pretrain(const RunConfig& config, const TaskData& data);

struct SearchOutcome {
  int status = kSuccess;
  bool finished = false;
  std::size_t finish_step = 0;
  std::size_t iterations = 0;
  SearchSpace space;
  ViTModel supernet;
  std::vector<PruneEvent> events;
  Architecture arch;
  double g_fraction = 0.0;  // continuous estimate after hardening
  CostReport cost;
  ViTModel pruned;
  EvalMetrics search_end;  // pruned model before retraining
  std::string message;
};

// The search space a search with this config starts from.
SearchSpace initial_space(const RunConfig& config);

// One-stage search from a pretrained supernet. `log` receives line-JSON
// records (header, iterations, epoch snapshots, prune events, end);
// `events` receives the prune events only. Either may be null.
SearchOutcome search(const RunConfig& config, const ViTModel& pretrained, const TaskData& data,
                     const CostCoefficients& coeffs, std::ostream* log = nullptr,
                     std::ostream* events = nullptr);

struct RetrainOutcome {
  int status = kSuccess;
  EvalMetrics before, after;
  ViTModel model;
  std::vector<EpochStats> epochs;
};

RetrainOutcome retrain(const RunConfig& config, const ViTModel& model, const TaskData& data);

struct BaselineOutcome {
  Architecture arch;
  CostReport cost;
  double threshold = 0.0;
  bool reachable = true;
  ViTModel supernet;  // after importance training
  ViTModel pruned;
  EvalMetrics pruned_metrics;
};

// Two-stage threshold pruning: train importance scores with the task loss
// plus an l1 penalty (lambda = 1, no architecture logits), then pick the
// largest global score threshold whose grid-rounded architecture meets tau.
BaselineOutcome baseline_threshold_prune(const RunConfig& config, const ViTModel& pretrained,
                                         const TaskData& data, const CostCoefficients& coeffs);

// Grid-rounded architecture keeping, per submodule, the units whose score is
// at least `threshold` (at least the smallest candidate).
Architecture threshold_architecture(const SearchSpace& space,
                                    const std::vector<std::vector<double>>& scores,
                                    double threshold);

}  // namespace ofb
