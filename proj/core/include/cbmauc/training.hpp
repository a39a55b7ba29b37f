#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cbmauc/config.hpp"
#include "cbmauc/data.hpp"
#include "cbmauc/losses.hpp"
#include "cbmauc/model.hpp"
#include "cbmauc/rng.hpp"

namespace cbmauc {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // one update; grads aligned with params
  virtual void step(std::vector<NamedParam>& params, const TensorList& grads) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr);

// Negative-pair construction: sigma is a uniform random derangement drawn
// from the training RNG (rejection sampling), z'_i pairs c(x_i) with
// h(x_sigma(i)).
NegativePair make_negative_pairs(const Tensor& batch_concepts, const Tensor& batch_h, Rng& rng,
                                 bool detach_h = false);

struct StepRecord {
  int64_t epoch = 0;
  int64_t step = 0;
  LossBreakdown loss;
};

struct EpochRecord {
  int64_t epoch = 0;
  double mean_task = 0, mean_concept = 0, mean_dis = 0, mean_theta_reg = 0, mean_total = 0;
  double val_metric = 0;  // 0-1 error (multiclass) or 1 - mF1 (multilabel)
};

struct TrainState {
  int64_t epoch = 0;
  int64_t step = 0;
  Rng rng{0};
  double best_val_metric = 0;
  int64_t best_epoch = -1;
  std::vector<EpochRecord> history;
};

struct TrainOptions {
  std::function<void(const StepRecord&)> on_step;    // training-log hook
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Model model;  // parameters of the best validation epoch
  TrainState state;
};

// One optimizer update over every trainable parameter (model and
// discriminator jointly); returns the loss breakdown before the update.
LossBreakdown train_step(const Batch& batch, Model& model, Optimizer& opt, Rng& rng);

double validation_task_metric(Model& model, const Dataset& val, int64_t batch_size);

TrainResult train(const SplitResult& data, const ModelConfig& cfg, const TrainOptions& opts = {});

// ---- hyperparameter grid ----
struct GridPoint {
  OptimizerKind optimizer;
  double lr, lambda, alpha, beta;
};

// Deterministic enumeration order: optimizers, lrs, lambdas, alphas, betas.
std::vector<GridPoint> enumerate_grid(const GridSpec& grid);

struct GridRow {
  GridPoint point;
  std::vector<double> seed_metrics;
  double mean = 0;
  double two_sigma = 0;  // 2 * sample standard deviation (N-1)
};

struct GridOptions {
  int64_t seeds = 3;
  int64_t max_runs = 400;  // resource cap: points * seeds must stay below
  int64_t jobs = 1;
};

// Trains every grid point x seeds, reports mean +- 2*sigma of the validation
// task metric, ranked by mean (best first).
std::vector<GridRow> run_grid(const SplitResult& data, const GridSpec& grid,
                              const ModelConfig& base_cfg, const GridOptions& opts = {});

// Shared job-fanout helper (each job owns its model and RNG).
void run_parallel(int64_t jobs, std::vector<std::function<void()>>& tasks);

// sample standard deviation (N-1 denominator; 0 for a single value)
double sample_stddev(const std::vector<double>& values);

}  // namespace cbmauc
