#include "cbmauc/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "cbmauc/errors.hpp"
#include "cbmauc/evaluation.hpp"

namespace cbmauc {

namespace {

class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double lr) : lr_(lr) {}
  void step(std::vector<NamedParam>& params, const TensorList& grads) override {
    for (size_t i = 0; i < params.size(); ++i) {
      Array& p = params[i].tensor.mutable_val();
      const Array& g = grads[i].val();
      for (int64_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
    }
  }

 private:
  double lr_;
};

class AdamOptimizer final : public Optimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}
  void step(std::vector<NamedParam>& params, const TensorList& grads) override {
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.tensor.shape());
        v_.emplace_back(p.tensor.shape());
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Array& p = params[i].tensor.mutable_val();
      const Array& g = grads[i].val();
      Array& m = m_[i];
      Array& v = v_[i];
      for (int64_t j = 0; j < p.size(); ++j) {
        m[j] = beta1_ * m[j] + (1 - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (1 - beta2_) * g[j] * g[j];
        double mhat = m[j] / bc1;
        double vhat = v[j] / bc2;
        p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<Array> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double lr) {
  if (kind == OptimizerKind::sgd) return std::make_unique<SgdOptimizer>(lr);
  return std::make_unique<AdamOptimizer>(lr);
}

NegativePair make_negative_pairs(const Tensor& batch_concepts, const Tensor& batch_h, Rng& rng,
                                 bool detach_h) {
  int64_t b_ = batch_concepts.dim(0);
  if (b_ < 2) throw ValidationError("make_negative_pairs: batch size must be >= 2");
  std::vector<int64_t> sigma = rng.derangement(b_);
  return build_negative_pairs(batch_concepts, batch_h, sigma, detach_h);
}

LossBreakdown train_step(const Batch& batch, Model& model, Optimizer& opt, Rng& rng) {
  const ModelConfig& cfg = model.config();
  std::vector<int64_t> sigma;
  if (cfg.model != ModelKind::cbm && cfg.alpha > 0) sigma = rng.derangement(batch.size());

  LossBreakdown loss;
  switch (cfg.model) {
    case ModelKind::cbm:
      loss = loss_cbm(batch, model, cfg.lambda, /*training=*/true);
      break;
    case ModelKind::msenn:
      loss = loss_msenn(batch, model, cfg.alpha, cfg.beta, sigma, /*training=*/true);
      break;
    case ModelKind::cbmauc:
      loss = loss_cbmauc(batch, model, cfg.alpha, cfg.beta, cfg.lambda, sigma, /*training=*/true);
      break;
  }

  auto params = model.trainable_parameters();
  TensorList param_tensors;
  param_tensors.reserve(params.size());
  for (auto& p : params) param_tensors.push_back(p.tensor);
  TensorList grads = grad(loss.total_tensor, param_tensors);
  opt.step(params, grads);
  return loss;
}

double validation_task_metric(Model& model, const Dataset& val, int64_t batch_size) {
  EvalPredictions pred = predict_dataset(model, val, batch_size);
  if (val.task_kind == TaskKind::multiclass)
    return task_error_01(pred.pred_class, pred.true_class);
  F1Block f1 = f1_suite(pred.pred_bin, pred.true_bin, pred.cpt_pred_bin, pred.cpt_true_bin);
  return 1.0 - f1.mF1;
}

TrainResult train(const SplitResult& data, const ModelConfig& cfg, const TrainOptions& opts) {
  auto errors = validate_config(cfg);
  if (!errors.empty()) {
    std::string msg = "train: invalid config:";
    for (auto& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  if (data.train.size() == 0 || data.val.size() == 0)
    throw ValidationError("train: train/val splits must be nonempty");

  Shape per_example = data.train.examples[0].x.shape();
  TrainResult result{Model(cfg, per_example), TrainState{}};
  Model& model = result.model;
  TrainState& state = result.state;
  state.rng = Rng(static_cast<uint64_t>(cfg.seed) + 1);  // training stream; init used seed
  state.best_val_metric = std::numeric_limits<double>::infinity();

  auto opt = make_optimizer(cfg.optimizer, cfg.lr);

  // parameter snapshot of the best validation epoch
  std::vector<Array> best_params;
  std::vector<Array> best_buffers;
  auto snapshot = [&]() {
    best_params.clear();
    best_buffers.clear();
    for (auto& p : model.parameters()) best_params.push_back(p.tensor.val());
    for (auto& b : model.buffers()) best_buffers.push_back(*b.second);
  };

  std::vector<int64_t> indices(static_cast<size_t>(data.train.size()));
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int64_t>(i);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    state.epoch = epoch;
    state.rng.shuffle(indices);
    EpochRecord rec;
    rec.epoch = epoch;
    int64_t steps = 0;
    for (int64_t start = 0; start < data.train.size(); start += cfg.batch_size) {
      int64_t end = std::min<int64_t>(start + cfg.batch_size, data.train.size());
      if (end - start < 2 && cfg.batch_size >= 2) continue;  // trailing singleton dropped
      std::vector<int64_t> batch_idx(indices.begin() + start, indices.begin() + end);
      Batch batch = make_batch(data.train, batch_idx);
      LossBreakdown loss = train_step(batch, model, *opt, state.rng);
      ++state.step;
      ++steps;
      rec.mean_task += loss.task;
      rec.mean_concept += loss.concept_;
      rec.mean_dis += loss.dis;
      rec.mean_theta_reg += loss.theta_reg;
      rec.mean_total += loss.total;
      if (opts.on_step) opts.on_step({epoch, state.step, loss});
    }
    if (steps > 0) {
      rec.mean_task /= steps;
      rec.mean_concept /= steps;
      rec.mean_dis /= steps;
      rec.mean_theta_reg /= steps;
      rec.mean_total /= steps;
    }
    rec.val_metric = validation_task_metric(model, data.val, cfg.batch_size);
    state.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
    if (rec.val_metric < state.best_val_metric) {
      state.best_val_metric = rec.val_metric;
      state.best_epoch = epoch;
      snapshot();
    }
  }

  if (state.best_epoch >= 0) {
    auto params = model.parameters();
    for (size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_val() = best_params[i];
    auto bufs = model.buffers();
    for (size_t i = 0; i < bufs.size(); ++i) *bufs[i].second = best_buffers[i];
  }
  return result;
}

// ---------------------------------------------------------------------------
// grid search

std::vector<GridPoint> enumerate_grid(const GridSpec& grid) {
  std::vector<GridPoint> points;
  for (OptimizerKind opt : grid.optimizers)
    for (double lr : grid.lrs)
      for (double lambda : grid.lambdas)
        for (double alpha : grid.alphas)
          for (double beta : grid.betas) points.push_back({opt, lr, lambda, alpha, beta});
  return points;
}

double sample_stddev(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double acc = 0;
  for (double v : values) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

void run_parallel(int64_t jobs, std::vector<std::function<void()>>& tasks) {
  if (jobs <= 1) {
    for (auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
  for (int64_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w]() {
      try {
        while (true) {
          size_t i = next.fetch_add(1);
          if (i >= tasks.size()) break;
          tasks[i]();
        }
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<GridRow> run_grid(const SplitResult& data, const GridSpec& grid,
                              const ModelConfig& base_cfg, const GridOptions& opts) {
  std::vector<GridPoint> points = enumerate_grid(grid);
  if (points.empty()) throw ValidationError("run_grid: empty grid");
  int64_t total_runs = static_cast<int64_t>(points.size()) * opts.seeds;
  if (total_runs > opts.max_runs)
    throw ValidationError("run_grid: " + std::to_string(total_runs) +
                          " runs exceed the configured cap of " + std::to_string(opts.max_runs));

  std::vector<GridRow> rows(points.size());
  std::vector<std::function<void()>> tasks;
  for (size_t pi = 0; pi < points.size(); ++pi) {
    rows[pi].point = points[pi];
    rows[pi].seed_metrics.resize(static_cast<size_t>(opts.seeds));
    for (int64_t s = 0; s < opts.seeds; ++s) {
      tasks.push_back([&, pi, s]() {
        ModelConfig cfg = base_cfg;
        cfg.optimizer = points[pi].optimizer;
        cfg.lr = points[pi].lr;
        cfg.lambda = points[pi].lambda;
        cfg.alpha = points[pi].alpha;
        cfg.beta = points[pi].beta;
        cfg.seed = base_cfg.seed + s;
        TrainResult r = train(data, cfg);
        rows[pi].seed_metrics[static_cast<size_t>(s)] =
            r.state.best_epoch >= 0 ? r.state.best_val_metric
                                    : validation_task_metric(r.model, data.val, cfg.batch_size);
      });
    }
  }
  run_parallel(opts.jobs, tasks);

  for (auto& row : rows) {
    double mean = 0;
    for (double v : row.seed_metrics) mean += v;
    row.mean = mean / static_cast<double>(row.seed_metrics.size());
    row.two_sigma = 2.0 * sample_stddev(row.seed_metrics);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const GridRow& a, const GridRow& b) { return a.mean < b.mean; });
  return rows;
}

}  // namespace cbmauc
