#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbmauc/array.hpp"
#include "cbmauc/config.hpp"
#include "cbmauc/data.hpp"
#include "cbmauc/model.hpp"

namespace cbmauc {

struct F1Block {
  std::vector<double> per_action;
  double mF1 = 0;        // mean of per-action F1
  double F1_all = 0;     // micro-F1 over the flattened prediction matrix
  double mF1_cpt = 0;
  double F1_cpt_all = 0;
};

struct AccountingBlock {
  double dh_over_d = 0;        // D_h / prod(input dims)
  double param_reduction = 0;  // shared params / unshared baseline params
};

struct MetricsReport {
  TaskKind task_kind = TaskKind::multiclass;
  double task_error = 0;  // 0-1 error (multiclass); 1 - mF1 for multilabel
  F1Block f1;             // populated for multilabel tasks
  double concept_rmse = 0;
  double probe_rmse = 0;
  double r_bar_sq = 0;
  AccountingBlock accounting;
};

std::string to_json(const MetricsReport& m);
MetricsReport metrics_from_json(const std::string& text);

// fraction of examples with predicted class != label
double task_error_01(const std::vector<int64_t>& predictions, const std::vector<int64_t>& labels);

// sqrt of the mean squared deviation over all entries
double concept_rmse(const Array& c_pred, const Array& c_true);

// Ridge-regularized affine probe fitted on a deterministic 80/20 split of
// the rows; returns RMSE on the held-out rows. tau=0 with rank-deficient
// features is an error.
double linear_probe(const Array& c_pred, const Array& c_true, double tau = 1e-3,
                    int64_t seed = 0, double train_fraction = 0.8);

// r_bar^2: for every ground-truth column, the best squared Pearson
// correlation attained by any predicted column, averaged over ground-truth
// columns. Zero-variance columns contribute r = 0.
double concept_correlation(const Array& c_true, const Array& c_pred);

// Per-action F1 plus micro/macro aggregates for actions and concepts.
// Inputs are 0/1 matrices (threshold upstream). Actions with no positives on
// either side score 1; positives on exactly one side score 0.
F1Block f1_suite(const Array& pred_binary, const Array& true_binary, const Array& cpt_pred,
                 const Array& cpt_true);

// Table-style reduction ratios, computed in exact rational arithmetic before
// the final float conversion.
AccountingBlock accounting(int64_t d_h, const std::vector<int64_t>& input_dims,
                           int64_t params_shared, int64_t params_unshared);

// ---- whole-dataset model evaluation ----
struct EvalPredictions {
  std::vector<int64_t> pred_class, true_class;  // multiclass
  Array pred_bin, true_bin;                     // multilabel actions (N,C)
  Array cpt_pred_bin, cpt_true_bin;             // binarized concepts (N,D_ex)
  Array c_ex;                                   // raw supervised activations (N,D_ex)
  Array c_all;                                  // all concept activations (N,K)
  Array c_sup;                                  // ground-truth labels (N,D_ex)
};

EvalPredictions predict_dataset(Model& model, const Dataset& d, int64_t batch_size);

struct EvalOptions {
  double probe_tau = 1e-3;
  int64_t probe_seed = 0;
  // reference columns for r_bar^2 / probe targets; defaults to the dataset's
  // supervised labels, falling back to its generative bits
  std::optional<Array> reference_concepts;
};

MetricsReport evaluate_model(Model& model, const Dataset& test, int64_t batch_size,
                             const EvalOptions& opts = {});

// ---- limited-supervision sweep (Fig. 3 layout) ----
struct SweepRow {
  int64_t d_ex = 0;
  std::string model;  // "cbm" | "cbmauc"
  int64_t seed = 0;
  double task_error = 0;
  double r_bar_sq = 0;
};

struct SweepOptions {
  int64_t seeds = 3;
  int64_t jobs = 1;
  int64_t total_concepts = 11;  // D_ex + D_im held fixed across points
};

// For each d_ex value trains CBM (d_ex supervised units only) and CBM-AUC
// (d_ex supervised + total-d_ex unsupervised, k = d_im/2), evaluating task
// error and r_bar^2 against the spec's original labeled concepts. The
// supervised subsets are nested and seed-deterministic. d_ex = 0 degenerates
// to M-SENN (cbmauc) and a majority-class predictor (cbm).
std::vector<SweepRow> limited_supervision_sweep(const SyntheticSpec& spec,
                                                const ModelConfig& base_cfg,
                                                const std::vector<int64_t>& d_ex_values,
                                                const SweepOptions& opts = {});

std::string sweep_to_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> sweep_from_csv(const std::string& text);

}  // namespace cbmauc
