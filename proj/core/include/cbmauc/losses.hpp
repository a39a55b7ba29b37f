#pragma once

#include <cstdint>
#include <vector>

#include "cbmauc/config.hpp"
#include "cbmauc/data.hpp"
#include "cbmauc/model.hpp"
#include "cbmauc/tensor.hpp"

namespace cbmauc {

// Stacked minibatch. y_class holds multiclass indices; y_multi the (B,C)
// multilabel targets; c_sup the (B,D_ex) supervised concept labels.
struct Batch {
  Tensor x;
  std::vector<int64_t> y_class;
  Array y_multi;
  Array c_sup;

  int64_t size() const { return x.defined() ? x.dim(0) : 0; }
};

Batch make_batch(const Dataset& d, const std::vector<int64_t>& indices);

// Loss components plus the differentiable total. Scalar fields mirror the
// training-log record; total always equals
//   ((task + alpha*dis) + beta*theta_reg) + lambda*concept
// evaluated in exactly that order.
struct LossBreakdown {
  double task = 0.0;
  double concept_ = 0.0;
  double dis = 0.0;
  double theta_reg = 0.0;
  double total = 0.0;
  Tensor total_tensor;
};

// multiclass: mean softmax cross-entropy; multilabel: mean elementwise
// binary cross-entropy on the logits.
Tensor task_loss(const Tensor& logits, const std::vector<int64_t>& y);
Tensor task_loss(const Tensor& logits, const Array& y01);
Tensor task_loss(const Tensor& logits, const Batch& batch, TaskKind kind);

// Sum over concepts of the per-concept loss, averaged over the batch (mse);
// bce averages over concepts as well so lambda stays scale-comparable.
Tensor concept_loss(const Tensor& c_ex_pred, const Array& c_sup, ConceptLossKind kind);

// || s_real - a ||^2 + || s_fake - b ||^2, averaged over the batch.
Tensor dis_loss(const Tensor& score_real, const Tensor& score_fake, double a = 1.0,
                double b = 0.0);

struct NegativePair {
  Tensor z;       // [c(x_i); h(x_i)]
  Tensor z_fake;  // [c(x_i); h(x_sigma(i))]
};

// sigma must be a derangement of {0..B-1}; detach_h stops discriminator
// gradients at the shared features.
NegativePair build_negative_pairs(const Tensor& c, const Tensor& h,
                                  const std::vector<int64_t>& sigma, bool detach_h);

// Stability residuals r_h^{(t)} = grad_h f_t - (theta_t^T J^c_h)^T in shared-
// feature space; value = sum_t ||r_h^{(t)}||^2 averaged over the batch.
// J^c_h spans the full concatenated concept vector.
struct ThetaRegResult {
  Tensor value;
  TensorList residuals;  // one (B, D_h) tensor per target
};
ThetaRegResult theta_reg_shared_detail(const ForwardOutputs& fwd, bool create_graph);
Tensor theta_reg_shared(const ForwardOutputs& fwd, bool create_graph = false);

// Input-space variant (validation only; guarded by an input-size cap).
struct ThetaRegInputResult {
  double value = 0.0;
  TensorList residuals;  // one (B, D) tensor per target
  Tensor x_leaf;
  ForwardOutputs fwd;
};
ThetaRegInputResult theta_reg_input_detail(Model& model, const Array& x_batch,
                                           bool training = false,
                                           int64_t max_input_numel = 4096);
double theta_reg_input(Model& model, const Array& x_batch, bool training = false,
                       int64_t max_input_numel = 4096);

// Composite objectives. `sigma` is the negative-pair derangement (used when
// alpha > 0); create_graph selects whether the theta regularizer stays
// differentiable (needed to train on it).
LossBreakdown loss_cbm(const Batch& batch, Model& model, double lambda, bool training = true);
LossBreakdown loss_msenn(const Batch& batch, Model& model, double alpha, double beta,
                         const std::vector<int64_t>& sigma, bool training = true);
LossBreakdown loss_cbmauc(const Batch& batch, Model& model, double alpha, double beta,
                          double lambda, const std::vector<int64_t>& sigma,
                          bool training = true);

namespace instrumentation {
// Rows of dL/dh-style Jacobians computed by the theta regularizer; beta = 0
// training must leave this at zero.
void reset_jacobian_counter();
int64_t jacobian_rows();
}  // namespace instrumentation

}  // namespace cbmauc
