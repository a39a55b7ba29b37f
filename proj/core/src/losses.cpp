#include "cbmauc/losses.hpp"

#include <atomic>
#include <cmath>

#include "cbmauc/errors.hpp"

namespace cbmauc {

namespace instrumentation {
namespace {
std::atomic<int64_t> g_jacobian_rows{0};
}
void reset_jacobian_counter() { g_jacobian_rows = 0; }
int64_t jacobian_rows() { return g_jacobian_rows.load(); }
}  // namespace instrumentation

Batch make_batch(const Dataset& d, const std::vector<int64_t>& indices) {
  if (indices.empty()) throw ValidationError("make_batch: empty index list");
  const Example& first = d.examples[static_cast<size_t>(indices[0])];
  Shape xs = first.x.shape();
  Shape batched;
  batched.push_back(static_cast<int64_t>(indices.size()));
  for (int64_t dim : xs) batched.push_back(dim);

  Batch b;
  Array x(batched);
  int64_t per = first.x.size();
  int64_t dex = static_cast<int64_t>(first.c_sup.size());
  Array c_sup(Shape{static_cast<int64_t>(indices.size()), dex});
  Array y_multi;
  if (d.task_kind == TaskKind::multilabel)
    y_multi = Array(Shape{static_cast<int64_t>(indices.size()), d.num_targets});

  for (size_t i = 0; i < indices.size(); ++i) {
    const Example& ex = d.examples[static_cast<size_t>(indices[i])];
    if (ex.x.size() != per) throw ValidationError("make_batch: ragged example shapes");
    for (int64_t p = 0; p < per; ++p) x[static_cast<int64_t>(i) * per + p] = ex.x[p];
    for (int64_t j = 0; j < dex; ++j) c_sup.at2(static_cast<int64_t>(i), j) = ex.c_sup[static_cast<size_t>(j)];
    if (d.task_kind == TaskKind::multiclass) {
      b.y_class.push_back(static_cast<int64_t>(ex.y[0]));
    } else {
      for (int64_t c = 0; c < d.num_targets; ++c)
        y_multi.at2(static_cast<int64_t>(i), c) = ex.y[static_cast<size_t>(c)];
    }
  }
  b.x = Tensor(std::move(x));
  b.c_sup = std::move(c_sup);
  b.y_multi = std::move(y_multi);
  return b;
}

// ---------------------------------------------------------------------------
// base losses

Tensor task_loss(const Tensor& logits, const std::vector<int64_t>& y) {
  int64_t b_ = logits.dim(0), c_ = logits.dim(1);
  if (static_cast<int64_t>(y.size()) != b_)
    throw ValidationError("task_loss: batch has " + std::to_string(b_) + " rows but " +
                          std::to_string(y.size()) + " labels");
  Array onehot(Shape{b_, c_});
  Array rowmax(Shape{b_, 1});
  for (int64_t i = 0; i < b_; ++i) {
    int64_t yi = y[static_cast<size_t>(i)];
    if (yi < 0 || yi >= c_)
      throw ValidationError("task_loss: class index " + std::to_string(yi) + " out of [0," +
                            std::to_string(c_) + ")");
    onehot.at2(i, yi) = 1.0;
    double m = logits.val().at2(i, 0);
    for (int64_t j = 1; j < c_; ++j) m = std::max(m, logits.val().at2(i, j));
    rowmax.at2(i, 0) = m;
  }
  // logsumexp with a constant shift (exact for gradients of every order)
  Tensor shift = broadcast_cols(Tensor(std::move(rowmax)), c_);
  Tensor lse = add(log_(sum_axis1(exp_(sub(logits, shift)))), slice_cols(shift, 0, 1));
  Tensor picked = sum_axis1(mul(logits, Tensor(std::move(onehot))));
  return mean_all(sub(lse, picked));
}

Tensor task_loss(const Tensor& logits, const Array& y01) {
  if (!same_shape(logits.shape(), y01.shape()))
    throw ValidationError("task_loss: logits " + shape_str(logits.shape()) +
                          " vs targets " + shape_str(y01.shape()));
  for (int64_t i = 0; i < y01.size(); ++i)
    if (y01[i] < 0.0 || y01[i] > 1.0)
      throw ValidationError("task_loss: multilabel target outside [0,1]");
  // mean over all entries of softplus(z) - t*z
  Tensor t(y01);
  return mean_all(sub(softplus(logits), mul(logits, t)));
}

Tensor task_loss(const Tensor& logits, const Batch& batch, TaskKind kind) {
  return kind == TaskKind::multiclass ? task_loss(logits, batch.y_class)
                                      : task_loss(logits, batch.y_multi);
}

Tensor concept_loss(const Tensor& c_ex_pred, const Array& c_sup, ConceptLossKind kind) {
  if (!same_shape(c_ex_pred.shape(), c_sup.shape()))
    throw ValidationError("concept_loss: predictions " + shape_str(c_ex_pred.shape()) +
                          " vs labels " + shape_str(c_sup.shape()));
  if (c_ex_pred.dim(1) == 0) return Tensor(Array::scalar(0.0));
  Tensor labels(c_sup);
  if (kind == ConceptLossKind::mse) {
    // sum over concepts, mean over batch
    return mean_all(sum_axis1(square(sub(c_ex_pred, labels))));
  }
  // bce over probabilities, averaged over concepts and batch
  const double lo = 1e-12;
  Array clipped = c_ex_pred.val();
  for (int64_t i = 0; i < clipped.size(); ++i)
    clipped[i] = std::min(1.0 - lo, std::max(lo, clipped[i]));
  // clip only as values; gradient flows through the unclipped prediction
  Tensor p = add(sub(c_ex_pred, c_ex_pred.detach()), Tensor(std::move(clipped)));
  Tensor one_minus_t(Array::from(c_sup.shape(), [&] {
    std::vector<double> v(static_cast<size_t>(c_sup.size()));
    for (int64_t i = 0; i < c_sup.size(); ++i) v[static_cast<size_t>(i)] = 1.0 - c_sup[i];
    return v;
  }()));
  Tensor nll = neg(add(mul(labels, log_(p)),
                       mul(one_minus_t, log_(add_scalar(neg(p), 1.0)))));
  return mean_all(nll);
}

Tensor dis_loss(const Tensor& score_real, const Tensor& score_fake, double a, double b) {
  return add(mean_all(square(add_scalar(score_real, -a))),
             mean_all(square(add_scalar(score_fake, -b))));
}

NegativePair build_negative_pairs(const Tensor& c, const Tensor& h,
                                  const std::vector<int64_t>& sigma, bool detach_h) {
  int64_t b_ = c.dim(0);
  if (b_ < 2) throw ValidationError("negative pairs need batch size >= 2");
  if (static_cast<int64_t>(sigma.size()) != b_)
    throw ValidationError("negative pairs: sigma size mismatch");
  for (size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] == static_cast<int64_t>(i))
      throw ValidationError("negative pairs: sigma must be a derangement");
  Tensor hh = detach_h ? h.detach() : h;
  NegativePair p;
  p.z = concat_cols({c, hh});
  p.z_fake = concat_cols({c, gather_rows(hh, sigma)});
  return p;
}

// ---------------------------------------------------------------------------
// theta-stability regularizers

ThetaRegResult theta_reg_shared_detail(const ForwardOutputs& fwd, bool create_graph) {
  int64_t b_ = fwd.h.dim(0);
  int64_t dh = fwd.h.dim(1);
  int64_t k = fwd.concepts.c.dim(1);
  int64_t targets = fwd.num_targets;
  GradOptions opt{create_graph};

  // one backward row per concept: J^c_h over the full concept vector
  TensorList jac_rows;
  for (int64_t j = 0; j < k; ++j) {
    Tensor cj = sum_all(slice_cols(fwd.concepts.c, j, j + 1));
    jac_rows.push_back(grad(cj, {fwd.h}, opt)[0]);
    instrumentation::g_jacobian_rows.fetch_add(1);
  }

  ThetaRegResult out;
  Tensor acc;
  for (int64_t t = 0; t < targets; ++t) {
    Tensor ft = sum_all(slice_cols(fwd.logits, t, t + 1));
    Tensor grad_h_f = grad(ft, {fwd.h}, opt)[0];  // (B, D_h)
    instrumentation::g_jacobian_rows.fetch_add(1);

    Tensor theta_t = fwd.theta_row(t);  // (B, K)
    Tensor combo;
    for (int64_t j = 0; j < k; ++j) {
      Tensor w = broadcast_cols(slice_cols(theta_t, j, j + 1), dh);
      Tensor term = mul(w, jac_rows[static_cast<size_t>(j)]);
      combo = combo.defined() ? add(combo, term) : term;
    }
    Tensor residual = combo.defined() ? sub(grad_h_f, combo) : grad_h_f;
    out.residuals.push_back(residual);
    Tensor sq = mean_all(sum_axis1(square(residual)));  // batch mean of row norms
    acc = acc.defined() ? add(acc, sq) : sq;
  }
  out.value = acc.defined() ? acc : Tensor(Array::scalar(0.0));
  (void)b_;
  return out;
}

Tensor theta_reg_shared(const ForwardOutputs& fwd, bool create_graph) {
  return theta_reg_shared_detail(fwd, create_graph).value;
}

ThetaRegInputResult theta_reg_input_detail(Model& model, const Array& x_batch, bool training,
                                           int64_t max_input_numel) {
  Shape xs = x_batch.shape();
  if (xs.empty()) throw ValidationError("theta_reg_input: empty input");
  int64_t per_example = numel(Shape(xs.begin() + 1, xs.end()));
  if (per_example > max_input_numel)
    throw ValidationError("theta_reg_input: input of " + std::to_string(per_example) +
                          " elements exceeds the cap of " + std::to_string(max_input_numel) +
                          " (this operation exists for validation at small sizes)");

  ThetaRegInputResult out;
  out.x_leaf = Tensor(x_batch, /*requires_grad=*/true);
  out.fwd = model.forward(out.x_leaf, training);
  const ForwardOutputs& fwd = out.fwd;
  int64_t k = fwd.concepts.c.dim(1);
  GradOptions opt{false};

  TensorList jac_rows;
  for (int64_t j = 0; j < k; ++j) {
    Tensor cj = sum_all(slice_cols(fwd.concepts.c, j, j + 1));
    jac_rows.push_back(grad(cj, {out.x_leaf}, opt)[0]);
    instrumentation::g_jacobian_rows.fetch_add(1);
  }

  int64_t b_ = x_batch.dim(0);
  Shape flat{b_, per_example};
  double total = 0.0;
  for (int64_t t = 0; t < fwd.num_targets; ++t) {
    Tensor ft = sum_all(slice_cols(fwd.logits, t, t + 1));
    Tensor grad_x_f = reshape(grad(ft, {out.x_leaf}, opt)[0], flat);
    instrumentation::g_jacobian_rows.fetch_add(1);

    Tensor theta_t = fwd.theta_row(t);
    Tensor combo;
    for (int64_t j = 0; j < k; ++j) {
      Tensor w = broadcast_cols(slice_cols(theta_t, j, j + 1), per_example);
      Tensor term = mul(w, reshape(jac_rows[static_cast<size_t>(j)], flat));
      combo = combo.defined() ? add(combo, term) : term;
    }
    Tensor residual = combo.defined() ? sub(grad_x_f, combo) : grad_x_f;
    out.residuals.push_back(residual);
    total += mean_all(sum_axis1(square(residual))).item();
  }
  out.value = total;
  return out;
}

double theta_reg_input(Model& model, const Array& x_batch, bool training,
                       int64_t max_input_numel) {
  return theta_reg_input_detail(model, x_batch, training, max_input_numel).value;
}

// ---------------------------------------------------------------------------
// composite objectives

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v))
    throw DivergenceError(std::string("non-finite loss term: ") + term + " = " +
                          std::to_string(v));
}

LossBreakdown combine(const Tensor& task, const Tensor* dis, const Tensor* reg,
                      const Tensor* concept_term, double alpha, double beta, double lambda) {
  LossBreakdown out;
  Tensor total = task;
  out.task = task.item();
  require_finite(out.task, "task");
  if (dis) {
    out.dis = dis->item();
    require_finite(out.dis, "dis");
    total = add(total, mul_scalar(*dis, alpha));
  }
  if (reg) {
    out.theta_reg = reg->item();
    require_finite(out.theta_reg, "theta_reg");
    total = add(total, mul_scalar(*reg, beta));
  }
  if (concept_term) {
    out.concept_ = concept_term->item();
    require_finite(out.concept_, "concept");
    total = add(total, mul_scalar(*concept_term, lambda));
  }
  out.total_tensor = total;
  out.total = total.item();
  require_finite(out.total, "total");
  return out;
}

}  // namespace

LossBreakdown loss_cbm(const Batch& batch, Model& model, double lambda, bool training) {
  if (model.config().model != ModelKind::cbm)
    throw ValidationError("loss_cbm expects a cbm-mode model");
  if (model.config().d_ex > 0 && batch.c_sup.size() == 0)
    throw ValidationError("loss_cbm: missing concept labels");
  ForwardOutputs fwd = model.forward(batch.x, training);
  Tensor task = task_loss(fwd.logits, batch, model.config().task_kind);
  Tensor concept_term = concept_loss(fwd.concepts.c_ex, batch.c_sup, model.config().concept_loss);
  return combine(task, nullptr, nullptr, &concept_term, 0.0, 0.0, lambda);
}

LossBreakdown loss_msenn(const Batch& batch, Model& model, double alpha, double beta,
                         const std::vector<int64_t>& sigma, bool training) {
  if (model.config().model == ModelKind::cbm)
    throw ValidationError("loss_msenn expects a theta-parametrized model");
  if (model.config().d_ex != 0)
    throw ValidationError("loss_msenn: supervised concepts must be absent (d_ex = 0)");
  ForwardOutputs fwd = model.forward(batch.x, training);
  Tensor task = task_loss(fwd.logits, batch, model.config().task_kind);
  Tensor dis, reg;
  if (alpha > 0) {
    NegativePair p = build_negative_pairs(fwd.concepts.c, fwd.h, sigma,
                                          model.config().dis_detach_h);
    dis = dis_loss(model.discriminate(p.z), model.discriminate(p.z_fake));
  }
  if (beta > 0) reg = theta_reg_shared(fwd, /*create_graph=*/training);
  return combine(task, alpha > 0 ? &dis : nullptr, beta > 0 ? &reg : nullptr, nullptr, alpha,
                 beta, 0.0);
}

LossBreakdown loss_cbmauc(const Batch& batch, Model& model, double alpha, double beta,
                          double lambda, const std::vector<int64_t>& sigma, bool training) {
  if (model.config().model == ModelKind::cbm)
    throw ValidationError("loss_cbmauc expects a theta-parametrized model");
  if (model.config().d_ex < 1)
    throw ValidationError("loss_cbmauc: needs supervised concepts (d_ex >= 1)");
  if (batch.c_sup.size() == 0) throw ValidationError("loss_cbmauc: missing concept labels");
  ForwardOutputs fwd = model.forward(batch.x, training);
  Tensor task = task_loss(fwd.logits, batch, model.config().task_kind);
  Tensor concept_term = concept_loss(fwd.concepts.c_ex, batch.c_sup, model.config().concept_loss);
  Tensor dis, reg;
  if (alpha > 0) {
    NegativePair p = build_negative_pairs(fwd.concepts.c, fwd.h, sigma,
                                          model.config().dis_detach_h);
    dis = dis_loss(model.discriminate(p.z), model.discriminate(p.z_fake));
  }
  if (beta > 0) reg = theta_reg_shared(fwd, /*create_graph=*/training);
  return combine(task, alpha > 0 ? &dis : nullptr, beta > 0 ? &reg : nullptr, &concept_term, alpha,
                 beta, lambda);
}

}  // namespace cbmauc
