#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cbmauc/array.hpp"

namespace cbmauc {

class Tensor;
using TensorList = std::vector<Tensor>;

// One node of the eager autodiff tape. `vjp` maps the upstream gradient to
// per-parent gradients; it is built from Tensor ops, so when grad() runs with
// create_graph the emitted gradients are themselves differentiable (which is
// what makes training through gradient-norm penalties possible).
struct Node {
  Array value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> parents;
  std::function<TensorList(const Tensor& g)> vjp;  // empty for leaves
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false);

  const Array& val() const { return node_->value; }
  Array& mutable_val() { return node_->value; }  // optimizer in-place updates
  const Shape& shape() const { return node_->value.shape(); }
  int64_t size() const { return node_->value.size(); }
  int64_t dim(int i) const { return node_->value.dim(i); }
  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  double item() const;

  Tensor detach() const;

  Node* node() const { return node_.get(); }
  std::shared_ptr<Node> shared_node() const { return node_; }

  static Tensor make_op(const char* op, Array value, TensorList parents,
                        std::function<TensorList(const Tensor&)> vjp);

 private:
  std::shared_ptr<Node> node_;
};

// Grad mode gates whether ops record vjps. grad() with create_graph=true runs
// the backward sweep with recording on, so gradients carry history.
bool grad_mode_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

struct GradOptions {
  bool create_graph = false;
};

// Reverse-mode sweep from a scalar `output` to `inputs`. Returns one gradient
// per input (zeros when unreached). Only nodes on a path from an input to the
// output are visited, so requesting d/dh never descends below h.
TensorList grad(const Tensor& output, const TensorList& inputs, GradOptions opt = {});

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div_(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor exp_(const Tensor& a);
Tensor log_(const Tensor& a);
Tensor sqrt_(const Tensor& a);
Tensor tanh_(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1+e^x), overflow-safe
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);

// ---- shape / indexing ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2(const Tensor& a);                       // (m,n) -> (n,m)
Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1);  // (B,D) -> (B,c1-c0)
Tensor concat_cols(const TensorList& parts);              // (B,Di) -> (B,sum Di)
Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx);
Tensor broadcast_rows(const Tensor& v, int64_t rows);     // (D) -> (rows,D)
Tensor broadcast_cols(const Tensor& c, int64_t cols);     // (B,1) -> (B,cols)
Tensor broadcast_scalar(const Tensor& s, Shape shape);    // (1) -> shape

// ---- reductions ----
Tensor sum_all(const Tensor& a);              // -> (1)
Tensor mean_all(const Tensor& a);             // -> (1)
Tensor sum_axis0(const Tensor& a);            // (B,D) -> (D)
Tensor mean_axis0(const Tensor& a);           // (B,D) -> (D)
Tensor sum_axis1(const Tensor& a);            // (B,D) -> (B,1)

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // (m,k)x(k,n) -> (m,n)
// x (B,I), w (O,I), b (O) -> (B,O); the standard fully connected layer.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- sparsity ----
// Row-wise k-winners-take-all: keep the k largest entries per row unchanged,
// zero the rest. Ties broken toward the lowest index. Gradient passes through
// retained entries only.
Tensor kwta_rows(const Tensor& a, int64_t k);
Array kwta_mask(const Array& a, int64_t k);  // the retention mask itself

// ---- conv backbone primitives (first-order gradients only) ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad);
Tensor maxpool2(const Tensor& x);           // 2x2, stride 2
Tensor global_avg_pool(const Tensor& x);    // (B,C,H,W) -> (B,C)

// GEMM kernel used by matmul/conv (row-major, C = A*B). Exposed for tests.
void gemm(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool transpose_a = false, bool transpose_b = false);

}  // namespace cbmauc
