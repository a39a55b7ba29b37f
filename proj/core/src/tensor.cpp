#include "cbmauc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#ifdef CBMAUC_USE_BLAS
#include <cblas.h>
#endif

namespace cbmauc {

namespace {

thread_local bool g_grad_mode = true;

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor constant(Array a) { return Tensor(std::move(a), false); }

}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

struct EnableGradGuard {
  EnableGradGuard() : prev_(g_grad_mode) { g_grad_mode = true; }
  ~EnableGradGuard() { g_grad_mode = prev_; }
  bool prev_;
};

Tensor::Tensor(Array value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Tensor::item() const {
  check(node_ && node_->value.size() == 1, "Tensor::item: not a scalar");
  return node_->value[0];
}

Tensor Tensor::detach() const {
  return Tensor(node_->value, false);
}

Tensor Tensor::make_op(const char* op, Array value, TensorList parents,
                       std::function<TensorList(const Tensor&)> vjp) {
  bool track = false;
  if (g_grad_mode) {
    for (const Tensor& p : parents)
      if (p.requires_grad()) track = true;
  }
  Tensor t(std::move(value), track);
  if (track) {
    t.node_->op = op;
    t.node_->parents = std::move(parents);
    t.node_->vjp = std::move(vjp);
  }
  return t;
}

// ---------------------------------------------------------------------------
// grad()

TensorList grad(const Tensor& output, const TensorList& inputs, GradOptions opt) {
  check(output.defined() && output.size() == 1, "grad: output must be a defined scalar");

  std::unordered_set<Node*> input_set;
  for (const Tensor& t : inputs) {
    check(t.defined(), "grad: undefined input tensor");
    input_set.insert(t.node());
  }

  // reaches[n]: some requested input lies in n's parent closure.
  std::unordered_map<Node*, bool> reaches;
  {
    std::vector<Node*> stack{output.node()};
    std::vector<Node*> post;
    std::unordered_set<Node*> seen;
    while (!stack.empty()) {
      Node* n = stack.back();
      if (seen.count(n)) {
        stack.pop_back();
        bool r = input_set.count(n) > 0;
        for (const Tensor& p : n->parents)
          if (p.requires_grad() && reaches[p.node()]) r = true;
        reaches[n] = r;
        post.push_back(n);
        continue;
      }
      seen.insert(n);
      for (const Tensor& p : n->parents)
        if (p.requires_grad() && !seen.count(p.node())) stack.push_back(p.node());
    }
    (void)post;
  }

  auto relevant = [&](Node* n) {
    auto it = reaches.find(n);
    return n->requires_grad && it != reaches.end() && it->second;
  };

  // Topological order (parents after children in `order`), relevant nodes only.
  std::vector<Node*> order;
  {
    std::unordered_set<Node*> done;
    std::vector<std::pair<Node*, size_t>> stack;
    if (relevant(output.node())) stack.push_back({output.node(), 0});
    std::unordered_set<Node*> in_stack{output.node()};
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i++].node();
        if (relevant(p) && !done.count(p) && !in_stack.count(p)) {
          stack.push_back({p, 0});
          in_stack.insert(p);
        }
      } else {
        order.push_back(n);
        done.insert(n);
        in_stack.erase(n);
        stack.pop_back();
      }
    }
    std::reverse(order.begin(), order.end());  // output first
  }

  std::unordered_map<Node*, Tensor> grads;
  TensorList result(inputs.size());

  auto sweep = [&]() {
    grads[output.node()] = constant(Array::scalar(1.0));
    for (Node* n : order) {
      auto git = grads.find(n);
      if (git == grads.end() || !n->vjp) continue;
      Tensor g = git->second;
      if (!same_shape(g.shape(), n->value.shape()))
        g = reshape(g, n->value.shape());
      TensorList pg = n->vjp(g);
      check(pg.size() == n->parents.size(), std::string("grad: vjp arity mismatch in op ") + n->op);
      for (size_t i = 0; i < pg.size(); ++i) {
        Node* p = n->parents[i].node();
        if (!relevant(p)) continue;
        auto pit = grads.find(p);
        if (pit == grads.end())
          grads[p] = pg[i];
        else
          pit->second = add(pit->second, pg[i]);
      }
    }
  };

  if (opt.create_graph) {
    EnableGradGuard on;
    sweep();
  } else {
    NoGradGuard off;
    sweep();
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    auto it = grads.find(inputs[i].node());
    if (it != grads.end() && relevant(inputs[i].node()))
      result[i] = it->second;
    else
      result[i] = constant(Array::zeros(inputs[i].shape()));
  }
  return result;
}

// ---------------------------------------------------------------------------
// elementwise

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(same_shape(a.shape(), b.shape()),
        std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Array v = a.val();
  const Array& bv = b.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] += bv[i];
  return Tensor::make_op("add", std::move(v), {a, b}, [](const Tensor& g) {
    return TensorList{g, g};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Array v = a.val();
  const Array& bv = b.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] -= bv[i];
  return Tensor::make_op("sub", std::move(v), {a, b}, [](const Tensor& g) {
    return TensorList{g, neg(g)};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Array v = a.val();
  const Array& bv = b.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] *= bv[i];
  return Tensor::make_op("mul", std::move(v), {a, b}, [a, b](const Tensor& g) {
    return TensorList{mul(g, b), mul(g, a)};
  });
}

Tensor div_(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Array v = a.val();
  const Array& bv = b.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] /= bv[i];
  return Tensor::make_op("div", std::move(v), {a, b}, [a, b](const Tensor& g) {
    return TensorList{div_(g, b), neg(mul(g, div_(a, square(b))))};
  });
}

Tensor neg(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] = -v[i];
  return Tensor::make_op("neg", std::move(v), {a}, [](const Tensor& g) {
    return TensorList{neg(g)};
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] += s;
  return Tensor::make_op("add_scalar", std::move(v), {a}, [](const Tensor& g) {
    return TensorList{g};
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] *= s;
  return Tensor::make_op("mul_scalar", std::move(v), {a}, [s](const Tensor& g) {
    return TensorList{mul_scalar(g, s)};
  });
}

Tensor exp_(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] = std::exp(v[i]);
  return Tensor::make_op("exp", std::move(v), {a}, [a](const Tensor& g) {
    return TensorList{mul(g, exp_(a))};
  });
}

Tensor log_(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] = std::log(v[i]);
  return Tensor::make_op("log", std::move(v), {a}, [a](const Tensor& g) {
    return TensorList{div_(g, a)};
  });
}

Tensor sqrt_(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(v[i]);
  return Tensor::make_op("sqrt", std::move(v), {a}, [a](const Tensor& g) {
    return TensorList{div_(mul_scalar(g, 0.5), sqrt_(a))};
  });
}

Tensor tanh_(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] = std::tanh(v[i]);
  return Tensor::make_op("tanh", std::move(v), {a}, [a](const Tensor& g) {
    Tensor t = tanh_(a);
    return TensorList{mul(g, add_scalar(neg(square(t)), 1.0))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) {
    double x = v[i];
    v[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return Tensor::make_op("sigmoid", std::move(v), {a}, [a](const Tensor& g) {
    Tensor s = sigmoid(a);
    return TensorList{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
  });
}

Tensor softplus(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) {
    double x = v[i];
    v[i] = x > 30.0 ? x : std::log1p(std::exp(x));
  }
  return Tensor::make_op("softplus", std::move(v), {a}, [a](const Tensor& g) {
    return TensorList{mul(g, sigmoid(a))};
  });
}

Tensor relu(const Tensor& a) {
  Array v = a.val();
  Array mask(a.shape());
  for (int64_t i = 0; i < v.size(); ++i) {
    mask[i] = v[i] > 0.0 ? 1.0 : 0.0;
    v[i] = std::max(v[i], 0.0);
  }
  Tensor m = constant(std::move(mask));
  return Tensor::make_op("relu", std::move(v), {a}, [m](const Tensor& g) {
    return TensorList{mul(g, m)};
  });
}

Tensor square(const Tensor& a) {
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] *= v[i];
  return Tensor::make_op("square", std::move(v), {a}, [a](const Tensor& g) {
    return TensorList{mul(g, mul_scalar(a, 2.0))};
  });
}

// ---------------------------------------------------------------------------
// shape / indexing

Tensor reshape(const Tensor& a, Shape shape) {
  check(numel(shape) == a.size(),
        "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Array v = a.val();
  Array out = Array::from(shape, std::vector<double>(v.data(), v.data() + v.size()));
  Shape orig = a.shape();
  return Tensor::make_op("reshape", std::move(out), {a}, [orig](const Tensor& g) {
    return TensorList{reshape(g, orig)};
  });
}

Tensor transpose2(const Tensor& a) {
  check(a.val().ndim() == 2, "transpose2: expected rank-2, got " + shape_str(a.shape()));
  int64_t m = a.dim(0), n = a.dim(1);
  Array v(Shape{n, m});
  const Array& av = a.val();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) v.at2(j, i) = av.at2(i, j);
  return Tensor::make_op("transpose2", std::move(v), {a}, [](const Tensor& g) {
    return TensorList{transpose2(g)};
  });
}

static Tensor pad_cols(const Tensor& g, int64_t total_cols, int64_t c0);

Tensor slice_cols(const Tensor& a, int64_t c0, int64_t c1) {
  check(a.val().ndim() == 2, "slice_cols: expected rank-2, got " + shape_str(a.shape()));
  int64_t rows = a.dim(0), cols = a.dim(1);
  check(0 <= c0 && c0 <= c1 && c1 <= cols, "slice_cols: bad range");
  Array v(Shape{rows, c1 - c0});
  const Array& av = a.val();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = c0; j < c1; ++j) v.at2(i, j - c0) = av.at2(i, j);
  return Tensor::make_op("slice_cols", std::move(v), {a}, [cols, c0](const Tensor& g) {
    return TensorList{pad_cols(g, cols, c0)};
  });
}

static Tensor pad_cols(const Tensor& g, int64_t total_cols, int64_t c0) {
  int64_t rows = g.dim(0), cols = g.dim(1);
  Array v(Shape{rows, total_cols});
  const Array& gv = g.val();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) v.at2(i, c0 + j) = gv.at2(i, j);
  return Tensor::make_op("pad_cols", std::move(v), {g}, [c0, cols](const Tensor& gg) {
    return TensorList{slice_cols(gg, c0, c0 + cols)};
  });
}

Tensor concat_cols(const TensorList& parts) {
  check(!parts.empty(), "concat_cols: empty list");
  int64_t rows = parts[0].dim(0);
  int64_t cols = 0;
  for (const Tensor& p : parts) {
    check(p.val().ndim() == 2 && p.dim(0) == rows, "concat_cols: row mismatch");
    cols += p.dim(1);
  }
  Array v(Shape{rows, cols});
  std::vector<int64_t> offs;
  int64_t off = 0;
  for (const Tensor& p : parts) {
    offs.push_back(off);
    const Array& pv = p.val();
    for (int64_t i = 0; i < rows; ++i)
      for (int64_t j = 0; j < p.dim(1); ++j) v.at2(i, off + j) = pv.at2(i, j);
    off += p.dim(1);
  }
  std::vector<int64_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  return Tensor::make_op("concat_cols", std::move(v), parts, [offs, widths](const Tensor& g) {
    TensorList gs;
    for (size_t i = 0; i < offs.size(); ++i)
      gs.push_back(slice_cols(g, offs[i], offs[i] + widths[i]));
    return gs;
  });
}

static Tensor scatter_rows_add(const Tensor& g, const std::vector<int64_t>& idx, int64_t rows);

Tensor gather_rows(const Tensor& a, std::vector<int64_t> idx) {
  check(a.val().ndim() == 2, "gather_rows: expected rank-2");
  int64_t rows = a.dim(0), cols = a.dim(1);
  Array v(Shape{static_cast<int64_t>(idx.size()), cols});
  const Array& av = a.val();
  for (size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] >= 0 && idx[i] < rows, "gather_rows: index out of range");
    for (int64_t j = 0; j < cols; ++j) v.at2(static_cast<int64_t>(i), j) = av.at2(idx[i], j);
  }
  return Tensor::make_op("gather_rows", std::move(v), {a}, [idx, rows](const Tensor& g) {
    return TensorList{scatter_rows_add(g, idx, rows)};
  });
}

static Tensor scatter_rows_add(const Tensor& g, const std::vector<int64_t>& idx, int64_t rows) {
  int64_t cols = g.dim(1);
  Array v(Shape{rows, cols});
  const Array& gv = g.val();
  for (size_t i = 0; i < idx.size(); ++i)
    for (int64_t j = 0; j < cols; ++j) v.at2(idx[i], j) += gv.at2(static_cast<int64_t>(i), j);
  return Tensor::make_op("scatter_rows_add", std::move(v), {g}, [idx](const Tensor& gg) {
    return TensorList{gather_rows(gg, idx)};
  });
}

Tensor broadcast_rows(const Tensor& v, int64_t rows) {
  check(v.val().ndim() == 1, "broadcast_rows: expected rank-1, got " + shape_str(v.shape()));
  int64_t d = v.dim(0);
  Array out(Shape{rows, d});
  const Array& vv = v.val();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < d; ++j) out.at2(i, j) = vv[j];
  return Tensor::make_op("broadcast_rows", std::move(out), {v}, [](const Tensor& g) {
    return TensorList{sum_axis0(g)};
  });
}

Tensor broadcast_cols(const Tensor& c, int64_t cols) {
  check(c.val().ndim() == 2 && c.dim(1) == 1, "broadcast_cols: expected (B,1)");
  int64_t rows = c.dim(0);
  Array out(Shape{rows, cols});
  const Array& cv = c.val();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out.at2(i, j) = cv.at2(i, 0);
  return Tensor::make_op("broadcast_cols", std::move(out), {c}, [](const Tensor& g) {
    return TensorList{sum_axis1(g)};
  });
}

Tensor broadcast_scalar(const Tensor& s, Shape shape) {
  check(s.size() == 1, "broadcast_scalar: expected scalar");
  Array out(shape, s.val()[0]);
  return Tensor::make_op("broadcast_scalar", std::move(out), {s}, [](const Tensor& g) {
    return TensorList{sum_all(g)};
  });
}

// ---------------------------------------------------------------------------
// reductions

Tensor sum_all(const Tensor& a) {
  double acc = 0.0;
  const Array& av = a.val();
  for (int64_t i = 0; i < av.size(); ++i) acc += av[i];
  Shape orig = a.shape();
  return Tensor::make_op("sum_all", Array::scalar(acc), {a}, [orig](const Tensor& g) {
    return TensorList{broadcast_scalar(g, orig)};
  });
}

Tensor mean_all(const Tensor& a) {
  check(a.size() > 0, "mean_all: empty tensor");
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_axis0(const Tensor& a) {
  check(a.val().ndim() == 2, "sum_axis0: expected rank-2");
  int64_t rows = a.dim(0), cols = a.dim(1);
  Array out(Shape{cols});
  const Array& av = a.val();
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[j] += av.at2(i, j);
  return Tensor::make_op("sum_axis0", std::move(out), {a}, [rows](const Tensor& g) {
    return TensorList{broadcast_rows(g, rows)};
  });
}

Tensor mean_axis0(const Tensor& a) {
  check(a.dim(0) > 0, "mean_axis0: empty axis");
  return mul_scalar(sum_axis0(a), 1.0 / static_cast<double>(a.dim(0)));
}

Tensor sum_axis1(const Tensor& a) {
  check(a.val().ndim() == 2, "sum_axis1: expected rank-2");
  int64_t rows = a.dim(0), cols = a.dim(1);
  Array out(Shape{rows, 1});
  const Array& av = a.val();
  for (int64_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < cols; ++j) acc += av.at2(i, j);
    out.at2(i, 0) = acc;
  }
  return Tensor::make_op("sum_axis1", std::move(out), {a}, [cols](const Tensor& g) {
    return TensorList{broadcast_cols(g, cols)};
  });
}

// ---------------------------------------------------------------------------
// linear algebra

void gemm(int64_t m, int64_t n, int64_t k, const double* a, const double* b, double* c,
          bool transpose_a, bool transpose_b) {
#ifdef CBMAUC_USE_BLAS
  cblas_dgemm(CblasRowMajor, transpose_a ? CblasTrans : CblasNoTrans,
              transpose_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a, static_cast<int>(transpose_a ? m : k), b,
              static_cast<int>(transpose_b ? k : n), 0.0, c, static_cast<int>(n));
#else
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) {
        double av = transpose_a ? a[p * m + i] : a[i * k + p];
        double bv = transpose_b ? b[j * k + p] : b[p * n + j];
        acc += av * bv;
      }
      c[i * n + j] = acc;
    }
#endif
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.val().ndim() == 2 && b.val().ndim() == 2, "matmul: expected rank-2 operands");
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  check(k == k2, "matmul: inner dimension mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  Array out(Shape{m, n});
  gemm(m, n, k, a.val().data(), b.val().data(), out.data());
  return Tensor::make_op("matmul", std::move(out), {a, b}, [a, b](const Tensor& g) {
    return TensorList{matmul(g, transpose2(b)), matmul(transpose2(a), g)};
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(x.val().ndim() == 2, "linear: x must be (B,I)");
  check(w.val().ndim() == 2 && w.dim(1) == x.dim(1),
        "linear: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  check(b.val().ndim() == 1 && b.dim(0) == w.dim(0), "linear: bias shape mismatch");
  return add(matmul(x, transpose2(w)), broadcast_rows(b, x.dim(0)));
}

// ---------------------------------------------------------------------------
// k-winners-take-all

Array kwta_mask(const Array& a, int64_t k) {
  if (a.ndim() != 2) throw std::invalid_argument("kwta: expected rank-2, got " + shape_str(a.shape()));
  int64_t rows = a.dim(0), cols = a.dim(1);
  if (k < 0 || k > cols)
    throw std::invalid_argument("kwta: k=" + std::to_string(k) + " out of range [0," +
                                std::to_string(cols) + "]");
  Array mask(a.shape());
  std::vector<std::pair<double, int64_t>> row(static_cast<size_t>(cols));
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) row[static_cast<size_t>(j)] = {a.at2(i, j), j};
    // k largest by value; ties keep the lowest index
    std::partial_sort(row.begin(), row.begin() + k, row.end(), [](auto& x, auto& y) {
      if (x.first != y.first) return x.first > y.first;
      return x.second < y.second;
    });
    for (int64_t j = 0; j < k; ++j) mask.at2(i, row[static_cast<size_t>(j)].second) = 1.0;
  }
  return mask;
}

Tensor kwta_rows(const Tensor& a, int64_t k) {
  Array mask = kwta_mask(a.val(), k);
  Array v = a.val();
  for (int64_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  Tensor m = constant(std::move(mask));
  return Tensor::make_op("kwta", std::move(v), {a}, [m](const Tensor& g) {
    return TensorList{mul(g, m)};
  });
}

}  // namespace cbmauc
