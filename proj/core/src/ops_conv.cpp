#include <cmath>
#include <stdexcept>
#include <vector>

#include "cbmauc/tensor.hpp"

namespace cbmauc {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

[[noreturn]] TensorList no_second_order(const Tensor&) {
  throw std::logic_error("second-order derivatives are not supported through conv/pool ops");
}

struct ConvDims {
  int64_t B, C, H, W, O, KH, KW, stride, pad, HO, WO;
};

ConvDims conv_dims(const Shape& xs, const Shape& ws, int64_t stride, int64_t pad) {
  ConvDims d{};
  d.B = xs[0];
  d.C = xs[1];
  d.H = xs[2];
  d.W = xs[3];
  d.O = ws[0];
  d.KH = ws[2];
  d.KW = ws[3];
  d.stride = stride;
  d.pad = pad;
  d.HO = (d.H + 2 * pad - d.KH) / stride + 1;
  d.WO = (d.W + 2 * pad - d.KW) / stride + 1;
  return d;
}

// (C,H,W) image -> (C*KH*KW, HO*WO) patch matrix
void im2col(const double* img, const ConvDims& d, double* col) {
  int64_t P = d.HO * d.WO;
  for (int64_t c = 0; c < d.C; ++c)
    for (int64_t kh = 0; kh < d.KH; ++kh)
      for (int64_t kw = 0; kw < d.KW; ++kw) {
        double* row = col + ((c * d.KH + kh) * d.KW + kw) * P;
        for (int64_t ho = 0; ho < d.HO; ++ho) {
          int64_t hi = ho * d.stride + kh - d.pad;
          for (int64_t wo = 0; wo < d.WO; ++wo) {
            int64_t wi = wo * d.stride + kw - d.pad;
            row[ho * d.WO + wo] = (hi >= 0 && hi < d.H && wi >= 0 && wi < d.W)
                                      ? img[(c * d.H + hi) * d.W + wi]
                                      : 0.0;
          }
        }
      }
}

// transpose of im2col: scatter-add patch matrix back into the image
void col2im(const double* col, const ConvDims& d, double* img) {
  int64_t P = d.HO * d.WO;
  for (int64_t c = 0; c < d.C; ++c)
    for (int64_t kh = 0; kh < d.KH; ++kh)
      for (int64_t kw = 0; kw < d.KW; ++kw) {
        const double* row = col + ((c * d.KH + kh) * d.KW + kw) * P;
        for (int64_t ho = 0; ho < d.HO; ++ho) {
          int64_t hi = ho * d.stride + kh - d.pad;
          if (hi < 0 || hi >= d.H) continue;
          for (int64_t wo = 0; wo < d.WO; ++wo) {
            int64_t wi = wo * d.stride + kw - d.pad;
            if (wi < 0 || wi >= d.W) continue;
            img[(c * d.H + hi) * d.W + wi] += row[ho * d.WO + wo];
          }
        }
      }
}

Array conv2d_value(const Array& x, const Array& w, const Array& b, const ConvDims& d) {
  Array out(Shape{d.B, d.O, d.HO, d.WO});
  int64_t K = d.C * d.KH * d.KW, P = d.HO * d.WO;
  std::vector<double> col(static_cast<size_t>(K * P));
  for (int64_t i = 0; i < d.B; ++i) {
    im2col(x.data() + i * d.C * d.H * d.W, d, col.data());
    double* y = out.data() + i * d.O * P;
    gemm(d.O, P, K, w.data(), col.data(), y);
    for (int64_t o = 0; o < d.O; ++o) {
      double bias = b[o];
      for (int64_t p = 0; p < P; ++p) y[o * P + p] += bias;
    }
  }
  return out;
}

Array conv2d_dx_value(const Array& g, const Array& w, const ConvDims& d) {
  Array dx(Shape{d.B, d.C, d.H, d.W});
  int64_t K = d.C * d.KH * d.KW, P = d.HO * d.WO;
  std::vector<double> col(static_cast<size_t>(K * P));
  for (int64_t i = 0; i < d.B; ++i) {
    gemm(K, P, d.O, w.data(), g.data() + i * d.O * P, col.data(), /*ta=*/true);
    col2im(col.data(), d, dx.data() + i * d.C * d.H * d.W);
  }
  return dx;
}

Array conv2d_dw_value(const Array& g, const Array& x, const ConvDims& d) {
  Array dw(Shape{d.O, d.C, d.KH, d.KW});
  int64_t K = d.C * d.KH * d.KW, P = d.HO * d.WO;
  std::vector<double> col(static_cast<size_t>(K * P));
  std::vector<double> acc(static_cast<size_t>(d.O * K));
  for (int64_t i = 0; i < d.B; ++i) {
    im2col(x.data() + i * d.C * d.H * d.W, d, col.data());
    gemm(d.O, K, P, g.data() + i * d.O * P, col.data(), acc.data(), false, /*tb=*/true);
    for (int64_t j = 0; j < d.O * K; ++j) dw[j] += acc[j];
  }
  return dw;
}

Array conv2d_db_value(const Array& g, const ConvDims& d) {
  Array db(Shape{d.O});
  int64_t P = d.HO * d.WO;
  for (int64_t i = 0; i < d.B; ++i)
    for (int64_t o = 0; o < d.O; ++o) {
      double acc = 0.0;
      const double* gp = g.data() + (i * d.O + o) * P;
      for (int64_t p = 0; p < P; ++p) acc += gp[p];
      db[o] += acc;
    }
  return db;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad) {
  check(x.val().ndim() == 4, "conv2d: input must be (B,C,H,W)");
  check(w.val().ndim() == 4 && w.dim(1) == x.dim(1),
        "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
  check(b.val().ndim() == 1 && b.dim(0) == w.dim(0), "conv2d: bias shape mismatch");
  check(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  ConvDims d = conv_dims(x.shape(), w.shape(), stride, pad);
  check(d.HO >= 1 && d.WO >= 1, "conv2d: kernel larger than padded input");

  Array out = conv2d_value(x.val(), w.val(), b.val(), d);
  return Tensor::make_op("conv2d", std::move(out), {x, w, b}, [x, w, d](const Tensor& g) {
    Tensor dx = Tensor::make_op("conv2d_dx", conv2d_dx_value(g.val(), w.val(), d), {g, w},
                                no_second_order);
    Tensor dw = Tensor::make_op("conv2d_dw", conv2d_dw_value(g.val(), x.val(), d), {g, x},
                                no_second_order);
    Tensor db = Tensor::make_op("conv2d_db", conv2d_db_value(g.val(), d), {g}, no_second_order);
    return TensorList{dx, dw, db};
  });
}

Tensor maxpool2(const Tensor& x) {
  check(x.val().ndim() == 4, "maxpool2: input must be (B,C,H,W)");
  int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t HO = H / 2, WO = W / 2;
  check(HO >= 1 && WO >= 1, "maxpool2: input too small");
  Array out(Shape{B, C, HO, WO});
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(B * C * HO * WO));
  const Array& xv = x.val();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const double* src = xv.data() + bc * H * W;
    for (int64_t i = 0; i < HO; ++i)
      for (int64_t j = 0; j < WO; ++j) {
        int64_t best = (2 * i) * W + 2 * j;
        double bv = src[best];
        for (int64_t di = 0; di < 2; ++di)
          for (int64_t dj = 0; dj < 2; ++dj) {
            int64_t p = (2 * i + di) * W + 2 * j + dj;
            if (src[p] > bv) {
              bv = src[p];
              best = p;
            }
          }
        out[bc * HO * WO + i * WO + j] = bv;
        (*argmax)[static_cast<size_t>(bc * HO * WO + i * WO + j)] = best;
      }
  }
  Shape xs = x.shape();
  return Tensor::make_op("maxpool2", std::move(out), {x}, [argmax, xs](const Tensor& g) {
    int64_t BC = xs[0] * xs[1], HW = xs[2] * xs[3];
    int64_t P = g.dim(2) * g.dim(3);
    Array dx(xs);
    const Array& gv = g.val();
    for (int64_t bc = 0; bc < BC; ++bc)
      for (int64_t p = 0; p < P; ++p)
        dx[bc * HW + (*argmax)[static_cast<size_t>(bc * P + p)]] += gv[bc * P + p];
    return TensorList{Tensor::make_op("maxpool2_dx", std::move(dx), {g}, no_second_order)};
  });
}

Tensor global_avg_pool(const Tensor& x) {
  check(x.val().ndim() == 4, "global_avg_pool: input must be (B,C,H,W)");
  int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  Array out(Shape{B, C});
  const Array& xv = x.val();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* src = xv.data() + bc * HW;
    for (int64_t p = 0; p < HW; ++p) acc += src[p];
    out[bc] = acc / static_cast<double>(HW);
  }
  Shape xs = x.shape();
  return Tensor::make_op("global_avg_pool", std::move(out), {x}, [xs](const Tensor& g) {
    int64_t BC = xs[0] * xs[1], HW2 = xs[2] * xs[3];
    Array dx(xs);
    const Array& gv = g.val();
    for (int64_t bc = 0; bc < BC; ++bc) {
      double v = gv[bc] / static_cast<double>(HW2);
      for (int64_t p = 0; p < HW2; ++p) dx[bc * HW2 + p] = v;
    }
    return TensorList{Tensor::make_op("gap_dx", std::move(dx), {g}, no_second_order)};
  });
}

}  // namespace cbmauc
