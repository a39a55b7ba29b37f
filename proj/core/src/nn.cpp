#include "cbmauc/nn.hpp"

#include <cmath>
#include <sstream>

#include "cbmauc/errors.hpp"

namespace cbmauc {

Tensor mish(const Tensor& x) { return mul(x, tanh_(softplus(x))); }

namespace {

Array uniform_init(Shape shape, double bound, Rng& rng) {
  Array a(shape);
  for (int64_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-bound, bound);
  return a;
}

}  // namespace

LinearLayer::LinearLayer(int64_t in, int64_t out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w = Tensor(uniform_init(Shape{out, in}, bound, rng), true);
  b = Tensor(uniform_init(Shape{out}, bound, rng), true);
}

void LinearLayer::collect(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

Conv2dLayer::Conv2dLayer(int64_t in, int64_t out, int64_t ksize, Rng& rng, int64_t stride_,
                         int64_t pad_) {
  double bound = 1.0 / std::sqrt(static_cast<double>(in * ksize * ksize));
  w = Tensor(uniform_init(Shape{out, in, ksize, ksize}, bound, rng), true);
  b = Tensor(uniform_init(Shape{out}, bound, rng), true);
  stride = stride_;
  pad = pad_;
}

void Conv2dLayer::collect(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", w});
  out.push_back({prefix + ".bias", b});
}

BatchNorm1d::BatchNorm1d(int64_t dim)
    : gamma(Array::full(Shape{dim}, 1.0), true),
      beta(Array::zeros(Shape{dim}), true),
      running_mean(Array::zeros(Shape{dim})),
      running_var(Array::full(Shape{dim}, 1.0)) {}

Tensor BatchNorm1d::operator()(const Tensor& x, bool training) {
  int64_t b_ = x.dim(0), d = x.dim(1);
  if (d != gamma.dim(0))
    throw std::invalid_argument("BatchNorm1d: feature dim mismatch " + shape_str(x.shape()));
  Tensor norm;
  if (training) {
    Tensor mu = mean_axis0(x);
    Tensor xc = sub(x, broadcast_rows(mu, b_));
    Tensor var = mean_axis0(square(xc));
    norm = div_(xc, broadcast_rows(sqrt_(add_scalar(var, eps)), b_));
    // buffers track batch statistics, detached from the graph
    double unbias = b_ > 1 ? static_cast<double>(b_) / static_cast<double>(b_ - 1) : 1.0;
    for (int64_t j = 0; j < d; ++j) {
      running_mean[j] = (1 - momentum) * running_mean[j] + momentum * mu.val()[j];
      running_var[j] = (1 - momentum) * running_var[j] + momentum * var.val()[j] * unbias;
    }
  } else {
    Array denom(Shape{d});
    for (int64_t j = 0; j < d; ++j) denom[j] = std::sqrt(running_var[j] + eps);
    Tensor mu(running_mean);
    Tensor sd(denom);
    norm = div_(sub(x, broadcast_rows(mu, b_)), broadcast_rows(sd, b_));
  }
  return add(mul(norm, broadcast_rows(gamma, b_)), broadcast_rows(beta, b_));
}

void BatchNorm1d::collect(std::vector<NamedParam>& out, const std::string& prefix) {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void BatchNorm1d::collect_buffers(std::vector<std::pair<std::string, Array*>>& out,
                                  const std::string& prefix) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

// ---------------------------------------------------------------------------
// backbones

namespace {

class ConvSmallBackbone final : public Backbone {
 public:
  ConvSmallBackbone(const Shape& input_shape, Rng& rng) : input_shape_(input_shape) {
    if (input_shape.size() != 3)
      throw ValidationError("conv_small expects (C,H,W) input, got " + shape_str(input_shape));
    int64_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
    if (h < 8 || w < 8) throw ValidationError("conv_small needs at least 8x8 input");
    conv1_ = Conv2dLayer(c, 16, 3, rng);
    conv2_ = Conv2dLayer(16, 32, 3, rng);
    conv3_ = Conv2dLayer(32, 64, 3, rng);
    spec_.name = "conv_small";
    spec_.out_dim = 64;
    spec_.spatial_shape = {64, (h / 2) / 2, (w / 2) / 2};
  }

  BackboneOut forward(const Tensor& x, bool) override {
    Tensor a = maxpool2(relu(conv1_(x)));
    Tensor b = maxpool2(relu(conv2_(a)));
    Tensor fmap = relu(conv3_(b));
    return {global_avg_pool(fmap), fmap};
  }

  const BackboneSpec& spec() const override { return spec_; }
  const Shape& input_shape() const override { return input_shape_; }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) override {
    conv1_.collect(out, prefix + ".conv1");
    conv2_.collect(out, prefix + ".conv2");
    conv3_.collect(out, prefix + ".conv3");
  }
  void collect_buffers(std::vector<std::pair<std::string, Array*>>&,
                       const std::string&) override {}
  int64_t param_count() const override {
    return conv1_.param_count() + conv2_.param_count() + conv3_.param_count();
  }

 private:
  Shape input_shape_;
  Conv2dLayer conv1_, conv2_, conv3_;
  BackboneSpec spec_;
};

class MlpBackbone final : public Backbone {
 public:
  MlpBackbone(const std::string& name, const std::vector<int64_t>& dims, Rng& rng)
      : input_shape_{dims.front()} {
    if (dims.size() < 2) throw ValidationError("mlp backbone needs at least in-out dims: " + name);
    for (size_t i = 0; i + 1 < dims.size(); ++i)
      layers_.emplace_back(dims[i], dims[i + 1], rng);
    spec_.name = name;
    spec_.out_dim = dims.back();
  }

  BackboneOut forward(const Tensor& x, bool) override {
    Tensor h = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i](h);
      if (i + 1 < layers_.size()) h = mish(h);
    }
    return {h, Tensor()};
  }

  const BackboneSpec& spec() const override { return spec_; }
  const Shape& input_shape() const override { return input_shape_; }

  void collect(std::vector<NamedParam>& out, const std::string& prefix) override {
    for (size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(out, prefix + ".fc" + std::to_string(i + 1));
  }
  void collect_buffers(std::vector<std::pair<std::string, Array*>>&,
                       const std::string&) override {}
  int64_t param_count() const override {
    int64_t n = 0;
    for (const auto& l : layers_) n += l.param_count();
    return n;
  }

 private:
  Shape input_shape_;
  std::vector<LinearLayer> layers_;
  BackboneSpec spec_;
};

}  // namespace

std::unique_ptr<Backbone> make_backbone(const std::string& name, const Shape& input_shape,
                                        Rng& rng) {
  if (name == "conv_small") return std::make_unique<ConvSmallBackbone>(input_shape, rng);
  if (name.rfind("mlp:", 0) == 0) {
    std::vector<int64_t> dims;
    std::istringstream ss(name.substr(4));
    std::string tok;
    while (std::getline(ss, tok, '-')) {
      try {
        dims.push_back(std::stoll(tok));
      } catch (const std::exception&) {
        throw ValidationError("bad mlp backbone spec: " + name);
      }
    }
    if (dims.empty()) throw ValidationError("bad mlp backbone spec: " + name);
    if (input_shape.size() != 1 || input_shape[0] != dims.front())
      throw ValidationError("mlp backbone " + name + " expects input dim " +
                            std::to_string(dims.front()) + ", got " + shape_str(input_shape));
    return std::make_unique<MlpBackbone>(name, dims, rng);
  }
  throw ValidationError("unknown backbone: " + name);
}

}  // namespace cbmauc
