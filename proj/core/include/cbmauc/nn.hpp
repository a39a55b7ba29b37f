#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cbmauc/config.hpp"
#include "cbmauc/rng.hpp"
#include "cbmauc/tensor.hpp"

namespace cbmauc {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// mish(x) = x * tanh(softplus(x))
Tensor mish(const Tensor& x);

// Fully connected layer; weights U(-sqrt(1/fan_in), +sqrt(1/fan_in)) like
// the framework defaults the experiments assume.
struct LinearLayer {
  Tensor w;  // (out, in)
  Tensor b;  // (out)

  LinearLayer() = default;
  LinearLayer(int64_t in, int64_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
  int64_t param_count() const { return w.size() + b.size(); }
};

struct Conv2dLayer {
  Tensor w;  // (out, in, k, k)
  Tensor b;  // (out)
  int64_t stride = 1, pad = 1;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t in, int64_t out, int64_t ksize, Rng& rng, int64_t stride = 1,
              int64_t pad = 1);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
  int64_t param_count() const { return w.size() + b.size(); }
};

// Per-feature batch normalization with running statistics (momentum 0.1,
// eps 1e-5, unbiased running variance), standard train/eval switching.
struct BatchNorm1d {
  Tensor gamma, beta;
  Array running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm1d() = default;
  explicit BatchNorm1d(int64_t dim);
  Tensor operator()(const Tensor& x, bool training);
  void collect(std::vector<NamedParam>& out, const std::string& prefix);
  // running stats are buffers, serialized with checkpoints but not trained
  void collect_buffers(std::vector<std::pair<std::string, Array*>>& out,
                       const std::string& prefix);
  int64_t param_count() const { return gamma.size() + beta.size(); }
};

struct BackboneSpec {
  std::string name;
  int64_t out_dim = 0;                       // D_h
  std::vector<int64_t> spatial_shape;        // (C,h,w) of the last conv map, empty if none
  bool has_spatial() const { return !spatial_shape.empty(); }
};

struct BackboneOut {
  Tensor h;            // (B, D_h)
  Tensor feature_map;  // last conv activations (B,C,h,w); undefined for MLPs
};

// Differentiable map image/vector -> R^{D_h}, shared by the concept encoder
// and the parametrizer.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual BackboneOut forward(const Tensor& x, bool training) = 0;
  virtual const BackboneSpec& spec() const = 0;
  virtual const Shape& input_shape() const = 0;  // per-example shape
  virtual void collect(std::vector<NamedParam>& out, const std::string& prefix) = 0;
  virtual void collect_buffers(std::vector<std::pair<std::string, Array*>>& out,
                               const std::string& prefix) = 0;
  virtual int64_t param_count() const = 0;
};

// Backbone registry. Supported names:
//   conv_small          three 3x3 conv blocks (16,32,64) with relu, maxpool
//                       after the first two, global average pooling; D_h=64
//   mlp:IN-H1-...-DH    fully connected stack with mish between layers
std::unique_ptr<Backbone> make_backbone(const std::string& name, const Shape& input_shape,
                                        Rng& rng);

}  // namespace cbmauc
