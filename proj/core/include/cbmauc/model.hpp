#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cbmauc/config.hpp"
#include "cbmauc/nn.hpp"
#include "cbmauc/tensor.hpp"

namespace cbmauc {

struct ConceptActivations {
  Tensor c_ex;  // (B, D_ex), sigmoid outputs in (0,1)
  Tensor c_im;  // (B, D_im), at most k nonzeros per row
  Tensor c;     // (B, D_ex + D_im)
};

struct ForwardOutputs {
  Tensor h;            // (B, D_h) shared features
  ConceptActivations concepts;
  Tensor theta_flat;   // (B, C*(D_ex+D_im)); row t occupies columns [t*K, (t+1)*K)
  Tensor theta;        // (B, C, D_ex+D_im) view of theta_flat
  Tensor logits;       // (B, C)
  Tensor feature_map;  // last conv activations, undefined for MLP backbones
  int64_t num_targets = 0;

  // relevance row for target t, shape (B, K)
  Tensor theta_row(int64_t t) const;
};

// logits = theta . c per example (no bias, no activation).
// theta_flat (B, C*K), c (B, K) -> (B, C)
Tensor aggregate(const Tensor& theta_flat, const Tensor& c, int64_t num_targets);

// The CBM-AUC network family. cbmauc uses the full set of heads; msenn has
// no supervised slice (d_ex = 0); cbm replaces the parametrizer with a
// trainable affine head on the supervised concepts (theta constant in x).
class Model {
 public:
  Model(ModelConfig cfg, Shape input_shape);

  ForwardOutputs forward(const Tensor& x, bool training);

  // heads, exposed for the regularizer and tests
  ConceptActivations encode_concepts(const Tensor& h) const;
  Tensor parametrize(const Tensor& h, bool training);  // (B, C*K)
  Tensor discriminate(const Tensor& z);                // (B, K+D_h) -> (B, 1)

  const ModelConfig& config() const { return cfg_; }
  const BackboneSpec& backbone_spec() const { return backbone_->spec(); }
  const Shape& input_shape() const { return backbone_->input_shape(); }

  std::vector<NamedParam> parameters();              // every parameter incl. discriminator
  std::vector<NamedParam> trainable_parameters();    // honors freeze_backbone
  std::vector<NamedParam> backbone_parameters();
  std::vector<NamedParam> discriminator_parameters();
  std::vector<std::pair<std::string, Array*>> buffers();
  int64_t param_count();

  void save_checkpoint(const std::string& path);
  static Model load_checkpoint(const std::string& path);

 private:
  void build(Rng& rng);

  ModelConfig cfg_;
  std::unique_ptr<Backbone> backbone_;
  LinearLayer e1_;                    // concept encoder, D_h -> D_ex + D_im
  LinearLayer theta1_, theta2_, theta3_;  // parametrizer stack
  BatchNorm1d theta_bn1_, theta_bn2_;
  LinearLayer cbm_head_;              // cbm only: (C, D_ex) + bias
  LinearLayer dis1_, dis2_, dis3_;    // discriminator
};

// Parameter count of the reference unshared baseline: separate backbone
// trunks for the encoder and parametrizer plus a mirrored decoder instead of
// the discriminator. Used for the parameter-reduction accounting.
int64_t reference_unshared_param_count(Model& model);

inline constexpr const char* kCheckpointMagic = "CBMAUC-v1";

}  // namespace cbmauc
