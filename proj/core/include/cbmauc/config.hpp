#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cbmauc {

enum class TaskKind { multiclass, multilabel };
enum class ConceptLossKind { mse, bce };
enum class OptimizerKind { sgd, adam };
enum class ModelKind { cbm, msenn, cbmauc };

std::string to_string(TaskKind k);
std::string to_string(ConceptLossKind k);
std::string to_string(OptimizerKind k);
std::string to_string(ModelKind k);
TaskKind task_kind_from_string(const std::string& s);
ConceptLossKind concept_loss_from_string(const std::string& s);
OptimizerKind optimizer_from_string(const std::string& s);
ModelKind model_kind_from_string(const std::string& s);

// All model/training hyperparameters. Section [model] of the config file;
// keys match the field names exactly.
struct ModelConfig {
  ModelKind model = ModelKind::cbmauc;
  int64_t d_ex = 3;           // supervised concept count
  int64_t d_im = 8;           // unsupervised concept count
  int64_t k = 4;              // k-WTA retention, 0 <= k <= d_im
  int64_t num_targets = 2;    // task arity C
  TaskKind task_kind = TaskKind::multiclass;
  ConceptLossKind concept_loss = ConceptLossKind::mse;
  double alpha = 0.5;         // discriminator loss weight
  double beta = 0.01;         // theta-stability weight
  double lambda = 1.0;        // concept loss weight
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.001;
  int64_t epochs = 50;
  int64_t batch_size = 32;
  int64_t seed = 0;
  std::string backbone = "conv_small";
  int64_t dis_hidden = 512;   // discriminator hidden width
  bool dis_detach_h = false;  // stop discriminator gradients at h
  bool freeze_backbone = false;

  int64_t total_concepts() const { return d_ex + d_im; }
};

// Synthetic dataset description. Section [synthetic]; keys match field names.
struct SyntheticSpec {
  int64_t num_gen_concepts = 6;          // G
  int64_t grid_side = 3;                 // cells per side; image is 8*grid_side px square
  std::string rule = "parity";           // parity | linear_threshold | lookup
  int64_t num_samples = 2000;            // N
  std::vector<int64_t> label_fraction = {0, 1, 2};  // generative concepts exposed as labels
  double noise_std = 0.05;
  int64_t seed = 0;
  int64_t num_targets = 2;               // label arity produced by the rule
  TaskKind task_kind = TaskKind::multiclass;
  std::vector<double> split = {0.7, 0.15, 0.15};
};

// Hyperparameter grid (section [grid]); defaults are the published search space.
struct GridSpec {
  std::vector<OptimizerKind> optimizers = {OptimizerKind::sgd, OptimizerKind::adam};
  std::vector<double> lrs = {0.001, 0.01};
  std::vector<double> lambdas = {0.1, 0.5, 1.0, 2.0, 3.0};
  std::vector<double> alphas = {0.1, 0.5, 1.0};
  std::vector<double> betas = {0.001, 0.01};

  int64_t size() const {
    return static_cast<int64_t>(optimizers.size() * lrs.size() * lambdas.size() * alphas.size() *
                                betas.size());
  }
};

// Returns every violated invariant (empty means the config is valid).
std::vector<std::string> validate_config(const ModelConfig& cfg);
std::vector<std::string> validate_spec(const SyntheticSpec& spec);

// ---- plaintext config file (INI-style sections of key = value pairs) ----
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
};

ConfigFile parse_config_text(const std::string& text);
ConfigFile load_config_file(const std::string& path);

ModelConfig model_config_from(const ConfigFile& f);
SyntheticSpec synthetic_spec_from(const ConfigFile& f);
GridSpec grid_spec_from(const ConfigFile& f);

std::string serialize(const ModelConfig& cfg);
std::string serialize(const SyntheticSpec& spec);

}  // namespace cbmauc
