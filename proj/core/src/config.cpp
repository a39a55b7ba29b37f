#include "cbmauc/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cbmauc/errors.hpp"

namespace cbmauc {

std::string to_string(TaskKind k) { return k == TaskKind::multiclass ? "multiclass" : "multilabel"; }
std::string to_string(ConceptLossKind k) { return k == ConceptLossKind::mse ? "mse" : "bce"; }
std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::cbm: return "cbm";
    case ModelKind::msenn: return "msenn";
    default: return "cbmauc";
  }
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "multiclass") return TaskKind::multiclass;
  if (s == "multilabel") return TaskKind::multilabel;
  throw ValidationError("unknown task_kind: " + s);
}

ConceptLossKind concept_loss_from_string(const std::string& s) {
  if (s == "mse") return ConceptLossKind::mse;
  if (s == "bce") return ConceptLossKind::bce;
  throw ValidationError("unknown concept_loss: " + s);
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer: " + s);
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cbm") return ModelKind::cbm;
  if (s == "msenn") return ModelKind::msenn;
  if (s == "cbmauc") return ModelKind::cbmauc;
  throw ValidationError("unknown model: " + s);
}

std::vector<std::string> validate_config(const ModelConfig& cfg) {
  std::vector<std::string> errors;
  if (cfg.d_ex < 0) errors.push_back("d_ex must be >= 0");
  if (cfg.d_im < 0) errors.push_back("d_im must be >= 0");
  if (cfg.d_ex + cfg.d_im < 1) errors.push_back("d_ex + d_im must be >= 1");
  if (cfg.k < 0 || cfg.k > cfg.d_im) errors.push_back("k must satisfy 0 <= k <= d_im");
  if (cfg.num_targets < 1) errors.push_back("num_targets must be >= 1");
  if (cfg.alpha < 0) errors.push_back("alpha must be >= 0");
  if (cfg.beta < 0) errors.push_back("beta must be >= 0");
  if (cfg.lambda < 0) errors.push_back("lambda must be >= 0");
  if (cfg.lr <= 0) errors.push_back("lr must be > 0");
  if (cfg.epochs < 0) errors.push_back("epochs must be >= 0");
  if (cfg.batch_size < 1) errors.push_back("batch_size must be >= 1");
  if (cfg.alpha > 0 && cfg.batch_size < 2)
    errors.push_back("batch_size must be >= 2 when alpha > 0 (negative pairs need two examples)");
  if (cfg.dis_hidden < 1) errors.push_back("dis_hidden must be >= 1");
  if (cfg.model == ModelKind::cbm && cfg.d_ex < 1) errors.push_back("cbm requires d_ex >= 1");
  if (cfg.model == ModelKind::msenn && cfg.d_ex != 0)
    errors.push_back("msenn requires d_ex == 0 (no supervised concepts)");
  if (cfg.task_kind == TaskKind::multiclass && cfg.num_targets < 2)
    errors.push_back("multiclass requires num_targets >= 2");
  return errors;
}

std::vector<std::string> validate_spec(const SyntheticSpec& spec) {
  std::vector<std::string> errors;
  if (spec.num_gen_concepts < 1) errors.push_back("num_gen_concepts must be >= 1");
  if (spec.grid_side < 1) errors.push_back("grid_side must be >= 1");
  if (spec.num_gen_concepts > spec.grid_side * spec.grid_side)
    errors.push_back("num_gen_concepts exceeds grid capacity (grid_side^2)");
  if (spec.rule != "parity" && spec.rule != "linear_threshold" && spec.rule != "lookup")
    errors.push_back("rule must be parity, linear_threshold or lookup");
  if (spec.num_samples < 1) errors.push_back("num_samples must be >= 1");
  for (int64_t j : spec.label_fraction)
    if (j < 0 || j >= spec.num_gen_concepts)
      errors.push_back("label_fraction index " + std::to_string(j) + " out of range");
  if (spec.noise_std < 0) errors.push_back("noise_std must be >= 0");
  if (spec.split.size() != 3) errors.push_back("split must have three fractions");
  else {
    double sum = spec.split[0] + spec.split[1] + spec.split[2];
    if (spec.split[0] <= 0 || spec.split[1] <= 0 || spec.split[2] <= 0 ||
        std::abs(sum - 1.0) > 1e-9)
      errors.push_back("split fractions must be positive and sum to 1");
  }
  if (spec.task_kind == TaskKind::multiclass && spec.num_targets != 2)
    errors.push_back("multiclass synthetic rules produce binary labels (num_targets must be 2)");
  if (spec.task_kind == TaskKind::multilabel && spec.num_targets < 1)
    errors.push_back("multilabel requires num_targets >= 1");
  return errors;
}

// ---------------------------------------------------------------------------
// INI parsing

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

int64_t to_int(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": expected integer, got '" + s + "'");
  }
}

double to_double(const std::string& s, const std::string& key) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config key " + key + ": expected number, got '" + s + "'");
  }
}

bool to_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError("config key " + key + ": expected bool, got '" + s + "'");
}

}  // namespace

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  return it != sections.end() && it->second.count(key) > 0;
}

std::string ConfigFile::get(const std::string& section, const std::string& key) const {
  auto it = sections.find(section);
  if (it == sections.end() || !it->second.count(key))
    throw ValidationError("config: missing key [" + section + "] " + key);
  return it->second.at(key);
}

std::string ConfigFile::get_or(const std::string& section, const std::string& key,
                               const std::string& fallback) const {
  return has(section, key) ? get(section, key) : fallback;
}

ConfigFile parse_config_text(const std::string& text) {
  ConfigFile f;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      f.sections[section];
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    if (key.empty()) throw ValidationError("config: empty key at line " + std::to_string(lineno));
    f.sections[section][key] = val;
  }
  return f;
}

ConfigFile load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

ModelConfig model_config_from(const ConfigFile& f) {
  ModelConfig c;
  const std::string s = "model";
  if (f.has(s, "model")) c.model = model_kind_from_string(f.get(s, "model"));
  if (f.has(s, "d_ex")) c.d_ex = to_int(f.get(s, "d_ex"), "d_ex");
  if (f.has(s, "d_im")) c.d_im = to_int(f.get(s, "d_im"), "d_im");
  if (f.has(s, "k")) c.k = to_int(f.get(s, "k"), "k");
  if (f.has(s, "num_targets")) c.num_targets = to_int(f.get(s, "num_targets"), "num_targets");
  if (f.has(s, "task_kind")) c.task_kind = task_kind_from_string(f.get(s, "task_kind"));
  if (f.has(s, "concept_loss")) c.concept_loss = concept_loss_from_string(f.get(s, "concept_loss"));
  if (f.has(s, "alpha")) c.alpha = to_double(f.get(s, "alpha"), "alpha");
  if (f.has(s, "beta")) c.beta = to_double(f.get(s, "beta"), "beta");
  if (f.has(s, "lambda")) c.lambda = to_double(f.get(s, "lambda"), "lambda");
  if (f.has(s, "optimizer")) c.optimizer = optimizer_from_string(f.get(s, "optimizer"));
  if (f.has(s, "lr")) c.lr = to_double(f.get(s, "lr"), "lr");
  if (f.has(s, "epochs")) c.epochs = to_int(f.get(s, "epochs"), "epochs");
  if (f.has(s, "batch_size")) c.batch_size = to_int(f.get(s, "batch_size"), "batch_size");
  if (f.has(s, "seed")) c.seed = to_int(f.get(s, "seed"), "seed");
  if (f.has(s, "backbone")) c.backbone = f.get(s, "backbone");
  if (f.has(s, "dis_hidden")) c.dis_hidden = to_int(f.get(s, "dis_hidden"), "dis_hidden");
  if (f.has(s, "dis_detach_h")) c.dis_detach_h = to_bool(f.get(s, "dis_detach_h"), "dis_detach_h");
  if (f.has(s, "freeze_backbone"))
    c.freeze_backbone = to_bool(f.get(s, "freeze_backbone"), "freeze_backbone");
  return c;
}

SyntheticSpec synthetic_spec_from(const ConfigFile& f) {
  SyntheticSpec c;
  const std::string s = "synthetic";
  if (f.has(s, "num_gen_concepts"))
    c.num_gen_concepts = to_int(f.get(s, "num_gen_concepts"), "num_gen_concepts");
  if (f.has(s, "grid_side")) c.grid_side = to_int(f.get(s, "grid_side"), "grid_side");
  if (f.has(s, "rule")) c.rule = f.get(s, "rule");
  if (f.has(s, "num_samples")) c.num_samples = to_int(f.get(s, "num_samples"), "num_samples");
  if (f.has(s, "label_fraction")) {
    c.label_fraction.clear();
    for (const std::string& t : split_list(f.get(s, "label_fraction")))
      c.label_fraction.push_back(to_int(t, "label_fraction"));
  }
  if (f.has(s, "noise_std")) c.noise_std = to_double(f.get(s, "noise_std"), "noise_std");
  if (f.has(s, "seed")) c.seed = to_int(f.get(s, "seed"), "seed");
  if (f.has(s, "num_targets")) c.num_targets = to_int(f.get(s, "num_targets"), "num_targets");
  if (f.has(s, "task_kind")) c.task_kind = task_kind_from_string(f.get(s, "task_kind"));
  if (f.has(s, "split")) {
    c.split.clear();
    for (const std::string& t : split_list(f.get(s, "split")))
      c.split.push_back(to_double(t, "split"));
  }
  return c;
}

GridSpec grid_spec_from(const ConfigFile& f) {
  GridSpec g;
  const std::string s = "grid";
  if (f.has(s, "optimizers")) {
    g.optimizers.clear();
    for (const std::string& t : split_list(f.get(s, "optimizers")))
      g.optimizers.push_back(optimizer_from_string(t));
  }
  auto dlist = [&](const char* key, std::vector<double>& out) {
    if (!f.has(s, key)) return;
    out.clear();
    for (const std::string& t : split_list(f.get(s, key))) out.push_back(to_double(t, key));
  };
  dlist("lrs", g.lrs);
  dlist("lambdas", g.lambdas);
  dlist("alphas", g.alphas);
  dlist("betas", g.betas);
  return g;
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string serialize(const ModelConfig& c) {
  std::ostringstream os;
  os << "[model]\n";
  os << "model = " << to_string(c.model) << "\n";
  os << "d_ex = " << c.d_ex << "\n";
  os << "d_im = " << c.d_im << "\n";
  os << "k = " << c.k << "\n";
  os << "num_targets = " << c.num_targets << "\n";
  os << "task_kind = " << to_string(c.task_kind) << "\n";
  os << "concept_loss = " << to_string(c.concept_loss) << "\n";
  os << "alpha = " << fmt_double(c.alpha) << "\n";
  os << "beta = " << fmt_double(c.beta) << "\n";
  os << "lambda = " << fmt_double(c.lambda) << "\n";
  os << "optimizer = " << to_string(c.optimizer) << "\n";
  os << "lr = " << fmt_double(c.lr) << "\n";
  os << "epochs = " << c.epochs << "\n";
  os << "batch_size = " << c.batch_size << "\n";
  os << "seed = " << c.seed << "\n";
  os << "backbone = " << c.backbone << "\n";
  os << "dis_hidden = " << c.dis_hidden << "\n";
  os << "dis_detach_h = " << (c.dis_detach_h ? "true" : "false") << "\n";
  os << "freeze_backbone = " << (c.freeze_backbone ? "true" : "false") << "\n";
  return os.str();
}

std::string serialize(const SyntheticSpec& c) {
  std::ostringstream os;
  os << "[synthetic]\n";
  os << "num_gen_concepts = " << c.num_gen_concepts << "\n";
  os << "grid_side = " << c.grid_side << "\n";
  os << "rule = " << c.rule << "\n";
  os << "num_samples = " << c.num_samples << "\n";
  os << "label_fraction = ";
  for (size_t i = 0; i < c.label_fraction.size(); ++i)
    os << (i ? "," : "") << c.label_fraction[i];
  os << "\n";
  os << "noise_std = " << fmt_double(c.noise_std) << "\n";
  os << "seed = " << c.seed << "\n";
  os << "num_targets = " << c.num_targets << "\n";
  os << "task_kind = " << to_string(c.task_kind) << "\n";
  os << "split = " << fmt_double(c.split[0]) << "," << fmt_double(c.split[1]) << ","
     << fmt_double(c.split[2]) << "\n";
  return os.str();
}

}  // namespace cbmauc
