#include "cbmauc/model.hpp"

#include <cstring>
#include <fstream>

#include "cbmauc/errors.hpp"

namespace cbmauc {

Tensor ForwardOutputs::theta_row(int64_t t) const {
  int64_t k = theta_flat.dim(1) / num_targets;
  return slice_cols(theta_flat, t * k, (t + 1) * k);
}

Tensor aggregate(const Tensor& theta_flat, const Tensor& c, int64_t num_targets) {
  int64_t k = c.dim(1);
  if (theta_flat.dim(1) != num_targets * k || theta_flat.dim(0) != c.dim(0))
    throw std::invalid_argument("aggregate: theta " + shape_str(theta_flat.shape()) +
                                " incompatible with c " + shape_str(c.shape()));
  TensorList cols;
  for (int64_t t = 0; t < num_targets; ++t)
    cols.push_back(sum_axis1(mul(slice_cols(theta_flat, t * k, (t + 1) * k), c)));
  return concat_cols(cols);
}

Model::Model(ModelConfig cfg, Shape input_shape) : cfg_(std::move(cfg)) {
  auto errors = validate_config(cfg_);
  if (!errors.empty()) {
    std::string msg = "invalid ModelConfig:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  Rng rng(static_cast<uint64_t>(cfg_.seed));
  backbone_ = make_backbone(cfg_.backbone, input_shape, rng);
  build(rng);
}

void Model::build(Rng& rng) {
  int64_t dh = backbone_->spec().out_dim;
  int64_t total = cfg_.total_concepts();
  int64_t c_out = cfg_.num_targets;

  e1_ = LinearLayer(dh, total, rng);

  if (cfg_.model == ModelKind::cbm) {
    cbm_head_ = LinearLayer(cfg_.d_ex, c_out, rng);
  } else {
    // width rule D_h, D_h/2, D_h/4 (the published 2048/1024/512 scaled down)
    int64_t h1 = std::max<int64_t>(1, dh / 2);
    int64_t h2 = std::max<int64_t>(1, dh / 4);
    theta1_ = LinearLayer(dh, h1, rng);
    theta_bn1_ = BatchNorm1d(h1);
    theta2_ = LinearLayer(h1, h2, rng);
    theta_bn2_ = BatchNorm1d(h2);
    theta3_ = LinearLayer(h2, c_out * total, rng);

    int64_t dw = cfg_.dis_hidden;
    dis1_ = LinearLayer(total + dh, dw, rng);
    dis2_ = LinearLayer(dw, dw, rng);
    dis3_ = LinearLayer(dw, 1, rng);
  }
}

ConceptActivations Model::encode_concepts(const Tensor& h) const {
  if (h.dim(1) != backbone_->spec().out_dim)
    throw std::invalid_argument("encode_concepts: expected D_h=" +
                                std::to_string(backbone_->spec().out_dim) + ", got " +
                                shape_str(h.shape()));
  Tensor pre = linear(h, e1_.w, e1_.b);
  ConceptActivations out;
  if (cfg_.d_ex > 0 && cfg_.d_im > 0) {
    out.c_ex = sigmoid(slice_cols(pre, 0, cfg_.d_ex));
    out.c_im = kwta_rows(slice_cols(pre, cfg_.d_ex, cfg_.total_concepts()), cfg_.k);
    out.c = concat_cols({out.c_ex, out.c_im});
  } else if (cfg_.d_ex > 0) {
    out.c_ex = sigmoid(pre);
    out.c = out.c_ex;
  } else {
    out.c_im = kwta_rows(pre, cfg_.k);
    out.c = out.c_im;
  }
  return out;
}

Tensor Model::parametrize(const Tensor& h, bool training) {
  if (cfg_.model == ModelKind::cbm)
    throw std::logic_error("parametrize: cbm has no parametrizer (theta is constant)");
  Tensor a = mish(theta_bn1_(theta1_(h), training));
  Tensor b = mish(theta_bn2_(theta2_(a), training));
  return theta3_(b);
}

Tensor Model::discriminate(const Tensor& z) {
  if (cfg_.model == ModelKind::cbm)
    throw std::logic_error("discriminate: cbm has no discriminator");
  int64_t want = cfg_.total_concepts() + backbone_->spec().out_dim;
  if (z.dim(1) != want)
    throw std::invalid_argument("discriminate: expected z of width " + std::to_string(want) +
                                ", got " + shape_str(z.shape()));
  return dis3_(mish(dis2_(mish(dis1_(z)))));
}

ForwardOutputs Model::forward(const Tensor& x, bool training) {
  BackboneOut bb = backbone_->forward(x, training);
  ForwardOutputs out;
  out.h = bb.h;
  out.feature_map = bb.feature_map;
  out.concepts = encode_concepts(bb.h);
  out.num_targets = cfg_.num_targets;

  int64_t b_ = x.dim(0);
  if (cfg_.model == ModelKind::cbm) {
    // theta constant in x: broadcast head weights, add the affine bias
    Tensor w_flat = reshape(cbm_head_.w, Shape{cfg_.num_targets * cfg_.d_ex});
    out.theta_flat = broadcast_rows(w_flat, b_);
    out.logits = add(aggregate(out.theta_flat, out.concepts.c_ex, cfg_.num_targets),
                     broadcast_rows(cbm_head_.b, b_));
    out.theta = reshape(out.theta_flat, Shape{b_, cfg_.num_targets, cfg_.d_ex});
  } else {
    out.theta_flat = parametrize(bb.h, training);
    out.logits = aggregate(out.theta_flat, out.concepts.c, cfg_.num_targets);
    out.theta = reshape(out.theta_flat, Shape{b_, cfg_.num_targets, cfg_.total_concepts()});
  }
  return out;
}

std::vector<NamedParam> Model::parameters() {
  std::vector<NamedParam> out;
  backbone_->collect(out, "backbone");
  e1_.collect(out, "e1");
  if (cfg_.model == ModelKind::cbm) {
    cbm_head_.collect(out, "cbm_head");
  } else {
    theta1_.collect(out, "theta.fc1");
    theta_bn1_.collect(out, "theta.bn1");
    theta2_.collect(out, "theta.fc2");
    theta_bn2_.collect(out, "theta.bn2");
    theta3_.collect(out, "theta.fc3");
    dis1_.collect(out, "dis.fc1");
    dis2_.collect(out, "dis.fc2");
    dis3_.collect(out, "dis.fc3");
  }
  return out;
}

std::vector<NamedParam> Model::trainable_parameters() {
  std::vector<NamedParam> all = parameters();
  if (!cfg_.freeze_backbone) return all;
  std::vector<NamedParam> out;
  for (auto& p : all)
    if (p.name.rfind("backbone", 0) != 0) out.push_back(p);
  return out;
}

std::vector<NamedParam> Model::backbone_parameters() {
  std::vector<NamedParam> out;
  backbone_->collect(out, "backbone");
  return out;
}

std::vector<NamedParam> Model::discriminator_parameters() {
  std::vector<NamedParam> out;
  if (cfg_.model != ModelKind::cbm) {
    dis1_.collect(out, "dis.fc1");
    dis2_.collect(out, "dis.fc2");
    dis3_.collect(out, "dis.fc3");
  }
  return out;
}

std::vector<std::pair<std::string, Array*>> Model::buffers() {
  std::vector<std::pair<std::string, Array*>> out;
  backbone_->collect_buffers(out, "backbone");
  if (cfg_.model != ModelKind::cbm) {
    theta_bn1_.collect_buffers(out, "theta.bn1");
    theta_bn2_.collect_buffers(out, "theta.bn2");
  }
  return out;
}

int64_t Model::param_count() {
  int64_t n = 0;
  for (auto& p : parameters()) n += p.tensor.size();
  return n;
}

int64_t reference_unshared_param_count(Model& model) {
  // unshared baseline: the encoder and parametrizer each own a backbone
  // copy, and a mirrored decoder (same size as the encoder trunk + head)
  // replaces the discriminator.
  int64_t backbone = 0, e1 = 0, theta_head = 0, dis = 0;
  for (auto& p : model.parameters()) {
    if (p.name.rfind("backbone", 0) == 0) backbone += p.tensor.size();
    else if (p.name.rfind("e1", 0) == 0) e1 += p.tensor.size();
    else if (p.name.rfind("theta", 0) == 0) theta_head += p.tensor.size();
    else if (p.name.rfind("dis", 0) == 0) dis += p.tensor.size();
    else if (p.name.rfind("cbm_head", 0) == 0) theta_head += p.tensor.size();
  }
  int64_t encoder_trunk = backbone + e1;
  int64_t theta_trunk = backbone + theta_head;
  int64_t decoder = encoder_trunk;
  return encoder_trunk + theta_trunk + decoder;
}

// ---------------------------------------------------------------------------
// checkpoints (little-endian binary)

namespace {

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<char*>(&v), 4); }
void write_i64(std::ofstream& out, int64_t v) { out.write(reinterpret_cast<char*>(&v), 8); }

uint32_t read_u32(std::ifstream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::ifstream& in) {
  int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_named_array(std::ofstream& out, const std::string& name, const Array& a) {
  write_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, static_cast<uint32_t>(a.ndim()));
  for (int i = 0; i < a.ndim(); ++i) write_i64(out, a.dim(i));
  out.write(reinterpret_cast<const char*>(a.data()),
            static_cast<std::streamsize>(a.size() * 8));
}

std::pair<std::string, Array> read_named_array(std::ifstream& in) {
  uint32_t len = read_u32(in);
  std::string name(len, '\0');
  in.read(name.data(), len);
  uint32_t rank = read_u32(in);
  Shape shape(rank);
  for (uint32_t i = 0; i < rank; ++i) shape[i] = read_i64(in);
  Array a(shape);
  in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * 8));
  return {name, std::move(a)};
}

}  // namespace

void Model::save_checkpoint(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));

  std::string cfg_text = serialize(cfg_);
  write_u32(out, static_cast<uint32_t>(cfg_text.size()));
  out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

  const Shape& ishape = backbone_->input_shape();
  write_u32(out, static_cast<uint32_t>(ishape.size()));
  for (int64_t d : ishape) write_i64(out, d);

  auto params = parameters();
  auto bufs = buffers();
  write_u32(out, static_cast<uint32_t>(params.size() + bufs.size()));
  for (auto& p : params) write_named_array(out, p.name, p.tensor.val());
  for (auto& b : bufs) write_named_array(out, b.first, *b.second);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string magic(std::strlen(kCheckpointMagic), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (magic != kCheckpointMagic)
    throw IoError("not a CBMAUC-v1 checkpoint: " + path);

  uint32_t cfg_len = read_u32(in);
  std::string cfg_text(cfg_len, '\0');
  in.read(cfg_text.data(), cfg_len);
  ModelConfig cfg = model_config_from(parse_config_text(cfg_text));

  uint32_t rank = read_u32(in);
  Shape ishape(rank);
  for (uint32_t i = 0; i < rank; ++i) ishape[i] = read_i64(in);

  Model model(cfg, ishape);
  uint32_t count = read_u32(in);
  std::map<std::string, Array> loaded;
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, arr] = read_named_array(in);
    loaded.emplace(std::move(name), std::move(arr));
  }
  if (!in) throw IoError("truncated checkpoint: " + path);

  for (auto& p : model.parameters()) {
    auto it = loaded.find(p.name);
    if (it == loaded.end()) throw IoError("checkpoint missing tensor: " + p.name);
    if (!same_shape(it->second.shape(), p.tensor.shape()))
      throw IoError("checkpoint tensor " + p.name + " has shape " +
                    shape_str(it->second.shape()) + ", expected " + shape_str(p.tensor.shape()));
    p.tensor.mutable_val() = it->second;
  }
  for (auto& b : model.buffers()) {
    auto it = loaded.find(b.first);
    if (it == loaded.end()) throw IoError("checkpoint missing buffer: " + b.first);
    *b.second = it->second;
  }
  return model;
}

}  // namespace cbmauc
