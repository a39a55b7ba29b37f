#include "cbmauc/saliency.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cbmauc/errors.hpp"
#include "cbmauc/image_io.hpp"
#include "cbmauc/tensor.hpp"

namespace fs = std::filesystem;

namespace cbmauc {

SaliencyMap grad_cam_unit(Model& model, const Array& x, int64_t unit_index,
                          const SaliencyOptions& opts) {
  const BackboneSpec& spec = model.backbone_spec();
  if (!spec.has_spatial())
    throw ValidationError("grad_cam_unit: backbone '" + spec.name + "' has no spatial features");
  int64_t max_unit = opts.target_logit ? model.config().num_targets
                                       : model.config().total_concepts();
  if (unit_index < 0 || unit_index >= max_unit)
    throw ValidationError("grad_cam_unit: unit " + std::to_string(unit_index) + " out of [0," +
                          std::to_string(max_unit) + ")");

  // single-example batch
  Shape bshape;
  bshape.push_back(1);
  for (int64_t d : x.shape()) bshape.push_back(d);
  Array xb(bshape);
  for (int64_t i = 0; i < x.size(); ++i) xb[i] = x[i];

  ForwardOutputs fwd = model.forward(Tensor(std::move(xb)), /*training=*/false);
  const Tensor& source = opts.target_logit ? fwd.logits : fwd.concepts.c;
  Tensor target = sum_all(slice_cols(source, unit_index, unit_index + 1));
  Tensor g = grad(target, {fwd.feature_map})[0];  // (1,C,h,w)

  int64_t c = fwd.feature_map.dim(1), h = fwd.feature_map.dim(2), w = fwd.feature_map.dim(3);
  Array cam(Shape{h, w});
  const Array& gv = g.val();
  const Array& av = fwd.feature_map.val();
  for (int64_t ch = 0; ch < c; ++ch) {
    double weight = 0;
    for (int64_t p = 0; p < h * w; ++p) weight += gv[ch * h * w + p];
    weight /= static_cast<double>(h * w);
    for (int64_t p = 0; p < h * w; ++p) cam[p] += weight * av[ch * h * w + p];
  }
  for (int64_t p = 0; p < h * w; ++p) cam[p] = std::max(0.0, cam[p]);

  SaliencyMap out;
  out.unit_index = unit_index;
  out.map = bilinear_upsample(cam, x.dim(1), x.dim(2));
  double mx = out.map.max_abs();
  if (mx > 0)
    for (int64_t p = 0; p < out.map.size(); ++p) out.map[p] /= mx;
  int64_t dex = model.config().d_ex;
  out.unit_name = opts.target_logit ? "logit_" + std::to_string(unit_index)
                 : unit_index < dex ? "sup_" + std::to_string(unit_index)
                                    : "unsup_" + std::to_string(unit_index - dex);
  return out;
}

std::vector<SaliencyIndexRow> saliency_report(Model& model, const Dataset& dataset,
                                              const std::vector<int64_t>& units,
                                              const std::string& out_dir,
                                              const SaliencyOptions& opts) {
  fs::create_directories(out_dir);
  std::vector<SaliencyIndexRow> rows;
  int64_t dex = model.config().d_ex;
  for (int64_t i = 0; i < dataset.size(); ++i) {
    const Example& ex = dataset.examples[static_cast<size_t>(i)];
    char image_id[32];
    std::snprintf(image_id, sizeof(image_id), "img%06lld", static_cast<long long>(i));
    for (int64_t u : units) {
      SaliencyMap sm = grad_cam_unit(model, ex.x, u, opts);
      sm.image_id = image_id;
      char fname[64];
      std::snprintf(fname, sizeof(fname), "%s_unit%03lld.png", image_id,
                    static_cast<long long>(u));
      std::string path = (fs::path(out_dir) / fname).string();
      try {
        write_png_rgb(path, overlay_heatmap(ex.x, sm.map, opts.overlay_alpha));
      } catch (const IoError& e) {
        throw IoError(std::string("saliency_report: ") + e.what());
      }
      rows.push_back({image_id, u, u < dex ? "sup" : "unsup", fname});
    }
  }
  std::ofstream index(fs::path(out_dir) / "index.csv");
  if (!index) throw IoError("saliency_report: cannot write index.csv in " + out_dir);
  index << "image_id,unit_index,unit_kind,path\n";
  for (const auto& r : rows)
    index << r.image_id << "," << r.unit_index << "," << r.unit_kind << "," << r.path << "\n";
  return rows;
}

double mass_fraction(const Array& map, const std::array<int64_t, 4>& box) {
  double total = 0, inside = 0;
  for (int64_t y = 0; y < map.dim(0); ++y)
    for (int64_t x = 0; x < map.dim(1); ++x) {
      double v = map.at2(y, x);
      total += v;
      if (y >= box[0] && y < box[2] && x >= box[1] && x < box[3]) inside += v;
    }
  return total > 0 ? inside / total : 0.0;
}

}  // namespace cbmauc
