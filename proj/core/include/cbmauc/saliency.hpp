#pragma once

#include <string>
#include <vector>

#include "cbmauc/array.hpp"
#include "cbmauc/data.hpp"
#include "cbmauc/model.hpp"

namespace cbmauc {

struct SaliencyMap {
  int64_t unit_index = 0;
  Array map;  // nonnegative, input spatial size, max-normalized when nonzero
  std::string image_id;
  std::string unit_name;  // concept name or "unsup_<i>"
};

struct SaliencyOptions {
  double overlay_alpha = 0.5;
  bool target_logit = false;  // attribute a task logit instead of a concept unit
};

// grad-CAM on the concept activation of `unit_index` (or the logit when
// opts.target_logit): channel weights are the spatially averaged gradients of
// the target w.r.t. the last conv feature map; the map is the ReLU of the
// weighted channel sum, bilinearly upsampled and max-normalized.
SaliencyMap grad_cam_unit(Model& model, const Array& x, int64_t unit_index,
                          const SaliencyOptions& opts = {});

struct SaliencyIndexRow {
  std::string image_id;
  int64_t unit_index;
  std::string unit_kind;  // sup | unsup
  std::string path;
};

// One PNG overlay per (image, unit) plus an index.csv mapping files to
// metadata. Returns the index rows.
std::vector<SaliencyIndexRow> saliency_report(Model& model, const Dataset& dataset,
                                              const std::vector<int64_t>& units,
                                              const std::string& out_dir,
                                              const SaliencyOptions& opts = {});

// fraction of total map mass inside the pixel box {y0,x0,y1,x1}
double mass_fraction(const Array& map, const std::array<int64_t, 4>& box);

}  // namespace cbmauc
