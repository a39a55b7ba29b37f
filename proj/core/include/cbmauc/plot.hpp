#pragma once

#include <string>
#include <vector>

#include "cbmauc/evaluation.hpp"
#include "cbmauc/image_io.hpp"

namespace cbmauc {

// Minimal deterministic raster plotting, enough for the sweep figure.
struct Series {
  std::string label;
  uint8_t color[3];
  std::vector<double> x, y;
};

struct PanelSpec {
  std::string title;
  std::vector<Series> series;
};

// Renders side-by-side line panels with axes, ticks and a legend.
ImageU8 render_panels(const std::vector<PanelSpec>& panels, int64_t panel_w = 360,
                      int64_t panel_h = 300);

// Two-panel figure (task error, r_bar^2 vs d_ex) from sweep rows; a pure
// function of the CSV contents.
ImageU8 render_sweep_plot(const std::vector<SweepRow>& rows);

}  // namespace cbmauc
