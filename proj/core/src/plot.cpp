#include "cbmauc/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

namespace cbmauc {

namespace {

// 5x7 glyphs for the characters the axis labels need
struct Glyph {
  char ch;
  uint8_t rows[7];  // 5 low bits per row, msb-left
};

const Glyph kFont[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}},
    {'a', {0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},
    {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E}},
    {'c', {0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E}},
    {'d', {0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F}},
    {'e', {0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},
    {'k', {0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12}},
    {'m', {0x00, 0x00, 0x1A, 0x15, 0x15, 0x15, 0x15}},
    {'n', {0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11}},
    {'o', {0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E}},
    {'r', {0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10}},
    {'s', {0x00, 0x00, 0x0F, 0x10, 0x0E, 0x01, 0x1E}},
    {'t', {0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06}},
    {'u', {0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D}},
    {'x', {0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11}},
    {'q', {0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01}},
};

const uint8_t* glyph_rows(char c) {
  for (const Glyph& g : kFont)
    if (g.ch == c) return g.rows;
  return nullptr;
}

void put_pixel(ImageU8& img, int64_t y, int64_t x, const uint8_t rgb[3]) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
}

void draw_text(ImageU8& img, int64_t y, int64_t x, const std::string& text,
               const uint8_t rgb[3]) {
  for (char ch : text) {
    const uint8_t* rows = glyph_rows(ch);
    if (rows) {
      for (int ry = 0; ry < 7; ++ry)
        for (int rx = 0; rx < 5; ++rx)
          if (rows[ry] & (1 << (4 - rx))) put_pixel(img, y + ry, x + rx, rgb);
    }
    x += 6;
  }
}

void draw_line(ImageU8& img, int64_t y0, int64_t x0, int64_t y1, int64_t x1,
               const uint8_t rgb[3]) {
  int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int64_t err = dx + dy;
  while (true) {
    put_pixel(img, y0, x0, rgb);
    if (x0 == x1 && y0 == y1) break;
    int64_t e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

ImageU8 render_panels(const std::vector<PanelSpec>& panels, int64_t panel_w, int64_t panel_h) {
  const uint8_t black[3] = {20, 20, 20};
  const uint8_t gray[3] = {200, 200, 200};
  ImageU8 img;
  img.width = panel_w * static_cast<int64_t>(panels.size());
  img.height = panel_h;
  img.rgb.assign(static_cast<size_t>(img.width * img.height * 3), 255);

  for (size_t pi = 0; pi < panels.size(); ++pi) {
    const PanelSpec& panel = panels[pi];
    int64_t ox = static_cast<int64_t>(pi) * panel_w;
    int64_t left = ox + 48, right = ox + panel_w - 16, top = 28, bottom = panel_h - 36;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const Series& s : panel.series)
      for (size_t i = 0; i < s.x.size(); ++i) {
        xmin = std::min(xmin, s.x[i]);
        xmax = std::max(xmax, s.x[i]);
        ymin = std::min(ymin, s.y[i]);
        ymax = std::max(ymax, s.y[i]);
      }
    if (xmin > xmax) {
      xmin = 0;
      xmax = 1;
    }
    if (ymin > ymax) {
      ymin = 0;
      ymax = 1;
    }
    if (xmax == xmin) xmax = xmin + 1;
    double pad = (ymax - ymin) * 0.08;
    if (pad == 0) pad = 0.05;
    ymin -= pad;
    ymax += pad;

    auto px = [&](double x) {
      return left + static_cast<int64_t>((x - xmin) / (xmax - xmin) * (right - left));
    };
    auto py = [&](double y) {
      return bottom - static_cast<int64_t>((y - ymin) / (ymax - ymin) * (bottom - top));
    };

    draw_line(img, top, left, bottom, left, black);
    draw_line(img, bottom, left, bottom, right, black);
    draw_text(img, 10, left, panel.title, black);

    for (int t = 0; t <= 4; ++t) {
      double yv = ymin + (ymax - ymin) * t / 4.0;
      int64_t yy = py(yv);
      draw_line(img, yy, left - 3, yy, left, black);
      draw_line(img, yy, left + 1, yy, right, gray);
      draw_text(img, yy - 3, ox + 6, fmt_tick(yv), black);
    }
    std::set<double> xticks;
    for (const Series& s : panel.series) xticks.insert(s.x.begin(), s.x.end());
    for (double xv : xticks) {
      int64_t xx = px(xv);
      draw_line(img, bottom, xx, bottom + 3, xx, black);
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%g", xv);
      draw_text(img, bottom + 7, xx - 3, buf, black);
    }

    int64_t legend_y = panel_h - 14;
    int64_t legend_x = left;
    for (const Series& s : panel.series) {
      for (size_t i = 0; i + 1 < s.x.size(); ++i)
        draw_line(img, py(s.y[i]), px(s.x[i]), py(s.y[i + 1]), px(s.x[i + 1]), s.color);
      for (size_t i = 0; i < s.x.size(); ++i) {
        int64_t cy = py(s.y[i]), cx = px(s.x[i]);
        for (int64_t dy = -1; dy <= 1; ++dy)
          for (int64_t dx = -1; dx <= 1; ++dx) put_pixel(img, cy + dy, cx + dx, s.color);
      }
      draw_line(img, legend_y + 3, legend_x, legend_y + 3, legend_x + 12, s.color);
      draw_text(img, legend_y, legend_x + 16, s.label, black);
      legend_x += 16 + 6 * static_cast<int64_t>(s.label.size() + 3);
    }
  }
  return img;
}

ImageU8 render_sweep_plot(const std::vector<SweepRow>& rows) {
  // mean per (model, d_ex)
  std::map<std::string, std::map<int64_t, std::pair<double, double>>> acc;  // sum, count
  std::map<std::string, std::map<int64_t, double>> r2sum;
  for (const SweepRow& r : rows) {
    auto& slot = acc[r.model][r.d_ex];
    slot.first += r.task_error;
    slot.second += 1;
    r2sum[r.model][r.d_ex] += r.r_bar_sq;
  }
  const uint8_t red[3] = {200, 40, 40};
  const uint8_t green[3] = {30, 140, 50};

  PanelSpec err_panel{"task error", {}};
  PanelSpec r2_panel{"r2 mean", {}};
  for (const auto& [model, by_dex] : acc) {
    Series se;
    se.label = model;
    const uint8_t* col = model == "cbmauc" ? red : green;
    std::copy(col, col + 3, se.color);
    Series sr = se;
    for (const auto& [dex, sumcount] : by_dex) {
      se.x.push_back(static_cast<double>(dex));
      se.y.push_back(sumcount.first / sumcount.second);
      sr.x.push_back(static_cast<double>(dex));
      sr.y.push_back(r2sum[model][dex] / sumcount.second);
    }
    err_panel.series.push_back(se);
    r2_panel.series.push_back(sr);
  }
  return render_panels({err_panel, r2_panel});
}

}  // namespace cbmauc
