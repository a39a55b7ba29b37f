#include "cbmauc/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cbmauc/errors.hpp"
#include "cbmauc/image_io.hpp"
#include "cbmauc/rng.hpp"

namespace fs = std::filesystem;

namespace cbmauc {

std::vector<double> apply_rule(const std::string& rule, const std::vector<double>& bits,
                               TaskKind task_kind, int64_t num_targets) {
  int64_t g = static_cast<int64_t>(bits.size());
  auto rule_bit = [&](const std::vector<double>& b) -> double {
    if (rule == "parity") {
      int64_t ones = 0;
      for (double v : b) ones += v > 0.5 ? 1 : 0;
      return static_cast<double>(ones % 2);
    }
    if (rule == "linear_threshold") {
      double s = 0.0;
      for (double v : b) s += v > 0.5 ? 1.0 : 0.0;
      return s - static_cast<double>(g) / 2.0 > 0.0 ? 1.0 : 0.0;
    }
    if (rule == "lookup") {
      // fixed table: bit pattern -> output bit, derived from G only
      uint64_t idx = 0;
      for (size_t i = 0; i < b.size(); ++i)
        if (b[i] > 0.5) idx |= (1ull << i);
      std::mt19937_64 table_rng(0xC0FFEEull ^ static_cast<uint64_t>(g));
      uint64_t bit = 0;
      for (uint64_t i = 0; i <= idx; ++i) bit = table_rng() & 1ull;
      return static_cast<double>(bit);
    }
    throw ValidationError("unknown rule: " + rule);
  };

  if (task_kind == TaskKind::multiclass) {
    return {rule_bit(bits)};  // class index 0 or 1
  }
  std::vector<double> y(static_cast<size_t>(num_targets));
  std::vector<double> rot = bits;
  for (int64_t c = 0; c < num_targets; ++c) {
    y[static_cast<size_t>(c)] = rule_bit(rot);
    std::rotate(rot.begin(), rot.begin() + 1, rot.end());
  }
  return y;
}

namespace {

// Distinct colour per concept (saturated palette, cycled).
const double kPalette[6][3] = {
    {0.95, 0.15, 0.15},  // red
    {0.15, 0.90, 0.15},  // green
    {0.20, 0.35, 0.95},  // blue
    {0.95, 0.90, 0.10},  // yellow
    {0.90, 0.15, 0.90},  // magenta
    {0.10, 0.90, 0.90},  // cyan
};

enum class CellShape { square, disc, triangle, cross, diamond, ring };

bool shape_covers(CellShape s, int64_t py, int64_t px, int64_t side) {
  double cy = (side - 1) / 2.0, cx = (side - 1) / 2.0;
  double dy = py - cy, dx = px - cx;
  double r = side / 2.0 - 0.5;
  switch (s) {
    case CellShape::square:
      return py >= 1 && py < side - 1 && px >= 1 && px < side - 1;
    case CellShape::disc:
      return dy * dy + dx * dx <= r * r;
    case CellShape::triangle:
      return py >= 1 && py < side - 1 && std::fabs(dx) <= (py - 1) * 0.6 + 0.5;
    case CellShape::cross:
      return std::fabs(dy) <= 1.0 || std::fabs(dx) <= 1.0;
    case CellShape::diamond:
      return std::fabs(dy) + std::fabs(dx) <= r;
    case CellShape::ring:
      return dy * dy + dx * dx <= r * r && dy * dy + dx * dx >= (r - 2) * (r - 2);
  }
  return false;
}

double quantize8(double v) {
  v = std::min(1.0, std::max(0.0, v));
  return std::lround(v * 255.0) / 255.0;
}

}  // namespace

std::array<int64_t, 4> concept_cell_bounds(const SyntheticSpec& spec, int64_t concept_index) {
  int64_t row = concept_index / spec.grid_side;
  int64_t col = concept_index % spec.grid_side;
  return {row * kCellPixels, col * kCellPixels, (row + 1) * kCellPixels, (col + 1) * kCellPixels};
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  auto errors = validate_spec(spec);
  if (!errors.empty()) {
    std::string msg = "invalid SyntheticSpec:";
    for (const std::string& e : errors) msg += "\n  - " + e;
    throw ValidationError(msg);
  }
  if (!spec.label_fraction.empty()) {
    // duplicates would desynchronize c_sup from the generative bits
    std::vector<int64_t> lf = spec.label_fraction;
    std::sort(lf.begin(), lf.end());
    if (std::adjacent_find(lf.begin(), lf.end()) != lf.end())
      throw ValidationError("label_fraction contains duplicate indices");
  }

  int64_t side_px = spec.grid_side * kCellPixels;
  Rng rng(static_cast<uint64_t>(spec.seed));

  Dataset d;
  d.split = "full";
  d.task_kind = spec.task_kind;
  d.num_targets = spec.task_kind == TaskKind::multiclass ? 2 : spec.num_targets;
  d.seed = spec.seed;
  d.examples.reserve(static_cast<size_t>(spec.num_samples));
  d.gen_concepts.reserve(static_cast<size_t>(spec.num_samples));

  for (int64_t n = 0; n < spec.num_samples; ++n) {
    std::vector<double> bits(static_cast<size_t>(spec.num_gen_concepts));
    for (double& b : bits) b = rng.bernoulli(0.5) ? 1.0 : 0.0;

    Array x(Shape{3, side_px, side_px});
    int64_t hw = side_px * side_px;
    for (int64_t p = 0; p < hw; ++p) {
      double noise = spec.noise_std > 0 ? rng.normal(0.0, spec.noise_std) : 0.0;
      double base = 0.10 + noise;
      for (int c = 0; c < 3; ++c) x[c * hw + p] = base;
    }
    for (int64_t j = 0; j < spec.num_gen_concepts; ++j) {
      if (bits[static_cast<size_t>(j)] < 0.5) continue;
      auto [y0, x0, y1, x1] = concept_cell_bounds(spec, j);
      const double* col = kPalette[j % 6];
      CellShape shape = static_cast<CellShape>(j % 6);
      for (int64_t py = y0; py < y1; ++py)
        for (int64_t px = x0; px < x1; ++px)
          if (shape_covers(shape, py - y0, px - x0, kCellPixels))
            for (int c = 0; c < 3; ++c) x[c * hw + py * side_px + px] = col[c];
    }
    for (int64_t p = 0; p < 3 * hw; ++p) x[p] = quantize8(x[p]);

    Example ex;
    ex.x = std::move(x);
    ex.y = apply_rule(spec.rule, bits, spec.task_kind, d.num_targets);
    ex.c_sup.reserve(spec.label_fraction.size());
    for (int64_t j : spec.label_fraction) ex.c_sup.push_back(bits[static_cast<size_t>(j)]);
    d.examples.push_back(std::move(ex));
    d.gen_concepts.push_back(std::move(bits));
  }
  return d;
}

SplitResult split_dataset(const Dataset& d, const std::vector<double>& fractions) {
  if (fractions.size() != 3 || fractions[0] <= 0 || fractions[1] <= 0 || fractions[2] <= 0 ||
      std::fabs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ValidationError("split_dataset: fractions must be positive and sum to 1");
  int64_t n = d.size();
  if (n < 3) throw ValidationError("split_dataset: need at least 3 examples for nonempty splits");

  int64_t n0 = static_cast<int64_t>(std::floor(fractions[0] * n));
  int64_t n1 = static_cast<int64_t>(std::floor(fractions[1] * n));
  int64_t n2 = static_cast<int64_t>(std::floor(fractions[2] * n));
  for (int64_t* s : {&n0, &n1, &n2}) {
    if (n0 + n1 + n2 == n) break;
    ++*s;  // leftover examples go to splits in order
  }
  if (n0 < 1 || n1 < 1 || n2 < 1)
    throw ValidationError("split_dataset: a split would be empty at N=" + std::to_string(n));

  Rng rng(static_cast<uint64_t>(d.seed) + 1);
  std::vector<int64_t> idx = rng.permutation(n);

  auto take = [&](int64_t from, int64_t count, const char* name) {
    Dataset out;
    out.split = name;
    out.task_kind = d.task_kind;
    out.num_targets = d.num_targets;
    out.seed = d.seed;
    for (int64_t i = from; i < from + count; ++i) {
      out.examples.push_back(d.examples[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
      if (!d.gen_concepts.empty())
        out.gen_concepts.push_back(d.gen_concepts[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
    }
    return out;
  };
  SplitResult r;
  r.train = take(0, n0, "train");
  r.val = take(n0, n1, "val");
  r.test = take(n0 + n1, n2, "test");
  return r;
}

// ---------------------------------------------------------------------------
// disk I/O

namespace {

std::string fmt_label(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void save_dataset(const Dataset& d, const std::string& dir) {
  if (d.examples.empty()) throw ValidationError("save_dataset: refusing to write an empty dataset");
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest in " + dir);

  int64_t dex = d.d_ex();
  int64_t g = d.gen_concepts.empty() ? 0 : static_cast<int64_t>(d.gen_concepts[0].size());
  manifest << "path";
  if (d.task_kind == TaskKind::multiclass) {
    manifest << ",y";
  } else {
    for (int64_t c = 0; c < d.num_targets; ++c) manifest << ",y_" << c;
  }
  for (int64_t j = 0; j < dex; ++j) manifest << ",c_" << j;
  for (int64_t j = 0; j < g; ++j) manifest << ",g_" << j;
  manifest << "\n";

  for (size_t i = 0; i < d.examples.size(); ++i) {
    const Example& ex = d.examples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06zu.png", i);
    write_png_rgb((fs::path(dir) / name).string(), to_u8(ex.x));
    manifest << name;
    if (d.task_kind == TaskKind::multiclass) {
      manifest << "," << static_cast<int64_t>(ex.y[0]);
    } else {
      for (double v : ex.y) manifest << "," << fmt_label(v);
    }
    for (double v : ex.c_sup) manifest << "," << fmt_label(v);
    if (g > 0)
      for (double v : d.gen_concepts[i]) manifest << "," << fmt_label(v);
    manifest << "\n";
  }
  if (!manifest) throw IoError("failed writing manifest in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  std::ifstream manifest(fs::path(dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot open manifest in " + dir);
  std::string header;
  if (!std::getline(manifest, header)) throw IoError("empty manifest in " + dir);
  std::vector<std::string> cols = split_csv_line(header);
  if (cols.empty() || cols[0] != "path") throw IoError("manifest must start with a path column");

  Dataset d;
  int64_t y_cols = 0, c_cols = 0, g_cols = 0;
  bool multiclass = false;
  for (size_t i = 1; i < cols.size(); ++i) {
    if (cols[i] == "y") {
      multiclass = true;
      y_cols = 1;
    } else if (cols[i].rfind("y_", 0) == 0) {
      ++y_cols;
    } else if (cols[i].rfind("c_", 0) == 0) {
      ++c_cols;
    } else if (cols[i].rfind("g_", 0) == 0) {
      ++g_cols;
    } else {
      throw IoError("unknown manifest column: " + cols[i]);
    }
  }
  d.task_kind = multiclass ? TaskKind::multiclass : TaskKind::multilabel;
  d.num_targets = multiclass ? 2 : y_cols;

  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f = split_csv_line(line);
    if (f.size() != cols.size())
      throw IoError("manifest row has " + std::to_string(f.size()) + " fields, expected " +
                    std::to_string(cols.size()));
    Example ex;
    ex.x = to_chw(read_png_rgb((fs::path(dir) / f[0]).string()));
    size_t p = 1;
    for (int64_t j = 0; j < y_cols; ++j) ex.y.push_back(std::stod(f[p++]));
    for (int64_t j = 0; j < c_cols; ++j) ex.c_sup.push_back(std::stod(f[p++]));
    if (g_cols > 0) {
      std::vector<double> bits;
      for (int64_t j = 0; j < g_cols; ++j) bits.push_back(std::stod(f[p++]));
      d.gen_concepts.push_back(std::move(bits));
    }
    d.examples.push_back(std::move(ex));
  }
  if (d.examples.empty()) throw IoError("manifest lists no examples in " + dir);
  return d;
}

void save_splits(const SplitResult& s, const SyntheticSpec& spec, const std::string& dir) {
  fs::create_directories(dir);
  save_dataset(s.train, (fs::path(dir) / "train").string());
  save_dataset(s.val, (fs::path(dir) / "val").string());
  save_dataset(s.test, (fs::path(dir) / "test").string());
  std::ofstream specfile(fs::path(dir) / "dataset.ini");
  if (!specfile) throw IoError("cannot write dataset.ini in " + dir);
  specfile << serialize(spec);
}

SplitResult load_splits(const std::string& dir) {
  SplitResult r;
  r.train = load_dataset((fs::path(dir) / "train").string());
  r.val = load_dataset((fs::path(dir) / "val").string());
  r.test = load_dataset((fs::path(dir) / "test").string());
  r.train.split = "train";
  r.val.split = "val";
  r.test.split = "test";
  return r;
}

}  // namespace cbmauc
