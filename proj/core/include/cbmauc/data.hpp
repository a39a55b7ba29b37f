#pragma once

#include <string>
#include <vector>

#include "cbmauc/array.hpp"
#include "cbmauc/config.hpp"

namespace cbmauc {

// One training triple. y holds the class index (multiclass, size 1) or the
// binary target vector (multilabel, size C).
struct Example {
  Array x;                    // (3,H,W) image, values in [0,1]
  std::vector<double> c_sup;  // supervised concept labels, length D_ex, in [0,1]
  std::vector<double> y;
};

struct Dataset {
  std::string split = "full";  // full | train | val | test
  TaskKind task_kind = TaskKind::multiclass;
  int64_t num_targets = 2;
  int64_t seed = 0;
  std::vector<Example> examples;
  // synthetic only: full ground-truth generative bits per example (length G)
  std::vector<std::vector<double>> gen_concepts;

  int64_t size() const { return static_cast<int64_t>(examples.size()); }
  int64_t d_ex() const { return examples.empty() ? 0 : static_cast<int64_t>(examples[0].c_sup.size()); }
};

// The label rule applied to the G generative bits:
//   parity:            y = 1 iff an odd number of bits is set
//   linear_threshold:  y = 1 iff sum(bits) - G/2 > 0   (unit weights, bias -G/2)
//   lookup:            fixed pseudo-random truth table derived from G
// Multilabel targets apply the rule to rotations of the bit vector:
//   y_c = rule(bits rotated left by c).
std::vector<double> apply_rule(const std::string& rule, const std::vector<double>& bits,
                               TaskKind task_kind, int64_t num_targets);

// Renders each active concept j as a distinct coloured shape in row-major
// grid cell j (8x8 px cells). Pixels are quantized to 8 bits at generation
// time so in-memory data matches a PNG round trip exactly.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// Deterministic disjoint split (Fisher-Yates on indices, seeded by
// dataset.seed + 1). Sizes are floor(fraction*N) with leftovers assigned to
// splits in order.
struct SplitResult {
  Dataset train, val, test;
};
SplitResult split_dataset(const Dataset& d, const std::vector<double>& fractions);

// ---- on-disk format: <dir>/manifest.csv + <dir>/images/*.png ----
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

void save_splits(const SplitResult& s, const SyntheticSpec& spec, const std::string& dir);
SplitResult load_splits(const std::string& dir);

// Rendered geometry of a concept's grid cell: {y0, x0, y1, x1} pixel bounds
// (half-open). Used by the saliency localization checks.
std::array<int64_t, 4> concept_cell_bounds(const SyntheticSpec& spec, int64_t concept_index);

constexpr int64_t kCellPixels = 8;

}  // namespace cbmauc
