#include "cbmauc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cbmauc/errors.hpp"
#include "cbmauc/losses.hpp"
#include "cbmauc/rng.hpp"
#include "cbmauc/training.hpp"

namespace cbmauc {

using json = nlohmann::json;

std::string to_json(const MetricsReport& m) {
  json j;
  j["task_kind"] = to_string(m.task_kind);
  j["task_error"] = m.task_error;
  j["concept_rmse"] = m.concept_rmse;
  j["probe_rmse"] = m.probe_rmse;
  j["r_bar_sq"] = m.r_bar_sq;
  j["f1"] = {{"per_action", m.f1.per_action}, {"mF1", m.f1.mF1},         {"F1_all", m.f1.F1_all},
             {"mF1_cpt", m.f1.mF1_cpt},       {"F1_cpt_all", m.f1.F1_cpt_all}};
  j["accounting"] = {{"dh_over_d", m.accounting.dh_over_d},
                     {"param_reduction", m.accounting.param_reduction}};
  return j.dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport m;
  m.task_kind = task_kind_from_string(j.at("task_kind").get<std::string>());
  m.task_error = j.at("task_error").get<double>();
  m.concept_rmse = j.at("concept_rmse").get<double>();
  m.probe_rmse = j.at("probe_rmse").get<double>();
  m.r_bar_sq = j.at("r_bar_sq").get<double>();
  m.f1.per_action = j.at("f1").at("per_action").get<std::vector<double>>();
  m.f1.mF1 = j.at("f1").at("mF1").get<double>();
  m.f1.F1_all = j.at("f1").at("F1_all").get<double>();
  m.f1.mF1_cpt = j.at("f1").at("mF1_cpt").get<double>();
  m.f1.F1_cpt_all = j.at("f1").at("F1_cpt_all").get<double>();
  m.accounting.dh_over_d = j.at("accounting").at("dh_over_d").get<double>();
  m.accounting.param_reduction = j.at("accounting").at("param_reduction").get<double>();
  return m;
}

double task_error_01(const std::vector<int64_t>& predictions, const std::vector<int64_t>& labels) {
  if (predictions.size() != labels.size() || predictions.empty())
    throw ValidationError("task_error_01: prediction/label length mismatch");
  int64_t wrong = 0;
  for (size_t i = 0; i < predictions.size(); ++i)
    if (predictions[i] != labels[i]) ++wrong;
  return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

double concept_rmse(const Array& c_pred, const Array& c_true) {
  if (!same_shape(c_pred.shape(), c_true.shape()))
    throw ValidationError("concept_rmse: shape mismatch");
  if (c_pred.size() == 0) throw ValidationError("concept_rmse: empty input");
  double acc = 0;
  for (int64_t i = 0; i < c_pred.size(); ++i) {
    double d = c_pred[i] - c_true[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(c_pred.size()));
}

// ---------------------------------------------------------------------------
// linear probe (ridge normal equations, Cholesky solve)

namespace {

// solves (A + tau*I) W = B for SPD A (in place); A is (n,n), B is (n,m)
void cholesky_solve(std::vector<double>& a, std::vector<double>& b, int64_t n, int64_t m,
                    double tau) {
  for (int64_t i = 0; i < n; ++i) a[i * n + i] += tau;
  // decompose A = L L^T
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (int64_t p = 0; p < j; ++p) s -= a[i * n + p] * a[j * n + p];
      if (i == j) {
        if (s <= 0.0)
          throw ValidationError("linear_probe: rank-deficient features (set tau > 0)");
        a[i * n + i] = std::sqrt(s);
      } else {
        a[i * n + j] = s / a[j * n + j];
      }
    }
  }
  // forward/back substitution per column of B
  for (int64_t c = 0; c < m; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      double s = b[i * m + c];
      for (int64_t p = 0; p < i; ++p) s -= a[i * n + p] * b[p * m + c];
      b[i * m + c] = s / a[i * n + i];
    }
    for (int64_t i = n - 1; i >= 0; --i) {
      double s = b[i * m + c];
      for (int64_t p = i + 1; p < n; ++p) s -= a[p * n + i] * b[p * m + c];
      b[i * m + c] = s / a[i * n + i];
    }
  }
}

}  // namespace

double linear_probe(const Array& c_pred, const Array& c_true, double tau, int64_t seed,
                    double train_fraction) {
  if (c_pred.ndim() != 2 || c_true.ndim() != 2 || c_pred.dim(0) != c_true.dim(0))
    throw ValidationError("linear_probe: need matching (N,P) and (N,D) matrices");
  int64_t n = c_pred.dim(0), p = c_pred.dim(1), d = c_true.dim(1);
  if (n < 4) throw ValidationError("linear_probe: too few rows");

  Rng rng(static_cast<uint64_t>(seed));
  std::vector<int64_t> idx = rng.permutation(n);
  int64_t n_train = std::max<int64_t>(1, static_cast<int64_t>(train_fraction * n));
  n_train = std::min(n_train, n - 1);

  int64_t f = p + 1;  // affine: features plus intercept column
  std::vector<double> xtx(static_cast<size_t>(f * f));
  std::vector<double> xty(static_cast<size_t>(f * d));
  auto feature = [&](int64_t row, int64_t col) {
    return col < p ? c_pred.at2(row, col) : 1.0;
  };
  for (int64_t t = 0; t < n_train; ++t) {
    int64_t r = idx[static_cast<size_t>(t)];
    for (int64_t i = 0; i < f; ++i) {
      for (int64_t j = 0; j < f; ++j) xtx[i * f + j] += feature(r, i) * feature(r, j);
      for (int64_t j = 0; j < d; ++j) xty[i * d + j] += feature(r, i) * c_true.at2(r, j);
    }
  }
  cholesky_solve(xtx, xty, f, d, tau);

  double acc = 0;
  int64_t cnt = 0;
  for (int64_t t = n_train; t < n; ++t) {
    int64_t r = idx[static_cast<size_t>(t)];
    for (int64_t j = 0; j < d; ++j) {
      double pred = 0;
      for (int64_t i = 0; i < f; ++i) pred += feature(r, i) * xty[static_cast<size_t>(i * d + j)];
      double diff = pred - c_true.at2(r, j);
      acc += diff * diff;
      ++cnt;
    }
  }
  return std::sqrt(acc / static_cast<double>(cnt));
}

// ---------------------------------------------------------------------------
// concept correlation

namespace {

double pearson_r(const Array& a, int64_t col_a, const Array& b, int64_t col_b) {
  int64_t n = a.dim(0);
  double ma = 0, mb = 0;
  for (int64_t i = 0; i < n; ++i) {
    ma += a.at2(i, col_a);
    mb += b.at2(i, col_b);
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (int64_t i = 0; i < n; ++i) {
    double da = a.at2(i, col_a) - ma;
    double db = b.at2(i, col_b) - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;  // constant column carries no signal
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double concept_correlation(const Array& c_true, const Array& c_pred) {
  if (c_true.ndim() != 2 || c_pred.ndim() != 2 || c_true.dim(0) != c_pred.dim(0))
    throw ValidationError("concept_correlation: need matching row counts");
  if (c_true.dim(0) < 2) throw ValidationError("concept_correlation: need N >= 2");
  int64_t d = c_true.dim(1), k = c_pred.dim(1);
  if (d == 0) throw ValidationError("concept_correlation: no ground-truth columns");
  if (k == 0) return 0.0;  // no predicted columns: max over the empty set
  double acc = 0;
  for (int64_t j = 0; j < d; ++j) {
    double best = 0;
    for (int64_t i = 0; i < k; ++i) {
      double r = pearson_r(c_true, j, c_pred, i);
      best = std::max(best, r * r);
    }
    acc += best;
  }
  return acc / static_cast<double>(d);
}

// ---------------------------------------------------------------------------
// F1 suite

namespace {

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
  double f1() const {
    if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // no positives anywhere
    return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
};

void column_counts(const Array& pred, const Array& truth, std::vector<Counts>& per_col,
                   Counts& global) {
  int64_t n = pred.dim(0), c = pred.dim(1);
  per_col.assign(static_cast<size_t>(c), Counts{});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < c; ++j) {
      bool p = pred.at2(i, j) > 0.5;
      bool t = truth.at2(i, j) > 0.5;
      Counts& cc = per_col[static_cast<size_t>(j)];
      if (p && t) {
        ++cc.tp;
        ++global.tp;
      } else if (p && !t) {
        ++cc.fp;
        ++global.fp;
      } else if (!p && t) {
        ++cc.fn;
        ++global.fn;
      }
    }
}

}  // namespace

F1Block f1_suite(const Array& pred_binary, const Array& true_binary, const Array& cpt_pred,
                 const Array& cpt_true) {
  if (!same_shape(pred_binary.shape(), true_binary.shape()))
    throw ValidationError("f1_suite: action matrices differ in shape");
  if (!same_shape(cpt_pred.shape(), cpt_true.shape()))
    throw ValidationError("f1_suite: concept matrices differ in shape");

  F1Block out;
  std::vector<Counts> cols;
  Counts global;
  column_counts(pred_binary, true_binary, cols, global);
  for (const Counts& c : cols) out.per_action.push_back(c.f1());
  out.mF1 = out.per_action.empty()
                ? 0.0
                : std::accumulate(out.per_action.begin(), out.per_action.end(), 0.0) /
                      static_cast<double>(out.per_action.size());
  out.F1_all = global.f1();

  if (cpt_pred.size() > 0) {
    std::vector<Counts> ccols;
    Counts cglobal;
    column_counts(cpt_pred, cpt_true, ccols, cglobal);
    double acc = 0;
    for (const Counts& c : ccols) acc += c.f1();
    out.mF1_cpt = ccols.empty() ? 0.0 : acc / static_cast<double>(ccols.size());
    out.F1_cpt_all = cglobal.f1();
  }
  return out;
}

// ---------------------------------------------------------------------------
// accounting

AccountingBlock accounting(int64_t d_h, const std::vector<int64_t>& input_dims,
                           int64_t params_shared, int64_t params_unshared) {
  if (d_h <= 0 || params_shared <= 0) throw ValidationError("accounting: nonpositive inputs");
  int64_t denom = 1;
  for (int64_t d : input_dims) {
    if (d <= 0) throw ValidationError("accounting: nonpositive input dim");
    denom *= d;
  }
  if (denom == 0 || params_unshared == 0) throw ValidationError("accounting: zero denominator");
  AccountingBlock out;
  int64_t g1 = std::gcd(d_h, denom);
  out.dh_over_d = static_cast<double>(d_h / g1) / static_cast<double>(denom / g1);
  int64_t g2 = std::gcd(params_shared, params_unshared);
  out.param_reduction =
      static_cast<double>(params_shared / g2) / static_cast<double>(params_unshared / g2);
  return out;
}

// ---------------------------------------------------------------------------
// model evaluation

EvalPredictions predict_dataset(Model& model, const Dataset& d, int64_t batch_size) {
  if (d.size() == 0) throw ValidationError("predict_dataset: empty dataset");
  const ModelConfig& cfg = model.config();
  int64_t n = d.size();
  EvalPredictions out;
  out.c_ex = Array(Shape{n, cfg.d_ex});
  out.c_all = Array(Shape{n, cfg.total_concepts()});
  out.c_sup = Array(Shape{n, d.d_ex()});
  if (d.task_kind == TaskKind::multilabel) {
    out.pred_bin = Array(Shape{n, d.num_targets});
    out.true_bin = Array(Shape{n, d.num_targets});
  }
  out.cpt_pred_bin = Array(Shape{n, cfg.d_ex});
  out.cpt_true_bin = Array(Shape{n, d.d_ex()});

  NoGradGuard no_grad;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t end = std::min(start + batch_size, n);
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Batch batch = make_batch(d, idx);
    ForwardOutputs fwd = model.forward(batch.x, /*training=*/false);
    const Array& logits = fwd.logits.val();
    const Array& c = fwd.concepts.c.val();
    for (int64_t i = 0; i < end - start; ++i) {
      int64_t row = start + i;
      if (d.task_kind == TaskKind::multiclass) {
        int64_t arg = 0;
        for (int64_t j = 1; j < cfg.num_targets; ++j)
          if (logits.at2(i, j) > logits.at2(i, arg)) arg = j;
        out.pred_class.push_back(arg);
        out.true_class.push_back(batch.y_class[static_cast<size_t>(i)]);
      } else {
        for (int64_t j = 0; j < d.num_targets; ++j) {
          double p = 1.0 / (1.0 + std::exp(-logits.at2(i, j)));
          out.pred_bin.at2(row, j) = p >= 0.5 ? 1.0 : 0.0;
          out.true_bin.at2(row, j) = batch.y_multi.at2(i, j) > 0.5 ? 1.0 : 0.0;
        }
      }
      for (int64_t j = 0; j < cfg.total_concepts(); ++j) out.c_all.at2(row, j) = c.at2(i, j);
      for (int64_t j = 0; j < cfg.d_ex; ++j) {
        double v = fwd.concepts.c_ex.val().at2(i, j);
        out.c_ex.at2(row, j) = v;
        out.cpt_pred_bin.at2(row, j) = v >= 0.5 ? 1.0 : 0.0;
      }
      for (int64_t j = 0; j < d.d_ex(); ++j) {
        double t = batch.c_sup.at2(i, j);
        out.c_sup.at2(row, j) = t;
        out.cpt_true_bin.at2(row, j) = t > 0.5 ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

MetricsReport evaluate_model(Model& model, const Dataset& test, int64_t batch_size,
                             const EvalOptions& opts) {
  EvalPredictions pred = predict_dataset(model, test, batch_size);
  MetricsReport m;
  m.task_kind = test.task_kind;
  if (test.task_kind == TaskKind::multiclass) {
    m.task_error = task_error_01(pred.pred_class, pred.true_class);
  } else {
    m.f1 = f1_suite(pred.pred_bin, pred.true_bin, pred.cpt_pred_bin, pred.cpt_true_bin);
    m.task_error = 1.0 - m.f1.mF1;
  }

  // reference columns: supervised labels when present, generative bits otherwise
  Array ref;
  if (opts.reference_concepts) {
    ref = *opts.reference_concepts;
  } else if (test.d_ex() > 0) {
    ref = pred.c_sup;
  } else if (!test.gen_concepts.empty()) {
    int64_t g = static_cast<int64_t>(test.gen_concepts[0].size());
    ref = Array(Shape{test.size(), g});
    for (int64_t i = 0; i < test.size(); ++i)
      for (int64_t j = 0; j < g; ++j)
        ref.at2(i, j) = test.gen_concepts[static_cast<size_t>(i)][static_cast<size_t>(j)];
  }

  if (model.config().d_ex > 0 && test.d_ex() == model.config().d_ex)
    m.concept_rmse = concept_rmse(pred.c_ex, pred.c_sup);
  if (ref.size() > 0) {
    m.r_bar_sq = concept_correlation(ref, pred.c_all);
    m.probe_rmse = linear_probe(pred.c_all, ref, opts.probe_tau, opts.probe_seed);
  }

  const Shape& in_shape = model.input_shape();
  m.accounting = accounting(model.backbone_spec().out_dim,
                            std::vector<int64_t>(in_shape.begin(), in_shape.end()),
                            model.param_count(), reference_unshared_param_count(model));
  return m;
}

// ---------------------------------------------------------------------------
// limited-supervision sweep

std::vector<SweepRow> limited_supervision_sweep(const SyntheticSpec& spec,
                                                const ModelConfig& base_cfg,
                                                const std::vector<int64_t>& d_ex_values,
                                                const SweepOptions& opts) {
  for (int64_t v : d_ex_values)
    if (v < 0 || v > opts.total_concepts)
      throw ValidationError("sweep: d_ex value " + std::to_string(v) +
                            " exceeds the fixed total " + std::to_string(opts.total_concepts));

  // one dataset generation; supervision subsets are carved out of the pool
  Dataset full = generate_synthetic_dataset(spec);
  std::vector<int64_t> pool = spec.label_fraction;
  if (pool.empty()) throw ValidationError("sweep: spec exposes no labeled concepts");
  {
    // fixed removal order so smaller subsets nest inside larger ones
    Rng order_rng(static_cast<uint64_t>(spec.seed) + 7);
    order_rng.shuffle(pool);
  }

  struct Job {
    int64_t d_ex, seed;
    bool auc;  // cbmauc vs cbm
  };
  std::vector<Job> jobs_list;
  for (int64_t d : d_ex_values)
    for (int64_t s = 0; s < opts.seeds; ++s) {
      jobs_list.push_back({d, s, true});
      jobs_list.push_back({d, s, false});
    }

  // reference matrix: the pool concepts of the TEST split, fixed across points
  auto relabel = [&](const Dataset& src, int64_t keep) {
    Dataset out = src;
    for (size_t i = 0; i < out.examples.size(); ++i) {
      out.examples[i].c_sup.clear();
      for (int64_t j = 0; j < keep; ++j)
        out.examples[i].c_sup.push_back(
            out.gen_concepts[i][static_cast<size_t>(pool[static_cast<size_t>(j)])]);
    }
    return out;
  };

  std::vector<SweepRow> rows(jobs_list.size());
  std::vector<std::function<void()>> tasks;
  for (size_t ji = 0; ji < jobs_list.size(); ++ji) {
    tasks.push_back([&, ji]() {
      const Job& job = jobs_list[ji];
      Dataset labeled = relabel(full, job.d_ex);
      SplitResult splits = split_dataset(labeled, spec.split);

      Array ref(Shape{splits.test.size(), static_cast<int64_t>(pool.size())});
      for (int64_t i = 0; i < splits.test.size(); ++i)
        for (size_t j = 0; j < pool.size(); ++j)
          ref.at2(i, static_cast<int64_t>(j)) =
              splits.test.gen_concepts[static_cast<size_t>(i)][static_cast<size_t>(pool[j])];

      SweepRow row;
      row.d_ex = job.d_ex;
      row.seed = job.seed;
      row.model = job.auc ? "cbmauc" : "cbm";

      ModelConfig cfg = base_cfg;
      cfg.seed = base_cfg.seed + job.seed;
      cfg.d_ex = job.d_ex;
      if (job.auc) {
        cfg.model = job.d_ex == 0 ? ModelKind::msenn : ModelKind::cbmauc;
        cfg.d_im = opts.total_concepts - job.d_ex;
        cfg.k = cfg.d_im / 2;
      } else {
        cfg.model = ModelKind::cbm;
        cfg.d_im = 0;
        cfg.k = 0;
      }

      if (!job.auc && job.d_ex == 0) {
        // bias-only endpoint: majority class of the train split
        std::vector<int64_t> counts(static_cast<size_t>(full.num_targets));
        for (const Example& ex : splits.train.examples)
          counts[static_cast<size_t>(ex.y[0])] += 1;
        int64_t maj = std::distance(counts.begin(),
                                    std::max_element(counts.begin(), counts.end()));
        int64_t wrong = 0;
        for (const Example& ex : splits.test.examples)
          if (static_cast<int64_t>(ex.y[0]) != maj) ++wrong;
        row.task_error = static_cast<double>(wrong) / static_cast<double>(splits.test.size());
        row.r_bar_sq = 0.0;  // no concept units at all
      } else {
        TrainResult r = train(splits, cfg);
        EvalOptions eopts;
        eopts.reference_concepts = ref;
        eopts.probe_seed = cfg.seed + 2;
        MetricsReport m = evaluate_model(r.model, splits.test, cfg.batch_size, eopts);
        row.task_error = m.task_error;
        row.r_bar_sq = m.r_bar_sq;
      }
      rows[ji] = row;
    });
  }
  run_parallel(opts.jobs, tasks);
  return rows;
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "d_ex,model,seed,task_error,r_bar_sq\n";
  os.precision(10);
  for (const SweepRow& r : rows)
    os << r.d_ex << "," << r.model << "," << r.seed << "," << r.task_error << "," << r.r_bar_sq
       << "\n";
  return os.str();
}

std::vector<SweepRow> sweep_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("d_ex,", 0) != 0)
    throw IoError("sweep csv: bad header");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    SweepRow r;
    std::getline(ls, tok, ',');
    r.d_ex = std::stoll(tok);
    std::getline(ls, r.model, ',');
    std::getline(ls, tok, ',');
    r.seed = std::stoll(tok);
    std::getline(ls, tok, ',');
    r.task_error = std::stod(tok);
    std::getline(ls, tok, ',');
    r.r_bar_sq = std::stod(tok);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cbmauc
