#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cbmauc/errors.hpp"
#include "cbmauc/model.hpp"
#include "cbmauc/rng.hpp"
#include "test_util.hpp"

using namespace cbmauc;
using namespace cbmauc::testing;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.model = ModelKind::cbmauc;
  cfg.d_ex = 2;
  cfg.d_im = 3;
  cfg.k = 2;
  cfg.num_targets = 2;
  cfg.backbone = "mlp:6-8";
  cfg.dis_hidden = 8;
  cfg.seed = 5;
  return cfg;
}

void zero_params(std::vector<NamedParam> params, const std::string& prefix) {
  for (auto& p : params)
    if (p.name.rfind(prefix, 0) == 0)
      p.tensor.mutable_val() = Array::zeros(p.tensor.shape());
}

}  // namespace

TEST_CASE("aggregate is the plain matrix-vector readout") {
  SUBCASE("dot product") {
    Tensor theta(Array::from({1, 2}, {1, 2}));
    Tensor c(Array::from({1, 2}, {3, 4}));
    CHECK(aggregate(theta, c, 1).val()[0] == doctest::Approx(11));
  }
  SUBCASE("zero concepts give zero logits") {
    Tensor theta(Array::from({1, 4}, {1, -2, 3, 4}));
    Tensor c(Array::zeros({1, 2}));
    Tensor out = aggregate(theta, c, 2);
    CHECK(out.val()[0] == 0.0);
    CHECK(out.val()[1] == 0.0);
  }
  SUBCASE("2x3 relevance matrix") {
    Tensor theta(Array::from({1, 6}, {1, 0, 0, 0, 1, 1}));
    Tensor c(Array::from({1, 3}, {5, 2, 3}));
    Tensor out = aggregate(theta, c, 2);
    CHECK(out.val()[0] == doctest::Approx(5));
    CHECK(out.val()[1] == doctest::Approx(5));
  }
  SUBCASE("dimension mismatch") {
    Tensor theta(Array::from({1, 5}, {1, 2, 3, 4, 5}));
    Tensor c(Array::from({1, 2}, {1, 2}));
    CHECK_THROWS(aggregate(theta, c, 2));
  }
  SUBCASE("gradient w.r.t. c is the relevance row") {
    Rng rng(3);
    Tensor theta(random_array({4, 6}, rng));
    Tensor c(random_array({4, 3}, rng), true);
    Tensor out = aggregate(theta, c, 2);
    TensorList g = grad(sum_all(slice_cols(out, 1, 2)), {c});
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 3; ++j)
        CHECK(g[0].val().at2(i, j) == doctest::Approx(theta.val().at2(i, 3 + j)));
  }
}

TEST_CASE("encode_concepts activations and slicing") {
  ModelConfig cfg = small_cfg();
  Model model(cfg, Shape{6});
  Rng rng(17);

  SUBCASE("zero weights give sigmoid(0)=0.5 and zero kwta slice") {
    zero_params(model.parameters(), "e1");
    Tensor h(random_array({3, 8}, rng));
    ConceptActivations c = model.encode_concepts(h);
    for (int64_t i = 0; i < c.c_ex.size(); ++i) CHECK(c.c_ex.val()[i] == 0.5);
    for (int64_t i = 0; i < c.c_im.size(); ++i) CHECK(c.c_im.val()[i] == 0.0);
  }
  SUBCASE("supervised slice is strictly inside (0,1)") {
    Tensor h(random_array({5, 8}, rng, 3.0));
    ConceptActivations c = model.encode_concepts(h);
    for (int64_t i = 0; i < c.c_ex.size(); ++i) {
      CHECK(c.c_ex.val()[i] > 0.0);
      CHECK(c.c_ex.val()[i] < 1.0);
    }
  }
  SUBCASE("nonzero count of the unsupervised slice is min(k, d_im)") {
    Tensor h(random_array({7, 8}, rng));
    ConceptActivations c = model.encode_concepts(h);
    for (int64_t i = 0; i < 7; ++i) {
      int64_t nz = 0;
      for (int64_t j = 0; j < cfg.d_im; ++j)
        if (c.c_im.val().at2(i, j) != 0.0) ++nz;
      CHECK(nz == std::min(cfg.k, cfg.d_im));
    }
  }
  SUBCASE("d_im = 0 degenerates to the supervised slice") {
    ModelConfig c2 = small_cfg();
    c2.d_im = 0;
    c2.k = 0;
    Model m2(c2, Shape{6});
    Tensor h(random_array({2, 8}, rng));
    ConceptActivations c = m2.encode_concepts(h);
    CHECK(!c.c_im.defined());
    for (int64_t i = 0; i < c.c.size(); ++i) CHECK(c.c.val()[i] == c.c_ex.val()[i]);
  }
  SUBCASE("wrong feature width is rejected") {
    Tensor h(random_array({2, 9}, rng));
    CHECK_THROWS(model.encode_concepts(h));
  }
}

TEST_CASE("parametrize width rule and degenerate cases") {
  SUBCASE("hidden widths are D_h/2 and D_h/4") {
    ModelConfig cfg = small_cfg();
    cfg.backbone = "mlp:6-64";
    Model model(cfg, Shape{6});
    for (auto& p : model.parameters()) {
      if (p.name == "theta.fc1.weight") CHECK(p.tensor.shape() == Shape{32, 64});
      if (p.name == "theta.fc2.weight") CHECK(p.tensor.shape() == Shape{16, 32});
      if (p.name == "theta.fc3.weight")
        CHECK(p.tensor.shape() == Shape{cfg.num_targets * cfg.total_concepts(), 16});
    }
  }
  SUBCASE("num_targets = 1 yields a row-vector theta") {
    ModelConfig cfg = small_cfg();
    cfg.num_targets = 1;
    cfg.task_kind = TaskKind::multilabel;
    Model model(cfg, Shape{6});
    Rng rng(2);
    Tensor h(random_array({4, 8}, rng));
    Tensor theta = model.parametrize(h, false);
    CHECK(theta.shape() == Shape{4, cfg.total_concepts()});
  }
  SUBCASE("zero final layer makes theta and logits zero") {
    ModelConfig cfg = small_cfg();
    Model model(cfg, Shape{6});
    zero_params(model.parameters(), "theta.fc3");
    Rng rng(2);
    Tensor x(random_array({4, 6}, rng));
    ForwardOutputs out = model.forward(x, false);
    for (int64_t i = 0; i < out.theta_flat.size(); ++i) CHECK(out.theta_flat.val()[i] == 0.0);
    for (int64_t i = 0; i < out.logits.size(); ++i) CHECK(out.logits.val()[i] == 0.0);
  }
}

TEST_CASE("discriminator contract") {
  ModelConfig cfg = small_cfg();
  Model model(cfg, Shape{6});
  Rng rng(4);
  int64_t zdim = cfg.total_concepts() + 8;

  SUBCASE("zero weights score zero") {
    zero_params(model.parameters(), "dis");
    Tensor z(random_array({3, zdim}, rng));
    Tensor s = model.discriminate(z);
    for (int64_t i = 0; i < s.size(); ++i) CHECK(s.val()[i] == 0.0);
  }
  SUBCASE("finite scores for random z") {
    Tensor z(random_array({3, zdim}, rng, 2.0));
    CHECK(model.discriminate(z).val().all_finite());
  }
  SUBCASE("wrong width rejected") {
    Tensor z(random_array({3, zdim + 1}, rng));
    CHECK_THROWS(model.discriminate(z));
  }
}

TEST_CASE("forward identities") {
  ModelConfig cfg = small_cfg();
  Model model(cfg, Shape{6});
  Rng rng(8);
  Tensor x(random_array({5, 6}, rng));

  SUBCASE("logits equal the recomputed aggregate bit-for-bit") {
    ForwardOutputs out = model.forward(x, false);
    BackboneSpec spec = model.backbone_spec();
    CHECK(spec.out_dim == 8);
    Tensor again = aggregate(out.theta_flat, out.concepts.c, cfg.num_targets);
    for (int64_t i = 0; i < again.size(); ++i) CHECK(again.val()[i] == out.logits.val()[i]);
  }
  SUBCASE("batch forward equals per-example forwards in eval mode") {
    ForwardOutputs batched = model.forward(x, false);
    for (int64_t i = 0; i < 5; ++i) {
      Array one(Shape{1, 6});
      for (int64_t j = 0; j < 6; ++j) one.at2(0, j) = x.val().at2(i, j);
      ForwardOutputs single = model.forward(Tensor(std::move(one)), false);
      for (int64_t j = 0; j < cfg.num_targets; ++j)
        CHECK(rel_error(single.logits.val().at2(0, j), batched.logits.val().at2(i, j), 1e-9) <
              1e-12);
    }
  }
  SUBCASE("theta frozen to ones with d_im=0 reduces to a concept sum readout") {
    ModelConfig c2 = small_cfg();
    c2.d_im = 0;
    c2.k = 0;
    Model m2(c2, Shape{6});
    zero_params(m2.parameters(), "theta.fc3");
    for (auto& p : m2.parameters())
      if (p.name == "theta.fc3.bias") p.tensor.mutable_val() = Array::full(p.tensor.shape(), 1.0);
    ForwardOutputs out = m2.forward(x, false);
    for (int64_t i = 0; i < 5; ++i) {
      double sum = 0;
      for (int64_t j = 0; j < c2.d_ex; ++j) sum += out.concepts.c_ex.val().at2(i, j);
      for (int64_t t = 0; t < c2.num_targets; ++t)
        CHECK(out.logits.val().at2(i, t) == doctest::Approx(sum).epsilon(1e-12));
    }
  }
}

TEST_CASE("cbm mode uses a constant affine head") {
  ModelConfig cfg;
  cfg.model = ModelKind::cbm;
  cfg.d_ex = 3;
  cfg.d_im = 0;
  cfg.k = 0;
  cfg.alpha = 0.0;
  cfg.beta = 0.0;
  cfg.backbone = "mlp:6-8";
  Model model(cfg, Shape{6});
  Rng rng(9);
  Tensor x(random_array({4, 6}, rng));
  ForwardOutputs out = model.forward(x, false);

  // logits = W c_ex + b with W broadcast per example
  Array w, b;
  for (auto& p : model.parameters()) {
    if (p.name == "cbm_head.weight") w = p.tensor.val();
    if (p.name == "cbm_head.bias") b = p.tensor.val();
  }
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t t = 0; t < cfg.num_targets; ++t) {
      double want = b[t];
      for (int64_t j = 0; j < 3; ++j) want += w.at2(t, j) * out.concepts.c_ex.val().at2(i, j);
      CHECK(out.logits.val().at2(i, t) == doctest::Approx(want).epsilon(1e-12));
    }
  CHECK_THROWS(model.parametrize(out.h, false));
  CHECK_THROWS(model.discriminate(out.h));
}

TEST_CASE("checkpoints round-trip parameters, buffers and config") {
  namespace fs = std::filesystem;
  ModelConfig cfg = small_cfg();
  cfg.backbone = "conv_small";
  Model model(cfg, Shape{3, 16, 16});
  Rng rng(12);
  // push batch stats away from their init, then save
  Tensor x(random_array({4, 3, 16, 16}, rng));
  model.forward(x, true);

  std::string path = (fs::temp_directory_path() / "cbmauc_test.ckpt").string();
  model.save_checkpoint(path);
  Model back = Model::load_checkpoint(path);

  CHECK(back.config().d_im == cfg.d_im);
  CHECK(back.config().backbone == "conv_small");
  auto pa = model.parameters();
  auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    for (int64_t j = 0; j < pa[i].tensor.size(); ++j)
      REQUIRE(pa[i].tensor.val()[j] == pb[i].tensor.val()[j]);
  }
  auto ba = model.buffers();
  auto bb = back.buffers();
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i)
    for (int64_t j = 0; j < ba[i].second->size(); ++j)
      REQUIRE((*ba[i].second)[j] == (*bb[i].second)[j]);

  ForwardOutputs o1 = model.forward(x, false);
  ForwardOutputs o2 = back.forward(x, false);
  for (int64_t i = 0; i < o1.logits.size(); ++i)
    CHECK(o1.logits.val()[i] == o2.logits.val()[i]);

  SUBCASE("bad magic rejected") {
    std::string junk = (fs::temp_directory_path() / "cbmauc_junk.ckpt").string();
    std::ofstream(junk) << "NOTACHECKPOINT";
    CHECK_THROWS_AS(Model::load_checkpoint(junk), IoError);
    fs::remove(junk);
  }
  fs::remove(path);
}

TEST_CASE("invalid configs are rejected at construction") {
  ModelConfig cfg = small_cfg();
  cfg.k = 99;
  CHECK_THROWS_AS(Model(cfg, Shape{6}), ValidationError);
}

TEST_CASE("batchnorm train/eval switching") {
  BatchNorm1d bn(3);
  Rng rng(6);
  Tensor x(random_array({16, 3}, rng, 2.0));
  Tensor out = bn(x, true);
  // train mode standardizes the batch (gamma=1, beta=0 at init)
  for (int64_t j = 0; j < 3; ++j) {
    double mean = 0, var = 0;
    for (int64_t i = 0; i < 16; ++i) mean += out.val().at2(i, j);
    mean /= 16;
    for (int64_t i = 0; i < 16; ++i) {
      double d = out.val().at2(i, j) - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::fabs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
  // eval mode uses the running statistics and is per-example
  Tensor e1 = bn(x, false);
  Array one(Shape{1, 3});
  for (int64_t j = 0; j < 3; ++j) one.at2(0, j) = x.val().at2(5, j);
  Tensor e2 = bn(Tensor(std::move(one)), false);
  for (int64_t j = 0; j < 3; ++j)
    CHECK(e1.val().at2(5, j) == doctest::Approx(e2.val().at2(0, j)).epsilon(1e-12));
}

TEST_CASE("mish matches its closed form") {
  Tensor x(Array::from({1, 3}, {-2.0, 0.0, 1.5}));
  Tensor y = mish(x);
  for (int64_t i = 0; i < 3; ++i) {
    double v = x.val()[i];
    CHECK(y.val()[i] == doctest::Approx(v * std::tanh(std::log1p(std::exp(v)))));
  }
}
