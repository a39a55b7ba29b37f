#include <doctest.h>

#include <algorithm>

#include "cbmauc/config.hpp"
#include "cbmauc/errors.hpp"

using namespace cbmauc;

namespace {
bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  return std::any_of(errors.begin(), errors.end(), [&](const std::string& e) {
    return e.find(needle) != std::string::npos;
  });
}
}  // namespace

TEST_CASE("validate_config flags the spec'd violations") {
  ModelConfig ok;
  CHECK(validate_config(ok).empty());

  SUBCASE("k > d_im") {
    ModelConfig c;
    c.d_im = 4;
    c.k = 5;
    CHECK(mentions(validate_config(c), "k must"));
  }
  SUBCASE("published CUB-style dims pass (k = 50% of d_im)") {
    ModelConfig c;
    c.d_ex = 112;
    c.d_im = 144;
    c.k = 72;
    c.num_targets = 200;
    CHECK(validate_config(c).empty());
  }
  SUBCASE("alpha > 0 with batch_size 1") {
    ModelConfig c;
    c.alpha = 0.5;
    c.batch_size = 1;
    CHECK(mentions(validate_config(c), "batch_size must be >= 2"));
  }
  SUBCASE("all violations reported, not just the first") {
    ModelConfig c;
    c.d_ex = -1;
    c.d_im = 2;
    c.k = 5;
    c.lr = 0;
    auto errors = validate_config(c);
    CHECK(errors.size() >= 3);
    CHECK(mentions(errors, "d_ex"));
    CHECK(mentions(errors, "k must"));
    CHECK(mentions(errors, "lr"));
  }
  SUBCASE("msenn requires d_ex == 0") {
    ModelConfig c;
    c.model = ModelKind::msenn;
    c.d_ex = 2;
    CHECK(mentions(validate_config(c), "msenn"));
  }
}

TEST_CASE("model config round-trips through the ini format") {
  ModelConfig c;
  c.model = ModelKind::msenn;
  c.d_ex = 0;
  c.d_im = 11;
  c.k = 5;
  c.num_targets = 4;
  c.task_kind = TaskKind::multilabel;
  c.concept_loss = ConceptLossKind::bce;
  c.alpha = 0.25;
  c.beta = 0.005;
  c.lambda = 2.0;
  c.optimizer = OptimizerKind::sgd;
  c.lr = 0.01;
  c.epochs = 7;
  c.batch_size = 16;
  c.seed = 99;
  c.backbone = "mlp:12-8-4";
  c.dis_hidden = 64;
  c.dis_detach_h = true;
  c.freeze_backbone = true;

  ModelConfig back = model_config_from(parse_config_text(serialize(c)));
  CHECK(back.model == c.model);
  CHECK(back.d_ex == c.d_ex);
  CHECK(back.d_im == c.d_im);
  CHECK(back.k == c.k);
  CHECK(back.num_targets == c.num_targets);
  CHECK(back.task_kind == c.task_kind);
  CHECK(back.concept_loss == c.concept_loss);
  CHECK(back.alpha == c.alpha);
  CHECK(back.beta == c.beta);
  CHECK(back.lambda == c.lambda);
  CHECK(back.optimizer == c.optimizer);
  CHECK(back.lr == c.lr);
  CHECK(back.epochs == c.epochs);
  CHECK(back.batch_size == c.batch_size);
  CHECK(back.seed == c.seed);
  CHECK(back.backbone == c.backbone);
  CHECK(back.dis_hidden == c.dis_hidden);
  CHECK(back.dis_detach_h == c.dis_detach_h);
  CHECK(back.freeze_backbone == c.freeze_backbone);
}

TEST_CASE("synthetic spec round-trips and validates") {
  SyntheticSpec s;
  s.num_gen_concepts = 6;
  s.grid_side = 3;
  s.rule = "parity";
  s.num_samples = 123;
  s.label_fraction = {0, 2, 5};
  s.noise_std = 0.03;
  s.seed = 4;
  SyntheticSpec back = synthetic_spec_from(parse_config_text(serialize(s)));
  CHECK(back.num_gen_concepts == 6);
  CHECK(back.rule == "parity");
  CHECK(back.label_fraction == s.label_fraction);
  CHECK(back.noise_std == doctest::Approx(0.03));
  CHECK(back.split == s.split);

  SUBCASE("capacity violation") {
    SyntheticSpec bad = s;
    bad.num_gen_concepts = 10;  // > 3*3
    CHECK(mentions(validate_spec(bad), "grid capacity"));
  }
  SUBCASE("label index out of range") {
    SyntheticSpec bad = s;
    bad.label_fraction = {7};
    CHECK(mentions(validate_spec(bad), "label_fraction"));
  }
}

TEST_CASE("grid spec defaults cover the published search space") {
  GridSpec g;
  CHECK(g.size() == 2 * 2 * 5 * 3 * 2);
  ConfigFile f = parse_config_text("[grid]\nlrs = 0.005\nalphas = 1.0,0.1\n");
  GridSpec custom = grid_spec_from(f);
  CHECK(custom.lrs == std::vector<double>{0.005});
  CHECK(custom.alphas == std::vector<double>{1.0, 0.1});
  CHECK(custom.lambdas.size() == 5);  // untouched defaults
}

TEST_CASE("malformed config lines are rejected") {
  CHECK_THROWS_AS(parse_config_text("[model]\nnot a pair\n"), ValidationError);
  CHECK_THROWS_AS(model_config_from(parse_config_text("[model]\nd_ex = soup\n")),
                  ValidationError);
  CHECK_THROWS(load_config_file("/nonexistent/path.ini"));
}
