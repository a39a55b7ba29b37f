#include <doctest.h>

#include <cmath>

#include "cbmauc/nn.hpp"
#include "cbmauc/rng.hpp"
#include "cbmauc/tensor.hpp"
#include "test_util.hpp"

using namespace cbmauc;
using namespace cbmauc::testing;

TEST_CASE("elementwise and reduction values") {
  Tensor a(Array::from({2, 2}, {1, 2, 3, 4}));
  Tensor b(Array::from({2, 2}, {5, 6, 7, 8}));
  CHECK(add(a, b).val()[3] == 12);
  CHECK(sub(a, b).val()[0] == -4);
  CHECK(mul(a, b).val()[2] == 21);
  CHECK(div_(b, a).val()[1] == 3);
  CHECK(sum_all(a).item() == 10);
  CHECK(mean_all(a).item() == 2.5);
  CHECK(sum_axis0(a).val()[0] == 4);
  CHECK(sum_axis1(a).val().at2(1, 0) == 7);
  CHECK(matmul(a, b).val().at2(0, 0) == doctest::Approx(19));
}

TEST_CASE("gradients of a dense composite match finite differences") {
  Rng rng(7);
  Tensor x(random_array({4, 6}, rng), true);
  Tensor w(random_array({3, 6}, rng, 0.5), true);
  Tensor b(random_array({3}, rng, 0.1), true);

  auto loss = [&]() {
    Tensor z = linear(x, w, b);
    Tensor act = mul(sigmoid(z), tanh_(add_scalar(z, 0.3)));
    Tensor s = add(softplus(slice_cols(act, 0, 2)), square(slice_cols(act, 1, 3)));
    return mean_all(concat_cols({s, exp_(mul_scalar(act, 0.1))}));
  };

  Tensor out = loss();
  TensorList grads = grad(out, {x, w, b});
  for (size_t i = 0; i < 3; ++i) {
    Tensor leaf = (i == 0) ? x : (i == 1) ? w : b;
    Array num = numeric_gradient(leaf, [&]() { return loss().item(); });
    CHECK(max_rel_diff(grads[i].val(), num) < 1e-6);
  }
}

TEST_CASE("gradients flow through gather, broadcast and transpose") {
  Rng rng(9);
  Tensor x(random_array({5, 3}, rng), true);
  Tensor v(random_array({3}, rng), true);
  std::vector<int64_t> idx{4, 0, 1, 1, 3};

  auto loss = [&]() {
    Tensor g = gather_rows(x, idx);
    Tensor y = mul(g, broadcast_rows(v, 5));
    Tensor t = matmul(transpose2(y), y);  // (3,3)
    return sum_all(square(t));
  };
  Tensor out = loss();
  TensorList grads = grad(out, {x, v});
  CHECK(max_rel_diff(grads[0].val(), numeric_gradient(x, [&] { return loss().item(); })) < 1e-6);
  CHECK(max_rel_diff(grads[1].val(), numeric_gradient(v, [&] { return loss().item(); })) < 1e-6);
}

TEST_CASE("relu and kwta masks gate gradients") {
  Tensor x(Array::from({1, 4}, {0.5, -1.0, 2.0, 0.1}), true);
  Tensor y = kwta_rows(x, 2);
  CHECK(y.val()[0] == 0.5);
  CHECK(y.val()[1] == 0.0);
  CHECK(y.val()[2] == 2.0);
  CHECK(y.val()[3] == 0.0);
  TensorList g = grad(sum_all(y), {x});
  CHECK(g[0].val()[0] == 1.0);
  CHECK(g[0].val()[1] == 0.0);
  CHECK(g[0].val()[3] == 0.0);

  Tensor r = relu(x);
  TensorList gr = grad(sum_all(r), {x});
  CHECK(gr[0].val()[1] == 0.0);
  CHECK(gr[0].val()[2] == 1.0);
}

TEST_CASE("second-order gradients through composed backward passes") {
  // s(x) = || d/dx f(x) ||^2 with f = sum(mish(w sig(x)));  ds/dx and ds/dw
  // must match finite differences of s computed by a fresh first-order run.
  Rng rng(11);
  Tensor x(random_array({3, 4}, rng), true);
  Tensor w(random_array({2, 4}, rng, 0.7), true);
  Tensor b(random_array({2}, rng, 0.1), true);

  auto f = [&]() { return sum_all(mish(linear(sigmoid(x), w, b))); };
  auto s_value = [&]() {
    Tensor u = grad(f(), {x}, {.create_graph = false})[0];
    return sum_all(square(u)).item();
  };

  Tensor u = grad(f(), {x}, {.create_graph = true})[0];
  Tensor s = sum_all(square(u));
  CHECK(s.item() == doctest::Approx(s_value()));

  TensorList g2 = grad(s, {x, w, b});
  CHECK(max_rel_diff(g2[0].val(), numeric_gradient(x, s_value, 1e-5), 1e-5) < 2e-5);
  CHECK(max_rel_diff(g2[1].val(), numeric_gradient(w, s_value, 1e-5), 1e-5) < 2e-5);
  CHECK(max_rel_diff(g2[2].val(), numeric_gradient(b, s_value, 1e-5), 1e-5) < 2e-5);
}

TEST_CASE("grad stops at the requested inputs") {
  Rng rng(3);
  Tensor x(random_array({2, 3}, rng), true);
  Tensor w(random_array({3, 3}, rng), true);
  Tensor h = matmul(x, w);
  Tensor out = sum_all(square(h));
  TensorList g = grad(out, {h});
  // gradient w.r.t. h is 2h regardless of what produced h
  for (int64_t i = 0; i < h.size(); ++i)
    CHECK(g[0].val()[i] == doctest::Approx(2 * h.val()[i]));
}

TEST_CASE("unreached inputs get zero gradients") {
  Tensor x(Array::from({2}, {1, 2}), true);
  Tensor y(Array::from({2}, {3, 4}), true);
  Tensor out = sum_all(square(x));
  TensorList g = grad(out, {x, y});
  CHECK(g[1].val()[0] == 0.0);
  CHECK(g[1].val()[1] == 0.0);
  CHECK(g[0].val()[0] == doctest::Approx(2.0));
}

TEST_CASE("conv2d, maxpool and gap match finite differences") {
  Rng rng(5);
  Tensor x(random_array({2, 2, 6, 6}, rng), true);
  Tensor w(random_array({3, 2, 3, 3}, rng, 0.4), true);
  Tensor b(random_array({3}, rng, 0.1), true);

  auto loss = [&]() {
    Tensor y = conv2d(x, w, b, 1, 1);
    Tensor p = maxpool2(relu(y));
    return sum_all(square(global_avg_pool(p)));
  };
  Tensor out = loss();
  TensorList grads = grad(out, {x, w, b});
  CHECK(max_rel_diff(grads[0].val(), numeric_gradient(x, [&] { return loss().item(); })) < 1e-5);
  CHECK(max_rel_diff(grads[1].val(), numeric_gradient(w, [&] { return loss().item(); })) < 1e-5);
  CHECK(max_rel_diff(grads[2].val(), numeric_gradient(b, [&] { return loss().item(); })) < 1e-5);
}

TEST_CASE("double backward through heads with a conv below only needs first order") {
  // mirrors the theta-regularizer training path: grad w.r.t. h with
  // create_graph, then a full backward that crosses the conv once
  Rng rng(13);
  Tensor x(random_array({2, 1, 4, 4}, rng), true);
  Tensor cw(random_array({2, 1, 3, 3}, rng, 0.5), true);
  Tensor cb(random_array({2}, rng, 0.1), true);
  Tensor hw(random_array({3, 2}, rng), true);
  Tensor hb(random_array({3}, rng, 0.1), true);

  auto build = [&]() {
    Tensor h = global_avg_pool(conv2d(x, cw, cb, 1, 1));  // (2,2)
    Tensor f = sum_all(square(linear(h, hw, hb)));
    return std::pair<Tensor, Tensor>(f, h);
  };
  auto s_value = [&]() {
    auto [f, h] = build();
    Tensor u = grad(f, {h})[0];
    return sum_all(square(u)).item();
  };

  auto [f, h] = build();
  Tensor u = grad(f, {h}, {.create_graph = true})[0];
  Tensor s = sum_all(square(u));
  TensorList g = grad(s, {hw, x, cw});

  CHECK(max_rel_diff(g[0].val(), numeric_gradient(hw, s_value, 1e-5), 1e-5) < 2e-5);
  CHECK(max_rel_diff(g[1].val(), numeric_gradient(x, s_value, 1e-5), 1e-5) < 2e-5);
  CHECK(max_rel_diff(g[2].val(), numeric_gradient(cw, s_value, 1e-5), 1e-5) < 2e-5);
}

TEST_CASE("kwta contract cases") {
  SUBCASE("k = 0 zeroes everything") {
    Tensor v(Array::from({1, 3}, {5, -2, 9}));
    Tensor out = kwta_rows(v, 0);
    for (int64_t i = 0; i < 3; ++i) CHECK(out.val()[i] == 0.0);
  }
  SUBCASE("k = D passes through") {
    Tensor v(Array::from({1, 3}, {5, -2, 9}));
    Tensor out = kwta_rows(v, 3);
    for (int64_t i = 0; i < 3; ++i) CHECK(out.val()[i] == v.val()[i]);
  }
  SUBCASE("ties break toward the lowest index") {
    Tensor v(Array::from({1, 4}, {1.0, 2.0, 2.0, 2.0}));
    Tensor out = kwta_rows(v, 2);
    CHECK(out.val()[0] == 0.0);
    CHECK(out.val()[1] == 2.0);
    CHECK(out.val()[2] == 2.0);
    CHECK(out.val()[3] == 0.0);
  }
  SUBCASE("idempotence and nonzero count") {
    // idempotence is well-posed when retained values are nonnegative (a
    // dropped entry becomes 0, which must not outrank a retained one)
    Rng rng(21);
    Array raw = random_array({6, 10}, rng);
    for (int64_t i = 0; i < raw.size(); ++i) raw[i] = std::fabs(raw[i]);
    Tensor v{std::move(raw)};
    Tensor once = kwta_rows(v, 4);
    Tensor twice = kwta_rows(once, 4);
    int64_t nonzeros = 0;
    for (int64_t i = 0; i < once.size(); ++i) {
      CHECK(once.val()[i] == twice.val()[i]);
      if (once.val()[i] != 0.0) ++nonzeros;
    }
    CHECK(nonzeros == 6 * 4);
  }
  SUBCASE("k out of range throws") {
    Tensor v(Array::from({1, 3}, {1, 2, 3}));
    CHECK_THROWS(kwta_rows(v, 4));
    CHECK_THROWS(kwta_rows(v, -1));
  }
}

TEST_CASE("permutation equivariance of kwta on distinct values") {
  Rng rng(31);
  Array base = random_array({1, 8}, rng);
  std::vector<int64_t> perm = rng.permutation(8);
  Array permuted(Shape{1, 8});
  for (int64_t j = 0; j < 8; ++j) permuted[j] = base[perm[static_cast<size_t>(j)]];
  Array m1 = kwta_mask(base, 3);
  Array m2 = kwta_mask(permuted, 3);
  for (int64_t j = 0; j < 8; ++j) CHECK(m2[j] == m1[perm[static_cast<size_t>(j)]]);
}
