#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "parlm/graph.hpp"
#include "parlm/nn.hpp"
#include "test_util.hpp"

using namespace parlm;
using testutil::max_rel_grad_error;
using testutil::random_mat;

TEST_CASE("matmul transposes match dense arithmetic") {
  Rng rng(1);
  Mat A = random_mat(3, 4, rng), B = random_mat(4, 2, rng);
  Graph g;
  CHECK((g.val(g.matmul(g.input(A), g.input(B))) - A * B).norm() == doctest::Approx(0.0));
  CHECK((g.val(g.matmul(g.input(A.transpose()), g.input(B), true, false)) - A * B).norm() ==
        doctest::Approx(0.0));
  CHECK((g.val(g.matmul(g.input(A), g.input(B.transpose()), false, true)) - A * B).norm() ==
        doctest::Approx(0.0));
  CHECK((g.val(g.matmul(g.input(A.transpose()), g.input(B.transpose()), true, true)) - A * B).norm() ==
        doctest::Approx(0.0));
}

TEST_CASE("softmax rows are probability distributions") {
  Rng rng(2);
  Graph g;
  Graph::V p = g.softmax_rows(g.input(random_mat(5, 7, rng, 3.0)));
  const Mat& P = g.val(p);
  for (long i = 0; i < P.rows(); ++i) {
    CHECK(P.row(i).minCoeff() >= 0.0);
    CHECK(P.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("gradients of composite ops match finite differences") {
  Rng rng(3);
  ParamStore store;
  Param& a = store.create("a", 4, 5);
  Param& b = store.create("b", 5, 3);
  Param& gain = store.create("gain", 1, 3);
  Param& bias = store.create("bias", 1, 3);
  a.value = random_mat(4, 5, rng);
  b.value = random_mat(5, 3, rng);
  gain.value = random_mat(1, 3, rng, 0.3).array() + 1.0;
  bias.value = random_mat(1, 3, rng, 0.3);

  auto build = [&](Graph& g, bool backward) {
    Graph::V x = g.matmul(g.param(a), g.param(b));
    x = g.layer_norm(x, g.param(gain), g.param(bias));
    x = g.gelu(x);
    x = g.softmax_rows(x);
    x = g.sigmoid(x);
    Graph::V loss = g.sum_all(g.mul(x, x));
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&a, &b, &gain, &bias}, build) < 1e-4);
}

TEST_CASE("gradients of reductions, slicing and gating ops") {
  Rng rng(4);
  ParamStore store;
  Param& a = store.create("a", 6, 4);
  a.value = random_mat(6, 4, rng);

  auto build = [&](Graph& g, bool backward) {
    Graph::V x = g.param(a);
    Graph::V top = g.slice_rows(x, 0, 3);
    Graph::V bottom = g.slice_rows(x, 3, 3);
    Graph::V joined = g.concat_cols({top, bottom});
    Graph::V gate_r = g.sigmoid(g.mean_cols(joined));
    Graph::V gate_c = g.sigmoid(g.max_rows(joined));
    Graph::V y = g.mul_colvec(joined, gate_r);
    y = g.mul_rowvec(y, gate_c);
    Graph::V stats = g.concat_cols({g.mean_cols(y), g.max_cols(y)});
    Graph::V pooled = g.concat_rows({g.mean_rows(y), g.max_rows(y)});
    Graph::V loss = g.add(g.sum_all(g.mul(pooled, pooled)),
                          g.sum_all(g.mul(g.transpose(stats), g.transpose(stats))));
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&a}, build) < 1e-4);
}

TEST_CASE("conv_rows matches direct windowed sum and its gradient") {
  Rng rng(5);
  ParamStore store;
  Param& x = store.create("x", 9, 2);
  Param& k = store.create("k", 7 * 2, 1);
  x.value = random_mat(9, 2, rng);
  k.value = random_mat(14, 1, rng);

  Graph g;
  const Mat& y = g.val(g.conv_rows(g.param(x), g.param(k), 7));
  for (long i = 0; i < 9; ++i) {
    double acc = 0.0;
    for (long w = 0; w < 7; ++w) {
      long ii = i + w - 3;
      if (ii < 0 || ii >= 9) continue;
      for (long c = 0; c < 2; ++c) acc += k.value(w * 2 + c, 0) * x.value(ii, c);
    }
    CHECK(y(i, 0) == doctest::Approx(acc).epsilon(1e-12));
  }

  auto build = [&](Graph& gg, bool backward) {
    Graph::V out = gg.conv_rows(gg.param(x), gg.param(k), 7);
    Graph::V loss = gg.sum_all(gg.mul(out, out));
    if (backward) {
      gg.backward(loss);
      gg.flush_param_grads();
    }
    return gg.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&x, &k}, build) < 1e-4);
}

TEST_CASE("embedding gather routes gradients to the right rows") {
  Rng rng(6);
  ParamStore store;
  Param& table = store.create("t", 5, 3);
  table.value = random_mat(5, 3, rng);
  std::vector<int> ids = {4, 0, 4, 2};

  auto build = [&](Graph& g, bool backward) {
    Graph::V e = g.embed(table, ids);
    Graph::V loss = g.sum_all(g.mul(e, e));
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&table}, build) < 1e-4);
  // Row 1 and 3 never gathered.
  CHECK(table.grad.row(1).norm() == 0.0);
  CHECK(table.grad.row(3).norm() == 0.0);
}

TEST_CASE("weighted bce matches an elementwise recomputation") {
  Rng rng(7);
  Mat z = random_mat(3, 4, rng), y(3, 4), w(3, 4);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 4; ++j) {
      y(i, j) = rng.uniform01() < 0.5 ? 0.0 : 1.0;
      w(i, j) = 0.5 + rng.uniform01();
    }
  Graph g;
  double loss = g.val(g.weighted_bce_with_logits(g.input(z), y, w))(0, 0);

  double expect = 0.0;
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 4; ++j) {
      double p = 1.0 / (1.0 + std::exp(-z(i, j)));
      p = std::min(std::max(p, 1e-7), 1.0 - 1e-7);
      expect += -w(i, j) * (y(i, j) * std::log(p) + (1.0 - y(i, j)) * std::log(1.0 - p));
    }
  expect /= 12.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(8);
  ParamStore store;
  Param& z = store.create("z", 3, 5);
  z.value = random_mat(3, 5, rng);
  Mat y(3, 5), w(3, 5);
  for (long i = 0; i < 3; ++i)
    for (long j = 0; j < 5; ++j) {
      y(i, j) = rng.uniform01() < 0.5 ? 0.0 : 1.0;
      w(i, j) = 0.5 + rng.uniform01();
    }
  auto build_bce = [&](Graph& g, bool backward) {
    Graph::V loss = g.weighted_bce_with_logits(g.param(z), y, w);
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&z}, build_bce) < 1e-4);

  Param& logits = store.create("logits", 4, 6);
  logits.value = random_mat(4, 6, rng);
  std::vector<int> targets = {1, 0, 5, 2};
  std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  auto build_xent = [&](Graph& g, bool backward) {
    Graph::V loss = g.softmax_xent_rows(g.param(logits), targets, mask);
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  CHECK(max_rel_grad_error(store, {&logits}, build_xent) < 1e-4);
}

TEST_CASE("lora_linear equals the dense adapted map") {
  Rng rng(9);
  ParamStore store;
  LinearParams lin = make_linear(store, "lin", 6, 4, rng, false);
  LoraParams lora = make_lora(store, "lora", 6, 4, 2, 0.7, rng);
  lora.up->value = random_mat(2, 4, rng);  // leave zero-init for the identity case below
  Mat x = random_mat(3, 6, rng);

  Graph g;
  const Mat& y = g.val(lora_linear(g, g.input(x), lin, lora, true));
  Mat dense = x * (lin.w->value + 0.7 * lora.down->value * lora.up->value);
  dense.rowwise() += lin.b->value.row(0);
  CHECK((y - dense).cwiseAbs().maxCoeff() < 1e-12);

  lora.up->value.setZero();
  Graph g2;
  const Mat& y0 = g2.val(lora_linear(g2, g2.input(x), lin, lora, true));
  Graph g3;
  const Mat& base = g3.val(linear(g3, g3.input(x), lin));
  CHECK((y0 - base).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shared parameter used twice accumulates both paths") {
  ParamStore store;
  Param& p = store.create("p", 1, 1);
  p.value(0, 0) = 3.0;
  Graph g;
  Graph::V leaf = g.param(p);
  Graph::V loss = g.sum_all(g.mul(leaf, leaf));  // p^2, d/dp = 2p
  g.backward(loss);
  g.flush_param_grads();
  CHECK(p.grad(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("adamw with zero gradients leaves parameters untouched except decay") {
  ParamStore store;
  Param& p = store.create("p", 2, 2);
  p.value.setConstant(1.0);
  AdamW opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.0;
  store.zero_grads();
  opt.step(store);
  CHECK((p.value.array() == 1.0).all());
}
