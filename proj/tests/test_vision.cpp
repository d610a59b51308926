#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "parlm/vision.hpp"
#include "test_util.hpp"

using namespace parlm;
using testutil::max_rel_grad_error;
using testutil::random_mat;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 16;
  cfg.patch = 16;
  cfg.vis_width = 8;
  cfg.vis_layers = 2;
  cfg.vis_heads = 2;
  cfg.vis_ffn_mult = 2;
  cfg.queries = 2;
  cfg.inject_queries = 2;
  cfg.agfa_layers = 2;
  cfg.qformer_layers = 1;
  cfg.lora_rank = 2;
  cfg.cbam_window = 3;
  cfg.cbam_reduction = 2;
  return cfg;
}

Image random_image(int h, int w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.bounded(256));
  return img;
}

}  // namespace

TEST_CASE("patch embedding token counts follow the grid arithmetic") {
  CHECK(VisionModel::patch_matrix(Image(224, 224), 16).rows() == 196);
  CHECK(VisionModel::patch_matrix(Image(64, 64), 16).rows() == 16);
  CHECK(VisionModel::patch_matrix(Image(128, 64), 16).rows() == 32);
  CHECK_THROWS_AS(VisionModel::patch_matrix(Image(100, 64), 16), ImageError);
}

TEST_CASE("zero image with zero projection weights leaves only position embeddings") {
  ParamStore store;
  Rng rng(1);
  ModelConfig cfg = tiny_cfg();
  VisionModel vm(store, cfg, 2, rng);
  store.get("vis.patch.w").value.setZero();
  store.get("vis.patch.b").value.setZero();
  Graph g;
  Graph::V tokens = vm.patch_embed(g, Image(cfg.image_h, cfg.image_w));
  CHECK((g.val(tokens) - store.get("vis.pos").value).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder with zero-init adapters equals the frozen base") {
  ParamStore store;
  Rng rng(2);
  VisionModel vm(store, tiny_cfg(), 2, rng);
  Rng img_rng(3);
  Image img = random_image(32, 16, img_rng);
  Graph g;
  Graph::V tokens = vm.patch_embed(g, img);
  Graph::V with = vm.encode(g, tokens, /*use_adapters=*/true);
  Graph::V without = vm.encode(g, tokens, /*use_adapters=*/false);
  CHECK((g.val(with) - g.val(without)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("degenerate encoder block passes its input through") {
  ParamStore store;
  Rng rng(4);
  ModelConfig cfg = tiny_cfg();
  cfg.vis_layers = 1;
  VisionModel vm(store, cfg, 2, rng);
  // Zeroing the attention output projection and the second FFN layer makes
  // both residual branches vanish.
  store.get("vis.enc.l0.attn.o.w").value.setZero();
  store.get("vis.enc.l0.attn.o.b").value.setZero();
  store.get("vis.enc.l0.ffn.fc2.w").value.setZero();
  store.get("vis.enc.l0.ffn.fc2.b").value.setZero();

  Rng img_rng(5);
  Mat x = random_mat(4, cfg.vis_width, img_rng);
  Graph g;
  SelfBlockParams dummy;  // exercise through encode minus final norm: use block directly
  (void)dummy;
  Graph::V in = g.input(x);
  // encode() applies a final layer norm, so compare the block output itself.
  Graph::V out = in;
  {
    // reach the single encoder layer through the public forward: tokens == x
    // is only possible via the block helper, so rebuild it here.
    SelfBlockParams p;
    p.ln_attn = {&store.get("vis.enc.l0.ln_attn.gain"), &store.get("vis.enc.l0.ln_attn.bias")};
    p.ln_ffn = {&store.get("vis.enc.l0.ln_ffn.gain"), &store.get("vis.enc.l0.ln_ffn.bias")};
    p.attn.q = {&store.get("vis.enc.l0.attn.q.w"), &store.get("vis.enc.l0.attn.q.b")};
    p.attn.k = {&store.get("vis.enc.l0.attn.k.w"), &store.get("vis.enc.l0.attn.k.b")};
    p.attn.v = {&store.get("vis.enc.l0.attn.v.w"), &store.get("vis.enc.l0.attn.v.b")};
    p.attn.o = {&store.get("vis.enc.l0.attn.o.w"), &store.get("vis.enc.l0.attn.o.b")};
    p.ffn.fc1 = {&store.get("vis.enc.l0.ffn.fc1.w"), &store.get("vis.enc.l0.ffn.fc1.b")};
    p.ffn.fc2 = {&store.get("vis.enc.l0.ffn.fc2.w"), &store.get("vis.enc.l0.ffn.fc2.b")};
    out = self_block(g, in, p, cfg.vis_heads);
  }
  CHECK((g.val(out) - x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("agfa output shape depends only on the configuration") {
  ParamStore store;
  Rng rng(6);
  ModelConfig cfg = tiny_cfg();
  const int groups = 3;
  VisionModel vm(store, cfg, groups, rng);
  Rng mat_rng(7);
  for (long nv : {16L, 196L}) {
    Graph g;
    Graph::V fv = g.input(random_mat(nv, cfg.vis_width, mat_rng));
    const Mat& fg = g.val(vm.agfa(g, fv));
    CHECK(fg.rows() == groups * cfg.queries);
    CHECK(fg.cols() == cfg.vis_width);
  }
}

TEST_CASE("agfa is invariant to permuting the visual tokens") {
  ParamStore store;
  Rng rng(8);
  ModelConfig cfg = tiny_cfg();
  VisionModel vm(store, cfg, 2, rng);
  Rng mat_rng(9);
  Mat fv = random_mat(12, cfg.vis_width, mat_rng);
  Mat perm = Mat::Zero(12, 12);
  std::vector<int> order = {5, 2, 9, 0, 11, 3, 7, 1, 10, 4, 8, 6};
  for (int i = 0; i < 12; ++i) perm(i, order[i]) = 1.0;

  Graph g;
  const Mat& a = g.val(vm.agfa(g, g.input(fv)));
  const Mat& b = g.val(vm.agfa(g, g.input(perm * fv)));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("attention rows are probability distributions throughout the stack") {
  ParamStore store;
  Rng rng(10);
  VisionModel vm(store, tiny_cfg(), 2, rng);
  Rng img_rng(11);
  Image img = random_image(32, 16, img_rng);
  Graph g;
  AttentionProbe probe;
  (void)vm.forward(g, img, true, &probe);
  REQUIRE(!probe.row_distributions.empty());
  for (const Mat& p : probe.row_distributions) {
    for (long i = 0; i < p.rows(); ++i) {
      CHECK(p.row(i).minCoeff() >= 0.0);
      CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("single-query single-group agfa layer matches a scripted attention oracle") {
  ParamStore store;
  Rng rng(12);
  ModelConfig cfg = tiny_cfg();
  cfg.vis_width = 2;
  cfg.vis_heads = 1;
  cfg.vis_ffn_mult = 2;
  cfg.queries = 1;
  cfg.inject_queries = 1;
  cfg.agfa_layers = 1;
  cfg.lora_rank = 1;
  cfg.agfa_init_from_encoder = false;
  VisionModel vm(store, cfg, 1, rng);

  Rng mat_rng(13);
  Mat fv = random_mat(3, 2, mat_rng);
  Graph g;
  const Mat& out = g.val(vm.agfa(g, g.input(fv)));

  // Plain-Eigen replica of: x += Attn(LN(x), fv); x += FFN(LN(x)).
  auto ln = [&](const Eigen::RowVectorXd& x, const std::string& p) {
    double mean = x.mean();
    double var = (x.array() - mean).square().mean();
    Eigen::RowVectorXd xh = ((x.array() - mean) / std::sqrt(var + 1e-5)).matrix();
    return (xh.array() * store.get(p + ".gain").value.row(0).array() +
            store.get(p + ".bias").value.row(0).array())
        .matrix()
        .eval();
  };
  auto lin = [&](const Eigen::RowVectorXd& x, const std::string& p) {
    return (x * store.get(p + ".w").value + store.get(p + ".b").value.row(0)).eval();
  };
  Eigen::RowVectorXd x = store.get("vis.partq").value.row(0);
  {
    Eigen::RowVectorXd n = ln(x, "vis.agfa.l0.ln_attn");
    Eigen::RowVectorXd q = lin(n, "vis.agfa.l0.attn.q");
    Mat k(3, 2), v(3, 2);
    for (int i = 0; i < 3; ++i) {
      k.row(i) = lin(fv.row(i), "vis.agfa.l0.attn.k");
      v.row(i) = lin(fv.row(i), "vis.agfa.l0.attn.v");
    }
    Eigen::RowVectorXd scores = q * k.transpose() / std::sqrt(2.0);
    double mx = scores.maxCoeff();
    Eigen::RowVectorXd e = (scores.array() - mx).exp();
    e /= e.sum();
    x += lin((e * v).eval(), "vis.agfa.l0.attn.o");
  }
  {
    Eigen::RowVectorXd n = ln(x, "vis.agfa.l0.ln_ffn");
    Eigen::RowVectorXd h = lin(n, "vis.agfa.l0.ffn.fc1");
    h = h.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865475)); });
    x += lin(h, "vis.agfa.l0.ffn.fc2");
  }
  CHECK((out.row(0) - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("qformer preserves shape and treats identical group slices identically") {
  ParamStore store;
  Rng rng(14);
  ModelConfig cfg = tiny_cfg();
  VisionModel vm(store, cfg, 2, rng);
  Rng mat_rng(15);
  Mat slice = random_mat(cfg.queries, cfg.vis_width, mat_rng);
  Mat fg(2 * cfg.queries, cfg.vis_width);
  fg << slice, slice;  // both groups identical

  Graph g;
  const Mat& fq = g.val(vm.qformer(g, g.input(fg)));
  CHECK(fq.rows() == fg.rows());
  CHECK(fq.cols() == fg.cols());
  CHECK((fq.topRows(cfg.queries) - fq.bottomRows(cfg.queries)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cbam gates stay in (0,1) and saturate to a plain token mean") {
  ParamStore store;
  Rng rng(16);
  ModelConfig cfg = tiny_cfg();
  VisionModel vm(store, cfg, 1, rng);
  Rng mat_rng(17);
  Mat fg = random_mat(cfg.queries, cfg.vis_width, mat_rng);

  // Saturate both gates with large biases.
  store.get("vis.cbam.fc2.b").value.setConstant(50.0);
  store.get("vis.cbam.bias").value.setConstant(100.0);
  Graph g;
  const Mat& merged = g.val(vm.cbam_merge(g, g.input(fg)));
  Mat mean = fg.colwise().mean();
  CHECK((merged - mean).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cbam matches a scripted two-gate pipeline") {
  ParamStore store;
  Rng rng(18);
  ModelConfig cfg = tiny_cfg();
  VisionModel vm(store, cfg, 1, rng);
  Rng mat_rng(19);
  Mat fg = random_mat(cfg.queries, cfg.vis_width, mat_rng);

  Graph g;
  const Mat& merged = g.val(vm.cbam_merge(g, g.input(fg)));

  auto gelu = [](Mat m) {
    return m.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865475)); });
  };
  auto lin = [&](const Mat& x, const std::string& p) {
    Mat y = x * store.get(p + ".w").value;
    y.rowwise() += store.get(p + ".b").value.row(0);
    return y;
  };
  auto sig = [](Mat m) {
    return m.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
  };
  Mat mean_d = fg.colwise().mean();
  Mat max_d = fg.colwise().maxCoeff();
  Mat gate_c = sig(lin(gelu(lin(mean_d, "vis.cbam.fc1")), "vis.cbam.fc2") +
                   lin(gelu(lin(max_d, "vis.cbam.fc1")), "vis.cbam.fc2"));
  Mat xc = fg.array().rowwise() * gate_c.row(0).array();
  Mat stats(fg.rows(), 2);
  stats.col(0) = xc.rowwise().mean();
  stats.col(1) = xc.rowwise().maxCoeff();
  const Mat& kern = store.get("vis.cbam.kernel").value;
  Mat conv(fg.rows(), 1);
  for (long i = 0; i < fg.rows(); ++i) {
    double acc = store.get("vis.cbam.bias").value(0, 0);
    for (long w = 0; w < cfg.cbam_window; ++w) {
      long ii = i + w - cfg.cbam_window / 2;
      if (ii < 0 || ii >= fg.rows()) continue;
      for (long c = 0; c < 2; ++c) acc += kern(w * 2 + c, 0) * stats(ii, c);
    }
    conv(i, 0) = acc;
  }
  Mat gate_t = sig(conv);
  Mat gated = xc.array().colwise() * gate_t.col(0).array();
  Mat expect = gated.colwise().mean();
  CHECK((merged - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("full vision stack with zero-init adapters matches the adapter-free stack") {
  ParamStore store;
  Rng rng(20);
  VisionModel vm(store, tiny_cfg(), 2, rng);
  Rng img_rng(21);
  Image img = random_image(32, 16, img_rng);
  Graph g;
  auto with = vm.forward(g, img, true);
  auto without = vm.forward(g, img, false);
  for (auto [a, b] : {std::pair{with.fv, without.fv},
                      {with.fg, without.fg},
                      {with.fq, without.fq},
                      {with.group_embed, without.group_embed}}) {
    CHECK((g.val(a) - g.val(b)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("vision gradients match finite differences") {
  ParamStore store;
  Rng rng(22);
  ModelConfig cfg = tiny_cfg();
  cfg.vis_layers = 1;
  cfg.agfa_layers = 1;
  cfg.qformer_layers = 1;
  VisionModel vm(store, cfg, 2, rng);
  Rng img_rng(23);
  Image img = random_image(32, 16, img_rng);

  // Give the adapters non-zero ups so their gradients are generic.
  store.get("vis.enc.l0.attn.q_lora.up").value = testutil::random_mat(cfg.lora_rank, cfg.vis_width, img_rng, 0.1);
  store.get("vis.enc.l0.attn.v_lora.up").value = testutil::random_mat(cfg.lora_rank, cfg.vis_width, img_rng, 0.1);

  auto build = [&](Graph& g, bool backward) {
    auto fwd = vm.forward(g, img, true);
    Graph::V loss = g.sum_all(g.mul(fwd.group_embed, fwd.group_embed));
    if (backward) {
      g.backward(loss);
      g.flush_param_grads();
    }
    return g.val(loss)(0, 0);
  };
  std::vector<Param*> checked = {
      &store.get("vis.partq"),
      &store.get("vis.enc.l0.attn.q_lora.up"),
      &store.get("vis.enc.l0.attn.v_lora.down"),
      &store.get("vis.cbam.kernel"),
      &store.get("vis.cbam.fc1.w"),
  };
  CHECK(max_rel_grad_error(store, checked, build) < 1e-4);
}
