#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "parlm/heads.hpp"
#include "test_util.hpp"

using namespace parlm;
using testutil::random_mat;

namespace {

const AttributeSchema& schema() { return AttributeSchema::msp60k(); }

ModelConfig head_cfg() {
  ModelConfig cfg;
  cfg.vis_width = 8;
  cfg.lm_width = 16;
  return cfg;
}

}  // namespace

TEST_CASE("attribute logits depend only on their own group's embedding") {
  ParamStore store;
  Rng rng(1);
  Heads heads(store, head_cfg(), schema(), rng);
  Rng mat_rng(2);
  for (int j = 0; j < 11; ++j)
    store.get("heads.attr.g" + std::to_string(j) + ".fc2.w").value =
        random_mat(8, static_cast<long>(schema().group(j).members.size()), mat_rng, 0.3);
  Mat embed = random_mat(11, 8, mat_rng);
  Mat perturbed = embed;
  perturbed.row(6) += random_mat(1, 8, mat_rng);  // group 6 = Lower Body

  Graph g;
  const Mat& a = g.val(heads.attr_logits(g, g.input(embed)));
  const Mat& b = g.val(heads.attr_logits(g, g.input(perturbed)));
  REQUIRE(a.cols() == 57);
  for (int j = 0; j < 11; ++j) {
    for (int i : schema().group(j).members) {
      if (j == 6)
        CHECK(a(0, i) != b(0, i));
      else
        CHECK(a(0, i) == b(0, i));
    }
  }
}

TEST_CASE("attribute head matches a dense per-group oracle") {
  ParamStore store;
  Rng rng(3);
  Heads heads(store, head_cfg(), schema(), rng);
  Rng mat_rng(4);
  Mat embed = random_mat(11, 8, mat_rng);
  // Output layers are zero at init; give them generic values for the oracle.
  for (int j = 0; j < 11; ++j)
    store.get("heads.attr.g" + std::to_string(j) + ".fc2.w").value =
        random_mat(8, static_cast<long>(schema().group(j).members.size()), mat_rng, 0.3);
  Graph g;
  const Mat& logits = g.val(heads.attr_logits(g, g.input(embed)));
  for (int j = 0; j < 11; ++j) {
    std::string p = "heads.attr.g" + std::to_string(j);
    Eigen::RowVectorXd row = embed.row(j);
    double mean = row.mean();
    double var = (row.array() - mean).square().mean();
    Eigen::RowVectorXd x =
        (((row.array() - mean) / std::sqrt(var + 1e-5)) * store.get(p + ".ln.gain").value.row(0).array() +
         store.get(p + ".ln.bias").value.row(0).array())
            .matrix();
    Eigen::RowVectorXd h = x * store.get(p + ".fc1.w").value +
                           store.get(p + ".fc1.b").value.row(0);
    h = h.unaryExpr([](double t) { return 0.5 * t * (1.0 + std::erf(t * 0.7071067811865475)); });
    Eigen::RowVectorXd out = h * store.get(p + ".fc2.w").value + store.get(p + ".fc2.b").value.row(0);
    const auto& members = schema().group(j).members;
    for (std::size_t k = 0; k < members.size(); ++k)
      CHECK(logits(0, members[k]) == doctest::Approx(out(static_cast<long>(k))).epsilon(1e-12));
  }
}

TEST_CASE("zero weights give bias-only logits; instance head is linear") {
  ParamStore store;
  Rng rng(5);
  Heads heads(store, head_cfg(), schema(), rng);
  store.get("heads.instance.w").value.setZero();
  store.get("heads.instance.b").value.setConstant(0.25);
  Rng mat_rng(6);
  Mat fv_mean = random_mat(1, 8, mat_rng);
  Graph g;
  const Mat& z = g.val(heads.instance_logits(g, g.input(fv_mean)));
  CHECK((z.array() == 0.25).all());

  // Linearity: logits - bias doubles with the input.
  store.get("heads.instance.w").value = random_mat(8, 57, mat_rng);
  Graph g2;
  const Mat& z1 = g2.val(heads.instance_logits(g2, g2.input(fv_mean)));
  const Mat& z2 = g2.val(heads.instance_logits(g2, g2.input(Mat(2.0 * fv_mean))));
  Mat bias = store.get("heads.instance.b").value;
  CHECK(((z2 - bias) - 2.0 * (z1 - bias)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("llm head graph path equals the plain path") {
  ParamStore store;
  Rng rng(7);
  Heads heads(store, head_cfg(), schema(), rng);
  Rng mat_rng(8);
  store.get("heads.llm.w").value = random_mat(16, 57, mat_rng, 0.3);
  store.get("heads.llm.b").value = random_mat(1, 57, mat_rng, 0.3);
  Mat h = random_mat(1, 16, mat_rng);
  Graph g;
  const Mat& a = g.val(heads.llm_logits(g, g.input(h)));
  Eigen::RowVectorXd b = heads.llm_logits_plain(h.row(0));
  CHECK((a.row(0) - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("wce weights follow the exponential scheme") {
  std::vector<LabelVector> labels;
  // 10 samples over 3 attributes: positives 5, 1, 0.
  for (int i = 0; i < 10; ++i) {
    LabelVector l(3, 0);
    if (i < 5) l[0] = 1;
    if (i == 0) l[1] = 1;
    labels.push_back(l);
  }
  WceWeights w = compute_wce_weights(labels, 3);
  CHECK(w.positive_ratio(0) == doctest::Approx(0.5));
  CHECK(w.positive_ratio(1) == doctest::Approx(0.1));
  CHECK(w.positive_ratio(2) == doctest::Approx(0.05));  // floored at 1/(2N)
  REQUIRE(w.floored_attributes.size() == 1);
  CHECK(w.floored_attributes[0] == 2);

  Mat targets(2, 3);
  targets << 1, 0, 1, 0, 1, 0;
  Mat wm = wce_weight_matrix(targets, w);
  // r = 0.5: positive and negative weights coincide at exp(0.5).
  CHECK(wm(0, 0) == doctest::Approx(std::exp(0.5)));
  CHECK(wm(1, 0) == doctest::Approx(std::exp(0.5)));
  // Rare attribute: positive weight near e, negative near 1.
  CHECK(wm(0, 2) == doctest::Approx(std::exp(1.0 - 0.05)));
  CHECK(wm(0, 1) == doctest::Approx(std::exp(0.1)));
  CHECK(wm(1, 1) == doctest::Approx(std::exp(1.0 - 0.1)));
}

TEST_CASE("wce loss with unit weights is the plain mean binary cross-entropy") {
  Rng rng(9);
  Mat z = random_mat(4, 6, rng);
  Mat y(4, 6);
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 6; ++j) y(i, j) = rng.uniform01() < 0.5 ? 1.0 : 0.0;
  Graph g;
  double weighted = g.val(g.weighted_bce_with_logits(g.input(z), y, Mat::Ones(4, 6)))(0, 0);
  double plain = 0.0;
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 6; ++j) {
      double p = 1.0 / (1.0 + std::exp(-z(i, j)));
      plain += -(y(i, j) * std::log(p) + (1.0 - y(i, j)) * std::log(1.0 - p));
    }
  plain /= 24.0;
  CHECK(weighted == doctest::Approx(plain).epsilon(1e-12));
}

TEST_CASE("wce loss fixed points") {
  // Single attribute, p = 0.5 -> ln 2.
  Graph g;
  Mat z(1, 1);
  z(0, 0) = 0.0;
  Mat y(1, 1);
  y(0, 0) = 1.0;
  CHECK(g.val(g.weighted_bce_with_logits(g.input(z), y, Mat::Ones(1, 1)))(0, 0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // Confident correct predictions: loss below 1e-6.
  Mat z2(1, 2), y2(1, 2);
  z2 << 20.0, -20.0;
  y2 << 1.0, 0.0;
  CHECK(g.val(g.weighted_bce_with_logits(g.input(z2), y2, Mat::Ones(1, 2)))(0, 0) < 1e-6);

  Mat bad(1, 1);
  bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(g.weighted_bce_with_logits(g.input(bad), y, Mat::Ones(1, 1)));
}

TEST_CASE("caption loss fixed points") {
  Graph g;
  // One-hot-correct logits approach zero loss.
  Mat good(2, 3);
  good << 30, 0, 0, 0, 30, 0;
  CHECK(g.val(g.softmax_xent_rows(g.input(good), {0, 1}, {1, 1}))(0, 0) < 1e-9);
  // Uniform logits over V tokens give ln V.
  Mat uniform = Mat::Zero(2, 5);
  CHECK(g.val(g.softmax_xent_rows(g.input(uniform), {2, 4}, {1, 1}))(0, 0) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("aggregation strategies") {
  Mat pa(1, 1), pi(1, 1), pl(1, 1);
  pa << 0.2;
  pi << 0.4;
  pl << 0.6;
  CHECK(aggregate(pa, pi, pl, Aggregation::Mean)(0, 0) == doctest::Approx(0.4));
  CHECK(aggregate(pa, pi, pl, Aggregation::Max)(0, 0) == doctest::Approx(0.6));

  AsaWeights asa;
  asa.weights.resize(1, 3);
  asa.weights << 1.0, 0.0, 0.0;
  CHECK(aggregate(pa, pi, pl, Aggregation::Asa, &asa)(0, 0) == doctest::Approx(0.2));
  CHECK_THROWS_AS(aggregate(pa, pi, pl, Aggregation::Asa, nullptr), HeadsError);

  // Identical branches are a fixed point of every strategy.
  Rng rng(10);
  Mat p = random_mat(5, 4, rng).unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  AsaWeights uni;
  uni.weights = Mat::Constant(4, 3, 1.0 / 3.0);
  for (auto strat : {Aggregation::Mean, Aggregation::Max, Aggregation::Asa})
    CHECK((aggregate(p, p, p, strat, &uni) - p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aggregation bounds, symmetry and monotonicity") {
  Rng rng(11);
  auto sig = [](const Mat& m) {
    return Mat(m.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }));
  };
  Mat a = sig(random_mat(6, 5, rng)), b = sig(random_mat(6, 5, rng)), c = sig(random_mat(6, 5, rng));
  for (auto strat : {Aggregation::Mean, Aggregation::Max}) {
    Mat out = aggregate(a, b, c, strat);
    CHECK(out.minCoeff() >= 0.0);
    CHECK(out.maxCoeff() <= 1.0);
  }
  // Mean is permutation symmetric in the branches.
  CHECK((aggregate(a, b, c, Aggregation::Mean) - aggregate(c, a, b, Aggregation::Mean))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
  // Max is monotone: raising one branch never lowers the output.
  Mat c_up = (c.array() + 0.1).cwiseMin(1.0).matrix();
  Mat lo = aggregate(a, b, c, Aggregation::Max);
  Mat hi = aggregate(a, b, c_up, Aggregation::Max);
  CHECK(((hi - lo).array() >= -1e-12).all());
}

TEST_CASE("threshold consistency under common positive logit scaling") {
  Rng rng(12);
  Mat za = random_mat(8, 6, rng), zi = random_mat(8, 6, rng), zl = random_mat(8, 6, rng);
  auto binarize = [](const Mat& p) {
    return Mat(p.unaryExpr([](double v) { return v > 0.5 ? 1.0 : 0.0; }));
  };
  Mat base = binarize(aggregate(sigmoid(za), sigmoid(zi), sigmoid(zl), Aggregation::Mean));
  Mat scaled = binarize(aggregate(sigmoid(Mat(2.5 * za)), sigmoid(Mat(2.5 * zi)),
                                  sigmoid(Mat(2.5 * zl)), Aggregation::Mean));
  for (long i = 0; i < za.rows(); ++i)
    for (long j = 0; j < za.cols(); ++j) {
      bool agree = (za(i, j) > 0) == (zi(i, j) > 0) && (zi(i, j) > 0) == (zl(i, j) > 0);
      if (agree) CHECK(base(i, j) == scaled(i, j));
    }
}

TEST_CASE("asa fit: oracle branch dominates, identical branches stay uniform") {
  Rng rng(13);
  const long n = 40, m = 3;
  Mat labels(n, m);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < m; ++j) labels(i, j) = rng.uniform01() < 0.5 ? 1.0 : 0.0;

  // Branch 0 equals the labels (clamped); others are noise.
  Mat p0 = labels.unaryExpr([](double v) { return v > 0.5 ? 0.99 : 0.01; });
  auto noise = [&]() {
    Mat p(n, m);
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < m; ++j) p(i, j) = 0.2 + 0.6 * rng.uniform01();
    return p;
  };
  Mat p1 = noise(), p2 = noise();
  AsaWeights fitted = fit_asa_weights(p0, p1, p2, labels);
  CHECK_FALSE(fitted.degenerate);
  for (long j = 0; j < m; ++j) {
    CHECK(fitted.weights.row(j).minCoeff() >= -1e-12);
    CHECK(fitted.weights.row(j).sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fitted.weights(j, 0) >= fitted.weights(j, 1));
    CHECK(fitted.weights(j, 0) >= fitted.weights(j, 2));
  }

  AsaWeights same = fit_asa_weights(p1, p1, p1, labels);
  CHECK(same.degenerate);
  CHECK((same.weights.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-12);

  // The fitted objective never exceeds the uniform-weight objective.
  auto objective = [&](const AsaWeights& w) {
    Mat comb = aggregate(p0, p1, p2, Aggregation::Asa, &w);
    double loss = 0.0;
    for (long i = 0; i < n; ++i)
      for (long j = 0; j < m; ++j) {
        double p = std::min(std::max(comb(i, j), 1e-7), 1.0 - 1e-7);
        loss += -(labels(i, j) * std::log(p) + (1.0 - labels(i, j)) * std::log(1.0 - p));
      }
    return loss / static_cast<double>(n * m);
  };
  AsaWeights uniform;
  uniform.weights = Mat::Constant(m, 3, 1.0 / 3.0);
  CHECK(objective(fitted) <= objective(uniform) + 1e-9);

  // JSON round trip.
  AsaWeights back = AsaWeights::from_json(fitted.to_json());
  CHECK((back.weights - fitted.weights).cwiseAbs().maxCoeff() < 1e-12);
}
