#include "parlm/heads.hpp"

#include <cmath>

#include <json.hpp>

namespace parlm {

WceWeights compute_wce_weights(const std::vector<LabelVector>& train_labels, int attribute_count) {
  if (train_labels.empty()) throw HeadsError("compute_wce_weights: no training labels");
  const long n = static_cast<long>(train_labels.size());
  WceWeights out;
  out.positive_ratio.resize(attribute_count);
  for (int i = 0; i < attribute_count; ++i) {
    long pos = 0;
    for (const auto& l : train_labels) {
      if (static_cast<int>(l.size()) != attribute_count)
        throw HeadsError("compute_wce_weights: label length mismatch");
      pos += l[i];
    }
    double r = static_cast<double>(pos) / static_cast<double>(n);
    if (pos == 0) {
      r = 1.0 / (2.0 * static_cast<double>(n));
      out.floored_attributes.push_back(i);
    }
    out.positive_ratio(i) = r;
  }
  return out;
}

Mat wce_weight_matrix(const Mat& targets, const WceWeights& w) {
  if (targets.cols() != w.positive_ratio.size())
    throw HeadsError("wce_weight_matrix: attribute count mismatch");
  Mat out(targets.rows(), targets.cols());
  for (long i = 0; i < targets.rows(); ++i)
    for (long j = 0; j < targets.cols(); ++j) {
      double r = w.positive_ratio(j);
      out(i, j) = targets(i, j) > 0.5 ? std::exp(1.0 - r) : std::exp(r);
    }
  return out;
}

std::optional<Aggregation> aggregation_from_name(const std::string& name) {
  if (name == "asa") return Aggregation::Asa;
  if (name == "mean") return Aggregation::Mean;
  if (name == "max") return Aggregation::Max;
  return std::nullopt;
}

const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::Asa: return "asa";
    case Aggregation::Mean: return "mean";
    case Aggregation::Max: return "max";
  }
  return "?";
}

Mat sigmoid(const Mat& logits) {
  return logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
}

Mat aggregate(const Mat& p_attr, const Mat& p_in, const Mat& p_llm, Aggregation strategy,
              const AsaWeights* asa) {
  if (p_attr.rows() != p_in.rows() || p_attr.rows() != p_llm.rows() ||
      p_attr.cols() != p_in.cols() || p_attr.cols() != p_llm.cols())
    throw HeadsError("aggregate: branch shape mismatch");
  switch (strategy) {
    case Aggregation::Mean:
      return (p_attr + p_in + p_llm) / 3.0;
    case Aggregation::Max:
      return p_attr.cwiseMax(p_in).cwiseMax(p_llm);
    case Aggregation::Asa: {
      if (asa == nullptr || asa->weights.rows() != p_attr.cols() || asa->weights.cols() != 3)
        throw HeadsError("asa aggregation requested without fitted weights");
      Mat out(p_attr.rows(), p_attr.cols());
      for (long j = 0; j < p_attr.cols(); ++j)
        out.col(j) = asa->weights(j, 0) * p_attr.col(j) + asa->weights(j, 1) * p_in.col(j) +
                     asa->weights(j, 2) * p_llm.col(j);
      return out;
    }
  }
  throw HeadsError("unknown aggregation strategy");
}

namespace {

// Euclidean projection onto the probability simplex.
Eigen::Vector3d project_simplex(Eigen::Vector3d v) {
  Eigen::Vector3d u = v;
  std::sort(u.data(), u.data() + 3, std::greater<double>());
  double rho_val = 0.0, cum = 0.0;
  for (int i = 0; i < 3; ++i) {
    cum += u(i);
    double t = (cum - 1.0) / (i + 1);
    if (u(i) - t > 0) rho_val = t;
  }
  for (int i = 0; i < 3; ++i) v(i) = std::max(0.0, v(i) - rho_val);
  return v;
}

double asa_objective(const Eigen::Vector3d& w, const Mat& probs, const Eigen::VectorXd& y) {
  const double eps = 1e-7;
  double loss = 0.0;
  for (long i = 0; i < probs.rows(); ++i) {
    double p = std::min(std::max(probs.row(i).dot(w), eps), 1.0 - eps);
    loss += -(y(i) * std::log(p) + (1.0 - y(i)) * std::log(1.0 - p));
  }
  return loss / static_cast<double>(probs.rows());
}

}  // namespace

AsaWeights fit_asa_weights(const Mat& p_attr, const Mat& p_in, const Mat& p_llm, const Mat& labels) {
  if (labels.rows() != p_attr.rows() || labels.cols() != p_attr.cols())
    throw HeadsError("fit_asa_weights: label shape mismatch");
  if (labels.rows() < 1) throw HeadsError("fit_asa_weights: needs at least one sample");
  const long m = p_attr.cols();
  const double eps = 1e-7;
  AsaWeights out;
  out.weights.resize(m, 3);
  bool all_degenerate = true;
  for (long j = 0; j < m; ++j) {
    Mat probs(p_attr.rows(), 3);
    probs.col(0) = p_attr.col(j);
    probs.col(1) = p_in.col(j);
    probs.col(2) = p_llm.col(j);
    Eigen::VectorXd y = labels.col(j);

    const double spread = (probs.col(0) - probs.col(1)).cwiseAbs().maxCoeff() +
                          (probs.col(0) - probs.col(2)).cwiseAbs().maxCoeff();
    Eigen::Vector3d w(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    if (spread < 1e-12) {
      out.weights.row(j) = w.transpose();
      continue;
    }
    all_degenerate = false;

    double prev = asa_objective(w, probs, y);
    const double step = 0.5;
    for (int it = 0; it < 5000; ++it) {
      Eigen::Vector3d grad = Eigen::Vector3d::Zero();
      for (long i = 0; i < probs.rows(); ++i) {
        double p = probs.row(i).dot(w);
        double pc = std::min(std::max(p, eps), 1.0 - eps);
        if (p <= eps || p >= 1.0 - eps) continue;
        double coeff = (-y(i) / pc + (1.0 - y(i)) / (1.0 - pc)) / static_cast<double>(probs.rows());
        grad += coeff * probs.row(i).transpose();
      }
      w = project_simplex(w - step * grad);
      double cur = asa_objective(w, probs, y);
      if (std::abs(prev - cur) < 1e-6 * std::max(1.0, std::abs(prev)) && it > 10) break;
      prev = cur;
    }
    out.weights.row(j) = w.transpose();
  }
  out.degenerate = all_degenerate;
  return out;
}

std::string AsaWeights::to_json() const {
  nlohmann::json j;
  j["degenerate"] = degenerate;
  std::vector<std::vector<double>> rows;
  for (long i = 0; i < weights.rows(); ++i)
    rows.push_back({weights(i, 0), weights(i, 1), weights(i, 2)});
  j["weights"] = rows;
  return j.dump(2) + "\n";
}

AsaWeights AsaWeights::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  AsaWeights out;
  out.degenerate = j.value("degenerate", false);
  const auto& rows = j.at("weights");
  out.weights.resize(static_cast<long>(rows.size()), 3);
  for (long i = 0; i < out.weights.rows(); ++i)
    for (int k = 0; k < 3; ++k) out.weights(i, k) = rows[i][k].get<double>();
  return out;
}

Heads::Heads(ParamStore& store, const ModelConfig& cfg, const AttributeSchema& schema, Rng& rng)
    : schema_(schema), feature_scale_(static_cast<double>(cfg.vis_width)) {
  const long d = cfg.vis_width;
  const int m = schema.attribute_count();
  // Classifier output layers start at zero so the logits begin at their bias
  // and the first gradients arrive at full magnitude.
  for (int j = 0; j < schema.group_count(); ++j) {
    GroupHead h;
    const long out_dim = static_cast<long>(schema.group(j).members.size());
    // The group embeddings carry a large sample-independent offset from the
    // query-bank residual stream; the input norm keeps the MLP conditioned.
    h.ln = make_layer_norm(store, "heads.attr.g" + std::to_string(j) + ".ln", d, true);
    h.fc1 = make_linear(store, "heads.attr.g" + std::to_string(j) + ".fc1", d, d, rng, true);
    h.fc2 = make_linear(store, "heads.attr.g" + std::to_string(j) + ".fc2", d, out_dim, rng, true, 0.0);
    group_heads_.push_back(h);
  }
  instance_head_ = make_linear(store, "heads.instance", d, m, rng, true, 0.0);
  llm_head_ = make_linear(store, "heads.llm", cfg.lm_width, m, rng, true, 0.0);

  // Group-concatenated logit order -> schema attribute order.
  member_permutation_ = Mat::Zero(m, m);
  long col = 0;
  for (const auto& g : schema.groups())
    for (int i : g.members) member_permutation_(col++, i) = 1.0;
}

Graph::V Heads::attr_logits(Graph& g, Graph::V group_embed) const {
  std::vector<Graph::V> parts;
  parts.reserve(group_heads_.size());
  for (std::size_t j = 0; j < group_heads_.size(); ++j) {
    Graph::V e = g.slice_rows(group_embed, static_cast<long>(j), 1);
    Graph::V x = layer_norm(g, e, group_heads_[j].ln);
    Graph::V h = g.gelu(linear(g, x, group_heads_[j].fc1));
    parts.push_back(linear(g, h, group_heads_[j].fc2));
  }
  Graph::V grouped = g.concat_cols(parts);
  return g.matmul(grouped, g.input(member_permutation_));
}

Graph::V Heads::instance_logits(Graph& g, Graph::V fv_mean) const {
  return linear(g, g.scale(fv_mean, feature_scale_), instance_head_);
}

Graph::V Heads::llm_logits(Graph& g, Graph::V last_hidden) const {
  return linear(g, last_hidden, llm_head_);
}

Eigen::RowVectorXd Heads::llm_logits_plain(const Eigen::RowVectorXd& last_hidden) const {
  return last_hidden * llm_head_.w->value + llm_head_.b->value.row(0);
}

}  // namespace parlm
