#pragma once

#include <optional>
#include <string>
#include <vector>

#include "parlm/config.hpp"
#include "parlm/nn.hpp"
#include "parlm/schema.hpp"

namespace parlm {

class HeadsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-attribute positive ratios from the training split; the loss weight is
// exp(1 - r_i) for positive targets and exp(r_i) for negative ones, so rare
// attributes pull harder.
struct WceWeights {
  Eigen::VectorXd positive_ratio;           // r_i
  std::vector<int> floored_attributes;      // attributes with zero positives
};

WceWeights compute_wce_weights(const std::vector<LabelVector>& train_labels, int attribute_count);
// N x M weight matrix for a batch of targets.
Mat wce_weight_matrix(const Mat& targets, const WceWeights& w);

enum class Aggregation { Asa, Mean, Max };
std::optional<Aggregation> aggregation_from_name(const std::string& name);
const char* aggregation_name(Aggregation a);

// Per-attribute convex combination weights over the three branches.
struct AsaWeights {
  Mat weights;  // M x 3, rows on the simplex
  bool degenerate = false;

  std::string to_json() const;
  static AsaWeights from_json(const std::string& text);
};

// Elementwise combination of the three branch probability matrices (N x M).
Mat aggregate(const Mat& p_attr, const Mat& p_in, const Mat& p_llm, Aggregation strategy,
              const AsaWeights* asa = nullptr);

// Per-attribute simplex-constrained minimization of the binary cross-entropy
// of the combined probability (convex; solved by projected gradient descent
// to tolerance 1e-6). All-equal branches yield uniform weights and set the
// degenerate flag.
AsaWeights fit_asa_weights(const Mat& p_attr, const Mat& p_in, const Mat& p_llm, const Mat& labels);

Mat sigmoid(const Mat& logits);

// The three classifiers. Attribute heads are per group: attribute i's logit
// is a function of its own group's embedding only.
class Heads {
 public:
  Heads(ParamStore& store, const ModelConfig& cfg, const AttributeSchema& schema, Rng& rng);

  Graph::V attr_logits(Graph& g, Graph::V group_embed) const;  // K x D -> 1 x M
  Graph::V instance_logits(Graph& g, Graph::V fv_mean) const;  // 1 x D -> 1 x M
  Graph::V llm_logits(Graph& g, Graph::V last_hidden) const;   // 1 x D_lm -> 1 x M

  // Plain path for inference on a generated hidden state.
  Eigen::RowVectorXd llm_logits_plain(const Eigen::RowVectorXd& last_hidden) const;

 private:
  const AttributeSchema& schema_;
  double feature_scale_ = 1.0;
  struct GroupHead {
    LayerNormParams ln;
    LinearParams fc1, fc2;
  };
  std::vector<GroupHead> group_heads_;
  LinearParams instance_head_;
  LinearParams llm_head_;
  Mat member_permutation_;  // maps group-concatenated logits to schema order
};

}  // namespace parlm
