#pragma once

#include "parlm/caption.hpp"
#include "parlm/config.hpp"
#include "parlm/heads.hpp"
#include "parlm/language.hpp"
#include "parlm/vision.hpp"

namespace parlm {

// The full two-branch model: vision stack, language branch and the three
// classifier heads, over one shared parameter store. Construction is
// deterministic in (config, schema, seed).
class ParModel {
 public:
  ParModel(const TrainConfig& cfg, const AttributeSchema& schema);

  struct BatchItem {
    Image image;
    LabelVector labels;
    PreparedTarget prep;
  };

  struct BatchGraph {
    Graph::V loss = -1;
    Graph::V wce_attr = -1;
    Graph::V wce_in = -1;
    Graph::V wce_llm = -1;
    Graph::V caption = -1;
    Graph::V attr_logits = -1;  // N x M
    Graph::V in_logits = -1;
    Graph::V llm_logits = -1;
  };
  // Builds the joint training objective for one batch.
  BatchGraph build_train_graph(Graph& g, const std::vector<BatchItem>& batch,
                               const WceWeights& weights) const;

  struct Prediction {
    Eigen::RowVectorXd p_attr;
    Eigen::RowVectorXd p_in;
    Eigen::RowVectorXd p_llm;
    std::string caption;
    GenerationResult generation;
  };
  // Full forward for one image: branch probabilities plus the generated
  // caption (greedy, KV-cached).
  Prediction predict(const Image& image) const;

  const TrainConfig& config() const { return cfg_; }
  const AttributeSchema& schema() const { return schema_; }
  const Vocab& vocab() const { return vocab_; }
  const InstructionSequence& instruction() const { return instruction_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  VisionModel& vision() { return vision_; }
  LanguageModel& language() { return language_; }
  Heads& heads() { return heads_; }

 private:
  TrainConfig cfg_;
  AttributeSchema schema_;
  Vocab vocab_;
  ParamStore store_;
  VisionModel vision_;
  LanguageModel language_;
  Heads heads_;
  InstructionSequence instruction_;
};

}  // namespace parlm
