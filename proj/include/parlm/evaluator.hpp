#pragma once

#include "parlm/dataset.hpp"
#include "parlm/heads.hpp"
#include "parlm/metrics.hpp"
#include "parlm/model.hpp"

namespace parlm {

struct EvalOutput {
  MetricsReport report;
  std::map<std::string, MetricsReport> per_scene;
  Mat p_attr, p_in, p_llm, p_final;  // N x M probabilities
  BinaryMatrix predictions, labels;
  std::vector<std::string> captions;  // one generated caption per record
  std::vector<std::string> ids;
  std::vector<std::string> scenes;
};

// Full forward over the records (including greedy caption generation for the
// language branch), aggregation, 0.5 thresholding and metric computation.
EvalOutput evaluate_model(const ParModel& model, const Dataset& records,
                          const std::filesystem::path& images_root, Aggregation strategy,
                          const AsaWeights* asa = nullptr);

// Per sample: id, final probabilities, binary decisions, and the three
// branch probability vectors for aggregation audits.
void write_predictions(const std::filesystem::path& path, const EvalOutput& out);
// One generated caption per line, keyed by sample id.
void write_captions(const std::filesystem::path& path, const EvalOutput& out);

}  // namespace parlm
