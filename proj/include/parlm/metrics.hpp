#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace parlm {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense N x M binary matrix (row per sample).
struct BinaryMatrix {
  long rows = 0;
  long cols = 0;
  std::vector<std::uint8_t> data;

  BinaryMatrix() = default;
  BinaryMatrix(long r, long c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0) {}
  std::uint8_t& at(long i, long j) { return data[static_cast<std::size_t>(i) * cols + j]; }
  std::uint8_t at(long i, long j) const { return data[static_cast<std::size_t>(i) * cols + j]; }
};

struct MetricsReport {
  double mA = 0.0;
  double acc = 0.0;
  double prec = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<double> per_attribute_ma;  // 0.5*(TPR+TNR); NaN for excluded attributes
  std::vector<int> excluded_attributes;  // P_i == 0 or N_i == 0
  long sample_count = 0;
};

// Label-based mA plus example-based Acc/Prec/Recall and the F1 of the
// aggregate Prec/Recall. Empty-denominator conventions:
//  - sample with |Y|=0: recall term is 1 if |Yhat|=0 else 0
//  - sample with |Yhat|=0: precision term is 1 if |Y|=0 else 0
//  - attribute with no positives or no negatives is excluded from mA
MetricsReport evaluate(const BinaryMatrix& predictions, const BinaryMatrix& labels);

// evaluate() applied per scene partition; scenes[i] names sample i's scene.
std::map<std::string, MetricsReport> per_scene_evaluate(const BinaryMatrix& predictions,
                                                        const BinaryMatrix& labels,
                                                        const std::vector<std::string>& scenes);

std::string format_report(const MetricsReport& r);
std::string format_report_kv(const MetricsReport& r);

}  // namespace parlm
