#include "parlm/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace parlm {

MetricsReport evaluate(const BinaryMatrix& predictions, const BinaryMatrix& labels) {
  if (predictions.rows != labels.rows || predictions.cols != labels.cols)
    throw MetricsError("prediction/label shape mismatch");
  if (predictions.rows == 0) throw MetricsError("empty prediction set");
  for (std::uint8_t v : predictions.data)
    if (v > 1) throw MetricsError("predictions must be binary");
  for (std::uint8_t v : labels.data)
    if (v > 1) throw MetricsError("labels must be binary");

  const long n = predictions.rows, m = predictions.cols;
  MetricsReport rep;
  rep.sample_count = n;
  rep.per_attribute_ma.assign(m, std::numeric_limits<double>::quiet_NaN());

  // Label-based mA.
  double ma_sum = 0.0;
  long included = 0;
  for (long j = 0; j < m; ++j) {
    long tp = 0, tn = 0, pos = 0, neg = 0;
    for (long i = 0; i < n; ++i) {
      if (labels.at(i, j)) {
        ++pos;
        if (predictions.at(i, j)) ++tp;
      } else {
        ++neg;
        if (!predictions.at(i, j)) ++tn;
      }
    }
    if (pos == 0 || neg == 0) {
      rep.excluded_attributes.push_back(static_cast<int>(j));
      continue;
    }
    double v = 0.5 * (static_cast<double>(tp) / pos + static_cast<double>(tn) / neg);
    rep.per_attribute_ma[j] = v;
    ma_sum += v;
    ++included;
  }
  rep.mA = included > 0 ? ma_sum / included : 0.0;

  // Example-based Acc / Prec / Recall.
  double acc_sum = 0.0, prec_sum = 0.0, rec_sum = 0.0;
  for (long i = 0; i < n; ++i) {
    long inter = 0, uni = 0, y = 0, yhat = 0;
    for (long j = 0; j < m; ++j) {
      bool a = labels.at(i, j), b = predictions.at(i, j);
      inter += (a && b);
      uni += (a || b);
      y += a;
      yhat += b;
    }
    acc_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    prec_sum += yhat == 0 ? (y == 0 ? 1.0 : 0.0) : static_cast<double>(inter) / yhat;
    rec_sum += y == 0 ? (yhat == 0 ? 1.0 : 0.0) : static_cast<double>(inter) / y;
  }
  rep.acc = acc_sum / n;
  rep.prec = prec_sum / n;
  rep.recall = rec_sum / n;
  rep.f1 = (rep.prec + rep.recall) > 0.0 ? 2.0 * rep.prec * rep.recall / (rep.prec + rep.recall) : 0.0;
  return rep;
}

std::map<std::string, MetricsReport> per_scene_evaluate(const BinaryMatrix& predictions,
                                                        const BinaryMatrix& labels,
                                                        const std::vector<std::string>& scenes) {
  if (static_cast<long>(scenes.size()) != predictions.rows)
    throw MetricsError("scene list length does not match sample count");
  std::map<std::string, std::vector<long>> members;
  for (long i = 0; i < predictions.rows; ++i) members[scenes[i]].push_back(i);
  std::map<std::string, MetricsReport> out;
  for (const auto& [scene, idx] : members) {
    BinaryMatrix p(static_cast<long>(idx.size()), predictions.cols);
    BinaryMatrix l(static_cast<long>(idx.size()), predictions.cols);
    for (std::size_t k = 0; k < idx.size(); ++k)
      for (long j = 0; j < predictions.cols; ++j) {
        p.at(static_cast<long>(k), j) = predictions.at(idx[k], j);
        l.at(static_cast<long>(k), j) = labels.at(idx[k], j);
      }
    out.emplace(scene, evaluate(p, l));
  }
  return out;
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "samples " << r.sample_count << "\n";
  out << "  mA      " << r.mA << "\n";
  out << "  Acc     " << r.acc << "\n";
  out << "  Prec    " << r.prec << "\n";
  out << "  Recall  " << r.recall << "\n";
  out << "  F1      " << r.f1 << "\n";
  if (!r.excluded_attributes.empty()) {
    out << "  (mA excludes " << r.excluded_attributes.size()
        << " attribute(s) with no positives or no negatives)\n";
  }
  return out.str();
}

std::string format_report_kv(const MetricsReport& r) {
  std::ostringstream out;
  out.precision(10);
  out << "samples=" << r.sample_count << "\n"
      << "mA=" << r.mA << "\n"
      << "acc=" << r.acc << "\n"
      << "prec=" << r.prec << "\n"
      << "recall=" << r.recall << "\n"
      << "f1=" << r.f1 << "\n"
      << "ma_excluded=" << r.excluded_attributes.size() << "\n";
  return out.str();
}

}  // namespace parlm
