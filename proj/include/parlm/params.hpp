#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "parlm/rng.hpp"

namespace parlm {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
  bool trainable = true;

  long rows() const { return value.rows(); }
  long cols() const { return value.cols(); }
};

class ParamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Named parameter registry. Creation order is stable, which makes optimizer
// updates and checkpoint layout deterministic.
class ParamStore {
 public:
  Param& create(const std::string& name, long rows, long cols, bool trainable = true);
  Param& create_normal(const std::string& name, long rows, long cols, Rng& rng, double stddev,
                       bool trainable = true);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::vector<Param*>& all() { return order_; }
  const std::vector<Param*>& all() const { return order_; }

  void zero_grads();
  long total_parameters() const;

 private:
  std::vector<std::unique_ptr<Param>> storage_;
  std::vector<Param*> order_;
  std::unordered_map<std::string, Param*> index_;
};

// AdamW with decoupled weight decay.
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long t = 0;

  // grad_scale multiplies accumulated gradients before the update (used to
  // average per-sample gradients over a batch).
  void step(ParamStore& store, double grad_scale = 1.0);
};

}  // namespace parlm
