#include "parlm/params.hpp"

#include <cmath>

namespace parlm {

Param& ParamStore::create(const std::string& name, long rows, long cols, bool trainable) {
  if (index_.count(name)) throw ParamError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  p->adam_m = Mat::Zero(rows, cols);
  p->adam_v = Mat::Zero(rows, cols);
  p->trainable = trainable;
  Param* raw = p.get();
  storage_.push_back(std::move(p));
  order_.push_back(raw);
  index_[name] = raw;
  return *raw;
}

Param& ParamStore::create_normal(const std::string& name, long rows, long cols, Rng& rng,
                                 double stddev, bool trainable) {
  Param& p = create(name, rows, cols, trainable);
  for (long i = 0; i < rows; ++i)
    for (long j = 0; j < cols; ++j) p.value(i, j) = stddev * rng.normal();
  return p;
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParamError("unknown parameter: " + name);
  return *it->second;
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParamError("unknown parameter: " + name);
  return *it->second;
}

void ParamStore::zero_grads() {
  for (Param* p : order_) p->grad.setZero();
}

long ParamStore::total_parameters() const {
  long n = 0;
  for (const Param* p : order_) n += p->rows() * p->cols();
  return n;
}

void AdamW::step(ParamStore& store, double grad_scale) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (Param* p : store.all()) {
    if (!p->trainable) continue;
    Mat g = p->grad * grad_scale;
    p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * g;
    p->adam_v = beta2 * p->adam_v + (1.0 - beta2) * g.cwiseProduct(g);
    Mat mhat = p->adam_m / bc1;
    Mat vhat = p->adam_v / bc2;
    p->value -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    if (weight_decay > 0.0) p->value -= lr * weight_decay * p->value;
  }
}

}  // namespace parlm
