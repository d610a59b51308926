#pragma once

#include <functional>
#include <iosfwd>

#include "parlm/checkpoint.hpp"
#include "parlm/dataset.hpp"
#include "parlm/model.hpp"

namespace parlm {

class TrainDivergence : public std::runtime_error {
 public:
  TrainDivergence(long step, const std::string& what)
      : std::runtime_error(what), step(step) {}
  long step;
};

struct TrainStats {
  long steps = 0;
  double final_loss = 0.0;
  std::vector<MetricEvent> history;
  WceWeights wce;
};

// Joint single-optimizer training over the trainable subset (adapters,
// query bank, AGFA, Q-Former, CBAM, heads, projection); encoder and decoder
// bases stay frozen. Deterministic in (config, dataset order).
class Trainer {
 public:
  Trainer(ParModel& model, std::ostream* log = nullptr);

  // Optional per-epoch validation records (metric logging only).
  TrainStats run(const Dataset& train_records, const std::filesystem::path& images_root,
                 const std::filesystem::path& run_dir, const Dataset* val_records = nullptr);

 private:
  ParModel& model_;
  std::ostream* log_;
};

}  // namespace parlm
