#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "parlm/config.hpp"
#include "parlm/params.hpp"

namespace parlm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricEvent {
  long step = 0;
  std::string key;
  double value = 0.0;
};

// Versioned binary container: config JSON, step count, metric history, all
// parameter arrays by name, and auxiliary arrays (training-split statistics
// such as the WCE positive ratios and fitted ASA weights). Values are raw
// little-endian doubles, so save/load round-trips are bit exact.
struct Checkpoint {
  TrainConfig config;
  long step = 0;
  std::vector<MetricEvent> history;
  std::vector<std::pair<std::string, Mat>> params;
  std::vector<std::pair<std::string, Mat>> aux;

  static Checkpoint from_store(const ParamStore& store, const TrainConfig& cfg, long step,
                               std::vector<MetricEvent> history = {},
                               std::vector<std::pair<std::string, Mat>> aux = {});
  // Copies parameter values into an existing store; every name and shape
  // must match.
  void apply_to(ParamStore& store) const;

  const Mat* find_aux(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace parlm
