#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace parlm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int image_h = 128;
  int image_w = 64;
  int patch = 16;
  int vis_width = 64;
  int vis_layers = 2;
  int vis_heads = 4;
  int vis_ffn_mult = 4;
  int queries = 16;         // L: query tokens per attribute group
  int inject_queries = 16;  // L_q: tokens spliced per instruction slot
  int agfa_layers = 3;
  int qformer_layers = 1;
  int lm_width = 128;
  int lm_layers = 4;
  int lm_heads = 4;
  int lm_ffn_mult = 2;
  int adapted_decoder_layers = 3;
  int lora_rank = 4;
  double lora_scale = 1.0;
  int cbam_window = 7;
  int cbam_reduction = 4;
  bool agfa_init_from_encoder = true;
  bool qformer_per_group = false;
  std::string llm_cls_source = "last_position";  // or "cls_token"
  int max_caption_len = 96;
};

struct OptimConfig {
  double lr = 5e-2;
  double weight_decay = 1e-4;
  int warmup_steps = 10;  // linear lr ramp
  int epochs = 60;
  int batch_size = 4;
  long max_steps = 0;  // 0 = run out the epochs
  std::uint64_t seed = 7;
  int log_every = 10;
  int checkpoint_every = 0;  // 0 = only final
};

struct DataConfig {
  std::string schema = "msp60k";
  std::string manifest;
  std::string images_root;
  std::string splits;
  std::string degradations;
};

struct StrategyConfig {
  std::string mask = "random_sentence";  // ground_truth | mask_padding | random_sentence
  double mask_rate = 0.5;
  std::string aggregation = "mean";  // mean | max | asa
};

struct TrainConfig {
  ModelConfig model;
  OptimConfig optim;
  DataConfig data;
  StrategyConfig strategy;

  // CPU-minute configuration exercising every mechanism.
  static TrainConfig desk_preset();
  // Settings at the scale the method is normally run (not trainable here).
  static TrainConfig paper_preset();

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  void validate() const;
};

}  // namespace parlm
