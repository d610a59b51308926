#include "parlm/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace parlm {

using nlohmann::json;

TrainConfig TrainConfig::desk_preset() {
  TrainConfig c;  // struct defaults are the desk preset
  return c;
}

TrainConfig TrainConfig::paper_preset() {
  TrainConfig c;
  c.model.image_h = 224;
  c.model.image_w = 224;
  c.model.patch = 14;
  c.model.vis_width = 1408;
  c.model.vis_layers = 40;
  c.model.vis_heads = 16;
  c.model.vis_ffn_mult = 4;
  c.model.queries = 128;
  c.model.inject_queries = 128;
  c.model.agfa_layers = 3;
  c.model.qformer_layers = 2;
  c.model.lm_width = 4096;
  c.model.lm_layers = 32;
  c.model.lm_heads = 32;
  c.model.lm_ffn_mult = 4;
  c.model.adapted_decoder_layers = 3;
  c.model.lora_rank = 32;
  c.model.lora_scale = 1.0;
  c.optim.lr = 2e-5;
  c.optim.weight_decay = 1e-4;
  c.optim.warmup_steps = 0;
  c.optim.epochs = 60;
  c.optim.batch_size = 4;
  c.optim.seed = 7;
  return c;
}

void TrainConfig::validate() const {
  if (model.image_h % model.patch != 0 || model.image_w % model.patch != 0)
    throw ConfigError("image dimensions must be divisible by patch size");
  if (model.vis_width % model.vis_heads != 0) throw ConfigError("vis_width % vis_heads != 0");
  if (model.lm_width % model.lm_heads != 0) throw ConfigError("lm_width % lm_heads != 0");
  if (model.inject_queries > model.queries)
    throw ConfigError("inject_queries must not exceed queries");
  if (model.agfa_layers < 1) throw ConfigError("agfa_layers must be >= 1");
  if (model.lora_rank < 1) throw ConfigError("lora_rank must be >= 1");
  if (model.cbam_window % 2 == 0) throw ConfigError("cbam_window must be odd");
  if (strategy.mask != "ground_truth" && strategy.mask != "mask_padding" &&
      strategy.mask != "random_sentence")
    throw ConfigError("unknown mask strategy: " + strategy.mask);
  if (strategy.aggregation != "mean" && strategy.aggregation != "max" && strategy.aggregation != "asa")
    throw ConfigError("unknown aggregation: " + strategy.aggregation);
  if (strategy.mask_rate < 0.0 || strategy.mask_rate > 1.0)
    throw ConfigError("mask_rate must be in [0, 1]");
  if (model.llm_cls_source != "last_position" && model.llm_cls_source != "cls_token")
    throw ConfigError("llm_cls_source must be last_position or cls_token");
  if (optim.batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::string TrainConfig::to_json() const {
  json j;
  j["model"] = {{"image_h", model.image_h},
                {"image_w", model.image_w},
                {"patch", model.patch},
                {"vis_width", model.vis_width},
                {"vis_layers", model.vis_layers},
                {"vis_heads", model.vis_heads},
                {"vis_ffn_mult", model.vis_ffn_mult},
                {"queries", model.queries},
                {"inject_queries", model.inject_queries},
                {"agfa_layers", model.agfa_layers},
                {"qformer_layers", model.qformer_layers},
                {"lm_width", model.lm_width},
                {"lm_layers", model.lm_layers},
                {"lm_heads", model.lm_heads},
                {"lm_ffn_mult", model.lm_ffn_mult},
                {"adapted_decoder_layers", model.adapted_decoder_layers},
                {"lora_rank", model.lora_rank},
                {"lora_scale", model.lora_scale},
                {"cbam_window", model.cbam_window},
                {"cbam_reduction", model.cbam_reduction},
                {"agfa_init_from_encoder", model.agfa_init_from_encoder},
                {"qformer_per_group", model.qformer_per_group},
                {"llm_cls_source", model.llm_cls_source},
                {"max_caption_len", model.max_caption_len}};
  j["optim"] = {{"lr", optim.lr},
                {"weight_decay", optim.weight_decay},
                {"warmup_steps", optim.warmup_steps},
                {"epochs", optim.epochs},
                {"batch_size", optim.batch_size},
                {"max_steps", optim.max_steps},
                {"seed", optim.seed},
                {"log_every", optim.log_every},
                {"checkpoint_every", optim.checkpoint_every}};
  j["data"] = {{"schema", data.schema},
               {"manifest", data.manifest},
               {"images_root", data.images_root},
               {"splits", data.splits},
               {"degradations", data.degradations}};
  j["strategy"] = {{"mask", strategy.mask},
                   {"mask_rate", strategy.mask_rate},
                   {"aggregation", strategy.aggregation}};
  return j.dump(2) + "\n";
}

namespace {
template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  if (j.contains("model")) {
    const json& m = j["model"];
    maybe(m, "image_h", c.model.image_h);
    maybe(m, "image_w", c.model.image_w);
    maybe(m, "patch", c.model.patch);
    maybe(m, "vis_width", c.model.vis_width);
    maybe(m, "vis_layers", c.model.vis_layers);
    maybe(m, "vis_heads", c.model.vis_heads);
    maybe(m, "vis_ffn_mult", c.model.vis_ffn_mult);
    maybe(m, "queries", c.model.queries);
    maybe(m, "inject_queries", c.model.inject_queries);
    maybe(m, "agfa_layers", c.model.agfa_layers);
    maybe(m, "qformer_layers", c.model.qformer_layers);
    maybe(m, "lm_width", c.model.lm_width);
    maybe(m, "lm_layers", c.model.lm_layers);
    maybe(m, "lm_heads", c.model.lm_heads);
    maybe(m, "lm_ffn_mult", c.model.lm_ffn_mult);
    maybe(m, "adapted_decoder_layers", c.model.adapted_decoder_layers);
    maybe(m, "lora_rank", c.model.lora_rank);
    maybe(m, "lora_scale", c.model.lora_scale);
    maybe(m, "cbam_window", c.model.cbam_window);
    maybe(m, "cbam_reduction", c.model.cbam_reduction);
    maybe(m, "agfa_init_from_encoder", c.model.agfa_init_from_encoder);
    maybe(m, "qformer_per_group", c.model.qformer_per_group);
    maybe(m, "llm_cls_source", c.model.llm_cls_source);
    maybe(m, "max_caption_len", c.model.max_caption_len);
  }
  if (j.contains("optim")) {
    const json& o = j["optim"];
    maybe(o, "lr", c.optim.lr);
    maybe(o, "weight_decay", c.optim.weight_decay);
    maybe(o, "warmup_steps", c.optim.warmup_steps);
    maybe(o, "epochs", c.optim.epochs);
    maybe(o, "batch_size", c.optim.batch_size);
    maybe(o, "max_steps", c.optim.max_steps);
    maybe(o, "seed", c.optim.seed);
    maybe(o, "log_every", c.optim.log_every);
    maybe(o, "checkpoint_every", c.optim.checkpoint_every);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    maybe(d, "schema", c.data.schema);
    maybe(d, "manifest", c.data.manifest);
    maybe(d, "images_root", c.data.images_root);
    maybe(d, "splits", c.data.splits);
    maybe(d, "degradations", c.data.degradations);
  }
  if (j.contains("strategy")) {
    const json& s = j["strategy"];
    maybe(s, "mask", c.strategy.mask);
    maybe(s, "mask_rate", c.strategy.mask_rate);
    maybe(s, "aggregation", c.strategy.aggregation);
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void TrainConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config: " + path.string());
  out << to_json();
}

}  // namespace parlm
