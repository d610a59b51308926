#pragma once

#include <string>
#include <vector>

#include "parlm/graph.hpp"

namespace parlm {

struct LinearParams {
  Param* w = nullptr;  // in x out
  Param* b = nullptr;  // 1 x out
};

// Low-rank delta on a frozen projection: y = x W + b + scale * (x down) up.
// up starts at zero so the adapted map equals the base map at init.
struct LoraParams {
  Param* down = nullptr;  // in x r
  Param* up = nullptr;    // r x out
  double scale = 1.0;
};

struct LayerNormParams {
  Param* gain = nullptr;  // 1 x d
  Param* bias = nullptr;  // 1 x d
};

struct AttentionParams {
  LinearParams q, k, v, o;
  LoraParams q_lora, v_lora;
  bool has_lora = false;
};

struct FfnParams {
  LinearParams fc1, fc2;
};

// Pre-norm residual transformer blocks.
struct SelfBlockParams {
  LayerNormParams ln_attn, ln_ffn;
  AttentionParams attn;
  FfnParams ffn;
};

struct CrossBlockParams {
  LayerNormParams ln_attn, ln_ffn;
  AttentionParams attn;  // queries from x, keys/values from the context
  FfnParams ffn;
};

// Captures every attention row distribution of a forward pass.
struct AttentionProbe {
  std::vector<Mat> row_distributions;
};

Graph::V linear(Graph& g, Graph::V x, const LinearParams& p);
Graph::V lora_linear(Graph& g, Graph::V x, const LinearParams& p, const LoraParams& lora,
                     bool use_adapter);
Graph::V layer_norm(Graph& g, Graph::V x, const LayerNormParams& p);
Graph::V ffn(Graph& g, Graph::V x, const FfnParams& p);

// Scaled dot-product multi-head attention. `mask` (optional) is added to the
// pre-softmax scores of every head. Adapters apply to the Q and V
// projections only.
Graph::V attention(Graph& g, Graph::V q_in, Graph::V kv_in, const AttentionParams& p, int heads,
                   const Mat* mask = nullptr, AttentionProbe* probe = nullptr,
                   bool use_adapters = true);

Graph::V self_block(Graph& g, Graph::V x, const SelfBlockParams& p, int heads,
                    const Mat* mask = nullptr, AttentionProbe* probe = nullptr,
                    bool use_adapters = true);
Graph::V cross_block(Graph& g, Graph::V x, Graph::V context, const CrossBlockParams& p, int heads,
                     AttentionProbe* probe = nullptr, bool use_adapters = true);

Mat causal_mask(long n);
Mat sinusoidal_positions(long n, long d);

// Parameter construction helpers; names get a dotted prefix.
// init_std < 0 selects the variance-preserving default 1/sqrt(in); 0 gives a
// zero-initialized weight matrix.
LinearParams make_linear(ParamStore& store, const std::string& prefix, long in, long out, Rng& rng,
                         bool trainable, double init_std = -1.0);
LoraParams make_lora(ParamStore& store, const std::string& prefix, long in, long out, long rank,
                     double scale, Rng& rng);
LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, long d, bool trainable);
AttentionParams make_attention(ParamStore& store, const std::string& prefix, long d, Rng& rng,
                               bool trainable, long lora_rank = 0, double lora_scale = 1.0);
FfnParams make_ffn(ParamStore& store, const std::string& prefix, long d, long hidden, Rng& rng,
                   bool trainable);
SelfBlockParams make_self_block(ParamStore& store, const std::string& prefix, long d, long ffn_hidden,
                                Rng& rng, bool trainable, long lora_rank = 0, double lora_scale = 1.0);
CrossBlockParams make_cross_block(ParamStore& store, const std::string& prefix, long d,
                                  long ffn_hidden, Rng& rng, bool trainable);

}  // namespace parlm
