#pragma once

#include "parlm/config.hpp"
#include "parlm/image.hpp"
#include "parlm/nn.hpp"

namespace parlm {

// Visual branch: frozen patch embedding + frozen pre-norm encoder with
// low-rank adapters on the Q/V projections, a learnable per-group query bank
// pulled through stacked cross-attention (AGFA), a querying-transformer
// bridge, and CBAM merging of each group's query tokens into one embedding.
class VisionModel {
 public:
  VisionModel(ParamStore& store, const ModelConfig& cfg, int groups, Rng& rng);

  struct Forward {
    Graph::V fv = -1;           // N_v x D visual tokens
    Graph::V fv_mean = -1;      // 1 x D pooled instance feature
    Graph::V fg = -1;           // (K*L) x D group features
    Graph::V fq = -1;           // (K*L) x D query features for the language branch
    Graph::V group_embed = -1;  // K x D merged group embeddings
  };

  // Normalized patch tokens plus position embeddings. Throws on dimensions
  // not divisible by the patch size.
  Graph::V patch_embed(Graph& g, const Image& img) const;

  Graph::V encode(Graph& g, Graph::V tokens, bool use_adapters = true,
                  AttentionProbe* probe = nullptr) const;
  Graph::V agfa(Graph& g, Graph::V fv, AttentionProbe* probe = nullptr) const;
  Graph::V qformer(Graph& g, Graph::V fg, AttentionProbe* probe = nullptr) const;
  Graph::V cbam_merge(Graph& g, Graph::V fg) const;

  Forward forward(Graph& g, const Image& img, bool use_adapters = true,
                  AttentionProbe* probe = nullptr) const;

  int token_count() const { return (cfg_.image_h / cfg_.patch) * (cfg_.image_w / cfg_.patch); }
  int groups() const { return groups_; }

  // Flattens pixels into normalized patch rows (N_v x patch*patch*3).
  static Mat patch_matrix(const Image& img, int patch);

 private:
  struct QFormerLayer {
    LayerNormParams ln_self, ln_cross, ln_ffn;
    AttentionParams self_attn, cross_attn;
    FfnParams ffn;
  };

  QFormerLayer make_qformer_layer(ParamStore& store, const std::string& prefix, Rng& rng);
  void init_agfa_from_encoder();

  ModelConfig cfg_;
  int groups_;

  Param* patch_w_ = nullptr;
  Param* patch_b_ = nullptr;
  Param* pos_embed_ = nullptr;
  std::vector<SelfBlockParams> enc_layers_;
  LayerNormParams enc_final_ln_;

  Param* partq_ = nullptr;  // (K*L) x D learnable query bank
  std::vector<CrossBlockParams> agfa_layers_;
  std::vector<std::vector<QFormerLayer>> qf_layers_;  // [group or 0][layer]

  LinearParams cbam_fc1_, cbam_fc2_;
  Param* cbam_kernel_ = nullptr;
  Param* cbam_bias_ = nullptr;
};

}  // namespace parlm
