#include "parlm/vision.hpp"

#include <cmath>
#include <stdexcept>

namespace parlm {

VisionModel::VisionModel(ParamStore& store, const ModelConfig& cfg, int groups, Rng& rng)
    : cfg_(cfg), groups_(groups) {
  const long d = cfg_.vis_width;
  const long pdim = static_cast<long>(cfg_.patch) * cfg_.patch * 3;
  const long nv = token_count();
  const long l = cfg_.queries;

  patch_w_ = &store.create_normal("vis.patch.w", pdim, d, rng, 1.0 / std::sqrt(static_cast<double>(pdim)),
                                  /*trainable=*/false);
  patch_b_ = &store.create("vis.patch.b", 1, d, /*trainable=*/false);
  // The encoder is frozen, so the position signal has to be strong enough at
  // init to stay distinguishable next to the content tokens.
  pos_embed_ = &store.create_normal("vis.pos", nv, d, rng, 0.5, /*trainable=*/false);

  for (int i = 0; i < cfg_.vis_layers; ++i) {
    enc_layers_.push_back(make_self_block(store, "vis.enc.l" + std::to_string(i), d,
                                          d * cfg_.vis_ffn_mult, rng, /*trainable=*/false,
                                          cfg_.lora_rank, cfg_.lora_scale));
  }
  enc_final_ln_ = make_layer_norm(store, "vis.enc.final_ln", d, /*trainable=*/false);

  partq_ = &store.create_normal("vis.partq", static_cast<long>(groups_) * l, d, rng, 0.5);

  for (int i = 0; i < cfg_.agfa_layers; ++i) {
    agfa_layers_.push_back(make_cross_block(store, "vis.agfa.l" + std::to_string(i), d,
                                            d * cfg_.vis_ffn_mult, rng, /*trainable=*/true));
  }
  if (cfg_.agfa_init_from_encoder) init_agfa_from_encoder();

  const int qf_banks = cfg_.qformer_per_group ? groups_ : 1;
  qf_layers_.resize(qf_banks);
  for (int bank = 0; bank < qf_banks; ++bank) {
    std::string base = cfg_.qformer_per_group ? "vis.qf.g" + std::to_string(bank) : "vis.qf";
    for (int i = 0; i < cfg_.qformer_layers; ++i)
      qf_layers_[bank].push_back(make_qformer_layer(store, base + ".l" + std::to_string(i), rng));
  }

  const long bottleneck = std::max(1L, d / cfg_.cbam_reduction);
  cbam_fc1_ = make_linear(store, "vis.cbam.fc1", d, bottleneck, rng, true);
  cbam_fc2_ = make_linear(store, "vis.cbam.fc2", bottleneck, d, rng, true);
  cbam_kernel_ = &store.create_normal("vis.cbam.kernel", cfg_.cbam_window * 2, 1, rng, 0.1);
  cbam_bias_ = &store.create("vis.cbam.bias", 1, 1);
}

VisionModel::QFormerLayer VisionModel::make_qformer_layer(ParamStore& store,
                                                          const std::string& prefix, Rng& rng) {
  const long d = cfg_.vis_width;
  QFormerLayer l;
  l.ln_self = make_layer_norm(store, prefix + ".ln_self", d, true);
  l.ln_cross = make_layer_norm(store, prefix + ".ln_cross", d, true);
  l.ln_ffn = make_layer_norm(store, prefix + ".ln_ffn", d, true);
  l.self_attn = make_attention(store, prefix + ".self", d, rng, true);
  l.cross_attn = make_attention(store, prefix + ".cross", d, rng, true);
  l.ffn = make_ffn(store, prefix + ".ffn", d, d * cfg_.vis_ffn_mult, rng, true);
  return l;
}

// Seeds AGFA blocks from the deepest encoder layers: the cross-attention
// projections take the corresponding self-attention projections (Q from Q),
// FFN and layer norms copy over directly.
void VisionModel::init_agfa_from_encoder() {
  const int n_enc = static_cast<int>(enc_layers_.size());
  const int n_agfa = static_cast<int>(agfa_layers_.size());
  for (int i = 0; i < n_agfa; ++i) {
    const SelfBlockParams& src = enc_layers_[std::max(0, n_enc - n_agfa + i)];
    CrossBlockParams& dst = agfa_layers_[i];
    dst.attn.q.w->value = src.attn.q.w->value;
    dst.attn.q.b->value = src.attn.q.b->value;
    dst.attn.k.w->value = src.attn.k.w->value;
    dst.attn.k.b->value = src.attn.k.b->value;
    dst.attn.v.w->value = src.attn.v.w->value;
    dst.attn.v.b->value = src.attn.v.b->value;
    dst.attn.o.w->value = src.attn.o.w->value;
    dst.attn.o.b->value = src.attn.o.b->value;
    dst.ffn.fc1.w->value = src.ffn.fc1.w->value;
    dst.ffn.fc1.b->value = src.ffn.fc1.b->value;
    dst.ffn.fc2.w->value = src.ffn.fc2.w->value;
    dst.ffn.fc2.b->value = src.ffn.fc2.b->value;
    dst.ln_attn.gain->value = src.ln_attn.gain->value;
    dst.ln_attn.bias->value = src.ln_attn.bias->value;
    dst.ln_ffn.gain->value = src.ln_ffn.gain->value;
    dst.ln_ffn.bias->value = src.ln_ffn.bias->value;
  }
}

Mat VisionModel::patch_matrix(const Image& img, int patch) {
  if (img.height % patch != 0 || img.width % patch != 0)
    throw ImageError("image dimensions must be divisible by the patch size");
  const int gh = img.height / patch, gw = img.width / patch;
  Mat m(static_cast<long>(gh) * gw, static_cast<long>(patch) * patch * 3);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      long row = static_cast<long>(py) * gw + px;
      long col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < 3; ++c)
            m(row, col++) = (img.at(py * patch + y, px * patch + x, c) / 255.0 - 0.5) / 0.5;
    }
  return m;
}

Graph::V VisionModel::patch_embed(Graph& g, const Image& img) const {
  Graph::V patches = g.input(patch_matrix(img, cfg_.patch));
  Graph::V tokens = g.add_rowvec(g.matmul(patches, g.param(*patch_w_)), g.param(*patch_b_));
  return g.add(tokens, g.param(*pos_embed_));
}

Graph::V VisionModel::encode(Graph& g, Graph::V tokens, bool use_adapters,
                             AttentionProbe* probe) const {
  Graph::V x = tokens;
  for (const auto& layer : enc_layers_)
    x = self_block(g, x, layer, cfg_.vis_heads, nullptr, probe, use_adapters);
  return layer_norm(g, x, enc_final_ln_);
}

Graph::V VisionModel::agfa(Graph& g, Graph::V fv, AttentionProbe* probe) const {
  // All K*L query rows attend to the same visual tokens, so the K groups run
  // as one batched cross-attention; rows never mix across groups.
  Graph::V x = g.param(*partq_);
  for (const auto& layer : agfa_layers_) x = cross_block(g, x, fv, layer, cfg_.vis_heads, probe);
  return x;
}

Graph::V VisionModel::qformer(Graph& g, Graph::V fg, AttentionProbe* probe) const {
  const long l = cfg_.queries;
  std::vector<Graph::V> outs;
  outs.reserve(groups_);
  for (int j = 0; j < groups_; ++j) {
    Graph::V slice = g.slice_rows(fg, static_cast<long>(j) * l, l);
    Graph::V x = slice;
    const auto& bank = qf_layers_[cfg_.qformer_per_group ? j : 0];
    for (const auto& layer : bank) {
      Graph::V n = layer_norm(g, x, layer.ln_self);
      x = g.add(x, attention(g, n, n, layer.self_attn, cfg_.vis_heads, nullptr, probe));
      x = g.add(x, attention(g, layer_norm(g, x, layer.ln_cross), slice, layer.cross_attn,
                             cfg_.vis_heads, nullptr, probe));
      x = g.add(x, ffn(g, layer_norm(g, x, layer.ln_ffn), layer.ffn));
    }
    outs.push_back(x);
  }
  return g.concat_rows(outs);
}

Graph::V VisionModel::cbam_merge(Graph& g, Graph::V fg) const {
  const long l = cfg_.queries;
  std::vector<Graph::V> embeds;
  embeds.reserve(groups_);
  for (int j = 0; j < groups_; ++j) {
    Graph::V x = g.slice_rows(fg, static_cast<long>(j) * l, l);
    // Channel gate from pooled descriptors through the shared bottleneck.
    auto bottleneck = [&](Graph::V v) {
      return linear(g, g.gelu(linear(g, v, cbam_fc1_)), cbam_fc2_);
    };
    Graph::V gate_c = g.sigmoid(g.add(bottleneck(g.mean_rows(x)), bottleneck(g.max_rows(x))));
    Graph::V xc = g.mul_rowvec(x, gate_c);
    // Token gate from per-token channel statistics through a 1-D window.
    Graph::V stats = g.concat_cols({g.mean_cols(xc), g.max_cols(xc)});
    Graph::V gate_t = g.sigmoid(
        g.add_rowvec(g.conv_rows(stats, g.param(*cbam_kernel_), cfg_.cbam_window), g.param(*cbam_bias_)));
    embeds.push_back(g.mean_rows(g.mul_colvec(xc, gate_t)));
  }
  return g.concat_rows(embeds);
}

VisionModel::Forward VisionModel::forward(Graph& g, const Image& img, bool use_adapters,
                                          AttentionProbe* probe) const {
  Forward out;
  Graph::V tokens = patch_embed(g, img);
  out.fv = encode(g, tokens, use_adapters, probe);
  out.fv_mean = g.mean_rows(out.fv);
  out.fg = agfa(g, out.fv, probe);
  out.fq = qformer(g, out.fg, probe);
  out.group_embed = cbam_merge(g, out.fg);
  return out;
}

}  // namespace parlm
