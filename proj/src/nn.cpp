#include "parlm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace parlm {

Graph::V linear(Graph& g, Graph::V x, const LinearParams& p) {
  return g.add_rowvec(g.matmul(x, g.param(*p.w)), g.param(*p.b));
}

Graph::V lora_linear(Graph& g, Graph::V x, const LinearParams& p, const LoraParams& lora,
                     bool use_adapter) {
  Graph::V base = linear(g, x, p);
  if (!use_adapter || lora.down == nullptr) return base;
  Graph::V delta = g.matmul(g.matmul(x, g.param(*lora.down)), g.param(*lora.up));
  return g.add(base, g.scale(delta, lora.scale));
}

Graph::V layer_norm(Graph& g, Graph::V x, const LayerNormParams& p) {
  return g.layer_norm(x, g.param(*p.gain), g.param(*p.bias));
}

Graph::V ffn(Graph& g, Graph::V x, const FfnParams& p) {
  return linear(g, g.gelu(linear(g, x, p.fc1)), p.fc2);
}

Graph::V attention(Graph& g, Graph::V q_in, Graph::V kv_in, const AttentionParams& p, int heads,
                   const Mat* mask, AttentionProbe* probe, bool use_adapters) {
  const long d = g.val(q_in).cols();
  if (d % heads != 0) throw std::invalid_argument("attention: width not divisible by head count");
  const long dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Graph::V q = p.has_lora ? lora_linear(g, q_in, p.q, p.q_lora, use_adapters) : linear(g, q_in, p.q);
  Graph::V k = linear(g, kv_in, p.k);
  Graph::V v = p.has_lora ? lora_linear(g, kv_in, p.v, p.v_lora, use_adapters) : linear(g, kv_in, p.v);

  Graph::V mask_node = -1;
  if (mask != nullptr) mask_node = g.input(*mask);

  std::vector<Graph::V> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Graph::V qh = g.slice_cols(q, h * dh, dh);
    Graph::V kh = g.slice_cols(k, h * dh, dh);
    Graph::V vh = g.slice_cols(v, h * dh, dh);
    Graph::V scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt);
    if (mask_node >= 0) scores = g.add(scores, mask_node);
    Graph::V probs = g.softmax_rows(scores);
    if (probe != nullptr) probe->row_distributions.push_back(g.val(probs));
    ctx.push_back(g.matmul(probs, vh));
  }
  return linear(g, g.concat_cols(ctx), p.o);
}

Graph::V self_block(Graph& g, Graph::V x, const SelfBlockParams& p, int heads, const Mat* mask,
                    AttentionProbe* probe, bool use_adapters) {
  Graph::V n = layer_norm(g, x, p.ln_attn);
  x = g.add(x, attention(g, n, n, p.attn, heads, mask, probe, use_adapters));
  x = g.add(x, ffn(g, layer_norm(g, x, p.ln_ffn), p.ffn));
  return x;
}

Graph::V cross_block(Graph& g, Graph::V x, Graph::V context, const CrossBlockParams& p, int heads,
                     AttentionProbe* probe, bool use_adapters) {
  Graph::V n = layer_norm(g, x, p.ln_attn);
  x = g.add(x, attention(g, n, context, p.attn, heads, nullptr, probe, use_adapters));
  x = g.add(x, ffn(g, layer_norm(g, x, p.ln_ffn), p.ffn));
  return x;
}

Mat causal_mask(long n) {
  Mat m = Mat::Zero(n, n);
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) m(i, j) = -1e9;
  return m;
}

Mat sinusoidal_positions(long n, long d) {
  Mat pe(n, d);
  for (long pos = 0; pos < n; ++pos)
    for (long i = 0; i < d; ++i) {
      double angle = static_cast<double>(pos) / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

LinearParams make_linear(ParamStore& store, const std::string& prefix, long in, long out, Rng& rng,
                         bool trainable, double init_std) {
  LinearParams p;
  // init_std < 0 selects the variance-preserving default; 0 gives zero init
  // (classifier output layers start at their bias).
  const double std = init_std < 0.0 ? 1.0 / std::sqrt(static_cast<double>(in)) : init_std;
  if (std > 0.0)
    p.w = &store.create_normal(prefix + ".w", in, out, rng, std, trainable);
  else
    p.w = &store.create(prefix + ".w", in, out, trainable);
  p.b = &store.create(prefix + ".b", 1, out, trainable);
  return p;
}

LoraParams make_lora(ParamStore& store, const std::string& prefix, long in, long out, long rank,
                     double scale, Rng& rng) {
  LoraParams p;
  p.down = &store.create_normal(prefix + ".down", in, rank, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  p.up = &store.create(prefix + ".up", rank, out);  // zero init
  p.scale = scale;
  return p;
}

LayerNormParams make_layer_norm(ParamStore& store, const std::string& prefix, long d, bool trainable) {
  LayerNormParams p;
  p.gain = &store.create(prefix + ".gain", 1, d, trainable);
  p.gain->value.setOnes();
  p.bias = &store.create(prefix + ".bias", 1, d, trainable);
  return p;
}

AttentionParams make_attention(ParamStore& store, const std::string& prefix, long d, Rng& rng,
                               bool trainable, long lora_rank, double lora_scale) {
  AttentionParams p;
  p.q = make_linear(store, prefix + ".q", d, d, rng, trainable);
  p.k = make_linear(store, prefix + ".k", d, d, rng, trainable);
  p.v = make_linear(store, prefix + ".v", d, d, rng, trainable);
  p.o = make_linear(store, prefix + ".o", d, d, rng, trainable);
  if (lora_rank > 0) {
    p.q_lora = make_lora(store, prefix + ".q_lora", d, d, lora_rank, lora_scale, rng);
    p.v_lora = make_lora(store, prefix + ".v_lora", d, d, lora_rank, lora_scale, rng);
    p.has_lora = true;
  }
  return p;
}

FfnParams make_ffn(ParamStore& store, const std::string& prefix, long d, long hidden, Rng& rng,
                   bool trainable) {
  FfnParams p;
  p.fc1 = make_linear(store, prefix + ".fc1", d, hidden, rng, trainable);
  p.fc2 = make_linear(store, prefix + ".fc2", hidden, d, rng, trainable);
  return p;
}

SelfBlockParams make_self_block(ParamStore& store, const std::string& prefix, long d, long ffn_hidden,
                                Rng& rng, bool trainable, long lora_rank, double lora_scale) {
  SelfBlockParams p;
  p.ln_attn = make_layer_norm(store, prefix + ".ln_attn", d, trainable);
  p.ln_ffn = make_layer_norm(store, prefix + ".ln_ffn", d, trainable);
  p.attn = make_attention(store, prefix + ".attn", d, rng, trainable, lora_rank, lora_scale);
  p.ffn = make_ffn(store, prefix + ".ffn", d, ffn_hidden, rng, trainable);
  return p;
}

CrossBlockParams make_cross_block(ParamStore& store, const std::string& prefix, long d,
                                  long ffn_hidden, Rng& rng, bool trainable) {
  CrossBlockParams p;
  p.ln_attn = make_layer_norm(store, prefix + ".ln_attn", d, trainable);
  p.ln_ffn = make_layer_norm(store, prefix + ".ln_ffn", d, trainable);
  p.attn = make_attention(store, prefix + ".attn", d, rng, trainable);
  p.ffn = make_ffn(store, prefix + ".ffn", d, ffn_hidden, rng, trainable);
  return p;
}

}  // namespace parlm
