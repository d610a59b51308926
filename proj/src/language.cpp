#include "parlm/language.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "parlm/rng.hpp"

namespace parlm {

namespace {
constexpr const char* kPunct = ":,.?'";
constexpr const char* kPreamble = "Analyze the person's photo, and categorize it into attributes.";

bool is_punct(char c) {
  for (const char* p = kPunct; *p; ++p)
    if (*p == c) return true;
  return false;
}
}  // namespace

std::vector<std::string> Vocab::word_split(const std::string& text) {
  std::string spaced;
  spaced.reserve(text.size() * 2);
  for (char c : text) {
    if (is_punct(c)) {
      spaced.push_back(' ');
      spaced.push_back(c);
      spaced.push_back(' ');
    } else {
      spaced.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  std::vector<std::string> out;
  std::stringstream ss(spaced);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

void Vocab::add(const std::string& token) {
  if (index_.count(token)) return;
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocab Vocab::build(const AttributeSchema& schema) {
  Vocab v;
  v.add("[pad]");
  v.add("[eos]");
  v.add("[cls]");
  auto add_text = [&](const std::string& text) {
    for (const auto& w : word_split(text)) v.add(w);
  };
  add_text("Human:");
  add_text(kPreamble);
  add_text("Assistant:");
  for (const auto& g : schema.groups()) {
    add_text(g.name);
    add_text(g.question);
  }
  add_text("none");
  for (const auto& a : schema.attributes()) add_text(a);
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw LanguageError("token not in vocabulary: '" + token + "'");
  return it->second;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : word_split(text)) out.push_back(id(w));
  return out;
}

std::string Vocab::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id <= cls()) continue;
    if (!out.empty()) out.push_back(' ');
    out += tokens_.at(id);
  }
  return out;
}

std::string Vocab::serialize() const {
  std::string out;
  for (const auto& t : tokens_) {
    out += t;
    out.push_back('\n');
  }
  return out;
}

Vocab Vocab::parse(const std::string& text) {
  Vocab v;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line))
    if (!line.empty()) v.add(line);
  if (v.size() < 3 || v.token(0) != "[pad]" || v.token(1) != "[eos]" || v.token(2) != "[cls]")
    throw LanguageError("vocabulary is missing the special tokens");
  return v;
}

int InstructionSequence::slot_count() const {
  int n = 0;
  for (const auto& s : segments) n += s.group >= 0 ? 1 : 0;
  return n;
}

int InstructionSequence::text_token_count() const {
  int n = 0;
  for (const auto& s : segments)
    if (s.group < 0) n += static_cast<int>(s.tokens.size());
  return n;
}

InstructionSequence build_instruction(const AttributeSchema& schema, const Vocab& vocab) {
  InstructionSequence seq;
  seq.segments.push_back({-1, vocab.encode(std::string("Human: ") + kPreamble)});
  for (int j = 0; j < schema.group_count(); ++j) {
    seq.segments.push_back({j, {}});
    seq.segments.push_back({-1, vocab.encode(schema.group(j).question)});
  }
  seq.segments.push_back({-1, vocab.encode("Assistant:")});
  return seq;
}

std::optional<MaskKind> mask_kind_from_name(const std::string& name) {
  if (name == "ground_truth") return MaskKind::GroundTruth;
  if (name == "mask_padding") return MaskKind::MaskPadding;
  if (name == "random_sentence") return MaskKind::RandomSentence;
  return std::nullopt;
}

const char* mask_kind_name(MaskKind k) {
  switch (k) {
    case MaskKind::GroundTruth: return "ground_truth";
    case MaskKind::MaskPadding: return "mask_padding";
    case MaskKind::RandomSentence: return "random_sentence";
  }
  return "?";
}

PreparedTarget prepare_target(const Caption& caption, const MaskStrategy& strategy,
                              const std::vector<Caption>& pool, std::uint64_t seed,
                              const Vocab& vocab) {
  PreparedTarget out;
  out.target = vocab.encode(caption.text);
  switch (strategy.kind) {
    case MaskKind::GroundTruth:
      out.context = out.target;
      break;
    case MaskKind::MaskPadding: {
      if (strategy.mask_rate < 0.0 || strategy.mask_rate > 1.0)
        throw LanguageError("mask_rate must be in [0, 1]");
      out.context = out.target;
      const long t = static_cast<long>(out.context.size());
      const long k = static_cast<long>(std::ceil(strategy.mask_rate * static_cast<double>(t)));
      std::vector<std::size_t> order(out.context.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(seed);
      rng.shuffle(order);
      for (long i = 0; i < k; ++i) out.context[order[i]] = vocab.pad();
      break;
    }
    case MaskKind::RandomSentence: {
      if (pool.empty()) throw LanguageError("random_sentence strategy needs a non-empty caption pool");
      Rng rng(seed);
      const auto& drawn = pool[rng.bounded(pool.size())];
      out.context = vocab.encode(drawn.text);
      break;
    }
  }
  return out;
}

LanguageModel::LanguageModel(ParamStore& store, const ModelConfig& cfg, long vocab_size, Rng& rng)
    : cfg_(cfg), vocab_size_(vocab_size) {
  const long d = cfg_.lm_width;
  // Frozen rows at unit scale so they stay distinguishable next to the
  // positional signal.
  tok_embed_ = &store.create_normal("lm.tok_embed", vocab_size, d, rng, 1.0, /*trainable=*/false);
  cls_embed_ = &store.create_normal("lm.cls_embed", 1, d, rng, 1.0);
  for (int i = 0; i < cfg_.lm_layers; ++i) {
    const bool adapted = layer_adapted(i);
    layers_.push_back(make_self_block(store, "lm.l" + std::to_string(i), d, d * cfg_.lm_ffn_mult,
                                      rng, /*trainable=*/false, adapted ? cfg_.lora_rank : 0,
                                      cfg_.lora_scale));
  }
  final_ln_ = make_layer_norm(store, "lm.final_ln", d, /*trainable=*/false);
  lm_head_ = make_linear(store, "lm.head", d, vocab_size, rng, /*trainable=*/true, 0.0);
  proj_ = make_linear(store, "lm.proj", cfg_.vis_width, d, rng, /*trainable=*/true);
}

Mat LanguageModel::positions(long rows, long offset) const {
  const long d = cfg_.lm_width;
  Mat pe(rows, d);
  for (long r = 0; r < rows; ++r) {
    const double pos = static_cast<double>(offset + r);
    for (long i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
      pe(r, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

Graph::V LanguageModel::fuse(Graph& g, const InstructionSequence& instr, Graph::V fq,
                             long fq_group_stride, const std::vector<int>* context,
                             FusedLayout* layout, bool append_cls) const {
  FusedLayout lay;
  lay.slot_spans.assign(instr.slot_count(), {0, 0});
  std::vector<Graph::V> parts;
  long row = 0;
  for (const auto& seg : instr.segments) {
    if (seg.group >= 0) {
      if (seg.group >= static_cast<int>(lay.slot_spans.size()))
        throw LanguageError("instruction slot group out of range");
      Graph::V rows = g.slice_rows(fq, seg.group * fq_group_stride, cfg_.inject_queries);
      parts.push_back(g.add_rowvec(g.matmul(rows, g.param(*proj_.w)), g.param(*proj_.b)));
      lay.slot_spans[seg.group] = {row, cfg_.inject_queries};
      row += cfg_.inject_queries;
    } else {
      if (seg.tokens.empty()) throw LanguageError("empty text segment in instruction");
      parts.push_back(g.embed(*tok_embed_, seg.tokens));
      row += static_cast<long>(seg.tokens.size());
    }
  }
  lay.cue_last = row - 1;
  lay.context_start = row;
  if (context != nullptr && !context->empty()) {
    parts.push_back(g.embed(*tok_embed_, *context));
    lay.context_len = static_cast<long>(context->size());
    row += lay.context_len;
  }
  if (append_cls) {
    parts.push_back(g.param(*cls_embed_));
    lay.cls_pos = row;
    row += 1;
  }
  lay.total_rows = row;
  Graph::V x = g.concat_rows(parts);
  x = g.add(x, g.input(positions(row)));
  if (layout != nullptr) *layout = lay;
  return x;
}

Graph::V LanguageModel::decode_hidden(Graph& g, Graph::V fused, bool use_adapters,
                                      AttentionProbe* probe) const {
  const Mat mask = causal_mask(g.val(fused).rows());
  Graph::V x = fused;
  for (const auto& layer : layers_)
    x = self_block(g, x, layer, cfg_.lm_heads, &mask, probe, use_adapters);
  return layer_norm(g, x, final_ln_);
}

LanguageModel::TrainOut LanguageModel::decode_train(Graph& g, Graph::V fused,
                                                    const FusedLayout& layout,
                                                    const std::vector<int>& target,
                                                    bool use_adapters, AttentionProbe* probe) const {
  if (layout.context_len <= 0) throw LanguageError("decode_train needs a context span");
  Graph::V hidden = decode_hidden(g, fused, use_adapters, probe);

  TrainOut out;
  out.targets = target;
  out.targets.push_back(1 /*eos*/);
  const long n_pred = std::min(layout.context_len + 1, static_cast<long>(out.targets.size()));
  out.targets.resize(n_pred);
  out.included.assign(n_pred, 1);
  Graph::V pred_rows = g.slice_rows(hidden, layout.cue_last, n_pred);
  out.step_logits = g.add_rowvec(g.matmul(pred_rows, g.param(*lm_head_.w)), g.param(*lm_head_.b));

  const long last_pos = cfg_.llm_cls_source == "cls_token" && layout.cls_pos >= 0
                            ? layout.cls_pos
                            : layout.context_start + layout.context_len - 1;
  out.last_hidden = g.slice_rows(hidden, last_pos, 1);
  return out;
}

// ---- KV-cache inference path ----------------------------------------------

namespace {

Eigen::RowVectorXd plain_layer_norm(const Eigen::RowVectorXd& x, const LayerNormParams& p) {
  const double mean = x.mean();
  const double var = (x.array() - mean).square().mean();
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  return (((x.array() - mean) * inv) * p.gain->value.row(0).array() + p.bias->value.row(0).array())
      .matrix();
}

Eigen::RowVectorXd plain_gelu(const Eigen::RowVectorXd& x) {
  return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440)); });
}

Eigen::RowVectorXd plain_linear(const Eigen::RowVectorXd& x, const LinearParams& p) {
  return x * p.w->value + p.b->value.row(0);
}

Eigen::RowVectorXd plain_lora_linear(const Eigen::RowVectorXd& x, const LinearParams& p,
                                     const LoraParams& lora, bool use_adapter) {
  Eigen::RowVectorXd y = plain_linear(x, p);
  if (use_adapter && lora.down != nullptr)
    y += lora.scale * ((x * lora.down->value) * lora.up->value);
  return y;
}

}  // namespace

// Incremental decoder state: one K/V cache per layer, rows appended as
// positions are processed.
class PlainDecoder {
 public:
  PlainDecoder(const LanguageModel& lm, bool use_adapters, long capacity)
      : lm_(lm), use_adapters_(use_adapters), k_cache_(lm.cfg_.lm_layers), v_cache_(lm.cfg_.lm_layers) {
    for (auto& c : k_cache_) c.resize(capacity, lm.cfg_.lm_width);
    for (auto& c : v_cache_) c.resize(capacity, lm.cfg_.lm_width);
  }

  // Feeds one embedding row (with position already added); returns the
  // post-final-norm hidden state for that position.
  Eigen::RowVectorXd step(const Eigen::RowVectorXd& row) {
    const int heads = lm_.cfg_.lm_heads;
    const long d = lm_.cfg_.lm_width;
    const long dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Eigen::RowVectorXd x = row;
    for (std::size_t li = 0; li < lm_.layers_.size(); ++li) {
      const SelfBlockParams& L = lm_.layers_[li];
      Eigen::RowVectorXd n = plain_layer_norm(x, L.ln_attn);
      Eigen::RowVectorXd q = L.attn.has_lora
                                 ? plain_lora_linear(n, L.attn.q, L.attn.q_lora, use_adapters_)
                                 : plain_linear(n, L.attn.q);
      Eigen::RowVectorXd k = plain_linear(n, L.attn.k);
      Eigen::RowVectorXd v = L.attn.has_lora
                                 ? plain_lora_linear(n, L.attn.v, L.attn.v_lora, use_adapters_)
                                 : plain_linear(n, L.attn.v);
      if (li == 0) ++filled_;
      if (filled_ > k_cache_[li].rows()) throw LanguageError("decoder cache capacity exceeded");
      k_cache_[li].row(filled_ - 1) = k;
      v_cache_[li].row(filled_ - 1) = v;
      Eigen::RowVectorXd ctx(d);
      for (int h = 0; h < heads; ++h) {
        auto K = k_cache_[li].topRows(filled_).middleCols(h * dh, dh);
        auto V = v_cache_[li].topRows(filled_).middleCols(h * dh, dh);
        Eigen::RowVectorXd scores = inv_sqrt * (q.segment(h * dh, dh) * K.transpose());
        double mx = scores.maxCoeff();
        Eigen::RowVectorXd e = (scores.array() - mx).exp();
        e /= e.sum();
        ctx.segment(h * dh, dh) = e * V;
      }
      x += plain_linear(ctx, L.attn.o);
      Eigen::RowVectorXd m = plain_layer_norm(x, L.ln_ffn);
      x += plain_linear(plain_gelu(plain_linear(m, L.ffn.fc1)), L.ffn.fc2);
    }
    return plain_layer_norm(x, lm_.final_ln_);
  }

 private:
  const LanguageModel& lm_;
  bool use_adapters_;
  long filled_ = 0;
  std::vector<Mat> k_cache_;
  std::vector<Mat> v_cache_;
};

GenerationResult LanguageModel::generate(const Mat& prefix_rows, long max_len,
                                         const std::vector<int>* forced, bool use_adapters,
                                         bool append_cls) const {
  if (prefix_rows.rows() < 1) throw LanguageError("generate needs a non-empty prefix");
  const long steps = forced != nullptr ? static_cast<long>(forced->size()) : max_len;
  PlainDecoder dec(*this, use_adapters, prefix_rows.rows() + steps + 2);
  Eigen::RowVectorXd hidden;
  for (long r = 0; r < prefix_rows.rows(); ++r) hidden = dec.step(prefix_rows.row(r));

  GenerationResult out;
  long pos = prefix_rows.rows();
  out.step_logits.resize(steps, vocab_size_);
  long emitted = 0;
  for (long t = 0; t < steps; ++t) {
    Eigen::RowVectorXd logits = plain_linear(hidden, lm_head_);
    out.step_logits.row(emitted++) = logits;
    int tok;
    if (forced != nullptr) {
      tok = (*forced)[t];
    } else {
      long arg = 0;
      logits.maxCoeff(&arg);
      tok = static_cast<int>(arg);
      if (tok == 1 /*eos*/) {
        out.stopped_eos = true;
        break;
      }
    }
    out.tokens.push_back(tok);
    Eigen::RowVectorXd row = tok_embed_->value.row(tok) + positions(1, pos).row(0);
    hidden = dec.step(row);
    ++pos;
  }
  out.step_logits.conservativeResize(emitted, vocab_size_);
  if (forced == nullptr && !out.stopped_eos) out.hit_max_len = true;
  if (append_cls) {
    Eigen::RowVectorXd row = cls_embed_->value.row(0) + positions(1, pos).row(0);
    hidden = dec.step(row);
  }
  out.last_hidden = hidden;
  return out;
}

}  // namespace parlm
