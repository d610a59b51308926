#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "parlm/caption.hpp"
#include "parlm/config.hpp"
#include "parlm/nn.hpp"
#include "parlm/schema.hpp"

namespace parlm {

class LanguageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Closed vocabulary over the instruction template and the caption grammar.
// Tokenization is lowercase whitespace splitting with punctuation broken out.
class Vocab {
 public:
  static Vocab build(const AttributeSchema& schema);

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad() const { return 0; }
  int eos() const { return 1; }
  int cls() const { return 2; }
  int id(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(id); }

  std::vector<int> encode(const std::string& text) const;  // throws on unknown words
  std::string decode(const std::vector<int>& ids) const;   // skips special tokens

  static std::vector<std::string> word_split(const std::string& text);

  std::string serialize() const;
  static Vocab parse(const std::string& text);

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Instruction template: preamble, then per attribute group an image slot
// followed by that group's question, closed by the assistant cue.
struct InstructionSequence {
  struct Segment {
    int group = -1;  // >= 0: image slot for that group; -1: text tokens
    std::vector<int> tokens;
  };
  std::vector<Segment> segments;

  int slot_count() const;
  int text_token_count() const;
};

InstructionSequence build_instruction(const AttributeSchema& schema, const Vocab& vocab);

enum class MaskKind { GroundTruth, MaskPadding, RandomSentence };
std::optional<MaskKind> mask_kind_from_name(const std::string& name);
const char* mask_kind_name(MaskKind k);

struct MaskStrategy {
  MaskKind kind = MaskKind::RandomSentence;
  double mask_rate = 0.5;  // MaskPadding only
};

// Context tokens fed to the decoder during teacher forcing plus the true
// target tokens the loss is computed against.
//  - GroundTruth: context = caption verbatim
//  - MaskPadding: ceil(rate * T) seeded positions replaced by the pad token
//  - RandomSentence: context = a seeded draw from the pool; target unchanged
struct PreparedTarget {
  std::vector<int> context;
  std::vector<int> target;
};

PreparedTarget prepare_target(const Caption& caption, const MaskStrategy& strategy,
                              const std::vector<Caption>& pool, std::uint64_t seed,
                              const Vocab& vocab);

// Row layout of a fused instruction sequence.
struct FusedLayout {
  long total_rows = 0;
  std::vector<std::pair<long, long>> slot_spans;  // per group: (start row, rows)
  long cue_last = -1;                             // final instruction text row
  long context_start = -1;
  long context_len = 0;
  long cls_pos = -1;
};

struct GenerationResult {
  std::vector<int> tokens;
  bool stopped_eos = false;
  bool hit_max_len = false;
  Eigen::RowVectorXd last_hidden;
  Mat step_logits;  // one row per generated step
};

// Decoder-only language stand-in: frozen token embeddings and base weights,
// low-rank adapters on the Q/V projections of the last adapted_decoder_layers
// layers, trainable LM head, and a trainable projection that lifts query
// features into the decoder width.
class LanguageModel {
 public:
  LanguageModel(ParamStore& store, const ModelConfig& cfg, long vocab_size, Rng& rng);

  // Splices each group's first L_q projected query rows at its slot, embeds
  // text tokens, optionally appends a context span (training) and the CLS
  // row, then adds sinusoidal positions.
  Graph::V fuse(Graph& g, const InstructionSequence& instr, Graph::V fq, long fq_group_stride,
                const std::vector<int>* context, FusedLayout* layout, bool append_cls = false) const;

  // Full causal stack plus final layer norm.
  Graph::V decode_hidden(Graph& g, Graph::V fused, bool use_adapters = true,
                         AttentionProbe* probe = nullptr) const;

  struct TrainOut {
    Graph::V step_logits = -1;  // n_pred x vocab, aligned with `targets`
    std::vector<int> targets;
    std::vector<std::uint8_t> included;
    Graph::V last_hidden = -1;  // 1 x lm_width
  };
  // Teacher-forced scoring of the context span against the target tokens
  // (shifted next-token alignment; the position after the final target
  // predicts EOS).
  TrainOut decode_train(Graph& g, Graph::V fused, const FusedLayout& layout,
                        const std::vector<int>& target, bool use_adapters = true,
                        AttentionProbe* probe = nullptr) const;

  // Greedy autoregressive decoding with a per-layer KV cache, starting from
  // the fused instruction rows (which must already include positions).
  // `forced` overrides token selection (used to score a fixed continuation).
  GenerationResult generate(const Mat& prefix_rows, long max_len,
                            const std::vector<int>* forced = nullptr, bool use_adapters = true,
                            bool append_cls = false) const;

  Mat positions(long rows, long offset = 0) const;
  long width() const { return cfg_.lm_width; }
  long vocab_size() const { return vocab_size_; }

 private:
  ModelConfig cfg_;
  long vocab_size_;

  Param* tok_embed_ = nullptr;
  Param* cls_embed_ = nullptr;
  std::vector<SelfBlockParams> layers_;
  LayerNormParams final_ln_;
  LinearParams lm_head_;
  LinearParams proj_;
  Mat pe_;

  bool layer_adapted(int i) const {
    return i >= cfg_.lm_layers - cfg_.adapted_decoder_layers;
  }

  friend class PlainDecoder;
};

}  // namespace parlm
