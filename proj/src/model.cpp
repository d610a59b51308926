#include "parlm/model.hpp"

namespace parlm {

namespace {
Rng model_rng(const TrainConfig& cfg) { return Rng(cfg.optim.seed ^ 0xA11CE5ULL); }
}  // namespace

ParModel::ParModel(const TrainConfig& cfg, const AttributeSchema& schema)
    : cfg_(cfg),
      schema_(schema),
      vocab_(Vocab::build(schema)),
      store_(),
      vision_([&]() -> VisionModel {
        Rng rng = model_rng(cfg_);
        return VisionModel(store_, cfg_.model, schema_.group_count(), rng);
      }()),
      language_([&]() -> LanguageModel {
        Rng rng = model_rng(cfg_).derive(1);
        return LanguageModel(store_, cfg_.model, vocab_.size(), rng);
      }()),
      heads_([&]() -> Heads {
        Rng rng = model_rng(cfg_).derive(2);
        return Heads(store_, cfg_.model, schema_, rng);
      }()),
      instruction_(build_instruction(schema_, vocab_)) {
  cfg_.validate();
}

ParModel::BatchGraph ParModel::build_train_graph(Graph& g, const std::vector<BatchItem>& batch,
                                                 const WceWeights& weights) const {
  if (batch.empty()) throw HeadsError("empty batch");
  const int m = schema_.attribute_count();
  const bool use_cls = cfg_.model.llm_cls_source == "cls_token";

  std::vector<Graph::V> attr_rows, in_rows, llm_rows, cap_losses;
  Mat targets(static_cast<long>(batch.size()), m);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const BatchItem& item = batch[b];
    for (int j = 0; j < m; ++j) targets(static_cast<long>(b), j) = item.labels[j];

    VisionModel::Forward vis = vision_.forward(g, item.image);
    attr_rows.push_back(heads_.attr_logits(g, vis.group_embed));
    in_rows.push_back(heads_.instance_logits(g, vis.fv_mean));

    FusedLayout layout;
    Graph::V fused = language_.fuse(g, instruction_, vis.fq, cfg_.model.queries, &item.prep.context,
                                    &layout, use_cls);
    LanguageModel::TrainOut dec = language_.decode_train(g, fused, layout, item.prep.target);
    llm_rows.push_back(heads_.llm_logits(g, dec.last_hidden));
    cap_losses.push_back(g.softmax_xent_rows(dec.step_logits, dec.targets, dec.included));
  }

  BatchGraph out;
  out.attr_logits = g.concat_rows(attr_rows);
  out.in_logits = g.concat_rows(in_rows);
  out.llm_logits = g.concat_rows(llm_rows);

  Mat w = wce_weight_matrix(targets, weights);
  out.wce_attr = g.weighted_bce_with_logits(out.attr_logits, targets, w);
  out.wce_in = g.weighted_bce_with_logits(out.in_logits, targets, w);
  out.wce_llm = g.weighted_bce_with_logits(out.llm_logits, targets, w);

  Graph::V cap_sum = cap_losses[0];
  for (std::size_t i = 1; i < cap_losses.size(); ++i) cap_sum = g.add(cap_sum, cap_losses[i]);
  out.caption = g.scale(cap_sum, 1.0 / static_cast<double>(cap_losses.size()));

  out.loss = g.add(g.add(out.wce_attr, out.wce_in), g.add(out.wce_llm, out.caption));
  return out;
}

ParModel::Prediction ParModel::predict(const Image& image) const {
  const bool use_cls = cfg_.model.llm_cls_source == "cls_token";
  Graph g;
  VisionModel::Forward vis = vision_.forward(g, image);
  Graph::V attr = heads_.attr_logits(g, vis.group_embed);
  Graph::V inst = heads_.instance_logits(g, vis.fv_mean);
  Graph::V fused = language_.fuse(g, instruction_, vis.fq, cfg_.model.queries, nullptr, nullptr,
                                  /*append_cls=*/false);

  Prediction out;
  out.generation = language_.generate(g.val(fused), cfg_.model.max_caption_len, nullptr,
                                      /*use_adapters=*/true, use_cls);
  out.caption = vocab_.decode(out.generation.tokens);
  out.p_attr = sigmoid(g.val(attr)).row(0);
  out.p_in = sigmoid(g.val(inst)).row(0);
  Eigen::RowVectorXd llm_logits = heads_.llm_logits_plain(out.generation.last_hidden);
  out.p_llm = llm_logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
  return out;
}

}  // namespace parlm
