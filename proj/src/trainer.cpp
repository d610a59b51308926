#include "parlm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "parlm/evaluator.hpp"

namespace parlm {

Trainer::Trainer(ParModel& model, std::ostream* log) : model_(model), log_(log) {}

TrainStats Trainer::run(const Dataset& train_records, const std::filesystem::path& images_root,
                        const std::filesystem::path& run_dir, const Dataset* val_records) {
  const TrainConfig& cfg = model_.config();
  const auto& schema = model_.schema();
  if (train_records.empty()) throw DatasetError("no training records");
  std::filesystem::create_directories(run_dir);
  cfg.save(run_dir / "config.json");

  // Pixel cache plus per-record captions; the caption pool for the
  // random-sentence strategy is the whole training set.
  std::vector<Image> images;
  std::vector<Caption> captions;
  images.reserve(train_records.size());
  captions.reserve(train_records.size());
  for (const auto& rec : train_records) {
    images.push_back(load_pixels(rec, images_root, cfg.model.image_h, cfg.model.image_w));
    captions.push_back(build_caption(rec.labels, schema));
  }

  TrainStats stats;
  std::vector<LabelVector> labels;
  for (const auto& rec : train_records) labels.push_back(rec.labels);
  stats.wce = compute_wce_weights(labels, schema.attribute_count());

  MaskStrategy strategy;
  strategy.kind = *mask_kind_from_name(cfg.strategy.mask);
  strategy.mask_rate = cfg.strategy.mask_rate;

  AdamW opt;
  opt.weight_decay = cfg.optim.weight_decay;

  const long n = static_cast<long>(train_records.size());
  const long batch = cfg.optim.batch_size;
  const long steps_per_epoch = (n + batch - 1) / batch;
  const long max_steps =
      cfg.optim.max_steps > 0 ? cfg.optim.max_steps : steps_per_epoch * cfg.optim.epochs;

  Rng shuffle_rng(cfg.optim.seed ^ 0x5EEDBA7C4ULL);
  Rng prep_master(cfg.optim.seed ^ 0x7A26E7ULL);

  auto save_ckpt = [&](long step, const std::filesystem::path& path) {
    std::vector<std::pair<std::string, Mat>> aux;
    aux.emplace_back("stats.wce_positive_ratio", Mat(stats.wce.positive_ratio));
    Checkpoint::from_store(model_.store(), cfg, step, stats.history, std::move(aux)).save(path);
  };

  long step = 0;
  std::vector<std::size_t> order(train_records.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; step < max_steps; ++epoch) {
    shuffle_rng.derive(static_cast<std::uint64_t>(epoch)).shuffle(order);
    for (long b0 = 0; b0 < n && step < max_steps; b0 += batch) {
      Rng prep_rng = prep_master.derive(static_cast<std::uint64_t>(step));
      std::vector<ParModel::BatchItem> items;
      for (long k = b0; k < std::min(b0 + batch, n); ++k) {
        std::size_t idx = order[k];
        ParModel::BatchItem item;
        item.image = images[idx];
        item.labels = train_records[idx].labels;
        item.prep = prepare_target(captions[idx], strategy, captions, prep_rng.next(), model_.vocab());
        items.push_back(std::move(item));
      }

      Graph g;
      ParModel::BatchGraph bg = model_.build_train_graph(g, items, stats.wce);
      const double loss = g.val(bg.loss)(0, 0);
      if (!std::isfinite(loss))
        throw TrainDivergence(step, "non-finite loss at step " + std::to_string(step));
      model_.store().zero_grads();
      g.backward(bg.loss);
      g.flush_param_grads();
      opt.lr = cfg.optim.warmup_steps > 0
                   ? cfg.optim.lr * std::min(1.0, static_cast<double>(step + 1) / cfg.optim.warmup_steps)
                   : cfg.optim.lr;
      opt.step(model_.store());
      ++step;
      stats.final_loss = loss;

      if (step % cfg.optim.log_every == 0 || step == max_steps) {
        stats.history.push_back({step, "train_loss", loss});
        if (log_) {
          (*log_) << "step " << step << "/" << max_steps << "  loss " << loss << "  (wce_attr "
                  << g.val(bg.wce_attr)(0, 0) << ", wce_in " << g.val(bg.wce_in)(0, 0)
                  << ", wce_llm " << g.val(bg.wce_llm)(0, 0) << ", caption "
                  << g.val(bg.caption)(0, 0) << ")\n";
        }
      }
      if (cfg.optim.checkpoint_every > 0 && step % cfg.optim.checkpoint_every == 0)
        save_ckpt(step, run_dir / ("checkpoint-" + std::to_string(step) + ".ckpt"));
    }
    if (val_records != nullptr && !val_records->empty() && step < max_steps) {
      EvalOutput ev = evaluate_model(model_, *val_records, images_root,
                                     *aggregation_from_name(cfg.strategy.aggregation));
      stats.history.push_back({step, "val_mA", ev.report.mA});
      stats.history.push_back({step, "val_f1", ev.report.f1});
      if (log_) (*log_) << "epoch " << epoch << "  val mA " << ev.report.mA << "  F1 " << ev.report.f1 << "\n";
    }
  }
  stats.steps = step;
  save_ckpt(step, run_dir / "checkpoint.ckpt");
  return stats;
}

}  // namespace parlm
