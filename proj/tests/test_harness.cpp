#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "parlm/evaluator.hpp"
#include "parlm/plots.hpp"
#include "parlm/trainer.hpp"

using namespace parlm;

namespace {

const AttributeSchema& schema() { return AttributeSchema::msp60k(); }

TrainConfig micro_config() {
  TrainConfig cfg = TrainConfig::desk_preset();
  cfg.model.image_h = 32;
  cfg.model.image_w = 16;
  cfg.model.vis_width = 8;
  cfg.model.vis_layers = 1;
  cfg.model.vis_heads = 2;
  cfg.model.vis_ffn_mult = 2;
  cfg.model.queries = 2;
  cfg.model.inject_queries = 2;
  cfg.model.agfa_layers = 1;
  cfg.model.qformer_layers = 1;
  cfg.model.lm_width = 16;
  cfg.model.lm_layers = 2;
  cfg.model.lm_heads = 2;
  cfg.model.lm_ffn_mult = 2;
  cfg.model.adapted_decoder_layers = 1;
  cfg.model.lora_rank = 2;
  cfg.model.cbam_window = 3;
  cfg.model.max_caption_len = 90;
  cfg.optim.batch_size = 2;
  cfg.optim.max_steps = 4;
  cfg.optim.lr = 1e-3;
  cfg.optim.log_every = 1;
  return cfg;
}

std::filesystem::path temp_dir(const std::string& leaf) {
  auto dir = std::filesystem::temp_directory_path() / "parlm_harness" / leaf;
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("paper preset echoes the published optimizer settings") {
  TrainConfig cfg = TrainConfig::paper_preset();
  CHECK(cfg.optim.lr == doctest::Approx(2e-5));
  CHECK(cfg.optim.weight_decay == doctest::Approx(1e-4));
  CHECK(cfg.optim.epochs == 60);
  CHECK(cfg.optim.batch_size == 4);
  CHECK(cfg.model.lora_rank == 32);
  CHECK(cfg.model.queries == 128);
  CHECK(cfg.model.agfa_layers == 3);
  CHECK(cfg.model.adapted_decoder_layers == 3);
}

TEST_CASE("desk preset validates and keeps the documented shape") {
  TrainConfig cfg = TrainConfig::desk_preset();
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.model.image_h == 128);
  CHECK(cfg.model.image_w == 64);
  CHECK(cfg.model.vis_width == 64);
  CHECK(cfg.model.lm_width == 128);
  CHECK(cfg.model.queries == 16);
  CHECK(cfg.model.inject_queries == 16);
  CHECK(cfg.model.agfa_layers == 3);
  CHECK(cfg.model.lora_rank == 4);
}

TEST_CASE("config json round trip") {
  TrainConfig cfg = micro_config();
  cfg.strategy.mask = "mask_padding";
  cfg.strategy.mask_rate = 0.25;
  cfg.data.manifest = "some/manifest.tsv";
  TrainConfig back = TrainConfig::from_json(cfg.to_json());
  CHECK(back.model.vis_width == cfg.model.vis_width);
  CHECK(back.optim.max_steps == cfg.optim.max_steps);
  CHECK(back.strategy.mask == "mask_padding");
  CHECK(back.strategy.mask_rate == doctest::Approx(0.25));
  CHECK(back.data.manifest == "some/manifest.tsv");

  CHECK_THROWS_AS(TrainConfig::from_json("{not json"), ConfigError);
  TrainConfig bad = cfg;
  bad.strategy.aggregation = "median";
  CHECK_THROWS_AS(TrainConfig::from_json(bad.to_json()), ConfigError);
}

TEST_CASE("zero training steps leaves the checkpoint at initialization") {
  TrainConfig cfg = micro_config();
  cfg.optim.max_steps = 0;
  cfg.optim.epochs = 0;
  ParModel model(cfg, schema());
  std::vector<Mat> before;
  for (const Param* p : model.store().all()) before.push_back(p->value);

  Dataset ds = synth_generate(4, schema(), 3);
  Trainer trainer(model);
  auto run_dir = temp_dir("zero_steps");
  TrainStats stats = trainer.run(ds, ".", run_dir);
  CHECK(stats.steps == 0);

  const auto& all = model.store().all();
  for (std::size_t i = 0; i < all.size(); ++i)
    CHECK((all[i]->value - before[i]).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::filesystem::exists(run_dir / "checkpoint.ckpt"));
  CHECK(std::filesystem::exists(run_dir / "config.json"));
}

TEST_CASE("checkpoint save/load round-trips parameters bit-exactly") {
  TrainConfig cfg = micro_config();
  ParModel model(cfg, schema());
  Dataset ds = synth_generate(4, schema(), 5);
  Trainer trainer(model);
  trainer.run(ds, ".", temp_dir("ckpt_src"));

  auto path = temp_dir("ckpt") / "model.ckpt";
  Checkpoint::from_store(model.store(), cfg, 4).save(path);
  Checkpoint loaded = Checkpoint::load(path);
  CHECK(loaded.step == 4);
  CHECK(loaded.config.model.vis_width == cfg.model.vis_width);

  ParModel fresh(cfg, schema());
  loaded.apply_to(fresh.store());
  for (const Param* p : model.store().all()) {
    const Param& q = fresh.store().get(p->name);
    CHECK((p->value - q.value).cwiseAbs().maxCoeff() == 0.0);
  }

  // Forward outputs reproduce exactly through the round trip.
  Image img = load_pixels(ds[0], ".", cfg.model.image_h, cfg.model.image_w);
  auto a = model.predict(img);
  auto b = fresh.predict(img);
  CHECK((a.p_attr - b.p_attr).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.p_in - b.p_in).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.p_llm - b.p_llm).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.caption == b.caption);
}

TEST_CASE("identical config and seed reproduce the loss trajectory") {
  TrainConfig cfg = micro_config();
  Dataset ds = synth_generate(6, schema(), 7);

  auto run = [&]() {
    ParModel model(cfg, schema());
    Trainer trainer(model);
    return trainer.run(ds, ".", temp_dir("repro"));
  };
  TrainStats a = run();
  TrainStats b = run();
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].key == b.history[i].key);
    CHECK(std::abs(a.history[i].value - b.history[i].value) < 1e-6);
  }
}

TEST_CASE("training runs under every mask strategy and cls source") {
  for (const char* mask : {"ground_truth", "mask_padding", "random_sentence"}) {
    TrainConfig cfg = micro_config();
    cfg.optim.max_steps = 2;
    cfg.strategy.mask = mask;
    ParModel model(cfg, schema());
    Dataset ds = synth_generate(4, schema(), 11);
    Trainer trainer(model);
    TrainStats stats = trainer.run(ds, ".", temp_dir(std::string("mask_") + mask));
    CHECK(stats.steps == 2);
    CHECK(std::isfinite(stats.final_loss));
  }
  TrainConfig cfg = micro_config();
  cfg.optim.max_steps = 2;
  cfg.model.llm_cls_source = "cls_token";
  ParModel model(cfg, schema());
  Dataset ds = synth_generate(4, schema(), 11);
  Trainer trainer(model);
  CHECK(trainer.run(ds, ".", temp_dir("cls_token")).steps == 2);
}

TEST_CASE("evaluation is deterministic and aggregation only changes the fusion") {
  TrainConfig cfg = micro_config();
  ParModel model(cfg, schema());
  Dataset ds = synth_generate(6, schema(), 13);

  EvalOutput mean1 = evaluate_model(model, ds, ".", Aggregation::Mean);
  EvalOutput mean2 = evaluate_model(model, ds, ".", Aggregation::Mean);
  CHECK((mean1.p_final - mean2.p_final).cwiseAbs().maxCoeff() == 0.0);
  CHECK(mean1.report.mA == mean2.report.mA);
  CHECK(mean1.captions == mean2.captions);

  EvalOutput mx = evaluate_model(model, ds, ".", Aggregation::Max);
  CHECK((mean1.p_attr - mx.p_attr).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mean1.p_in - mx.p_in).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mean1.p_llm - mx.p_llm).cwiseAbs().maxCoeff() == 0.0);
  CHECK((mx.p_final - aggregate(mean1.p_attr, mean1.p_in, mean1.p_llm, Aggregation::Max))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  // Prediction export and captions files.
  auto dir = temp_dir("eval");
  write_predictions(dir / "predictions.tsv", mean1);
  write_captions(dir / "captions.tsv", mean1);
  CHECK(std::filesystem::file_size(dir / "predictions.tsv") > 0);
  CHECK(std::filesystem::file_size(dir / "captions.tsv") > 0);
}

TEST_CASE("per-scene breakdown appears when scenes are mixed") {
  TrainConfig cfg = micro_config();
  ParModel model(cfg, schema());
  Dataset ds = synth_generate(8, schema(), 17);
  EvalOutput out = evaluate_model(model, ds, ".", Aggregation::Mean);
  CHECK(out.per_scene.size() == 8);
}

TEST_CASE("stats writer emits tables and figures, rejects empty datasets") {
  auto dir = temp_dir("stats");
  Dataset ds = synth_generate(20, schema(), 23);
  write_stats(ds, schema(), dir);
  CHECK(std::filesystem::exists(dir / "attribute_distribution.txt"));
  CHECK(std::filesystem::exists(dir / "attribute_distribution.ppm"));
  CHECK(std::filesystem::exists(dir / "cooccurrence.txt"));
  CHECK(std::filesystem::exists(dir / "cooccurrence.ppm"));
  CHECK(std::filesystem::exists(dir / "scene_distribution.txt"));

  // The chart data equals the dataset distribution.
  auto counts = attribute_distribution(ds);
  std::ifstream f(dir / "attribute_distribution.txt");
  std::string line;
  std::getline(f, line);  // header
  for (std::size_t i = 0; i < counts.size(); ++i) {
    REQUIRE(std::getline(f, line));
    auto tab = line.rfind('\t');
    CHECK(std::stol(line.substr(tab + 1)) == counts[i]);
  }

  CHECK_THROWS_AS(write_stats({}, schema(), dir), DatasetError);

  Dataset one = synth_generate(1, schema(), 29);
  write_stats(one, schema(), temp_dir("stats_one"));
}

TEST_CASE("divergence reporting carries the failing step") {
  TrainDivergence err(17, "non-finite loss at step 17");
  CHECK(err.step == 17);
  CHECK(std::string(err.what()).find("17") != std::string::npos);
}
