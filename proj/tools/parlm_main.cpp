#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "parlm/evaluator.hpp"
#include "parlm/plots.hpp"
#include "parlm/trainer.hpp"

namespace fs = std::filesystem;
using namespace parlm;

namespace {

std::vector<Scene> parse_scene_list(const std::string& csv) {
  std::vector<Scene> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(' ');
    auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) continue;
    std::string name = item.substr(b, e - b + 1);
    auto scene = scene_from_name(name);
    if (!scene) throw DatasetError("unknown scene '" + name + "'");
    out.push_back(*scene);
  }
  return out;
}

fs::path default_run_dir(std::uint64_t seed) {
  const char* root = std::getenv("PARLM_RUN_ROOT");
  fs::path base = root != nullptr ? fs::path(root) : fs::path("runs");
  return base / ("run-seed" + std::to_string(seed));
}

struct ResolvedData {
  AttributeSchema schema;
  Dataset dataset;
  fs::path images_root;
};

ResolvedData resolve_data(const DataConfig& data) {
  ResolvedData out{AttributeSchema::resolve(data.schema), {}, {}};
  if (data.manifest.empty()) throw DatasetError("config has no data.manifest");
  out.dataset = ingest_manifest(data.manifest, out.schema);
  out.images_root = data.images_root.empty() ? fs::path(data.manifest).parent_path()
                                             : fs::path(data.images_root);
  if (!data.splits.empty()) apply_split_sidecar(data.splits, out.dataset);
  if (!data.degradations.empty()) apply_degradation_sidecar(data.degradations, out.dataset);
  return out;
}

Dataset filter_split(const Dataset& ds, Split split) {
  Dataset out;
  for (const auto& r : ds)
    if (r.split == split) out.push_back(r);
  return out;
}

void check_schema_compatible(const ParModel& model, const AttributeSchema& data_schema) {
  if (!(model.schema() == data_schema))
    throw SchemaError("checkpoint schema does not match the dataset schema");
}

int cmd_prepare(const std::string& out_dir, int count, std::uint64_t seed, int height, int width,
                const std::string& schema_src) {
  AttributeSchema schema = AttributeSchema::resolve(schema_src);
  Dataset ds = synth_generate(count, schema, seed);
  fs::create_directories(out_dir);
  materialize(ds, fs::path(out_dir) / "images", height, width);
  for (auto& rec : ds) rec.image_ref = "images/" + rec.image_ref;
  write_manifest(fs::path(out_dir) / "manifest.tsv", ds);
  std::ofstream(fs::path(out_dir) / "schema.txt") << schema.serialize();
  std::cout << "wrote " << count << " samples under " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, std::string run_dir) {
  TrainConfig cfg = TrainConfig::load(config_path);
  ResolvedData data = resolve_data(cfg.data);
  Dataset train = filter_split(data.dataset, Split::Train);
  if (train.empty()) {
    // Unassigned manifests train on everything (desk-scale overfit runs).
    train = filter_split(data.dataset, Split::Unassigned);
  }
  Dataset val = filter_split(data.dataset, Split::Val);
  if (run_dir.empty()) run_dir = default_run_dir(cfg.optim.seed).string();

  ParModel model(cfg, data.schema);
  std::cout << "training on " << train.size() << " records ("
            << model.store().total_parameters() << " parameters)\n";
  Trainer trainer(model, &std::cout);
  TrainStats stats = trainer.run(train, data.images_root, run_dir, val.empty() ? nullptr : &val);
  std::cout << "finished " << stats.steps << " steps, final loss " << stats.final_loss << "\n"
            << "checkpoint: " << (fs::path(run_dir) / "checkpoint.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split_name,
             const std::string& aggregation, const std::string& asa_path, std::string out_dir,
             const std::string& manifest_override) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  if (!manifest_override.empty()) ck.config.data.manifest = manifest_override;
  ResolvedData data = resolve_data(ck.config.data);
  ParModel model(ck.config, data.schema);
  ck.apply_to(model.store());
  check_schema_compatible(model, data.schema);

  auto split = split_from_name(split_name);
  if (!split) throw DatasetError("unknown split '" + split_name + "'");
  Dataset records = filter_split(data.dataset, *split);
  if (records.empty() && *split == Split::Train)
    records = filter_split(data.dataset, Split::Unassigned);
  if (records.empty()) throw DatasetError("no records in split '" + split_name + "'");

  auto strategy = aggregation_from_name(aggregation);
  if (!strategy) throw HeadsError("unknown aggregation '" + aggregation + "'");
  AsaWeights asa;
  bool have_asa = false;
  if (!asa_path.empty()) {
    std::ifstream in(asa_path);
    if (!in) throw HeadsError("cannot open asa weights: " + asa_path);
    std::stringstream ss;
    ss << in.rdbuf();
    asa = AsaWeights::from_json(ss.str());
    have_asa = true;
  } else if (const Mat* aux = ck.find_aux("stats.asa_weights"); aux != nullptr) {
    asa.weights = *aux;
    have_asa = true;
  }

  EvalOutput out = evaluate_model(model, records, data.images_root, *strategy,
                                  have_asa ? &asa : nullptr);
  std::cout << format_report(out.report);
  for (const auto& [scene, rep] : out.per_scene)
    std::cout << "scene " << scene << ": mA " << rep.mA << "  F1 " << rep.f1 << "\n";

  if (out_dir.empty()) out_dir = (fs::path(ckpt_path).parent_path() / ("eval-" + split_name)).string();
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "metrics.txt") << format_report(out.report);
  std::ofstream(fs::path(out_dir) / "metrics.kv") << format_report_kv(out.report);
  write_predictions(fs::path(out_dir) / "predictions.tsv", out);
  write_captions(fs::path(out_dir) / "captions.tsv", out);
  std::cout << "outputs under " << out_dir << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& image_path, bool as_json) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  AttributeSchema schema = AttributeSchema::resolve(ck.config.data.schema);
  ParModel model(ck.config, schema);
  ck.apply_to(model.store());

  Image img = read_ppm(image_path);
  img = resize_bilinear(img, ck.config.model.image_h, ck.config.model.image_w);
  auto pred = model.predict(img);
  Mat fin = aggregate(Mat(pred.p_attr), Mat(pred.p_in), Mat(pred.p_llm), Aggregation::Mean);

  if (as_json) {
    std::cout << "{\"caption\": \"" << pred.caption << "\", \"attributes\": [";
    bool first = true;
    for (int i = 0; i < schema.attribute_count(); ++i) {
      if (fin(0, i) <= 0.5) continue;
      if (!first) std::cout << ", ";
      std::cout << "\"" << schema.attribute(i) << "\"";
      first = false;
    }
    std::cout << "]}\n";
    return 0;
  }
  for (const auto& g : schema.groups()) {
    std::string line;
    for (int i : g.members)
      if (fin(0, i) > 0.5) line += (line.empty() ? "" : ", ") + schema.attribute(i);
    std::cout << g.name << ": " << (line.empty() ? "-" : line) << "\n";
  }
  std::cout << "caption: " << pred.caption << "\n";
  return 0;
}

int cmd_fit_asa(const std::string& ckpt_path, const std::string& split_name,
                const std::string& out_path) {
  Checkpoint ck = Checkpoint::load(ckpt_path);
  ResolvedData data = resolve_data(ck.config.data);
  ParModel model(ck.config, data.schema);
  ck.apply_to(model.store());

  auto split = split_from_name(split_name);
  if (!split) throw DatasetError("unknown split '" + split_name + "'");
  Dataset records = filter_split(data.dataset, *split);
  if (records.empty() && *split == Split::Train)
    records = filter_split(data.dataset, Split::Unassigned);
  if (records.empty()) throw DatasetError("no records in split '" + split_name + "'");

  EvalOutput out = evaluate_model(model, records, data.images_root, Aggregation::Mean);
  Mat labels(out.labels.rows, out.labels.cols);
  for (long i = 0; i < out.labels.rows; ++i)
    for (long j = 0; j < out.labels.cols; ++j) labels(i, j) = out.labels.at(i, j);
  AsaWeights asa = fit_asa_weights(out.p_attr, out.p_in, out.p_llm, labels);
  std::ofstream(out_path) << asa.to_json();
  std::cout << "asa weights written to " << out_path
            << (asa.degenerate ? " (degenerate branches, uniform weights)" : "") << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pedestrian attribute recognition toolkit: multi-label visual branch with a "
               "language-model auxiliary branch, plus the benchmark dataset tooling"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Generate a synthetic desk-scale dataset");
  std::string prep_out = "data/synth";
  int prep_count = 64;
  std::uint64_t prep_seed = 7;
  int prep_h = 128, prep_w = 64;
  std::string prep_schema = "msp60k";
  prepare->add_option("--out", prep_out, "Output directory");
  prepare->add_option("--count", prep_count, "Number of samples");
  prepare->add_option("--seed", prep_seed, "Generator seed");
  prepare->add_option("--height", prep_h, "Image height");
  prepare->add_option("--width", prep_w, "Image width");
  prepare->add_option("--schema", prep_schema, "Schema name or file");

  // split
  auto* split = app.add_subcommand("split", "Assign train/val/test splits");
  split->require_subcommand(1);
  std::string sp_manifest, sp_out = "splits.tsv", sp_schema = "msp60k";
  long sp_train = 0, sp_val = 0, sp_test = 0;
  std::uint64_t sp_seed = 7;
  auto* sp_random = split->add_subcommand("random", "Seeded random split with exact counts");
  sp_random->add_option("--manifest", sp_manifest)->required();
  sp_random->add_option("--schema", sp_schema);
  sp_random->add_option("--train", sp_train)->required();
  sp_random->add_option("--val", sp_val)->required();
  sp_random->add_option("--test", sp_test)->required();
  sp_random->add_option("--seed", sp_seed);
  sp_random->add_option("--out", sp_out);

  std::string sc_manifest, sc_out = "splits.tsv", sc_schema = "msp60k";
  std::string sc_train = "Construction Site, Market, Kitchens, School, Ski Resort";
  std::string sc_test = "Outdoors1, Outdoors2, Outdoors3";
  auto* sp_scene = split->add_subcommand("scene", "Cross-domain split by scene lists");
  sp_scene->add_option("--manifest", sc_manifest)->required();
  sp_scene->add_option("--schema", sc_schema);
  sp_scene->add_option("--train-scenes", sc_train);
  sp_scene->add_option("--test-scenes", sc_test);
  sp_scene->add_option("--out", sc_out);

  // degrade
  auto* degrade = app.add_subcommand("degrade", "Assign synthetic degradations per split");
  std::string dg_manifest, dg_splits, dg_out = "degradations.tsv", dg_schema = "msp60k";
  double dg_fraction = 1.0 / 3.0;
  std::uint64_t dg_seed = 7;
  degrade->add_option("--manifest", dg_manifest)->required();
  degrade->add_option("--schema", dg_schema);
  degrade->add_option("--splits", dg_splits, "Split sidecar (optional)");
  degrade->add_option("--fraction", dg_fraction, "Fraction per split");
  degrade->add_option("--seed", dg_seed);
  degrade->add_option("--out", dg_out);

  // stats
  auto* stats = app.add_subcommand("stats", "Dataset statistics tables and figures");
  std::string st_manifest, st_out = "stats", st_schema = "msp60k";
  stats->add_option("--manifest", st_manifest)->required();
  stats->add_option("--schema", st_schema);
  stats->add_option("--out", st_out);

  // train
  auto* train = app.add_subcommand("train", "Train from a config file");
  std::string tr_config, tr_run_dir;
  train->add_option("--config", tr_config)->required();
  train->add_option("--run-dir", tr_run_dir, "Run directory (default $PARLM_RUN_ROOT/run-seed<seed>)");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string ev_ckpt, ev_split = "test", ev_agg = "mean", ev_asa, ev_out, ev_manifest;
  eval->add_option("--checkpoint", ev_ckpt)->required();
  eval->add_option("--split", ev_split);
  eval->add_option("--aggregation", ev_agg, "mean | max | asa");
  eval->add_option("--asa-weights", ev_asa, "Fitted weights JSON (for --aggregation asa)");
  eval->add_option("--out", ev_out);
  eval->add_option("--manifest", ev_manifest, "Override the checkpoint's manifest path");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict attributes and caption for one image");
  std::string in_ckpt, in_image;
  bool in_json = false;
  infer->add_option("--checkpoint", in_ckpt)->required();
  infer->add_option("--image", in_image)->required();
  infer->add_flag("--json", in_json, "Machine-readable output");

  // fit-asa
  auto* fit = app.add_subcommand("fit-asa", "Fit per-attribute aggregation weights");
  std::string fa_ckpt, fa_split = "train", fa_out = "asa.json";
  fit->add_option("--checkpoint", fa_ckpt)->required();
  fit->add_option("--split", fa_split);
  fit->add_option("--out", fa_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prepare) return cmd_prepare(prep_out, prep_count, prep_seed, prep_h, prep_w, prep_schema);
    if (*sp_random) {
      AttributeSchema schema = AttributeSchema::resolve(sp_schema);
      Dataset ds = ingest_manifest(sp_manifest, schema);
      random_split(ds, {sp_train, sp_val, sp_test}, sp_seed);
      write_split_sidecar(sp_out, ds);
      std::cout << "split written to " << sp_out << "\n";
      return 0;
    }
    if (*sp_scene) {
      AttributeSchema schema = AttributeSchema::resolve(sc_schema);
      Dataset ds = ingest_manifest(sc_manifest, schema);
      scene_split(ds, parse_scene_list(sc_train), parse_scene_list(sc_test));
      write_split_sidecar(sc_out, ds);
      long train_n = 0, test_n = 0;
      for (const auto& r : ds) (r.split == Split::Train ? train_n : test_n) += 1;
      std::cout << "scene split: " << train_n << " train / " << test_n << " test -> " << sc_out << "\n";
      return 0;
    }
    if (*degrade) {
      AttributeSchema schema = AttributeSchema::resolve(dg_schema);
      Dataset ds = ingest_manifest(dg_manifest, schema);
      if (!dg_splits.empty()) apply_split_sidecar(dg_splits, ds);
      assign_degradations(ds, dg_fraction, dg_seed);
      write_degradation_sidecar(dg_out, ds);
      long marked = 0;
      for (const auto& r : ds) marked += r.degradation.has_value();
      std::cout << marked << " records marked -> " << dg_out << "\n";
      return 0;
    }
    if (*stats) {
      AttributeSchema schema = AttributeSchema::resolve(st_schema);
      Dataset ds = ingest_manifest(st_manifest, schema);
      write_stats(ds, schema, st_out);
      std::cout << "statistics under " << st_out << "\n";
      return 0;
    }
    if (*train) return cmd_train(tr_config, tr_run_dir);
    if (*eval) return cmd_eval(ev_ckpt, ev_split, ev_agg, ev_asa, ev_out, ev_manifest);
    if (*infer) return cmd_infer(in_ckpt, in_image, in_json);
    if (*fit) return cmd_fit_asa(fa_ckpt, fa_split, fa_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
