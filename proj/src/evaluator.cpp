#include "parlm/evaluator.hpp"

#include <fstream>

namespace parlm {

EvalOutput evaluate_model(const ParModel& model, const Dataset& records,
                          const std::filesystem::path& images_root, Aggregation strategy,
                          const AsaWeights* asa) {
  if (records.empty()) throw DatasetError("no records to evaluate");
  const TrainConfig& cfg = model.config();
  const int m = model.schema().attribute_count();
  const long n = static_cast<long>(records.size());

  EvalOutput out;
  out.p_attr.resize(n, m);
  out.p_in.resize(n, m);
  out.p_llm.resize(n, m);
  out.labels = BinaryMatrix(n, m);
  for (long i = 0; i < n; ++i) {
    const auto& rec = records[i];
    Image img = load_pixels(rec, images_root, cfg.model.image_h, cfg.model.image_w);
    ParModel::Prediction pred = model.predict(img);
    out.p_attr.row(i) = pred.p_attr;
    out.p_in.row(i) = pred.p_in;
    out.p_llm.row(i) = pred.p_llm;
    out.captions.push_back(pred.caption);
    out.ids.push_back(rec.id);
    out.scenes.push_back(scene_name(rec.scene));
    for (int j = 0; j < m; ++j) out.labels.at(i, j) = rec.labels[j];
  }

  out.p_final = aggregate(out.p_attr, out.p_in, out.p_llm, strategy, asa);
  out.predictions = BinaryMatrix(n, m);
  for (long i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out.predictions.at(i, j) = out.p_final(i, j) > 0.5 ? 1 : 0;

  out.report = evaluate(out.predictions, out.labels);
  std::map<std::string, long> scene_count;
  for (const auto& s : out.scenes) scene_count[s] += 1;
  if (scene_count.size() > 1) out.per_scene = per_scene_evaluate(out.predictions, out.labels, out.scenes);
  return out;
}

void write_predictions(const std::filesystem::path& path, const EvalOutput& out) {
  std::ofstream f(path);
  if (!f) throw DatasetError("cannot write predictions: " + path.string());
  f.precision(8);
  const long m = out.p_final.cols();
  f << "# id";
  for (const char* tag : {"final", "bin", "attr", "in", "llm"})
    f << "\t" << tag << "[0.." << m - 1 << "]";
  f << "\n";
  for (long i = 0; i < out.p_final.rows(); ++i) {
    f << out.ids[i];
    auto dump = [&](const Mat& p) {
      for (long j = 0; j < m; ++j) f << (j == 0 ? '\t' : ' ') << p(i, j);
    };
    dump(out.p_final);
    for (long j = 0; j < m; ++j) f << (j == 0 ? '\t' : ' ') << int(out.predictions.at(i, j));
    dump(out.p_attr);
    dump(out.p_in);
    dump(out.p_llm);
    f << "\n";
  }
}

void write_captions(const std::filesystem::path& path, const EvalOutput& out) {
  std::ofstream f(path);
  if (!f) throw DatasetError("cannot write captions: " + path.string());
  for (std::size_t i = 0; i < out.captions.size(); ++i)
    f << out.ids[i] << '\t' << out.captions[i] << '\n';
}

}  // namespace parlm
