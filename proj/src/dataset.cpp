#include "parlm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "parlm/rng.hpp"

namespace parlm {

const std::array<const char*, kSceneCount> kSceneNames = {
    "Construction Site", "Market", "Kitchens", "School",
    "Ski Resort",        "Outdoors1", "Outdoors2", "Outdoors3"};

const char* scene_name(Scene s) { return kSceneNames[static_cast<int>(s)]; }

std::optional<Scene> scene_from_name(const std::string& name) {
  for (int i = 0; i < kSceneCount; ++i)
    if (name == kSceneNames[i]) return static_cast<Scene>(i);
  return std::nullopt;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    case Split::Unassigned: return "unassigned";
  }
  return "?";
}

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  if (name == "unassigned") return Split::Unassigned;
  return std::nullopt;
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, '\t')) out.push_back(cur);
  return out;
}

[[noreturn]] void row_error(const std::filesystem::path& path, int lineno, const std::string& what) {
  throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + what);
}

}  // namespace

Dataset ingest_manifest(const std::filesystem::path& path, const AttributeSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open manifest: " + path.string());
  Dataset ds;
  std::string line;
  int lineno = 0;
  const int m = schema.attribute_count();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cols = split_tabs(line);
    if (cols.size() != 4) row_error(path, lineno, "expected 4 tab-separated columns, got " + std::to_string(cols.size()));
    SampleRecord rec;
    rec.id = cols[0];
    rec.image_ref = cols[1];
    if (rec.id.empty()) row_error(path, lineno, "empty id");
    const std::string& bits = cols[2];
    if (static_cast<int>(bits.size()) != m)
      row_error(path, lineno, "label string length " + std::to_string(bits.size()) +
                                  " does not match schema M=" + std::to_string(m));
    rec.labels.resize(m);
    for (int i = 0; i < m; ++i) {
      if (bits[i] != '0' && bits[i] != '1') row_error(path, lineno, "label characters must be 0 or 1");
      rec.labels[i] = bits[i] == '1' ? 1 : 0;
    }
    auto scene = scene_from_name(cols[3]);
    if (!scene) row_error(path, lineno, "unknown scene '" + cols[3] + "'");
    rec.scene = *scene;
    ds.push_back(std::move(rec));
  }
  return ds;
}

void write_manifest(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write manifest: " + path.string());
  for (const auto& rec : ds) {
    out << rec.id << '\t' << rec.image_ref << '\t';
    for (auto b : rec.labels) out << (b ? '1' : '0');
    out << '\t' << scene_name(rec.scene) << '\n';
  }
}

void write_split_sidecar(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write split sidecar: " + path.string());
  for (const auto& rec : ds) out << rec.id << '\t' << split_name(rec.split) << '\n';
}

void apply_split_sidecar(const std::filesystem::path& path, Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open split sidecar: " + path.string());
  std::unordered_map<std::string, Split> map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 2) row_error(path, lineno, "expected 'id<TAB>split'");
    auto sp = split_from_name(cols[1]);
    if (!sp) row_error(path, lineno, "unknown split '" + cols[1] + "'");
    map[cols[0]] = *sp;
  }
  for (auto& rec : ds) {
    auto it = map.find(rec.id);
    if (it == map.end()) throw DatasetError("split sidecar missing id '" + rec.id + "'");
    rec.split = it->second;
  }
}

void write_degradation_sidecar(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw DatasetError("cannot write degradation sidecar: " + path.string());
  out.precision(17);
  for (const auto& rec : ds) {
    if (!rec.degradation) continue;
    const auto& d = *rec.degradation;
    out << rec.id << '\t' << degradation_kind_name(d.kind) << '\t' << d.a << '\t' << d.b << '\t'
        << d.seed << '\n';
  }
}

void apply_degradation_sidecar(const std::filesystem::path& path, Dataset& ds) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open degradation sidecar: " + path.string());
  std::unordered_map<std::string, DegradationSpec> map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cols = split_tabs(line);
    if (cols.size() != 5) row_error(path, lineno, "expected 'id kind a b seed'");
    auto kind = degradation_kind_from_name(cols[1]);
    if (!kind) row_error(path, lineno, "unknown degradation kind '" + cols[1] + "'");
    DegradationSpec spec;
    spec.kind = *kind;
    spec.a = std::stod(cols[2]);
    spec.b = std::stod(cols[3]);
    spec.seed = std::stoull(cols[4]);
    map[cols[0]] = spec;
  }
  for (auto& rec : ds) {
    auto it = map.find(rec.id);
    rec.degradation = it == map.end() ? std::nullopt : std::optional<DegradationSpec>(it->second);
  }
}

void random_split(Dataset& ds, const SplitCounts& counts, std::uint64_t seed) {
  const long n = static_cast<long>(ds.size());
  if (counts.train + counts.val + counts.test != n)
    throw DatasetError("split counts sum to " + std::to_string(counts.train + counts.val + counts.test) +
                       " but dataset has " + std::to_string(n) + " records");
  if (counts.train < 0 || counts.val < 0 || counts.test < 0)
    throw DatasetError("split counts must be nonnegative");
  std::vector<std::size_t> perm(ds.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  for (long k = 0; k < n; ++k) {
    Split s = k < counts.train ? Split::Train : (k < counts.train + counts.val ? Split::Val : Split::Test);
    ds[perm[k]].split = s;
  }
}

void scene_split(Dataset& ds, const std::vector<Scene>& train_scenes,
                 const std::vector<Scene>& test_scenes) {
  std::array<int, kSceneCount> role;
  role.fill(-1);
  for (Scene s : train_scenes) role[static_cast<int>(s)] = 0;
  for (Scene s : test_scenes) {
    if (role[static_cast<int>(s)] == 0)
      throw DatasetError(std::string("scene '") + scene_name(s) + "' appears in both train and test lists");
    role[static_cast<int>(s)] = 1;
  }
  for (const auto& rec : ds)
    if (role[static_cast<int>(rec.scene)] == -1)
      throw DatasetError(std::string("scene '") + scene_name(rec.scene) + "' not covered by either list");
  for (auto& rec : ds)
    rec.split = role[static_cast<int>(rec.scene)] == 0 ? Split::Train : Split::Test;
}

namespace {

DegradationSpec draw_spec(Rng& rng) {
  DegradationSpec spec;
  spec.kind = static_cast<DegradationKind>(rng.bounded(5));
  switch (spec.kind) {
    case DegradationKind::Blur:
      spec.a = rng.uniform(0.8, 4.0);
      break;
    case DegradationKind::Occlusion:
      spec.a = rng.uniform(0.05, 0.5);
      spec.b = static_cast<double>(rng.bounded(256));
      break;
    case DegradationKind::Illumination:
      spec.a = rng.uniform(0.3, 1.8);
      spec.b = rng.uniform(0.5, 2.0);
      break;
    case DegradationKind::Noise:
      spec.a = rng.uniform(5.0, 50.0);
      break;
    case DegradationKind::Jpeg:
      spec.a = static_cast<double>(5 + rng.bounded(46));  // integer quality in [5, 50]
      break;
  }
  spec.seed = rng.next();
  return spec;
}

}  // namespace

void assign_degradations(Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw DatasetError("fraction must be in [0, 1]");
  for (auto& rec : ds) rec.degradation.reset();
  Rng master(seed);
  // Streams are derived per split so adding a split never reshuffles another.
  for (Split s : {Split::Train, Split::Val, Split::Test, Split::Unassigned}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].split == s) members.push_back(i);
    if (members.empty()) continue;
    const long n = static_cast<long>(members.size());
    const long k = static_cast<long>(std::ceil(fraction * static_cast<double>(n)));
    if (k <= 0) continue;
    Rng rng = master.derive(static_cast<std::uint64_t>(s) + 1);
    std::vector<std::size_t> order = members;
    rng.shuffle(order);
    for (long j = 0; j < k; ++j) ds[order[j]].degradation = draw_spec(rng);
  }
}

std::vector<long> attribute_distribution(const Dataset& ds) {
  if (ds.empty()) return {};
  std::vector<long> counts(ds.front().labels.size(), 0);
  for (const auto& rec : ds)
    for (std::size_t i = 0; i < rec.labels.size(); ++i) counts[i] += rec.labels[i];
  return counts;
}

std::vector<std::vector<long>> cooccurrence_matrix(const Dataset& ds) {
  if (ds.empty()) return {};
  const std::size_t m = ds.front().labels.size();
  std::vector<std::vector<long>> c(m, std::vector<long>(m, 0));
  for (const auto& rec : ds) {
    std::vector<int> on;
    for (std::size_t i = 0; i < m; ++i)
      if (rec.labels[i]) on.push_back(static_cast<int>(i));
    for (int i : on)
      for (int j : on) c[i][j] += 1;
  }
  return c;
}

std::map<Scene, std::vector<long>> scene_attribute_distribution(const Dataset& ds) {
  std::map<Scene, std::vector<long>> out;
  for (const auto& rec : ds) {
    auto& counts = out[rec.scene];
    if (counts.empty()) counts.assign(rec.labels.size(), 0);
    for (std::size_t i = 0; i < rec.labels.size(); ++i) counts[i] += rec.labels[i];
  }
  return out;
}

// ---- Synthetic data -------------------------------------------------------

namespace {

// Muted background colors, one per scene.
constexpr std::uint8_t kSceneColor[kSceneCount][3] = {
    {140, 110, 70},  {70, 140, 90},  {150, 140, 120}, {80, 100, 150},
    {190, 200, 210}, {60, 120, 160}, {110, 160, 60},  {160, 90, 120}};

LabelVector sample_labels(const AttributeSchema& schema, Rng& rng) {
  LabelVector labels(schema.attribute_count(), 0);
  for (const auto& g : schema.groups()) {
    if (g.members.size() == 1) {
      labels[g.members[0]] = rng.uniform01() < 0.5 ? 1 : 0;
      continue;
    }
    double u = rng.uniform01();
    int picks = u < 0.35 ? 0 : (u < 0.85 ? 1 : 2);
    std::vector<int> candidates = g.members;
    rng.shuffle(candidates);
    for (int k = 0; k < picks && k < static_cast<int>(candidates.size()); ++k)
      labels[candidates[k]] = 1;
  }
  return labels;
}

}  // namespace

Image render_synth(const LabelVector& labels, Scene scene, int height, int width,
                   std::uint64_t record_seed) {
  const int m = static_cast<int>(labels.size());
  // Label cells form a fixed grid; cells beyond M show the scene color.
  int grid_cols = 4;
  int grid_rows = (m + grid_cols - 1) / grid_cols;
  Image img(height, width);
  Rng rng(record_seed);
  const std::uint8_t* sc = kSceneColor[static_cast<int>(scene)];
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int row = y * grid_rows / height;
      int col = x * grid_cols / width;
      int cell = row * grid_cols + col;
      int noise = static_cast<int>(rng.bounded(17)) - 8;
      for (int c = 0; c < 3; ++c) {
        int base;
        if (cell < m)
          base = labels[cell] ? 230 : 25;
        else
          base = sc[c];
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(base + noise, 0, 255));
      }
    }
  return img;
}

Dataset synth_generate(int n, const AttributeSchema& schema, std::uint64_t seed) {
  if (n < 1) throw DatasetError("synth_generate needs n >= 1");
  Dataset ds;
  ds.reserve(n);
  Rng master(seed);
  for (int i = 0; i < n; ++i) {
    Rng rec_rng = master.derive(static_cast<std::uint64_t>(i));
    SampleRecord rec;
    rec.id = "synth-" + std::to_string(100000 + i).substr(1);
    rec.scene = static_cast<Scene>(i % kSceneCount);
    rec.labels = sample_labels(schema, rec_rng);
    rec.image_ref = "synth:" + std::to_string(rec_rng.next());
    ds.push_back(std::move(rec));
  }
  return ds;
}

Image load_pixels(const SampleRecord& rec, const std::filesystem::path& images_root,
                  int height, int width, bool apply_degradation) {
  Image img;
  if (rec.image_ref.rfind("synth:", 0) == 0) {
    std::uint64_t s = std::stoull(rec.image_ref.substr(6));
    img = render_synth(rec.labels, rec.scene, height, width, s);
  } else {
    img = read_ppm(images_root / rec.image_ref);
    if (img.height != height || img.width != width) img = resize_bilinear(img, height, width);
  }
  if (apply_degradation && rec.degradation) img = degrade_image(img, *rec.degradation);
  return img;
}

void materialize(Dataset& ds, const std::filesystem::path& dir, int height, int width) {
  std::filesystem::create_directories(dir);
  for (auto& rec : ds) {
    Image img = load_pixels(rec, dir, height, width, /*apply_degradation=*/true);
    std::string name = rec.id + ".ppm";
    write_ppm(dir / name, img);
    rec.image_ref = name;
  }
}

}  // namespace parlm
