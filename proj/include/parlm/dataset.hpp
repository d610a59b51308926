#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "parlm/degrade.hpp"
#include "parlm/image.hpp"
#include "parlm/schema.hpp"

namespace parlm {

enum class Scene {
  ConstructionSite,
  Market,
  Kitchens,
  School,
  SkiResort,
  Outdoors1,
  Outdoors2,
  Outdoors3,
};
inline constexpr int kSceneCount = 8;
extern const std::array<const char*, kSceneCount> kSceneNames;
const char* scene_name(Scene s);
std::optional<Scene> scene_from_name(const std::string& name);

enum class Split { Train, Val, Test, Unassigned };
const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

struct SampleRecord {
  std::string id;
  std::string image_ref;  // relative path, or "synth:<seed>" for generated pixels
  LabelVector labels;
  Scene scene = Scene::Outdoors1;
  Split split = Split::Unassigned;
  std::optional<DegradationSpec> degradation;
};

using Dataset = std::vector<SampleRecord>;

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- Manifest & sidecar files -------------------------------------------
// Manifest rows are tab separated: id, image path, M-char 0/1 label string,
// scene name. Split and degradation assignments live in sidecar files so a
// manifest is never rewritten.

Dataset ingest_manifest(const std::filesystem::path& path, const AttributeSchema& schema);
void write_manifest(const std::filesystem::path& path, const Dataset& ds);

void write_split_sidecar(const std::filesystem::path& path, const Dataset& ds);
void apply_split_sidecar(const std::filesystem::path& path, Dataset& ds);

void write_degradation_sidecar(const std::filesystem::path& path, const Dataset& ds);
void apply_degradation_sidecar(const std::filesystem::path& path, Dataset& ds);

// ---- Split protocols -----------------------------------------------------

struct SplitCounts {
  long train = 0;
  long val = 0;
  long test = 0;
};

// Deterministic seeded permutation; counts must sum to the dataset size.
void random_split(Dataset& ds, const SplitCounts& counts, std::uint64_t seed);

// Split determined solely by scene membership. Scene lists must be disjoint
// and jointly cover every scene present in the dataset.
void scene_split(Dataset& ds, const std::vector<Scene>& train_scenes,
                 const std::vector<Scene>& test_scenes);

// Within each assigned split independently, marks ceil(fraction * n) records
// with a degradation spec whose kind is uniform over the five kinds and
// whose parameters are drawn from the declared ranges. Deterministic under
// seed and independent of record order.
void assign_degradations(Dataset& ds, double fraction, std::uint64_t seed);

// ---- Statistics ----------------------------------------------------------

std::vector<long> attribute_distribution(const Dataset& ds);
std::vector<std::vector<long>> cooccurrence_matrix(const Dataset& ds);
std::map<Scene, std::vector<long>> scene_attribute_distribution(const Dataset& ds);

// ---- Synthetic desk-scale data -------------------------------------------

// Procedurally generated dataset whose pixels encode the labels through a
// fixed grid of bright/dark cells (plus a scene-colored border), so a small
// model can learn them. Scenes are assigned round-robin; image_ref encodes
// the per-record render seed.
Dataset synth_generate(int n, const AttributeSchema& schema, std::uint64_t seed);

// Renders the pixels for one synthetic record at the requested size.
Image render_synth(const LabelVector& labels, Scene scene, int height, int width,
                   std::uint64_t record_seed);

// Resolves a record to pixels: renders "synth:" refs, otherwise reads the
// PPM under images_root; applies the record's degradation spec if present.
Image load_pixels(const SampleRecord& rec, const std::filesystem::path& images_root,
                  int height, int width, bool apply_degradation = true);

// Writes every record's pixels to dir and rewrites image_refs to the stored
// relative paths. Degradations are applied at this materialization step.
void materialize(Dataset& ds, const std::filesystem::path& dir, int height, int width);

}  // namespace parlm
