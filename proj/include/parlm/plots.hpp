#pragma once

#include <filesystem>
#include <vector>

#include "parlm/dataset.hpp"
#include "parlm/image.hpp"

namespace parlm {

// Minimal rasterized figures, written as PPM.
Image bar_chart(const std::vector<long>& counts, int height = 360, int bar_width = 12);
Image heatmap_log(const std::vector<std::vector<long>>& matrix, int cell = 8);

// Emits attribute_distribution.{txt,ppm}, cooccurrence.{txt,ppm} and
// scene_distribution.txt under out_dir. Throws on an empty dataset.
void write_stats(const Dataset& ds, const AttributeSchema& schema,
                 const std::filesystem::path& out_dir);

}  // namespace parlm
