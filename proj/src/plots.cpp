#include "parlm/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace parlm {

namespace {

void fill_rect(Image& img, int y0, int y1, int x0, int x1, std::uint8_t r, std::uint8_t gc,
               std::uint8_t b) {
  y0 = std::clamp(y0, 0, img.height);
  y1 = std::clamp(y1, 0, img.height);
  x0 = std::clamp(x0, 0, img.width);
  x1 = std::clamp(x1, 0, img.width);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = gc;
      img.at(y, x, 2) = b;
    }
}

// Dark blue -> yellow ramp for t in [0, 1].
void heat_color(double t, std::uint8_t& r, std::uint8_t& g, std::uint8_t& b) {
  t = std::clamp(t, 0.0, 1.0);
  r = static_cast<std::uint8_t>(std::lround(20 + 235 * t));
  g = static_cast<std::uint8_t>(std::lround(24 + 210 * t));
  b = static_cast<std::uint8_t>(std::lround(96 * (1.0 - t) + 40));
}

}  // namespace

Image bar_chart(const std::vector<long>& counts, int height, int bar_width) {
  const int margin = 8;
  const int n = static_cast<int>(counts.size());
  Image img(height + 2 * margin, n * bar_width + 2 * margin, 245);
  long mx = 1;
  for (long c : counts) mx = std::max(mx, c);
  for (int i = 0; i < n; ++i) {
    int h = static_cast<int>(std::lround(static_cast<double>(counts[i]) / mx * height));
    fill_rect(img, margin + height - h, margin + height, margin + i * bar_width,
              margin + (i + 1) * bar_width - 2, 52, 101, 164);
  }
  return img;
}

Image heatmap_log(const std::vector<std::vector<long>>& matrix, int cell) {
  const int n = static_cast<int>(matrix.size());
  Image img(n * cell, n * cell, 255);
  double mx = 0.0;
  for (const auto& row : matrix)
    for (long v : row) mx = std::max(mx, std::log1p(static_cast<double>(v)));
  if (mx <= 0.0) mx = 1.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::uint8_t r, g, b;
      heat_color(std::log1p(static_cast<double>(matrix[i][j])) / mx, r, g, b);
      fill_rect(img, i * cell, (i + 1) * cell, j * cell, (j + 1) * cell, r, g, b);
    }
  return img;
}

void write_stats(const Dataset& ds, const AttributeSchema& schema,
                 const std::filesystem::path& out_dir) {
  if (ds.empty()) throw DatasetError("cannot compute statistics of an empty dataset");
  std::filesystem::create_directories(out_dir);

  auto counts = attribute_distribution(ds);
  {
    std::ofstream f(out_dir / "attribute_distribution.txt");
    f << "# attribute\tpositives\n";
    for (std::size_t i = 0; i < counts.size(); ++i)
      f << schema.attribute(static_cast<int>(i)) << '\t' << counts[i] << '\n';
    write_ppm(out_dir / "attribute_distribution.ppm", bar_chart(counts));
  }

  auto co = cooccurrence_matrix(ds);
  {
    std::ofstream f(out_dir / "cooccurrence.txt");
    for (const auto& row : co) {
      for (std::size_t j = 0; j < row.size(); ++j) f << (j ? "\t" : "") << row[j];
      f << '\n';
    }
    write_ppm(out_dir / "cooccurrence.ppm", heatmap_log(co));
  }

  auto per_scene = scene_attribute_distribution(ds);
  {
    std::ofstream f(out_dir / "scene_distribution.txt");
    f << "# scene";
    for (int i = 0; i < schema.attribute_count(); ++i) f << '\t' << schema.attribute(i);
    f << '\n';
    for (const auto& [scene, sc] : per_scene) {
      f << scene_name(scene);
      for (long v : sc) f << '\t' << v;
      f << '\n';
    }
  }
}

}  // namespace parlm
