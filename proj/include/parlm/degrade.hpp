#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "parlm/image.hpp"

namespace parlm {

enum class DegradationKind { Blur, Occlusion, Illumination, Noise, Jpeg };

const char* degradation_kind_name(DegradationKind k);
std::optional<DegradationKind> degradation_kind_from_name(const std::string& name);

// One synthetic corruption applied to an image. Parameter meaning per kind:
//   Blur          a = gaussian sigma               (0 .. 8)
//   Occlusion     a = area fraction (0 .. 0.5], b = fill value (0 .. 255)
//   Illumination  a = gain (0.3 .. 1.8),        b = gamma (0.5 .. 2)
//   Noise         a = gaussian sigma               (0 .. 50)
//   Jpeg          a = quality                      (5 .. 50)
struct DegradationSpec {
  DegradationKind kind = DegradationKind::Blur;
  double a = 0.0;
  double b = 0.0;
  std::uint64_t seed = 0;
};

class DegradationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Throws DegradationError when a parameter is outside its declared range.
void validate_spec(const DegradationSpec& spec);

// Applies one corruption. Output shape always equals input shape and values
// stay in [0, 255]; deterministic under spec.seed.
Image degrade_image(const Image& img, const DegradationSpec& spec);

// In-memory JPEG encode/decode round trip (libjpeg).
Image jpeg_roundtrip(const Image& img, int quality);

}  // namespace parlm
