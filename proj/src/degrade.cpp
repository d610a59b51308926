#include "parlm/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <vector>

#include <jpeglib.h>

#include "parlm/rng.hpp"

namespace parlm {

const char* degradation_kind_name(DegradationKind k) {
  switch (k) {
    case DegradationKind::Blur: return "blur";
    case DegradationKind::Occlusion: return "occlusion";
    case DegradationKind::Illumination: return "illumination";
    case DegradationKind::Noise: return "noise";
    case DegradationKind::Jpeg: return "jpeg";
  }
  return "?";
}

std::optional<DegradationKind> degradation_kind_from_name(const std::string& name) {
  if (name == "blur") return DegradationKind::Blur;
  if (name == "occlusion") return DegradationKind::Occlusion;
  if (name == "illumination") return DegradationKind::Illumination;
  if (name == "noise") return DegradationKind::Noise;
  if (name == "jpeg") return DegradationKind::Jpeg;
  return std::nullopt;
}

void validate_spec(const DegradationSpec& spec) {
  auto fail = [&](const std::string& what) {
    throw DegradationError(std::string(degradation_kind_name(spec.kind)) + ": " + what);
  };
  switch (spec.kind) {
    case DegradationKind::Blur:
      if (spec.a < 0.0 || spec.a > 8.0) fail("sigma out of range [0, 8]");
      break;
    case DegradationKind::Occlusion:
      if (!(spec.a > 0.0) || spec.a > 0.5) fail("area fraction out of range (0, 0.5]");
      if (spec.b < 0.0 || spec.b > 255.0) fail("fill value out of range [0, 255]");
      break;
    case DegradationKind::Illumination:
      if (spec.a < 0.3 || spec.a > 1.8) fail("gain out of range [0.3, 1.8]");
      if (spec.b < 0.5 || spec.b > 2.0) fail("gamma out of range [0.5, 2]");
      break;
    case DegradationKind::Noise:
      if (spec.a < 0.0 || spec.a > 50.0) fail("sigma out of range [0, 50]");
      break;
    case DegradationKind::Jpeg:
      if (spec.a < 5.0 || spec.a > 50.0) fail("quality out of range [5, 50]");
      break;
  }
}

namespace {

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    sum += kernel[k + radius];
  }
  for (double& w : kernel) w /= sum;

  const int h = img.height, w = img.width;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w * 3);
  // Horizontal pass with edge clamping.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          int xx = std::clamp(x + k, 0, w - 1);
          acc += kernel[k + radius] * img.at(y, xx, c);
        }
        tmp[(static_cast<std::size_t>(y) * w + x) * 3 + c] = acc;
      }
  Image out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          int yy = std::clamp(y + k, 0, h - 1);
          acc += kernel[k + radius] * tmp[(static_cast<std::size_t>(yy) * w + x) * 3 + c];
        }
        out.at(y, x, c) = clamp_u8(acc);
      }
  return out;
}

// Overwrites exactly round(area * H * W) pixels: a seeded box of full rows
// of width rw, plus one partial row when the count does not factor evenly.
Image occlude(const Image& img, double area, double fill_value, std::uint64_t seed) {
  const long h = img.height, w = img.width;
  const long target = std::lround(area * static_cast<double>(h) * static_cast<double>(w));
  Image out = img;
  if (target <= 0) return out;
  long rw = std::clamp(std::lround(std::sqrt(static_cast<double>(target) * w / h)), 1L, w);
  long full_rows = target / rw;
  long rem = target % rw;
  long box_h = full_rows + (rem > 0 ? 1 : 0);
  if (box_h > h) {
    rw = (target + h - 1) / h;  // widen until the box fits vertically
    full_rows = target / rw;
    rem = target % rw;
    box_h = full_rows + (rem > 0 ? 1 : 0);
  }
  const std::uint8_t fill = clamp_u8(fill_value);
  Rng rng(seed);
  const long x0 = static_cast<long>(rng.bounded(static_cast<std::uint64_t>(w - rw + 1)));
  const long y0 = static_cast<long>(rng.bounded(static_cast<std::uint64_t>(h - box_h + 1)));
  for (long y = y0; y < y0 + box_h; ++y) {
    const long row_px = (y - y0 < full_rows) ? rw : rem;
    for (long x = x0; x < x0 + row_px; ++x)
      for (int c = 0; c < 3; ++c) out.at(static_cast<int>(y), static_cast<int>(x), c) = fill;
  }
  return out;
}

Image illuminate(const Image& img, double gain, double gamma) {
  std::uint8_t lut[256];
  for (int v = 0; v < 256; ++v)
    lut[v] = clamp_u8(255.0 * gain * std::pow(v / 255.0, gamma));
  Image out = img;
  for (auto& v : out.data) v = lut[v];
  return out;
}

Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return img;
  Image out = img;
  Rng rng(seed);
  for (auto& v : out.data) v = clamp_u8(v + sigma * rng.normal());
  return out;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf setjmp_buffer;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->setjmp_buffer, 1);
}

}  // namespace

Image jpeg_roundtrip(const Image& img, int quality) {
  // Encode.
  jpeg_compress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  if (setjmp(jerr.setjmp_buffer)) {
    jpeg_destroy_compress(&cinfo);
    if (buf) free(buf);
    throw DegradationError("jpeg encode failed");
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buf, &buf_size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width);
  cinfo.image_height = static_cast<JDIMENSION>(img.height);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width) * 3);
  while (cinfo.next_scanline < cinfo.image_height) {
    std::memcpy(row.data(), img.data.data() + static_cast<std::size_t>(cinfo.next_scanline) * img.width * 3,
                row.size());
    JSAMPROW rp = row.data();
    jpeg_write_scanlines(&cinfo, &rp, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);

  // Decode.
  jpeg_decompress_struct dinfo;
  JpegErrorMgr derr;
  dinfo.err = jpeg_std_error(&derr.pub);
  derr.pub.error_exit = jpeg_error_exit;
  if (setjmp(derr.setjmp_buffer)) {
    jpeg_destroy_decompress(&dinfo);
    free(buf);
    throw DegradationError("jpeg decode failed");
  }
  jpeg_create_decompress(&dinfo);
  jpeg_mem_src(&dinfo, buf, buf_size);
  jpeg_read_header(&dinfo, TRUE);
  dinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&dinfo);
  Image out(static_cast<int>(dinfo.output_height), static_cast<int>(dinfo.output_width));
  while (dinfo.output_scanline < dinfo.output_height) {
    JSAMPROW rp = out.data.data() + static_cast<std::size_t>(dinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&dinfo, &rp, 1);
  }
  jpeg_finish_decompress(&dinfo);
  jpeg_destroy_decompress(&dinfo);
  free(buf);
  if (!out.same_shape(img)) throw DegradationError("jpeg round trip changed shape");
  return out;
}

Image degrade_image(const Image& img, const DegradationSpec& spec) {
  validate_spec(spec);
  switch (spec.kind) {
    case DegradationKind::Blur: return gaussian_blur(img, spec.a);
    case DegradationKind::Occlusion: return occlude(img, spec.a, spec.b, spec.seed);
    case DegradationKind::Illumination: return illuminate(img, spec.a, spec.b);
    case DegradationKind::Noise: return add_noise(img, spec.a, spec.seed);
    case DegradationKind::Jpeg: return jpeg_roundtrip(img, static_cast<int>(std::lround(spec.a)));
  }
  return img;
}

}  // namespace parlm
