#include "freekd/image_io.hpp"

#include <algorithm>
#include <fstream>

#include "freekd/common.hpp"

namespace freekd {

namespace {

void write_pnm(const std::string& path, const char* magic, int64_t w, int64_t h,
               const std::vector<uint8_t>& bytes, const std::string& comment) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << magic << "\n";
  if (!comment.empty()) f << "# " << comment << "\n";
  f << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace

void write_pgm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& gray, const std::string& comment) {
  if (static_cast<int64_t>(gray.size()) != w * h)
    throw DimensionError("write_pgm: byte count does not match extents");
  write_pnm(path, "P5", w, h, gray, comment);
}

void write_ppm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& rgb, const std::string& comment) {
  if (static_cast<int64_t>(rgb.size()) != 3 * w * h)
    throw DimensionError("write_ppm: byte count does not match extents");
  write_pnm(path, "P6", w, h, rgb, comment);
}

std::vector<uint8_t> normalize_to_bytes(const double* v, int64_t n) {
  double lo = v[0], hi = v[0];
  for (int64_t i = 1; i < n; ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  const double span = hi - lo;
  std::vector<uint8_t> out(static_cast<size_t>(n), 0);
  if (span > 0.0)
    for (int64_t i = 0; i < n; ++i)
      out[static_cast<size_t>(i)] =
          static_cast<uint8_t>(std::clamp(255.0 * (v[i] - lo) / span, 0.0, 255.0));
  return out;
}

}  // namespace freekd
