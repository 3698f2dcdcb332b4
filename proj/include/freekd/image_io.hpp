#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace freekd {

// Binary PGM (P5) / PPM (P6), maxval 255. An optional comment line is
// embedded after the magic; writers use it to carry the resolved config.
void write_pgm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& gray, const std::string& comment = "");
void write_ppm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& rgb, const std::string& comment = "");

// Min-max normalizes doubles to [0,255]; constant input maps to 0.
std::vector<uint8_t> normalize_to_bytes(const double* v, int64_t n);

}  // namespace freekd
