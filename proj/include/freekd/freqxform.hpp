#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "freekd/diffcore.hpp"

// Multi-level 2-D frequency analysis/synthesis. The wavelet path is a
// separable filter bank with circular boundary handling on inputs zero-padded
// up to the next multiple of 2^level; DCT and DFT produce full coefficient
// planes cut into the same dyadic band layout so downstream masking and loss
// code is transform-agnostic. All transforms are linear tape ops whose
// backward is the adjoint (the synthesis filters, for orthonormal wavelets).

namespace freekd {

struct Wavelet {
  std::string name;
  std::vector<double> analysis_low, analysis_high;
  std::vector<double> synthesis_low, synthesis_high;

  static const Wavelet& haar();
  static const Wavelet& db2();
  static const Wavelet& by_name(const std::string& name);  // ConfigError if unknown
};

struct PadRecord {
  int64_t orig_h = 0, orig_w = 0;
  int64_t padded_h = 0, padded_w = 0;
};

struct BandSet {
  int level = 0;
  PadRecord pad;
  // Ordered coarse-to-fine: LLl, HLl, LHl, HHl, HL(l-1), ..., HH1.
  std::vector<std::pair<std::string, Tensor>> bands;

  bool has(const std::string& label) const;
  const Tensor& band(const std::string& label) const;  // StructureError if missing
  // Band labels for a level-l decomposition, 3l+1 entries.
  static std::vector<std::string> labels(int level);
};

// Low bands are the LL* labels; everything else carries detail.
bool is_low_band(const std::string& label);

BandSet dwt2d(const Tensor& x, const Wavelet& w, int level);
Tensor idwt2d(const BandSet& b, const Wavelet& w);

// Orthonormal DCT-II plane partitioned into the dyadic wavelet layout.
BandSet dct2d(const Tensor& x, int level);
Tensor idct2d(const BandSet& b);

// Unitary DFT; real and imaginary planes stacked on channels (band channel
// count doubles). The inverse drops the imaginary residue of the
// reconstruction.
BandSet dft2d(const Tensor& x, int level);
Tensor idft2d(const BandSet& b);

enum class TransformKind { dwt, dct, dft };

TransformKind transform_from_name(const std::string& name);  // ConfigError if unknown
std::string transform_name(TransformKind k);

// Bundles kind + wavelet + level so callers can stay transform-agnostic.
struct Transform {
  TransformKind kind = TransformKind::dwt;
  std::string wavelet = "haar";
  int level = 3;

  BandSet forward(const Tensor& x) const;
  Tensor inverse(const BandSet& b) const;
};

// One grayscale PGM per band (min-max normalized, sample 0, channel mean).
// Returns the written paths.
std::vector<std::string> dump_bands_pgm(const BandSet& b, const std::string& dir,
                                        const std::string& prefix,
                                        const std::string& comment = "");

}  // namespace freekd
