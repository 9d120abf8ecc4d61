#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"

namespace tdsr::data {

struct SyntheticOptions {
  int height = 256;
  int width = 256;
  int channels = 1;
  /// Number of text lines to place; 0 picks a seed-dependent count that fits the page.
  int n_lines = 0;
  /// Glyph cell scale range; a scale of 1 gives 7-pixel capitals.
  double min_font_scale = 1.2;
  double max_font_scale = 2.6;
};

/// One entry of the generator's placement log.
struct LinePlacement {
  std::string text;
  double font_scale = 1.0;
  BBox box;
};

struct SyntheticDocument {
  ImageTensor image;
  std::vector<BBox> boxes;
  std::vector<LinePlacement> log;
};

/// Renders dark text lines in a bundled 5x7 bitmap font onto a paper-like
/// background. Boxes are the tight extents of each rendered line. Bit-identical
/// for a given seed and options. Requires height, width >= 64.
SyntheticDocument generate_synthetic_document(std::uint64_t seed, const SyntheticOptions& options);
SyntheticDocument generate_synthetic_document(std::uint64_t seed, int height, int width);

/// 7 rows of 5-bit masks (bit 4 = leftmost column). Unknown characters render blank.
const std::uint8_t* glyph_rows(char ch);
std::string_view font_alphabet();

}  // namespace tdsr::data
