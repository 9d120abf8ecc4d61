#pragma once

#include <filesystem>

#include "tdsr/core/image.hpp"

namespace tdsr {

/// Loads an 8-bit gray, gray+alpha, RGB or RGBA PNG. Alpha is dropped; values are divided by 255.
ImageTensor load_png(const std::filesystem::path& path);

/// Writes an 8-bit PNG with 1 or 3 channels. Values are clamped, scaled by 255 and rounded half-up.
void save_png(const ImageTensor& img, const std::filesystem::path& path);

/// The 8-bit code used by save_png for a value.
unsigned char quantize_u8(double v);

}  // namespace tdsr
