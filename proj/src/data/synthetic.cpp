#include "tdsr/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdsr/core/error.hpp"
#include "tdsr/core/rng.hpp"

namespace tdsr::data {

namespace {

constexpr int kSuper = 4;  // supersampling factor used for antialiased glyph edges
constexpr int kGlyphW = 5, kGlyphH = 7;

struct Wave {
  double fy, fx, phase, amp;
};

std::string random_text(Rng& rng, int n_chars) {
  const auto alphabet = font_alphabet();
  std::string text;
  int word_left = rng.uniform_int(2, 7);
  while (static_cast<int>(text.size()) < n_chars) {
    const bool last = static_cast<int>(text.size()) == n_chars - 1;
    if (word_left == 0 && !last && !text.empty() && text.back() != ' ') {
      text += ' ';
      word_left = rng.uniform_int(2, 7);
      continue;
    }
    text += alphabet[rng.uniform_int(0, static_cast<int>(alphabet.size()) - 1)];
    --word_left;
  }
  return text;
}

}  // namespace

SyntheticDocument generate_synthetic_document(std::uint64_t seed, int height, int width) {
  SyntheticOptions opts;
  opts.height = height;
  opts.width = width;
  return generate_synthetic_document(seed, opts);
}

SyntheticDocument generate_synthetic_document(std::uint64_t seed, const SyntheticOptions& o) {
  if (o.height < 64 || o.width < 64) throw Error("synthetic documents need at least 64x64 pixels");
  if (o.channels != 1 && o.channels != 3) throw Error("synthetic documents have 1 or 3 channels");
  if (!(o.min_font_scale > 0 && o.min_font_scale <= o.max_font_scale))
    throw Error("invalid font scale range");

  Rng rng(derive_seed(seed, "synthetic-document"));
  const int H = o.height, W = o.width;
  const double min_slot = kGlyphH * o.min_font_scale + 4.0;

  int n_lines = o.n_lines;
  if (n_lines <= 0) {
    const int max_lines = std::max(1, H / 28);
    n_lines = rng.uniform_int(std::max(1, max_lines / 2), max_lines);
  }
  if (H / static_cast<double>(n_lines) < min_slot)
    throw Error("page too short for " + std::to_string(n_lines) + " lines");
  int n_slots = n_lines + rng.uniform_int(0, std::max(0, n_lines / 2));
  while (H / static_cast<double>(n_slots) < min_slot) --n_slots;

  std::vector<int> slots(n_slots);
  std::iota(slots.begin(), slots.end(), 0);
  for (int i = n_slots - 1; i > 0; --i) std::swap(slots[i], slots[rng.uniform_int(0, i)]);
  slots.resize(n_lines);
  std::sort(slots.begin(), slots.end());

  const int SH = H * kSuper, SW = W * kSuper;
  std::vector<std::uint8_t> ink(static_cast<std::size_t>(SH) * SW, 0);
  SyntheticDocument doc;
  const double slot_h = H / static_cast<double>(n_slots);

  for (int slot : slots) {
    const double top = slot * slot_h;
    const double fit = (slot_h - 2.0) / kGlyphH;
    const double scale = rng.uniform(o.min_font_scale, std::min(o.max_font_scale, fit));
    const double advance = (kGlyphW + 1) * scale;
    double x = rng.uniform(2.0, W * 0.3);
    int max_chars = static_cast<int>((W - 2.0 - x) / advance);
    if (max_chars < 2) {
      x = 2.0;
      max_chars = static_cast<int>((W - 4.0) / advance);
    }
    const int n_chars = rng.uniform_int(std::min(2, max_chars), max_chars);
    const std::string text = random_text(rng, n_chars);
    const double y = top + rng.uniform(1.0, std::max(1.0, slot_h - kGlyphH * scale - 1.0));

    int sx0 = SW, sy0 = SH, sx1 = -1, sy1 = -1;
    for (std::size_t k = 0; k < text.size(); ++k) {
      const std::uint8_t* rows = glyph_rows(text[k]);
      const double gx = x + static_cast<double>(k) * advance;
      for (int r = 0; r < kGlyphH; ++r)
        for (int c = 0; c < kGlyphW; ++c) {
          if (!(rows[r] & (0x10 >> c))) continue;
          const int ya = static_cast<int>(std::lround((y + r * scale) * kSuper));
          const int yb = static_cast<int>(std::lround((y + (r + 1) * scale) * kSuper));
          const int xa = static_cast<int>(std::lround((gx + c * scale) * kSuper));
          const int xb = static_cast<int>(std::lround((gx + (c + 1) * scale) * kSuper));
          for (int yy = std::max(0, ya); yy < std::min(SH, yb); ++yy)
            for (int xx = std::max(0, xa); xx < std::min(SW, xb); ++xx) {
              ink[static_cast<std::size_t>(yy) * SW + xx] = 1;
              sx0 = std::min(sx0, xx);
              sx1 = std::max(sx1, xx);
              sy0 = std::min(sy0, yy);
              sy1 = std::max(sy1, yy);
            }
        }
    }
    LinePlacement entry;
    entry.text = text;
    entry.font_scale = scale;
    entry.box = clip_box({static_cast<double>(sx0) / kSuper, static_cast<double>(sy0) / kSuper,
                          static_cast<double>(sx1 + 1) / kSuper, static_cast<double>(sy1 + 1) / kSuper},
                         H, W);
    doc.boxes.push_back(entry.box);
    doc.log.push_back(std::move(entry));
  }

  const double sheet_tone = rng.uniform(0.80, 0.95);
  const double ink_level = rng.uniform(0.05, 0.30);
  const double tint[3] = {1.0, rng.uniform(0.96, 1.0), rng.uniform(0.88, 0.98)};
  std::vector<Wave> waves(3);
  for (auto& wv : waves)
    wv = {rng.uniform(0.5, 2.0) / H, rng.uniform(0.5, 2.0) / W, rng.uniform(0.0, 2.0 * M_PI),
          rng.uniform(0.005, 0.02)};

  doc.image = ImageTensor(H, W, o.channels);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double bg = sheet_tone + 0.008 * rng.normal();
      for (const auto& wv : waves) bg += wv.amp * std::cos(2.0 * M_PI * (wv.fy * y + wv.fx * x) + wv.phase);
      int covered = 0;
      for (int dy = 0; dy < kSuper; ++dy)
        for (int dx = 0; dx < kSuper; ++dx)
          covered += ink[static_cast<std::size_t>(y * kSuper + dy) * SW + x * kSuper + dx];
      const double cov = covered / static_cast<double>(kSuper * kSuper);
      for (int c = 0; c < o.channels; ++c) {
        const double sheet_c = o.channels == 3 ? bg * tint[c] : bg;
        doc.image.at(y, x, c) = std::clamp(sheet_c * (1.0 - cov) + ink_level * cov, 0.0, 1.0);
      }
    }
  return doc;
}

}  // namespace tdsr::data
