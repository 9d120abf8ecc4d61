#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "tdsr/cli/commands.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/data/synthetic.hpp"

namespace tdsr::cli {

namespace {

constexpr int kWidth = 640;
constexpr int kPanelHeight = 240;
constexpr int kMarginLeft = 40, kMarginRight = 150, kMarginTop = 24, kMarginBottom = 16;

struct Rgb {
  double r, g, b;
};

Rgb colour_of(LossComponentId id) {
  switch (id) {
    case LossComponentId::L2_HR: return {0.12, 0.47, 0.71};
    case LossComponentId::L2_LR: return {1.0, 0.5, 0.05};
    case LossComponentId::TASK_DEEP: return {0.17, 0.63, 0.17};
    default: return {0.84, 0.15, 0.16};
  }
}

void put(ImageTensor& img, int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  img.at(y, x, 0) = c.r;
  img.at(y, x, 1) = c.g;
  img.at(y, x, 2) = c.b;
}

void line(ImageTensor& img, int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int e = dx + dy;
  for (;;) {
    put(img, x0, y0, c);
    put(img, x0, y0 + 1, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * e;
    if (e2 >= dy) e += dy, x0 += sx;
    if (e2 <= dx) e += dx, y0 += sy;
  }
}

void text(ImageTensor& img, int x, int y, std::string_view s, Rgb c) {
  for (char ch : s) {
    const std::uint8_t* rows = data::glyph_rows(ch);
    for (int r = 0; r < 7; ++r)
      for (int col = 0; col < 5; ++col)
        if (rows[r] & (1u << (4 - col))) put(img, x + col, y + r, c);
    x += 6;
  }
}

std::string label_of(LossComponentId id) {
  std::string s(to_string(id));
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

/// Plots one series family into the panel whose top edge is `top`.
void panel(ImageTensor& img, int top, const MetricsTable& t, bool log_scale, std::string_view title) {
  const Rgb black{0, 0, 0};
  const int x0 = kMarginLeft, x1 = kWidth - kMarginRight;
  const int y0 = top + kMarginTop, y1 = top + kPanelHeight - kMarginBottom;
  line(img, x0, y1, x1, y1, black);
  line(img, x0, y0, x0, y1, black);
  text(img, x0, top + 8, title, black);

  auto value = [&](const MetricsTable::Row& r) {
    const double v = log_scale ? r.raw_value : r.weight;
    return log_scale ? std::log10(std::max(v, 1e-12)) : v;
  };
  double lo = 1e300, hi = -1e300;
  for (const auto& r : t.rows) lo = std::min(lo, value(r)), hi = std::max(hi, value(r));
  if (t.rows.empty()) lo = 0, hi = 1;
  if (hi - lo < 1e-9) lo -= 0.5, hi += 0.5;
  const auto epochs = t.epochs();
  const int e_min = epochs.empty() ? 0 : epochs.front(), e_max = epochs.empty() ? 1 : epochs.back();
  auto px = [&](int e) {
    return x0 + static_cast<int>(std::lround((x1 - x0) * (e_max == e_min ? 0.5 : double(e - e_min) / (e_max - e_min))));
  };
  auto py = [&](double v) { return y1 - static_cast<int>(std::lround((y1 - y0) * (v - lo) / (hi - lo))); };

  int legend_y = y0;
  for (auto id : t.components()) {
    const Rgb c = colour_of(id);
    int prev_x = -1, prev_y = -1;
    for (const auto& r : t.rows) {
      if (r.component != id) continue;
      const int x = px(r.epoch), y = py(value(r));
      if (prev_x >= 0) line(img, prev_x, prev_y, x, y, c);
      for (int d = -1; d <= 1; ++d) put(img, x + d, y, c), put(img, x, y + d, c);
      prev_x = x, prev_y = y;
    }
    for (int dy = 0; dy < 7; ++dy)
      for (int dx = 0; dx < 7; ++dx) put(img, x1 + 12 + dx, legend_y + dy, c);
    text(img, x1 + 24, legend_y, label_of(id), black);
    legend_y += 12;
  }
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, sep);) out.push_back(cell);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<int> MetricsTable::epochs() const {
  std::set<int> s;
  for (const auto& r : rows) s.insert(r.epoch);
  return {s.begin(), s.end()};
}

std::vector<LossComponentId> MetricsTable::components() const {
  std::set<LossComponentId> s;
  for (const auto& r : rows) s.insert(r.component);
  return {s.begin(), s.end()};
}

MetricsTable parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int n = 0;
  auto fail = [&](const std::string& why) -> void { throw Error("metrics CSV line " + std::to_string(n) + ": " + why); };
  if (!std::getline(in, line)) {
    n = 1;
    fail("missing header");
  }
  n = 1;
  if (line != "epoch,component,raw_value,weight,weighted_value") fail("unexpected header '" + line + "'");
  MetricsTable t;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) fail("expected 5 fields, found " + std::to_string(f.size()));
    MetricsTable::Row r{};
    try {
      std::size_t used = 0;
      r.epoch = std::stoi(f[0], &used);
      if (used != f[0].size() || r.epoch < 1) fail("bad epoch '" + f[0] + "'");
      auto id = parse_loss_component(f[1]);
      if (!id) fail("unknown component '" + f[1] + "'");
      r.component = *id;
      double* dst[3] = {&r.raw_value, &r.weight, &r.weighted_value};
      for (int k = 0; k < 3; ++k) {
        *dst[k] = std::stod(f[2 + k], &used);
        if (used != f[2 + k].size() || !std::isfinite(*dst[k])) fail("bad number '" + f[2 + k] + "'");
      }
    } catch (const std::logic_error&) {
      fail("bad number");
    }
    t.rows.push_back(r);
  }
  return t;
}

ImageTensor render_curves(const MetricsTable& table) {
  ImageTensor img(2 * kPanelHeight, kWidth, 3, 1.0);
  panel(img, 0, table, true, "RAW LOSS  LOG10");
  panel(img, kPanelHeight, table, false, "DWA WEIGHT");
  return img;
}

std::string weight_sums_csv(const MetricsTable& table) {
  std::string out = "epoch,weight_sum,n_components\n";
  for (int e : table.epochs()) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : table.rows)
      if (r.epoch == e) sum += r.weight, ++n;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%d,%.12f,%d\n", e, sum, n);
    out += buf;
  }
  return out;
}

}  // namespace tdsr::cli
