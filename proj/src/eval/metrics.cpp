#include "tdsr/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tdsr/core/error.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/io/container.hpp"
#include "tdsr/loss/loss.hpp"

namespace tdsr::eval {

namespace fs = std::filesystem;

namespace {

void require_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_shape(b)) throw Error(std::string(what) + ": shape mismatch");
  if (a.empty()) throw Error(std::string(what) + ": empty image");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - (size - 1) / 2.0;
    sum += w[i] = std::exp(-d * d / (2 * sigma * sigma));
  }
  for (auto& v : w) v /= sum;
  return w;
}

/// Separable valid-mode filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * in[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow, 0.0);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

std::string fmt(const char* f, double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* kDash = "\xE2\x80\x94";

/// Right-aligns by display width, counting UTF-8 code points.
std::string pad_left(const std::string& s, std::size_t width) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
  return n >= width ? s : std::string(width - n, ' ') + s;
}

}  // namespace

double psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b, "psnr");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.size());
  if (mse < kPsnrExactMse) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& a_in, const ImageTensor& b_in, const SsimOptions& o) {
  require_same(a_in, b_in, "ssim");
  const ImageTensor a = to_grayscale(a_in), b = to_grayscale(b_in);
  const int h = a.height(), w = a.width();
  if (h < o.window || w < o.window)
    throw Error("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                std::to_string(o.window) + "x" + std::to_string(o.window) + " window");
  const auto k = gaussian_window(o.window, o.sigma);
  const std::vector<double>& x = a.storage();
  const std::vector<double>& y = b.storage();
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  const double c1 = std::pow(o.k1 * o.dynamic_range, 2), c2 = std::pow(o.k2 * o.dynamic_range, 2);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

std::vector<FeatureMap> IdentityPlugin::features(const ImageTensor& img) const { return {to_feature_map(img)}; }

std::optional<double> perceptual_distance(const ImageTensor& a, const ImageTensor& b,
                                          const PerceptualPlugin* plugin) {
  if (!plugin) return std::nullopt;
  require_same(a, b, "perceptual_distance");
  const auto fa = plugin->features(a), fb = plugin->features(b);
  const auto weights = plugin->layer_weights();
  if (fa.size() != fb.size() || fa.size() != weights.size())
    throw Error("perceptual plugin '" + plugin->name() + "' returned inconsistent layers");
  double total = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const FeatureMap& x = fa[l];
    const FeatureMap& y = fb[l];
    if (!x.same_shape(y)) throw Error("perceptual plugin layer shape mismatch");
    double layer = 0.0;
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c) {
        double nx = 0.0, ny = 0.0;
        for (int ch = 0; ch < x.channels(); ++ch) {
          nx += x.at(ch, r, c) * x.at(ch, r, c);
          ny += y.at(ch, r, c) * y.at(ch, r, c);
        }
        nx = std::sqrt(nx) + 1e-10;
        ny = std::sqrt(ny) + 1e-10;
        for (int ch = 0; ch < x.channels(); ++ch) {
          const double d = x.at(ch, r, c) / nx - y.at(ch, r, c) / ny;
          layer += d * d;
        }
      }
    total += weights[l] * layer / static_cast<double>(x.plane());
  }
  return total;
}

const char* to_string(IouMode mode) { return mode == IouMode::Mask ? "mask" : "matched"; }

IouMode parse_iou_mode(const std::string& name) {
  if (name == "mask") return IouMode::Mask;
  if (name == "matched") return IouMode::Matched;
  throw Error("unknown iou mode '" + name + "' (expected mask or matched)");
}

std::vector<std::uint8_t> rasterize(const std::vector<BBox>& boxes, std::pair<int, int> frame) {
  const auto [h, w] = frame;
  if (h <= 0 || w <= 0) throw Error("detection_iou: zero-area frame");
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  for (const auto& b : boxes) {
    // Pixel x is covered when x0 <= x + 0.5 < x1.
    const int xa = std::max(0, static_cast<int>(std::ceil(b.x0 - 0.5)));
    const int xb = std::min(w, static_cast<int>(std::ceil(b.x1 - 0.5)));
    const int ya = std::max(0, static_cast<int>(std::ceil(b.y0 - 0.5)));
    const int yb = std::min(h, static_cast<int>(std::ceil(b.y1 - 0.5)));
    for (int y = ya; y < yb; ++y)
      for (int x = xa; x < xb; ++x) mask[static_cast<std::size_t>(y) * w + x] = 1;
  }
  return mask;
}

double box_iou(const BBox& a, const BBox& b) {
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double detection_iou(const std::vector<BBox>& boxes_sr, const std::vector<BBox>& boxes_hr,
                     std::pair<int, int> frame, IouMode mode) {
  if (frame.first <= 0 || frame.second <= 0) throw Error("detection_iou: zero-area frame");
  if (mode == IouMode::Mask) {
    const auto a = rasterize(boxes_sr, frame), b = rasterize(boxes_hr, frame);
    long inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      inter += a[i] & b[i];
      uni += a[i] | b[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  }
  if (boxes_sr.empty() && boxes_hr.empty()) return 1.0;
  if (boxes_sr.empty() || boxes_hr.empty()) return 0.0;
  struct Pair {
    double iou;
    std::size_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < boxes_sr.size(); ++i)
    for (std::size_t j = 0; j < boxes_hr.size(); ++j) {
      const double v = box_iou(boxes_sr[i], boxes_hr[j]);
      if (v > 0) pairs.push_back({v, i, j});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<bool> used_sr(boxes_sr.size()), used_hr(boxes_hr.size());
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (used_sr[p.i] || used_hr[p.j]) continue;
    used_sr[p.i] = used_hr[p.j] = true;
    sum += p.iou;
  }
  return sum / static_cast<double>(std::max(boxes_sr.size(), boxes_hr.size()));
}

FeatureDistances feature_distance_report(const detector::DetectionOutput& det_sr,
                                         const detector::DetectionOutput& det_hr) {
  return {100.0 * loss::task_l1(det_sr.deep_features, det_hr.deep_features),
          100.0 * loss::task_out_l1(det_sr, det_hr)};
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"psnr_db", "ssim", "lpips", "iou", "ctpn_deep_x100",
                                                "ctpn_out_x100"};
  return cols;
}

namespace {

std::optional<double> metric_value(const ReportRow& r, std::size_t col) {
  switch (col) {
    case 0: return r.psnr_db;
    case 1: return r.ssim;
    case 2: return r.lpips;
    case 3: return r.iou;
    case 4: return r.ctpn_deep_x100;
    default: return r.ctpn_out_x100;
  }
}

bool higher_is_better(std::size_t col) { return col == 0 || col == 1 || col == 3; }

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace

std::vector<std::vector<std::string>> best_flags(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> flags(rows.size());
  const auto& cols = metric_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    std::optional<double> best;
    for (const auto& r : rows) {
      const auto v = metric_value(r, c);
      if (!v) continue;
      if (!best || (higher_is_better(c) ? *v > *best : *v < *best)) best = v;
    }
    if (!best) continue;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (metric_value(rows[i], c) == best) flags[i].push_back(cols[c]);
  }
  return flags;
}

std::string report_csv(const MetricReport& report) {
  std::string out = std::string(kReportHeader) + "\n";
  const auto flags = best_flags(report.rows);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    out += r.model + "," + r.losses.label() + "," + fmt("%.6f", r.psnr_db) + "," + fmt("%.6f", r.ssim) + "," +
           (r.lpips ? fmt("%.6f", *r.lpips) : kDash) + "," + fmt("%.6f", r.iou) + "," +
           fmt("%.6f", r.ctpn_deep_x100) + "," + fmt("%.6f", r.ctpn_out_x100) + "," + join(flags[i], ";") + "\n";
  }
  return out;
}

std::string report_text(const MetricReport& report) {
  const auto flags = best_flags(report.rows);
  auto cell = [&](std::size_t row, std::size_t col, const char* f) {
    const auto v = metric_value(report.rows[row], col);
    if (!v) return std::string(kDash);
    const bool best = std::find(flags[row].begin(), flags[row].end(), metric_columns()[col]) != flags[row].end();
    return fmt(f, *v) + (best ? "*" : "");
  };
  std::ostringstream os;
  char line[256];
  os << "Dataset: " << report.dataset << "  (IoU mode: " << to_string(report.iou_mode) << ")\n";
  std::snprintf(line, sizeof line, "%-16s %-36s | %-38s | %-38s\n", "", "", "Image similarity metrics",
                "Text detection metrics");
  os << line;
  std::snprintf(line, sizeof line, "%-16s %-36s | %12s %12s %12s | %12s %12s %12s\n", "Model", "Loss function",
                "PSNR", "SSIM", "LPIPS", "IoU", "CTPN-deep", "CTPN-out");
  os << line;
  std::snprintf(line, sizeof line, "%-16s %-36s | %12s %12s %12s | %12s %12s %12s\n", "", "", "[dB]", "", "",
                "", "(x1e-2)", "(x1e-2)");
  os << line;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    const auto& r = report.rows[i];
    std::snprintf(line, sizeof line, "%-16s %-36s |", r.model.c_str(), r.losses.label().c_str());
    os << line;
    const char* formats[6] = {"%.2f", "%.4f", "%.4f", "%.4f", "%.4f", "%.4f"};
    for (std::size_t c = 0; c < 6; ++c) os << (c == 3 ? " |" : "") << " " << pad_left(cell(i, c, formats[c]), 12);
    os << "\n";
  }
  os << "* best value in the column\n";
  return os.str();
}

void render_report(const MetricReport& report, const fs::path& dir) {
  if (report.dataset.empty()) throw Error("report needs a dataset label");
  fs::create_directories(dir);
  const std::string csv = report_csv(report), txt = report_text(report);
  io::write_file_bytes(dir / (report.dataset + ".csv"), {csv.begin(), csv.end()});
  io::write_file_bytes(dir / (report.dataset + ".txt"), {txt.begin(), txt.end()});
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) throw Error("report CSV: unexpected header");
  std::vector<ReportRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() == 8) f.emplace_back();
    if (f.size() != 9) throw Error("report CSV line " + std::to_string(line_no) + ": expected 9 fields");
    try {
      ReportRow r;
      r.model = f[0];
      r.losses = LossSet::parse_label(f[1]);
      r.psnr_db = std::stod(f[2]);
      r.ssim = std::stod(f[3]);
      if (f[4] != kDash) r.lpips = std::stod(f[4]);
      r.iou = std::stod(f[5]);
      r.ctpn_deep_x100 = std::stod(f[6]);
      r.ctpn_out_x100 = std::stod(f[7]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw Error("report CSV line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return rows;
}

ImageTensor make_panel(const ImageTensor& lr, const ImageTensor& sr, const ImageTensor& hr,
                       const std::vector<BBox>& sr_boxes, const std::vector<BBox>& hr_boxes, ScaleFactor s) {
  const int f = s.value();
  const int h = hr.height(), w = hr.width();
  if (!sr.same_shape(hr) || lr.height() * f != h || lr.width() * f != w)
    throw Error("panel: inconsistent LR/SR/HR shapes");
  const int gap = 4;
  ImageTensor panel(h, 3 * w + 2 * gap, 3, 1.0);
  auto rgb = [](const ImageTensor& img, int y, int x, int c) {
    return std::clamp(img.at(y, x, img.channels() == 3 ? c : 0), 0.0, 1.0);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        panel.at(y, x, c) = rgb(lr, y / f, x / f, c);
        panel.at(y, w + gap + x, c) = rgb(sr, y, x, c);
        panel.at(y, 2 * (w + gap) + x, c) = rgb(hr, y, x, c);
      }
  auto outline = [&](const std::vector<BBox>& boxes, int x_off) {
    for (const auto& b0 : boxes) {
      const BBox b = clip_box(b0, h, w);
      if (!b.valid()) continue;
      const int xa = static_cast<int>(b.x0), xb = std::min(w - 1, static_cast<int>(std::ceil(b.x1)) - 1);
      const int ya = static_cast<int>(b.y0), yb = std::min(h - 1, static_cast<int>(std::ceil(b.y1)) - 1);
      auto put = [&](int y, int x) {
        panel.at(y, x_off + x, 0) = 1.0;
        panel.at(y, x_off + x, 1) = 0.0;
        panel.at(y, x_off + x, 2) = 0.0;
      };
      for (int x = xa; x <= xb; ++x) put(ya, x), put(yb, x);
      for (int y = ya; y <= yb; ++y) put(y, xa), put(y, xb);
    }
  };
  outline(sr_boxes, w + gap);
  outline(hr_boxes, 2 * (w + gap));
  return panel;
}

ReportRow evaluate_model(const models::SrModel& model, const data::PreparedDataset& ds,
                         const detector::DetectorBackend& backend, const EvalOptions& options,
                         std::vector<SampleResult>* per_sample) {
  const auto samples = ds.collect(ds.test_ids);
  if (samples.empty()) throw Error("dataset has no test patches");
  if (!(model.config().scale == ds.scale)) throw Error("model scale differs from dataset scale");
  if (!options.panel_dir.empty()) fs::create_directories(options.panel_dir);
  ReportRow row;
  int n_lpips = 0;
  double lpips_sum = 0.0;
  for (const auto& p : samples) {
    const ImageTensor lr = data::convert_channels(p.lr, model.config().channels);
    const ImageTensor hr = data::convert_channels(p.hr, model.config().channels);
    const ImageTensor sr = options.identity_bypass ? hr : clamp_image(model.forward(lr));
    const auto det_sr = backend.detect(sr);
    const auto det_hr = backend.detect(hr);
    SampleResult r;
    r.id = p.id;
    r.psnr_db = psnr(sr, hr);
    r.ssim = ssim(sr, hr);
    r.lpips = perceptual_distance(sr, hr, options.plugin);
    r.iou = detection_iou(det_sr.boxes, det_hr.boxes, {hr.height(), hr.width()}, options.iou_mode);
    r.distances = feature_distance_report(det_sr, det_hr);
    row.psnr_db += r.psnr_db;
    row.ssim += r.ssim;
    row.iou += r.iou;
    row.ctpn_deep_x100 += r.distances.deep_x100;
    row.ctpn_out_x100 += r.distances.out_x100;
    if (r.lpips) {
      lpips_sum += *r.lpips;
      ++n_lpips;
    }
    if (!options.panel_dir.empty())
      save_png(make_panel(lr, sr, hr, det_sr.boxes, det_hr.boxes, ds.scale), options.panel_dir / (p.id + ".png"));
    if (per_sample) per_sample->push_back(r);
  }
  const double n = static_cast<double>(samples.size());
  row.psnr_db /= n;
  row.ssim /= n;
  row.iou /= n;
  row.ctpn_deep_x100 /= n;
  row.ctpn_out_x100 /= n;
  if (n_lpips == static_cast<int>(samples.size())) row.lpips = lpips_sum / n;
  return row;
}

}  // namespace tdsr::eval
