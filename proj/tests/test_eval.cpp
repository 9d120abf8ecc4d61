#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/data/synthetic.hpp"
#include "tdsr/eval/metrics.hpp"
#include "tdsr/io/container.hpp"
#include "tdsr/loss/loss.hpp"

using namespace tdsr;
using namespace tdsr::eval;
using enum tdsr::LossComponentId;
using tdsr::testing::random_image;
using tdsr::testing::random_map;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(TDSR_TEST_GOLDEN_DIR);

double psnr_oracle(const ImageTensor& a, const ImageTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  const double mse = s / static_cast<double>(a.size());
  return mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
}

// Direct evaluation of every 11x11 window with an explicit 2-D Gaussian.
double ssim_oracle(const ImageTensor& a0, const ImageTensor& b0) {
  const auto a = to_grayscale(a0), b = to_grayscale(b0);
  const int win = 11;
  double g[11][11], total = 0.0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) total += g[y][x] = std::exp(-((y - 5) * (y - 5) + (x - 5) * (x - 5)) / (2 * 1.5 * 1.5));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0.0;
  int n = 0;
  for (int y0 = 0; y0 + win <= a.height(); ++y0)
    for (int x0 = 0; x0 + win <= a.width(); ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const double w = g[y][x] / total, va = a.at(y0 + y, x0 + x, 0), vb = b.at(y0 + y, x0 + x, 0);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return sum / n;
}

double iou_oracle(const std::vector<BBox>& a, const std::vector<BBox>& b, int h, int w) {
  long inter = 0, uni = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto inside = [&](const std::vector<BBox>& boxes) {
        for (const auto& bx : boxes)
          if (x + 0.5 >= bx.x0 && x + 0.5 < bx.x1 && y + 0.5 >= bx.y0 && y + 0.5 < bx.y1) return true;
        return false;
      };
      const bool ia = inside(a), ib = inside(b);
      inter += ia && ib;
      uni += ia || ib;
    }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<BBox> random_boxes(Rng& rng, int n, int h, int w) {
  std::vector<BBox> boxes;
  for (int i = 0; i < n; ++i) {
    const double x0 = rng.uniform(0, w - 2), y0 = rng.uniform(0, h - 2);
    boxes.push_back({x0, y0, rng.uniform(x0 + 1, w), rng.uniform(y0 + 1, h)});
  }
  return boxes;
}

ImageTensor noisy(const ImageTensor& img, double amp, std::uint64_t seed) {
  Rng rng(seed);
  auto out = img;
  for (auto& v : out.values()) v += rng.uniform(-amp, amp);
  return out;
}

MetricReport example_report() {
  MetricReport r;
  r.dataset = "synthetic";
  r.rows.push_back({"bicubic", {}, 21.5, 0.8012, std::nullopt, 0.8421, 4.1532, 2.8811});
  r.rows.push_back({"SRCNN", {L2_HR}, 23.25, 0.8533, std::nullopt, 0.8871, 3.0111, 2.1204});
  r.rows.push_back({"SRCNN", {L2_HR, L2_LR, TASK_DEEP, TASK_OUT}, 23.1, 0.8533, std::nullopt, 0.9214, 2.5102, 1.9001});
  r.rows.push_back({"SRResNet", {TASK_DEEP, TASK_OUT}, 3.41, -0.1507, std::nullopt, 0.6012, 2.4001, 2.2222});
  return r;
}

std::string read_text(const std::filesystem::path& p) {
  const auto b = io::read_file_bytes(p);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("psnr examples") {
    const ImageTensor a(8, 8, 3, 0.4);
    CHECK(psnr(a, a) == kPsnrCap);
    const ImageTensor b(8, 8, 3, 0.5);
    CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
    CHECK_THROWS_AS(psnr(a, ImageTensor(8, 9, 3)), Error);
  }

  TEST_CASE("psnr matches the oracle and falls with noise") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
      const auto a = random_image(rng, 10, 9, trial % 2 ? 3 : 1), b = random_image(rng, 10, 9, trial % 2 ? 3 : 1);
      CHECK(std::fabs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9);
      CHECK(psnr(a, b) == psnr(b, a));
    }
    const auto base = random_image(rng, 32, 32, 1, 0.3, 0.7);
    double last = kPsnrCap;
    for (double amp = 0.01; amp <= 0.3 + 1e-12; amp += 0.01) {
      const double p = psnr(base, noisy(base, amp, 5));
      CHECK(p < last);
      last = p;
    }
  }

  TEST_CASE("ssim examples") {
    Rng rng(2);
    const auto a = random_image(rng, 16, 16, 3);
    CHECK(std::fabs(ssim(a, a) - 1.0) < 1e-9);
    const double c1 = 1e-4;
    CHECK(ssim(ImageTensor(16, 16, 1, 0.0), ImageTensor(16, 16, 1, 1.0)) == doctest::Approx(c1 / (1.0 + c1)).epsilon(1e-9));
    CHECK_THROWS_AS(ssim(ImageTensor(10, 20, 1), ImageTensor(10, 20, 1)), Error);
    // Inverted structure drives SSIM negative.
    auto inv = a;
    for (auto& v : inv.values()) v = 1.0 - v;
    CHECK(ssim(a, inv) < 0.0);
  }

  TEST_CASE("ssim matches a windowed brute-force oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const int h = rng.uniform_int(11, 20), w = rng.uniform_int(11, 20);
      const auto a = random_image(rng, h, w, trial % 3 == 0 ? 3 : 1);
      const auto b = trial % 2 ? noisy(a, 0.2, trial) : random_image(rng, h, w, a.channels());
      const double s = ssim(a, b);
      CHECK(std::fabs(s - ssim_oracle(a, b)) < 1e-6);
      CHECK(std::fabs(s - ssim(b, a)) < 1e-12);
      CHECK(std::fabs(s) <= 1.0);
    }
  }

  TEST_CASE("perceptual distance plugin contract") {
    Rng rng(4);
    const auto a = random_image(rng, 8, 8, 1), b = random_image(rng, 8, 8, 1);
    CHECK(!perceptual_distance(a, b, nullptr).has_value());
    const IdentityPlugin id;
    CHECK(*perceptual_distance(a, a, &id) == 0.0);
    // Per-pixel channel-normalised features: one channel normalises to +-1 unless zero.
    const auto d = *perceptual_distance(a, b, &id);
    double want = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double na = a.values()[i] / std::fabs(a.values()[i]), nb = b.values()[i] / std::fabs(b.values()[i]);
      want += (na - nb) * (na - nb);
    }
    CHECK(d == doctest::Approx(want / 64.0).epsilon(1e-8));
    // Three channels: features are unit vectors per pixel.
    const auto c = random_image(rng, 6, 5, 3), e = random_image(rng, 6, 5, 3);
    double want3 = 0.0;
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 5; ++x) {
        double nc = 0, ne = 0;
        for (int k = 0; k < 3; ++k) {
          nc += c.at(y, x, k) * c.at(y, x, k);
          ne += e.at(y, x, k) * e.at(y, x, k);
        }
        for (int k = 0; k < 3; ++k) {
          const double diff = c.at(y, x, k) / std::sqrt(nc) - e.at(y, x, k) / std::sqrt(ne);
          want3 += diff * diff;
        }
      }
    CHECK(*perceptual_distance(c, e, &id) == doctest::Approx(want3 / 30.0).epsilon(1e-9));
  }

  TEST_CASE("iou examples") {
    const std::vector<BBox> a = {{0, 0, 10, 10}}, b = {{5, 0, 15, 10}}, far = {{12, 12, 18, 18}};
    CHECK(detection_iou(a, a, {20, 20}) == 1.0);
    CHECK(detection_iou(a, far, {20, 20}) == 0.0);
    CHECK(detection_iou(a, b, {20, 20}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(iou_oracle(a, b, 20, 20) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(detection_iou({}, {}, {20, 20}) == 1.0);
    CHECK(detection_iou(a, {}, {20, 20}) == 0.0);
    CHECK(detection_iou({}, a, {20, 20}, IouMode::Matched) == 0.0);
    CHECK_THROWS_AS(detection_iou(a, b, {0, 20}), Error);
    CHECK(box_iou(a[0], b[0]) == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("mask iou matches pixel counting and is symmetric and translation invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      const int h = rng.uniform_int(10, 40), w = rng.uniform_int(10, 40);
      const auto a = random_boxes(rng, rng.uniform_int(1, 4), h, w);
      const auto b = random_boxes(rng, rng.uniform_int(1, 4), h, w);
      const double v = detection_iou(a, b, {h, w});
      CHECK(std::fabs(v - iou_oracle(a, b, h, w)) < 1e-9);
      CHECK(v == detection_iou(b, a, {h, w}));
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK((v == 1.0) == (rasterize(a, {h, w}) == rasterize(b, {h, w})));
      // Whole-pixel shift that keeps every box inside a larger frame.
      auto shift = [](std::vector<BBox> boxes) {
        for (auto& bx : boxes) bx = {bx.x0 + 3, bx.y0 + 2, bx.x1 + 3, bx.y1 + 2};
        return boxes;
      };
      CHECK(std::fabs(detection_iou(shift(a), shift(b), {h + 2, w + 3}) - v) < 1e-12);
    }
  }

  TEST_CASE("matched iou") {
    const std::vector<BBox> a = {{0, 0, 10, 10}, {20, 0, 30, 10}};
    const std::vector<BBox> b = {{0, 0, 10, 10}};
    CHECK(detection_iou(a, b, {40, 40}, IouMode::Matched) == doctest::Approx(0.5));
    CHECK(detection_iou(a, a, {40, 40}, IouMode::Matched) == 1.0);
    CHECK(parse_iou_mode("matched") == IouMode::Matched);
    CHECK(std::string(to_string(IouMode::Mask)) == "mask");
    CHECK_THROWS_AS(parse_iou_mode("box"), Error);
  }

  TEST_CASE("feature distances reuse the training loss") {
    detector::DetectionOutput a, b;
    a.deep_features = FeatureMap(512, 2, 3, 0.3);
    b.deep_features = FeatureMap(512, 2, 3, 0.31);
    a.out_coords = b.out_coords = FeatureMap(20, 2, 3, 0.1);
    a.out_scores = b.out_scores = FeatureMap(20, 2, 3, 0.5);
    auto d = feature_distance_report(a, a);
    CHECK(d.deep_x100 == 0.0);
    CHECK(d.out_x100 == 0.0);
    d = feature_distance_report(a, b);
    CHECK(d.deep_x100 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(d.out_x100 == 0.0);

    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      detector::DetectionOutput x, y;
      x.deep_features = random_map(rng, 512, 2, 2);
      y.deep_features = random_map(rng, 512, 2, 2);
      x.out_coords = random_map(rng, 20, 2, 2);
      y.out_coords = random_map(rng, 20, 2, 2);
      x.out_scores = random_map(rng, 20, 2, 2);
      y.out_scores = random_map(rng, 20, 2, 2);
      const auto r = feature_distance_report(x, y);
      CHECK(std::fabs(r.deep_x100 / 100.0 - loss::task_l1(x.deep_features, y.deep_features)) < 1e-10);
      CHECK(std::fabs(r.out_x100 / 100.0 - loss::task_out_l1(x, y)) < 1e-10);
    }
    b.deep_features = FeatureMap(512, 3, 3);
    CHECK_THROWS_AS(feature_distance_report(a, b), Error);
  }

  TEST_CASE("best flags match a brute-force column scan") {
    CHECK(metric_columns() == std::vector<std::string>{"psnr_db", "ssim", "lpips", "iou", "ctpn_deep_x100", "ctpn_out_x100"});
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<ReportRow> rows(rng.uniform_int(1, 6));
      for (auto& r : rows) {
        // Coarse values so ties occur.
        r.psnr_db = rng.uniform_int(20, 24);
        r.ssim = rng.uniform_int(0, 3) / 4.0;
        if (rng.uniform() < 0.6) r.lpips = rng.uniform_int(1, 3) / 10.0;
        r.iou = rng.uniform_int(5, 9) / 10.0;
        r.ctpn_deep_x100 = rng.uniform_int(1, 4);
        r.ctpn_out_x100 = rng.uniform_int(1, 4);
      }
      const auto flags = best_flags(rows);
      REQUIRE(flags.size() == rows.size());
      auto get = [](const ReportRow& r, int c) -> std::optional<double> {
        switch (c) {
          case 0: return r.psnr_db;
          case 1: return r.ssim;
          case 2: return r.lpips;
          case 3: return r.iou;
          case 4: return r.ctpn_deep_x100;
          default: return r.ctpn_out_x100;
        }
      };
      for (int c = 0; c < 6; ++c) {
        const bool higher = c == 0 || c == 1 || c == 3;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          bool best = get(rows[i], c).has_value();
          for (std::size_t j = 0; j < rows.size() && best; ++j) {
            const auto vi = get(rows[i], c), vj = get(rows[j], c);
            if (vj && (higher ? *vj > *vi : *vj < *vi)) best = false;
          }
          const bool flagged = std::find(flags[i].begin(), flags[i].end(), metric_columns()[c]) != flags[i].end();
          CHECK(flagged == best);
        }
      }
    }
    std::vector<ReportRow> one(1);
    one[0].lpips = 0.2;
    CHECK(best_flags(one)[0].size() == 6);
  }

  TEST_CASE("report matches the golden files") {
    const auto report = example_report();
    CHECK(report_csv(report) == read_text(kGolden / "report_synthetic.csv"));
    CHECK(report_text(report) == read_text(kGolden / "report_synthetic.txt"));
    const auto dir = tdsr::testing::temp_dir("eval_report");
    render_report(report, dir);
    CHECK(read_text(dir / "synthetic.csv") == read_text(kGolden / "report_synthetic.csv"));
    CHECK(read_text(dir / "synthetic.txt") == read_text(kGolden / "report_synthetic.txt"));
  }

  TEST_CASE("report column structure and empty reports") {
    const auto text = report_text(example_report());
    const auto order = {"PSNR", "SSIM", "LPIPS", "IoU", "CTPN-deep", "CTPN-out"};
    std::size_t pos = 0;
    for (const char* col : order) {
      const auto at = text.find(col, pos);
      REQUIRE(at != std::string::npos);
      pos = at;
    }
    const auto header_line = text.substr(text.find("Model"), text.find('\n', text.find("Model")) - text.find("Model"));
    CHECK(header_line.find("LPIPS |") != std::string::npos);

    MetricReport empty;
    empty.dataset = "none";
    CHECK(report_csv(empty) == std::string(kReportHeader) + "\n");
    const auto dir = tdsr::testing::temp_dir("eval_empty");
    render_report(empty, dir);
    CHECK(std::filesystem::exists(dir / "none.txt"));
    CHECK(read_text(dir / "none.csv") == std::string(kReportHeader) + "\n");
  }

  TEST_CASE("report csv round trip") {
    const auto report = example_report();
    const auto rows = parse_report_csv(report_csv(report));
    REQUIRE(rows.size() == report.rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].model == report.rows[i].model);
      CHECK(rows[i].losses == report.rows[i].losses);
      CHECK(rows[i].psnr_db == doctest::Approx(report.rows[i].psnr_db).epsilon(1e-6));
      CHECK(rows[i].lpips.has_value() == report.rows[i].lpips.has_value());
    }
    CHECK_THROWS_AS(parse_report_csv("model,losses\n"), Error);
    CHECK_THROWS_AS(parse_report_csv(std::string(kReportHeader) + "\nSRCNN,L2_HR,abc,1,—,1,1,1,\n"), Error);
  }

  TEST_CASE("identity bypass scores perfectly") {
    const auto det = detector::DetectorBackend::toy(1);
    const auto dir = tdsr::testing::temp_dir("eval_bypass");
    std::filesystem::create_directories(dir / "hr");
    for (int i = 0; i < 4; ++i)
      save_png(data::convert_channels(data::generate_synthetic_document(40 + i, 64, 64).image, 1), dir / "hr" / ("p" + std::to_string(i) + ".png"));
    data::DatasetSpec spec;
    spec.root = dir;
    spec.patch_size_hr = 32;
    spec.stride_hr = 32;
    const auto ds = data::prepare_dataset(spec, ScaleFactor(4));
    models::SrModelConfig cfg;
    cfg.channels = 1;
    cfg.width_multiplier = 0.25;
    const auto model = models::build_model(cfg, 1);
    EvalOptions opts;
    opts.identity_bypass = true;
    opts.panel_dir = dir / "panels";
    std::vector<SampleResult> samples;
    const auto row = evaluate_model(model, ds, det, opts, &samples);
    CHECK(row.psnr_db == kPsnrCap);
    CHECK(row.ssim == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(row.iou == 1.0);
    CHECK(row.ctpn_deep_x100 == 0.0);
    CHECK(row.ctpn_out_x100 == 0.0);
    CHECK(!row.lpips.has_value());
    CHECK(samples.size() == ds.collect(ds.test_ids).size());
    int panels = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "panels")) panels += e.path().extension() == ".png";
    CHECK(panels == static_cast<int>(samples.size()));

    opts.identity_bypass = false;
    opts.panel_dir.clear();
    const auto real = evaluate_model(model, ds, det, opts);
    CHECK(real.psnr_db < kPsnrCap);
    CHECK(real.psnr_db > 10.0);
  }

  TEST_CASE("panel layout") {
    const ImageTensor lr(4, 4, 1, 0.2), sr(16, 16, 1, 0.5), hr(16, 16, 1, 0.9);
    const auto panel = make_panel(lr, sr, hr, {{2, 2, 8, 8}}, {}, ScaleFactor(4));
    CHECK(panel.channels() == 3);
    CHECK(panel.height() == 16);
    CHECK(panel.width() >= 48);
    CHECK(panel.at(0, 0, 0) == doctest::Approx(0.2));
  }
}
