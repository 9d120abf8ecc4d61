// Trains the toy text detector on synthetic pages and writes its weights.
// The shipped fixture data/toy_detector.ckpt was produced with the defaults.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/core/rng.hpp"
#include "tdsr/data/resample.hpp"
#include "tdsr/data/synthetic.hpp"
#include "tdsr/detector/detector.hpp"
#include "tdsr/train/train.hpp"

using namespace tdsr;

namespace {

constexpr double kPositiveIou = 0.5;
constexpr double kNegativeIou = 0.3;
constexpr double kRegressionWeight = 1.0;

struct Example {
  ImageTensor image;
  std::vector<BBox> lines;
};

double strip_iou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = (a1 - a0) + (b1 - b0) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Random crop of a page; boxes are clipped to the crop and kept when a usable part remains.
Example crop(const data::SyntheticDocument& doc, int size, Rng& rng) {
  const int y = rng.uniform_int(0, doc.image.height() - size);
  const int x = rng.uniform_int(0, doc.image.width() - size);
  Example ex{ImageTensor(size, size, doc.image.channels()), {}};
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      for (int ch = 0; ch < doc.image.channels(); ++ch) ex.image.at(r, c, ch) = doc.image.at(y + r, x + c, ch);
  for (const auto& b : doc.boxes) {
    const BBox moved{b.x0 - x, b.y0 - y, b.x1 - x, b.y1 - y};
    const BBox clipped = clip_box(moved, size, size);
    if (clipped.width() >= 2.0 && clipped.height() >= 0.6 * b.height()) ex.lines.push_back(clipped);
  }
  return ex;
}

struct Labels {
  // Per (anchor, row, col): 1 text, 0 background, -1 ignored.
  std::vector<int> cls;
  std::vector<double> vc, vh;
};

Labels make_labels(const std::vector<BBox>& lines, int rows, int cols, const detector::FeatureSpec& spec) {
  const int n = detector::kAnchors * rows * cols;
  Labels L{std::vector<int>(n, 0), std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  std::vector<double> best(n, 0.0);
  std::vector<int> owner(n, -1);
  auto idx = [&](int k, int r, int c) { return (k * rows + r) * cols + c; };
  for (int c = 0; c < cols; ++c) {
    const double cx = (c + 0.5) * spec.stride;
    for (int li = 0; li < static_cast<int>(lines.size()); ++li) {
      const BBox& b = lines[li];
      if (!(b.x0 <= cx && cx < b.x1)) continue;
      int arg = -1;
      double arg_iou = 0.0;
      for (int r = 0; r < rows; ++r)
        for (int k = 0; k < detector::kAnchors; ++k) {
          const double h = spec.anchor_heights[k];
          const double cy = (r + 0.5) * spec.stride;
          const double iou = strip_iou(cy - h / 2, cy + h / 2, b.y0, b.y1);
          const int i = idx(k, r, c);
          if (iou > best[i]) {
            best[i] = iou;
            owner[i] = li;
          }
          if (iou > arg_iou) {
            arg_iou = iou;
            arg = i;
          }
        }
      if (arg >= 0 && arg_iou > 0.0) {
        best[arg] = std::max(best[arg], kPositiveIou);
        owner[arg] = li;
      }
    }
  }
  for (int k = 0; k < detector::kAnchors; ++k)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const int i = idx(k, r, c);
        if (best[i] >= kPositiveIou) {
          L.cls[i] = 1;
          const BBox& b = lines[owner[i]];
          const double h = spec.anchor_heights[k];
          const double cy = (r + 0.5) * spec.stride;
          L.vc[i] = (0.5 * (b.y0 + b.y1) - cy) / h;
          L.vh[i] = std::log(b.height() / h);
        } else if (best[i] >= kNegativeIou) {
          L.cls[i] = -1;
        }
      }
  return L;
}

struct StepLoss {
  double cls = 0.0, reg = 0.0;
};

StepLoss example_grads(const detector::DetectorBackend& det, const Example& ex, nn::Grads& grads, double k) {
  detector::DetectorTape tape;
  const auto out = det.forward_taps(ex.image, &tape);
  const int rows = out.out_scores.height(), cols = out.out_scores.width();
  const Labels L = make_labels(ex.lines, rows, cols, det.feature_spec());
  int n_pos = 0, n_neg = 0;
  for (int v : L.cls) {
    n_pos += v == 1;
    n_neg += v == 0;
  }
  FeatureMap g_scores = out.out_scores.zeros_like();
  FeatureMap g_coords = out.out_coords.zeros_like();
  StepLoss loss;
  const double w_pos = n_pos ? 0.5 / n_pos : 0.0;
  const double w_neg = n_neg ? (n_pos ? 0.5 : 1.0) / n_neg : 0.0;
  for (int a = 0; a < detector::kAnchors; ++a)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const int i = (a * rows + r) * cols + c;
        if (L.cls[i] < 0) continue;
        const int ch = 2 * a + (L.cls[i] == 1 ? 1 : 0);
        const double w = L.cls[i] == 1 ? w_pos : w_neg;
        const double p = std::max(out.out_scores.at(ch, r, c), 1e-12);
        loss.cls -= w * std::log(p);
        g_scores.at(ch, r, c) = -k * w / p;
        if (L.cls[i] == 1) {
          const double targets[2] = {L.vc[i], L.vh[i]};
          for (int t = 0; t < 2; ++t) {
            const double d = out.out_coords.at(2 * a + t, r, c) - targets[t];
            const double wr = kRegressionWeight / n_pos;
            loss.reg += wr * (std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5);
            g_coords.at(2 * a + t, r, c) = k * wr * std::clamp(d, -1.0, 1.0);
          }
        }
      }
  det.backward_with_params(tape, FeatureMap{}, g_coords, g_scores, grads);
  return loss;
}

/// Pixel IoU between predicted and reference line masks.
double mask_iou(const std::vector<BBox>& a, const std::vector<BBox>& b, int h, int w) {
  long inter = 0, uni = 0;
  auto inside = [](const std::vector<BBox>& s, double x, double y) {
    for (const auto& bx : s)
      if (bx.x0 <= x && x < bx.x1 && bx.y0 <= y && y < bx.y1) return true;
    return false;
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool p = inside(a, x + 0.5, y + 0.5), q = inside(b, x + 0.5, y + 0.5);
      inter += p && q;
      uni += p || q;
    }
  return uni ? static_cast<double>(inter) / uni : 1.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train the toy text detector on synthetic pages"};
  std::uint64_t seed = 7;
  int steps = 3000, batch = 8, crop_size = 64, eval_pages = 8;
  double lr = 1e-3;
  std::string output = "data/toy_detector.ckpt";
  app.add_option("--seed", seed);
  app.add_option("--steps", steps);
  app.add_option("--batch", batch);
  app.add_option("--crop", crop_size);
  app.add_option("--lr", lr);
  app.add_option("--eval-pages", eval_pages);
  app.add_option("--output", output);
  CLI11_PARSE(app, argc, argv);

  try {
    auto det = detector::DetectorBackend::toy(derive_seed(seed, "detector-init"));
    train::OptimizerConfig oc;
    oc.learning_rate = lr;
    oc.batch_size = batch;
    train::Adam adam(det.params(), oc);
    Rng rng(derive_seed(seed, "detector-crops"));
    const auto t0 = std::chrono::steady_clock::now();
    StepLoss running;
    for (int step = 1; step <= steps; ++step) {
      nn::Grads grads = nn::zero_grads(det.params());
      StepLoss sum;
      for (int b = 0; b < batch; ++b) {
        data::SyntheticOptions so;
        so.channels = rng.uniform() < 0.3 ? 3 : 1;
        const auto doc = data::generate_synthetic_document(rng.uniform_int(0, 1 << 30), so);
        Example ex = crop(doc, crop_size, rng);
        // Half of the crops are seen through the x4 bicubic round trip, as SR output looks.
        if (rng.uniform() < 0.5) {
          const ScaleFactor s(4);
          ex.image = data::bicubic_upsample(data::degrade(ex.image, s), s);
        }
        const auto l = example_grads(det, ex, grads, 1.0 / batch);
        sum.cls += l.cls / batch;
        sum.reg += l.reg / batch;
      }
      adam.step(det.mutable_params(), std::move(grads));
      running.cls = step == 1 ? sum.cls : 0.98 * running.cls + 0.02 * sum.cls;
      running.reg = step == 1 ? sum.reg : 0.98 * running.reg + 0.02 * sum.reg;
      if (step % 100 == 0 || step == steps) {
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("step %5d  cls %.4f  reg %.4f  %.0fs\n", step, running.cls, running.reg, sec);
        std::fflush(stdout);
      }
    }
    det.save(output);

    double iou_sum = 0.0;
    for (int i = 0; i < eval_pages; ++i) {
      const auto doc = data::generate_synthetic_document(derive_seed(seed, "eval/" + std::to_string(i)), 256, 256);
      const auto d = det.detect(doc.image);
      const double iou = mask_iou(d.boxes, doc.boxes, 256, 256);
      iou_sum += iou;
      std::printf("eval page %d: %zu boxes (reference %zu), mask IoU %.3f\n", i, d.boxes.size(), doc.boxes.size(), iou);
    }
    const auto blank = det.detect(ImageTensor(256, 256, 1, 1.0));
    std::printf("mean IoU %.3f; blank page boxes %zu\n", iou_sum / eval_pages, blank.boxes.size());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
