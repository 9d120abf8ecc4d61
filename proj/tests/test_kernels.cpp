#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "tdsr/kernels/conv.hpp"

using namespace tdsr;
using namespace tdsr::kernels;
using tdsr::testing::dot;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Direct definition: out[o,y,x] = b[o] + sum in[i, y+dy-ph, x+dx-pw] * w[o,i,dy,dx].
std::vector<double> conv_oracle(const ConvShape& s, int h, int w, const std::vector<double>& in,
                                const std::vector<double>& wt, const std::vector<double>& b) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  std::vector<double> out(static_cast<std::size_t>(s.out_c) * oh * ow);
  for (int o = 0; o < s.out_c; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = b[o];
        for (int i = 0; i < s.in_c; ++i)
          for (int dy = 0; dy < s.kh; ++dy)
            for (int dx = 0; dx < s.kw; ++dx) {
              const int yy = y + dy - s.pad_h, xx = x + dx - s.pad_w;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              acc += in[(static_cast<std::size_t>(i) * h + yy) * w + xx] *
                     wt[((static_cast<std::size_t>(o) * s.in_c + i) * s.kh + dy) * s.kw + dx];
            }
        out[(static_cast<std::size_t>(o) * oh + y) * ow + x] = acc;
      }
  return out;
}

// Scatter definition of the transposed convolution.
std::vector<double> deconv_oracle(const ConvTransposeShape& s, int h, int w, const std::vector<double>& in,
                                  const std::vector<double>& wt, const std::vector<double>& b) {
  const int oh = s.out_h(h), ow = s.out_w(w);
  std::vector<double> out(static_cast<std::size_t>(s.out_c) * oh * ow);
  for (int o = 0; o < s.out_c; ++o)
    for (int p = 0; p < oh * ow; ++p) out[static_cast<std::size_t>(o) * oh * ow + p] = b[o];
  for (int i = 0; i < s.in_c; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int o = 0; o < s.out_c; ++o)
          for (int ky = 0; ky < s.k; ++ky)
            for (int kx = 0; kx < s.k; ++kx) {
              const int oy = y * s.stride - s.pad + ky, ox = x * s.stride - s.pad + kx;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              out[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] +=
                  in[(static_cast<std::size_t>(i) * h + y) * w + x] *
                  wt[((static_cast<std::size_t>(i) * s.out_c + o) * s.k + ky) * s.k + kx];
            }
  return out;
}

}  // namespace

TEST_SUITE("kernels") {
  TEST_CASE("conv2d forward matches the direct definition under both policies") {
    Rng rng(1);
    for (auto s : {ConvShape{3, 4, 3, 3, 1, 1}, ConvShape{2, 5, 1, 7, 0, 3}, ConvShape{1, 2, 5, 5, 2, 2},
                   ConvShape{4, 3, 1, 1, 0, 0}}) {
      const int h = 7, w = 9;
      const auto in = random_vec(rng, static_cast<std::size_t>(s.in_c) * h * w);
      const auto wt = random_vec(rng, s.weight_size());
      const auto b = random_vec(rng, s.out_c);
      const auto want = conv_oracle(s, h, w, in, wt, b);
      for (auto pol : {Policy::Serial, Policy::Parallel}) {
        std::vector<double> out(want.size());
        conv2d_forward(s, h, w, in, wt, b, out, pol);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("conv2d backward passes are adjoint to the forward map") {
    Rng rng(2);
    const ConvShape s{3, 4, 3, 5, 1, 2};
    const int h = 6, w = 8;
    const auto in = random_vec(rng, static_cast<std::size_t>(s.in_c) * h * w);
    const auto wt = random_vec(rng, s.weight_size());
    const std::vector<double> zero_b(s.out_c, 0.0);
    const auto g = random_vec(rng, static_cast<std::size_t>(s.out_c) * s.out_h(h) * s.out_w(w));
    for (auto pol : {Policy::Serial, Policy::Parallel}) {
      std::vector<double> out(g.size()), gin(in.size(), 0.0), gw(wt.size(), 0.0), gb(s.out_c, 0.0);
      conv2d_forward(s, h, w, in, wt, zero_b, out, pol);
      conv2d_backward_input(s, h, w, g, wt, gin, pol);
      conv2d_backward_weight(s, h, w, in, g, gw, gb, pol);
      // <g, W x> == <W^T g, x> == <dW, W> (linear in both x and W).
      CHECK(dot(g, out) == doctest::Approx(dot(gin, in)).epsilon(1e-11));
      CHECK(dot(g, out) == doctest::Approx(dot(gw, wt)).epsilon(1e-11));
      for (int o = 0; o < s.out_c; ++o) {
        double sum = 0.0;
        for (int p = 0; p < s.out_h(h) * s.out_w(w); ++p) sum += g[static_cast<std::size_t>(o) * s.out_h(h) * s.out_w(w) + p];
        CHECK(gb[o] == doctest::Approx(sum).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("transposed conv matches the scatter definition and its adjoints") {
    Rng rng(3);
    for (auto s : {ConvTransposeShape{2, 3, 9, 4, 4, 3}, ConvTransposeShape{3, 1, 9, 2, 4, 1},
                   ConvTransposeShape{1, 2, 3, 3, 1, 2}}) {
      const int h = 4, w = 5;
      const auto in = random_vec(rng, static_cast<std::size_t>(s.in_c) * h * w);
      const auto wt = random_vec(rng, s.weight_size());
      const auto b = random_vec(rng, s.out_c);
      CHECK(s.out_h(h) == h * s.stride);
      const auto want = deconv_oracle(s, h, w, in, wt, b);
      const std::vector<double> zero_b(s.out_c, 0.0);
      const auto lin = deconv_oracle(s, h, w, in, wt, zero_b);
      const auto g = random_vec(rng, want.size());
      for (auto pol : {Policy::Serial, Policy::Parallel}) {
        std::vector<double> out(want.size());
        conv_transpose2d_forward(s, h, w, in, wt, b, out, pol);
        for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-12));
        std::vector<double> gin(in.size(), 0.0), gw(wt.size(), 0.0), gb(s.out_c, 0.0);
        conv_transpose2d_backward_input(s, h, w, g, wt, gin, pol);
        conv_transpose2d_backward_weight(s, h, w, in, g, gw, gb, pol);
        CHECK(dot(g, lin) == doctest::Approx(dot(gin, in)).epsilon(1e-11));
        CHECK(dot(g, lin) == doctest::Approx(dot(gw, wt)).epsilon(1e-11));
      }
    }
  }

  TEST_CASE("parallel kernels reproduce the serial reference bit for bit") {
    Rng rng(4);
    const ConvShape s{8, 16, 3, 3, 1, 1};
    const int h = 20, w = 18;
    const auto in = random_vec(rng, static_cast<std::size_t>(s.in_c) * h * w);
    const auto wt = random_vec(rng, s.weight_size());
    const auto b = random_vec(rng, s.out_c);
    const auto g = random_vec(rng, static_cast<std::size_t>(s.out_c) * h * w);
    std::vector<double> o1(g.size()), o2(g.size());
    conv2d_forward(s, h, w, in, wt, b, o1, Policy::Serial);
    conv2d_forward(s, h, w, in, wt, b, o2, Policy::Parallel);
    CHECK(o1 == o2);
    std::vector<double> a1(in.size()), a2(in.size()), w1(wt.size()), w2(wt.size()), b1(s.out_c), b2(s.out_c);
    conv2d_backward_input(s, h, w, g, wt, a1, Policy::Serial);
    conv2d_backward_input(s, h, w, g, wt, a2, Policy::Parallel);
    CHECK(a1 == a2);
    conv2d_backward_weight(s, h, w, in, g, w1, b1, Policy::Serial);
    conv2d_backward_weight(s, h, w, in, g, w2, b2, Policy::Parallel);
    CHECK(w1 == w2);
    CHECK(b1 == b2);
  }

  TEST_CASE("policy switch is global") {
    const auto before = default_policy();
    set_default_policy(Policy::Serial);
    CHECK(default_policy() == Policy::Serial);
    set_default_policy(before);
  }
}
