#include "tdsr/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdsr/core/error.hpp"
#include "tdsr/core/rng.hpp"
#include "tdsr/data/resample.hpp"

namespace tdsr::nn {

int ParamStore::add(std::string name, std::vector<int> shape, double init_std, double init_value) {
  if (find(name) >= 0) throw Error("duplicate parameter name " + name);
  long n = 1;
  for (int d : shape) n *= d;
  params_.push_back({std::move(name), std::move(shape), std::vector<double>(n, init_value)});
  init_.emplace_back(init_std, init_value);
  return size() - 1;
}

int ParamStore::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (params_[i].name == name) return i;
  return -1;
}

long ParamStore::total_count() const {
  long n = 0;
  for (const auto& p : params_) n += static_cast<long>(p.value.size());
  return n;
}

Grads zero_grads(const ParamStore& params) {
  Grads g(params.size());
  for (int i = 0; i < params.size(); ++i) g[i].assign(params[i].value.size(), 0.0);
  return g;
}

void round_to_float32(ParamStore& p) {
  for (auto& param : p.items())
    for (double& v : param.value) v = static_cast<double>(static_cast<float>(v));
}

void init_params(ParamStore& p, std::uint64_t seed) {
  for (int i = 0; i < p.size(); ++i) {
    auto& param = p[i];
    if (p.init_std(i) > 0.0) {
      Rng rng(derive_seed(seed, param.name));
      for (double& v : param.value) v = rng.normal() * p.init_std(i);
    } else {
      std::fill(param.value.begin(), param.value.end(), p.init_value(i));
    }
  }
  round_to_float32(p);
}

namespace {

class Conv2d final : public Layer {
 public:
  Conv2d(int weight, int bias, kernels::ConvShape shape) : weight_(weight), bias_(bias), s_(shape) {}

  FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const override {
    if (x.channels() != s_.in_c)
      throw Error("conv expects " + std::to_string(s_.in_c) + " channels, got " +
                  std::to_string(x.channels()));
    FeatureMap y(s_.out_c, s_.out_h(x.height()), s_.out_w(x.width()));
    kernels::conv2d_forward(s_, x.height(), x.width(), x.values(), p[weight_].value,
                            p[bias_].value, y.values());
    if (cache) cache->input = x;
    return y;
  }

  FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& g,
                      Grads* grads) const override {
    const int h = cache.input.height(), w = cache.input.width();
    FeatureMap gx = cache.input.zeros_like();
    kernels::conv2d_backward_input(s_, h, w, g.values(), p[weight_].value, gx.values());
    if (grads)
      kernels::conv2d_backward_weight(s_, h, w, cache.input.values(), g.values(), (*grads)[weight_],
                                      (*grads)[bias_]);
    return gx;
  }

  std::string describe() const override {
    return "conv" + std::to_string(s_.kh) + "x" + std::to_string(s_.kw) + "(" +
           std::to_string(s_.in_c) + "->" + std::to_string(s_.out_c) + ")";
  }
  int conv_count() const override { return 1; }

 private:
  int weight_, bias_;
  kernels::ConvShape s_;
};

class ConvTranspose2d final : public Layer {
 public:
  ConvTranspose2d(int weight, int bias, kernels::ConvTransposeShape shape)
      : weight_(weight), bias_(bias), s_(shape) {}

  FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const override {
    if (x.channels() != s_.in_c) throw Error("transposed conv channel mismatch");
    FeatureMap y(s_.out_c, s_.out_h(x.height()), s_.out_w(x.width()));
    kernels::conv_transpose2d_forward(s_, x.height(), x.width(), x.values(), p[weight_].value,
                                      p[bias_].value, y.values());
    if (cache) cache->input = x;
    return y;
  }

  FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& g,
                      Grads* grads) const override {
    const int h = cache.input.height(), w = cache.input.width();
    FeatureMap gx = cache.input.zeros_like();
    kernels::conv_transpose2d_backward_input(s_, h, w, g.values(), p[weight_].value, gx.values());
    if (grads)
      kernels::conv_transpose2d_backward_weight(s_, h, w, cache.input.values(), g.values(),
                                                (*grads)[weight_], (*grads)[bias_]);
    return gx;
  }

  std::string describe() const override {
    return "deconv" + std::to_string(s_.k) + "/s" + std::to_string(s_.stride) + "(" +
           std::to_string(s_.in_c) + "->" + std::to_string(s_.out_c) + ")";
  }
  int conv_count() const override { return 1; }

 private:
  int weight_, bias_;
  kernels::ConvTransposeShape s_;
};

class Relu final : public Layer {
 public:
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    FeatureMap y = x;
    for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
    if (cache) cache->output = y;
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    FeatureMap gx = g;
    const auto out = cache.output.values();
    auto gv = gx.values();
    for (std::size_t i = 0; i < gv.size(); ++i)
      if (!(out[i] > 0.0)) gv[i] = 0.0;
    return gx;
  }
  std::string describe() const override { return "relu"; }
};

class Prelu final : public Layer {
 public:
  explicit Prelu(int slope) : slope_(slope) {}

  FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const override {
    const auto& a = p[slope_].value;
    if (static_cast<int>(a.size()) != x.channels()) throw Error("prelu channel mismatch");
    FeatureMap y = x;
    for (int c = 0; c < y.channels(); ++c)
      for (double& v : y.channel(c))
        if (v <= 0.0) v *= a[c];
    if (cache) cache->input = x;
    return y;
  }

  FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& g,
                      Grads* grads) const override {
    const auto& a = p[slope_].value;
    FeatureMap gx = g;
    for (int c = 0; c < g.channels(); ++c) {
      auto xin = cache.input.channel(c);
      auto gc = gx.channel(c);
      double ga = 0.0;
      for (std::size_t i = 0; i < gc.size(); ++i)
        if (xin[i] <= 0.0) {
          ga += gc[i] * xin[i];
          gc[i] *= a[c];
        }
      if (grads) (*grads)[slope_][c] += ga;
    }
    return gx;
  }
  std::string describe() const override { return "prelu"; }

 private:
  int slope_;
};

class AvgPool2 final : public Layer {
 public:
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    if (x.height() < 2 || x.width() < 2) throw Error("avg_pool2 input smaller than 2x2");
    FeatureMap y(x.channels(), x.height() / 2, x.width() / 2);
    for (int c = 0; c < y.channels(); ++c)
      for (int i = 0; i < y.height(); ++i)
        for (int j = 0; j < y.width(); ++j)
          y.at(c, i, j) = 0.25 * (x.at(c, 2 * i, 2 * j) + x.at(c, 2 * i, 2 * j + 1) +
                                  x.at(c, 2 * i + 1, 2 * j) + x.at(c, 2 * i + 1, 2 * j + 1));
    if (cache) cache->input = FeatureMap(x.channels(), x.height(), x.width());
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    FeatureMap gx = cache.input.zeros_like();
    for (int c = 0; c < g.channels(); ++c)
      for (int i = 0; i < g.height(); ++i)
        for (int j = 0; j < g.width(); ++j) {
          const double v = 0.25 * g.at(c, i, j);
          gx.at(c, 2 * i, 2 * j) += v;
          gx.at(c, 2 * i, 2 * j + 1) += v;
          gx.at(c, 2 * i + 1, 2 * j) += v;
          gx.at(c, 2 * i + 1, 2 * j + 1) += v;
        }
    return gx;
  }
  std::string describe() const override { return "avgpool2"; }
};

class MaxPool2 final : public Layer {
 public:
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    if (x.height() < 2 || x.width() < 2) throw Error("max_pool2 input smaller than 2x2");
    FeatureMap y(x.channels(), x.height() / 2, x.width() / 2);
    for (int c = 0; c < y.channels(); ++c)
      for (int i = 0; i < y.height(); ++i)
        for (int j = 0; j < y.width(); ++j) {
          auto [dy, dx] = argmax(x, c, i, j);
          y.at(c, i, j) = x.at(c, 2 * i + dy, 2 * j + dx);
        }
    if (cache) cache->input = x;
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    FeatureMap gx = cache.input.zeros_like();
    for (int c = 0; c < g.channels(); ++c)
      for (int i = 0; i < g.height(); ++i)
        for (int j = 0; j < g.width(); ++j) {
          auto [dy, dx] = argmax(cache.input, c, i, j);
          gx.at(c, 2 * i + dy, 2 * j + dx) += g.at(c, i, j);
        }
    return gx;
  }
  std::string describe() const override { return "maxpool2"; }

 private:
  static std::pair<int, int> argmax(const FeatureMap& x, int c, int i, int j) {
    std::pair<int, int> best{0, 0};
    double v = x.at(c, 2 * i, 2 * j);
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        if (x.at(c, 2 * i + dy, 2 * j + dx) > v) {
          v = x.at(c, 2 * i + dy, 2 * j + dx);
          best = {dy, dx};
        }
    return best;
  }
};

class PixelShuffle final : public Layer {
 public:
  explicit PixelShuffle(int r) : r_(r) {}

  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    const int rr = r_ * r_;
    if (x.channels() % rr != 0) throw Error("pixel_shuffle channels not divisible by r^2");
    FeatureMap y(x.channels() / rr, x.height() * r_, x.width() * r_);
    for (int c = 0; c < y.channels(); ++c)
      for (int i = 0; i < r_; ++i)
        for (int j = 0; j < r_; ++j)
          for (int yy = 0; yy < x.height(); ++yy)
            for (int xx = 0; xx < x.width(); ++xx)
              y.at(c, yy * r_ + i, xx * r_ + j) = x.at(c * rr + i * r_ + j, yy, xx);
    if (cache) cache->input = FeatureMap(x.channels(), x.height(), x.width());
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    FeatureMap gx = cache.input.zeros_like();
    const int rr = r_ * r_;
    for (int c = 0; c < g.channels(); ++c)
      for (int i = 0; i < r_; ++i)
        for (int j = 0; j < r_; ++j)
          for (int yy = 0; yy < gx.height(); ++yy)
            for (int xx = 0; xx < gx.width(); ++xx)
              gx.at(c * rr + i * r_ + j, yy, xx) = g.at(c, yy * r_ + i, xx * r_ + j);
    return gx;
  }
  std::string describe() const override { return "pixel_shuffle" + std::to_string(r_); }

 private:
  int r_;
};

class BicubicUpsample final : public Layer {
 public:
  explicit BicubicUpsample(ScaleFactor s) : s_(s) {}
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache*) const override {
    return data::bicubic_upsample(x, s_);
  }
  FeatureMap backward(const ParamStore&, const Cache&, const FeatureMap& g, Grads*) const override {
    return data::bicubic_upsample_adjoint(g, s_);
  }
  std::string describe() const override { return "bicubic_up" + std::to_string(s_.value()); }

 private:
  ScaleFactor s_;
};

class ToChannels final : public Layer {
 public:
  explicit ToChannels(int channels) : channels_(channels) {}

  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    if (cache) cache->input = FeatureMap(x.channels(), 0, 0);
    if (x.channels() == channels_) return x;
    FeatureMap y(channels_, x.height(), x.width());
    if (x.channels() == 3 && channels_ == 1) {
      auto r = x.channel(0), g = x.channel(1), b = x.channel(2);
      auto out = y.channel(0);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = kLumaR * r[i] + kLumaG * g[i] + kLumaB * b[i];
    } else if (x.channels() == 1 && channels_ == 3) {
      for (int c = 0; c < 3; ++c) std::copy(x.channel(0).begin(), x.channel(0).end(), y.channel(c).begin());
    } else {
      throw Error("cannot adapt " + std::to_string(x.channels()) + " channels to " + std::to_string(channels_));
    }
    return y;
  }

  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    const int in_c = cache.input.channels();
    if (in_c == channels_) return g;
    FeatureMap gx(in_c, g.height(), g.width());
    if (in_c == 3) {
      const double wts[3] = {kLumaR, kLumaG, kLumaB};
      auto gi = g.channel(0);
      for (int c = 0; c < 3; ++c) {
        auto dst = gx.channel(c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = wts[c] * gi[i];
      }
    } else {
      auto dst = gx.channel(0);
      for (int c = 0; c < 3; ++c) {
        auto src = g.channel(c);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
    return gx;
  }
  std::string describe() const override { return "to_channels" + std::to_string(channels_); }

 private:
  int channels_;
};

class SubtractGlobalMean final : public Layer {
 public:
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache*) const override {
    FeatureMap y = x;
    const double m = std::accumulate(x.values().begin(), x.values().end(), 0.0) / x.size();
    for (double& v : y.values()) v -= m;
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache&, const FeatureMap& g, Grads*) const override {
    FeatureMap gx = g;
    const double m = std::accumulate(g.values().begin(), g.values().end(), 0.0) / g.size();
    for (double& v : gx.values()) v -= m;
    return gx;
  }
  std::string describe() const override { return "subtract_mean"; }
};

class Affine final : public Layer {
 public:
  Affine(double scale, double shift) : scale_(scale), shift_(shift) {}
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache*) const override {
    FeatureMap y = x;
    for (double& v : y.values()) v = v * scale_ + shift_;
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache&, const FeatureMap& g, Grads*) const override {
    FeatureMap gx = g;
    for (double& v : gx.values()) v *= scale_;
    return gx;
  }
  std::string describe() const override { return "affine"; }

 private:
  double scale_, shift_;
};

class PairSoftmax final : public Layer {
 public:
  FeatureMap forward(const ParamStore&, const FeatureMap& x, Cache* cache) const override {
    if (x.channels() % 2 != 0) throw Error("pair_softmax needs an even channel count");
    FeatureMap y = x;
    for (int c = 0; c < x.channels(); c += 2) {
      auto a = x.channel(c), b = x.channel(c + 1);
      auto ya = y.channel(c), yb = y.channel(c + 1);
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double m = std::max(a[i], b[i]);
        const double ea = std::exp(a[i] - m), eb = std::exp(b[i] - m);
        ya[i] = ea / (ea + eb);
        yb[i] = eb / (ea + eb);
      }
    }
    if (cache) cache->output = y;
    return y;
  }
  FeatureMap backward(const ParamStore&, const Cache& cache, const FeatureMap& g,
                      Grads*) const override {
    FeatureMap gx = g;
    const auto& y = cache.output;
    for (int c = 0; c < g.channels(); c += 2) {
      auto sa = y.channel(c), sb = y.channel(c + 1);
      auto ga = g.channel(c), gb = g.channel(c + 1);
      auto da = gx.channel(c), db = gx.channel(c + 1);
      for (std::size_t i = 0; i < sa.size(); ++i) {
        const double dot = sa[i] * ga[i] + sb[i] * gb[i];
        da[i] = sa[i] * (ga[i] - dot);
        db[i] = sb[i] * (gb[i] - dot);
      }
    }
    return gx;
  }
  std::string describe() const override { return "pair_softmax"; }
};

class Sequential final : public Layer {
 public:
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const override {
    if (cache) cache->children.assign(layers_.size(), Cache{});
    FeatureMap cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      cur = layers_[i]->forward(p, cur, cache ? &cache->children[i] : nullptr);
    return cur;
  }
  FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& g,
                      Grads* grads) const override {
    FeatureMap cur = g;
    for (std::size_t i = layers_.size(); i-- > 0;)
      cur = layers_[i]->backward(p, cache.children[i], cur, grads);
    return cur;
  }
  std::string describe() const override {
    std::string s = "[";
    for (std::size_t i = 0; i < layers_.size(); ++i) s += (i ? " " : "") + layers_[i]->describe();
    return s + "]";
  }
  int conv_count() const override {
    int n = 0;
    for (const auto& l : layers_) n += l->conv_count();
    return n;
  }

 private:
  std::vector<LayerPtr> layers_;
};

class Residual final : public Layer {
 public:
  explicit Residual(LayerPtr body) : body_(std::move(body)) {}

  FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const override {
    if (cache) cache->children.assign(1, Cache{});
    FeatureMap y = body_->forward(p, x, cache ? &cache->children[0] : nullptr);
    if (!y.same_shape(x)) throw Error("residual body changed the tensor shape");
    y += x;
    return y;
  }
  FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& g,
                      Grads* grads) const override {
    FeatureMap gx = body_->backward(p, cache.children[0], g, grads);
    gx += g;
    return gx;
  }
  std::string describe() const override { return "residual" + body_->describe(); }
  int conv_count() const override { return body_->conv_count(); }

 private:
  LayerPtr body_;
};

double he_std(int fan_in) { return std::sqrt(2.0 / fan_in); }

}  // namespace

LayerPtr conv2d(ParamStore& p, const std::string& name, int in_c, int out_c, int kh, int kw,
                double init_gain) {
  if (in_c < 1 || out_c < 1) throw Error("conv " + name + " needs at least one channel");
  const int w = p.add(name + ".weight", {out_c, in_c, kh, kw}, init_gain * he_std(in_c * kh * kw));
  const int b = p.add(name + ".bias", {out_c});
  return std::make_shared<Conv2d>(w, b, kernels::ConvShape{in_c, out_c, kh, kw, kh / 2, kw / 2});
}

LayerPtr conv2d(ParamStore& p, const std::string& name, int in_c, int out_c, int k,
                double init_gain) {
  return conv2d(p, name, in_c, out_c, k, k, init_gain);
}

LayerPtr conv_transpose2d(ParamStore& p, const std::string& name, int in_c, int out_c, int k,
                          int stride, double init_gain) {
  if (in_c < 1 || out_c < 1) throw Error("deconv " + name + " needs at least one channel");
  const int fan_in = std::max(1, in_c * k * k / (stride * stride));
  const int w = p.add(name + ".weight", {in_c, out_c, k, k}, init_gain * he_std(fan_in));
  const int b = p.add(name + ".bias", {out_c});
  return std::make_shared<ConvTranspose2d>(
      w, b, kernels::ConvTransposeShape{in_c, out_c, k, stride, k / 2, stride - 1});
}

LayerPtr relu() { return std::make_shared<Relu>(); }

LayerPtr prelu(ParamStore& p, const std::string& name, int channels, double init) {
  return std::make_shared<Prelu>(p.add(name + ".slope", {channels}, 0.0, init));
}

LayerPtr avg_pool2() { return std::make_shared<AvgPool2>(); }
LayerPtr max_pool2() { return std::make_shared<MaxPool2>(); }
LayerPtr pixel_shuffle(int factor) { return std::make_shared<PixelShuffle>(factor); }
LayerPtr bicubic_upsample(ScaleFactor s) { return std::make_shared<BicubicUpsample>(s); }
LayerPtr to_channels(int channels) { return std::make_shared<ToChannels>(channels); }
LayerPtr subtract_global_mean() { return std::make_shared<SubtractGlobalMean>(); }
LayerPtr affine(double scale, double shift) { return std::make_shared<Affine>(scale, shift); }
LayerPtr pair_softmax() { return std::make_shared<PairSoftmax>(); }
LayerPtr sequential(std::vector<LayerPtr> layers) {
  return std::make_shared<Sequential>(std::move(layers));
}
LayerPtr residual(LayerPtr body) { return std::make_shared<Residual>(std::move(body)); }

}  // namespace tdsr::nn
