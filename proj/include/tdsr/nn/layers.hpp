#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tdsr/core/feature_map.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/kernels/conv.hpp"

namespace tdsr::nn {

/// A named real-valued array owned by a network.
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;

  friend bool operator==(const Param&, const Param&) = default;
};

class ParamStore {
 public:
  /// Registers a parameter and returns its slot. init_params() later fills it
  /// with N(0, init_std^2) samples, or with `init_value` when init_std is 0.
  int add(std::string name, std::vector<int> shape, double init_std = 0.0, double init_value = 0.0);

  Param& operator[](int i) { return params_[i]; }
  const Param& operator[](int i) const { return params_[i]; }
  int size() const { return static_cast<int>(params_.size()); }
  int find(const std::string& name) const;  // -1 when absent
  std::vector<Param>& items() { return params_; }
  const std::vector<Param>& items() const { return params_; }
  long total_count() const;

  double init_std(int i) const { return init_[i].first; }
  double init_value(int i) const { return init_[i].second; }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.params_ == b.params_; }

 private:
  std::vector<Param> params_;
  std::vector<std::pair<double, double>> init_;
};

/// Gradient buffers parallel to a ParamStore.
using Grads = std::vector<std::vector<double>>;
Grads zero_grads(const ParamStore& params);

/// Per-call record of what a layer needs for its backward pass.
struct Cache {
  FeatureMap input;
  FeatureMap output;
  std::vector<Cache> children;
};

/// Immutable computation node. Parameters live in the ParamStore passed to each
/// call, so a graph can be shared between copies of a network and evaluated
/// concurrently with independent caches.
class Layer {
 public:
  virtual ~Layer() = default;
  /// `cache` may be null for inference-only calls.
  virtual FeatureMap forward(const ParamStore& p, const FeatureMap& x, Cache* cache) const = 0;
  /// Returns dL/dx. Parameter gradients are accumulated into `grads` when non-null.
  virtual FeatureMap backward(const ParamStore& p, const Cache& cache, const FeatureMap& grad_out,
                              Grads* grads) const = 0;
  virtual std::string describe() const = 0;
  /// Number of direct or nested convolution-like layers, for architecture checks.
  virtual int conv_count() const { return 0; }
};

using LayerPtr = std::shared_ptr<const Layer>;

/// "Same"-padded convolution. Weights start He-normal times `init_gain`.
LayerPtr conv2d(ParamStore& p, const std::string& name, int in_c, int out_c, int kh, int kw,
                double init_gain = 1.0);
LayerPtr conv2d(ParamStore& p, const std::string& name, int in_c, int out_c, int k,
                double init_gain = 1.0);
/// Transposed convolution that enlarges by `stride` exactly (padding k/2, output padding stride-1).
LayerPtr conv_transpose2d(ParamStore& p, const std::string& name, int in_c, int out_c, int k,
                          int stride, double init_gain = 1.0);
LayerPtr relu();
LayerPtr prelu(ParamStore& p, const std::string& name, int channels, double init = 0.25);
LayerPtr avg_pool2();
LayerPtr max_pool2();
LayerPtr pixel_shuffle(int factor);
LayerPtr bicubic_upsample(ScaleFactor s);
/// Adapts 1- or 3-channel input to `channels`: BT.601 luminance for 3 -> 1,
/// replication for 1 -> 3, identity otherwise.
LayerPtr to_channels(int channels);
/// Subtracts the mean over all elements of the input.
LayerPtr subtract_global_mean();
/// y = x * scale + shift, elementwise constants.
LayerPtr affine(double scale, double shift);
/// Softmax over consecutive channel pairs (0,1), (2,3), ...
LayerPtr pair_softmax();
LayerPtr sequential(std::vector<LayerPtr> layers);
/// y = x + body(x).
LayerPtr residual(LayerPtr body);

/// A graph plus the parameters it reads.
struct Network {
  ParamStore params;
  LayerPtr root;

  FeatureMap forward(const FeatureMap& x, Cache* cache = nullptr) const {
    return root->forward(params, x, cache);
  }
  FeatureMap backward(const Cache& cache, const FeatureMap& grad_out, Grads* grads) const {
    return root->backward(params, cache, grad_out, grads);
  }
};

/// Fills every parameter from its registered initialiser. Each parameter draws
/// from its own stream derived from (seed, name). Values are rounded to float32
/// so checkpoints round-trip exactly.
void init_params(ParamStore& p, std::uint64_t seed);
/// Rounds every parameter value to the nearest float32.
void round_to_float32(ParamStore& p);

}  // namespace tdsr::nn
