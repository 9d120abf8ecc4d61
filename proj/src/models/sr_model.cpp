#include "tdsr/models/sr_model.hpp"

#include <cmath>

#include "tdsr/core/error.hpp"
#include "tdsr/io/container.hpp"

namespace tdsr::models {

namespace {

constexpr const char* kCheckpointKind = "sr_model";

// Original final layers start from very small weights, so early outputs stay
// close to the architecture's additive base.
constexpr double kTailGain = 0.01;

std::vector<int> upsampling_stages(int scale) {
  std::vector<int> stages;
  while (scale % 2 == 0) {
    stages.push_back(2);
    scale /= 2;
  }
  while (scale % 3 == 0) {
    stages.push_back(3);
    scale /= 3;
  }
  if (scale > 1) stages.push_back(scale);
  return stages;
}

nn::Network build_srcnn(const SrModelConfig& cfg) {
  nn::Network net;
  auto& p = net.params;
  const int n1 = scaled_width(64, cfg.width_multiplier), n2 = scaled_width(32, cfg.width_multiplier);
  const int c = cfg.channels;
  auto body = nn::sequential({nn::conv2d(p, "feature", c, n1, 9), nn::relu(),
                              nn::conv2d(p, "mapping", n1, n2, 1), nn::relu(),
                              nn::conv2d(p, "tail", n2, c, 5, kTailGain)});
  net.root = nn::sequential({nn::bicubic_upsample(cfg.scale), nn::residual(body)});
  return net;
}

nn::Network build_fsrcnn(const SrModelConfig& cfg) {
  nn::Network net;
  auto& p = net.params;
  const int d = scaled_width(56, cfg.width_multiplier), s = scaled_width(12, cfg.width_multiplier);
  constexpr int m = 4;
  const int c = cfg.channels;
  std::vector<nn::LayerPtr> layers = {nn::conv2d(p, "feature", c, d, 5), nn::prelu(p, "feature", d),
                                      nn::conv2d(p, "shrink", d, s, 1), nn::prelu(p, "shrink", s)};
  for (int i = 0; i < m; ++i) {
    const std::string name = "map" + std::to_string(i);
    layers.push_back(nn::conv2d(p, name, s, s, 3));
    layers.push_back(nn::prelu(p, name, s));
  }
  layers.push_back(nn::conv2d(p, "expand", s, d, 1));
  layers.push_back(nn::prelu(p, "expand", d));
  layers.push_back(nn::conv_transpose2d(p, "tail", d, c, 9, cfg.scale.value(), kTailGain));
  net.root = nn::sequential(std::move(layers));
  return net;
}

nn::Network build_srresnet(const SrModelConfig& cfg) {
  nn::Network net;
  auto& p = net.params;
  const int n = scaled_width(64, cfg.width_multiplier);
  const int c = cfg.channels;
  std::vector<nn::LayerPtr> trunk;
  for (int b = 0; b < cfg.n_resblocks; ++b) {
    const std::string name = "block" + std::to_string(b);
    trunk.push_back(nn::residual(nn::sequential({nn::conv2d(p, name + ".conv1", n, n, 3),
                                                 nn::prelu(p, name, n),
                                                 nn::conv2d(p, name + ".conv2", n, n, 3)})));
  }
  trunk.push_back(nn::conv2d(p, "trunk_out", n, n, 3));

  std::vector<nn::LayerPtr> layers = {nn::conv2d(p, "head", c, n, 9), nn::prelu(p, "head", n),
                                      nn::residual(nn::sequential(std::move(trunk)))};
  int stage = 0;
  for (int f : upsampling_stages(cfg.scale.value())) {
    const std::string name = "upsample" + std::to_string(stage++);
    layers.push_back(nn::conv2d(p, name, n, n * f * f, 3));
    layers.push_back(nn::pixel_shuffle(f));
    layers.push_back(nn::prelu(p, name, n));
  }
  layers.push_back(nn::conv2d(p, "tail", n, c, 9, kTailGain));
  net.root = nn::sequential(std::move(layers));
  return net;
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::SRCNN: return "SRCNN";
    case Arch::FSRCNN: return "FSRCNN";
    case Arch::SRRESNET: return "SRRESNET";
  }
  return "?";
}

Arch parse_arch(const std::string& name) {
  if (name == "SRCNN") return Arch::SRCNN;
  if (name == "FSRCNN") return Arch::FSRCNN;
  if (name == "SRRESNET") return Arch::SRRESNET;
  throw Error("unknown architecture '" + name + "' (expected SRCNN, FSRCNN or SRRESNET)");
}

int scaled_width(int base, double multiplier) {
  const int w = static_cast<int>(std::lround(base * multiplier));
  if (w < 1)
    throw Error("width_multiplier " + std::to_string(multiplier) + " shrinks a " +
                std::to_string(base) + "-wide layer below 1");
  return w;
}

void SrModelConfig::validate() const {
  if (channels != 1 && channels != 3) throw Error("model channels must be 1 or 3");
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0))
    throw Error("width_multiplier must lie in (0,1]");
  if (arch == Arch::SRRESNET && n_resblocks < 1) throw Error("n_resblocks must be positive");
  scaled_width(12, width_multiplier);
  scaled_width(32, width_multiplier);
}

nlohmann::json to_json(const SrModelConfig& cfg) {
  return {{"arch", to_string(cfg.arch)},
          {"scale", cfg.scale.value()},
          {"channels", cfg.channels},
          {"width_multiplier", cfg.width_multiplier},
          {"n_resblocks", cfg.n_resblocks}};
}

SrModelConfig sr_config_from_json(const nlohmann::json& j) {
  SrModelConfig cfg;
  cfg.arch = parse_arch(j.at("arch").get<std::string>());
  cfg.scale = ScaleFactor(j.at("scale").get<int>());
  cfg.channels = j.at("channels").get<int>();
  cfg.width_multiplier = j.at("width_multiplier").get<double>();
  cfg.n_resblocks = j.at("n_resblocks").get<int>();
  return cfg;
}

ImageTensor SrModel::forward(const ImageTensor& lr) const {
  return to_image(forward(to_feature_map(lr), nullptr));
}

FeatureMap SrModel::forward(const FeatureMap& lr, nn::Cache* cache) const {
  if (lr.channels() != config_.channels)
    throw Error("model expects " + std::to_string(config_.channels) + " channels, got " +
                std::to_string(lr.channels()));
  return net_.forward(lr, cache);
}

FeatureMap SrModel::backward(const nn::Cache& cache, const FeatureMap& grad_out,
                             nn::Grads* grads) const {
  return net_.backward(cache, grad_out, grads);
}

SrModel build_model(const SrModelConfig& config, std::uint64_t seed) {
  config.validate();
  nn::Network net;
  switch (config.arch) {
    case Arch::SRCNN: net = build_srcnn(config); break;
    case Arch::FSRCNN: net = build_fsrcnn(config); break;
    case Arch::SRRESNET: net = build_srresnet(config); break;
  }
  nn::init_params(net.params, seed);
  return SrModel(config, seed, std::move(net));
}

void save_checkpoint(const SrModel& model, const std::filesystem::path& path,
                     const nlohmann::json& meta) {
  io::Container c;
  c.kind = kCheckpointKind;
  c.meta = {{"config", to_json(model.config())}, {"seed", model.seed()}, {"extra", meta}};
  for (const auto& p : model.params().items()) c.arrays.push_back({p.name, p.shape, io::DType::F32, p.value});
  io::write_container(c, path);
}

SrModel load_checkpoint(const std::filesystem::path& path) {
  const io::Container c = io::read_container(path);
  if (c.kind != kCheckpointKind) throw Error("not an SR model checkpoint: " + path.string());
  SrModelConfig cfg;
  std::uint64_t seed = 0;
  try {
    cfg = sr_config_from_json(c.meta.at("config"));
    seed = c.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("corrupt checkpoint: ") + e.what());
  }
  SrModel model = build_model(cfg, seed);
  auto& params = model.params();
  if (static_cast<int>(c.arrays.size()) != params.size())
    throw Error("corrupt checkpoint: parameter count mismatch");
  for (auto& p : params.items()) {
    const auto& a = c.get(p.name);
    if (a.shape != p.shape) throw Error("corrupt checkpoint: shape mismatch for " + p.name);
    p.value = a.values;
  }
  return model;
}

nlohmann::json checkpoint_meta(const std::filesystem::path& path) {
  return io::read_container(path).meta;
}

}  // namespace tdsr::models
