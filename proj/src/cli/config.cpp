#include "tdsr/cli/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "tdsr/core/error.hpp"
#include "tdsr/core/rng.hpp"

#ifndef TDSR_DATA_DIR
#define TDSR_DATA_DIR "data"
#endif

namespace tdsr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Reads the keys of one config object and rejects anything it did not read.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config field " + where("") + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  template <class T>
  std::optional<T> opt(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) return std::nullopt;
    return convert<T>(key);
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(has(key) ? j_.at(key) : empty, where(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw Error("unknown config key '" + where(k) + "'");
  }

  std::string where(const std::string& key) const {
    if (key.empty()) return path_.empty() ? "<root>" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  template <class T>
  T convert(const std::string& key) {
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw Error("expected true or false");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw Error("expected an integer");
        if constexpr (std::is_unsigned_v<T>)
          if (!v.is_number_unsigned() && v.get<std::int64_t>() < 0) throw Error("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw Error("expected a number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw Error("expected a string");
      }
      return v.get<T>();
    } catch (const std::exception& e) {
      throw Error("config field " + where(key) + ": " + e.what());
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto field(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.rfind("config field", 0) == 0 || msg.rfind("unknown config key", 0) == 0) throw;
    throw Error("config field " + where + ": " + msg);
  }
}

}  // namespace

fs::path default_toy_weights() { return fs::absolute(fs::path(TDSR_DATA_DIR) / "toy_detector.ckpt"); }

train::TrainSetup ExperimentConfig::train_setup() const {
  return {model, regime, enabled_losses, dwa, optimizer, seed};
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
    throw Error("config field name: must be a plain directory name");
  field("model", [&] { model.validate(); });
  field("regime", [&] { regime.validate(); });
  field("optimizer", [&] { optimizer.validate(); });
  field("data", [&] { data.validate(model.scale); });
  if (enabled_losses.empty()) throw Error("config field enabled_losses: must not be empty");
  if (!(dwa.temperature > 0.0)) throw Error("config field dwa.temperature: must be positive");
  if (!(backend.confidence_threshold >= 0.0 && backend.confidence_threshold <= 1.0))
    throw Error("config field backend.confidence_threshold: must lie in [0,1]");
}

ExperimentConfig parse_experiment(const json& j, std::optional<std::uint64_t> seed_override) {
  Section root(j, "");
  ExperimentConfig c;
  c.name = root.get<std::string>("name", c.name);
  c.seed = root.get<std::uint64_t>("seed", 0);
  if (seed_override) c.seed = *seed_override;

  {
    Section s = root.sub("model");
    c.model.arch = field("model.arch", [&] { return models::parse_arch(s.get<std::string>("arch", "SRCNN")); });
    c.model.scale = field("model.scale", [&] { return ScaleFactor(s.get<int>("scale", ScaleFactor::kDefault)); });
    c.model.channels = s.get<int>("channels", c.model.channels);
    c.model.width_multiplier = s.get<double>("width_multiplier", c.model.width_multiplier);
    c.model.n_resblocks = s.get<int>("n_resblocks", c.model.n_resblocks);
    s.finish();
  }
  {
    Section s = root.sub("regime");
    c.regime.kind = field("regime.kind", [&] { return train::parse_regime_kind(s.get<std::string>("kind", "from_scratch")); });
    const int dflt = c.regime.kind == train::RegimeKind::FromScratch ? train::TrainRegime::kFromScratchEpochs
                                                                     : train::TrainRegime::kFineTuneEpochs;
    c.regime.epochs = s.get<int>("epochs", dflt);
    if (auto p = s.opt<std::string>("init_checkpoint")) c.regime.init_checkpoint = fs::path(*p);
    s.finish();
  }
  {
    if (!root.has("enabled_losses")) throw Error("config field enabled_losses: required");
    const json& arr = root.raw("enabled_losses");
    if (!arr.is_array()) throw Error("config field enabled_losses: expected a list of component names");
    for (const auto& v : arr) {
      if (!v.is_string()) throw Error("config field enabled_losses: expected component names");
      auto id = parse_loss_component(v.get<std::string>());
      if (!id) throw Error("config field enabled_losses: unknown component '" + v.get<std::string>() + "'");
      c.enabled_losses.insert(*id);
    }
  }
  {
    Section s = root.sub("dwa");
    c.dwa.temperature = s.get<double>("temperature", c.dwa.temperature);
    c.dwa.scope = field("dwa.scope", [&] { return loss::parse_dwa_scope(s.get<std::string>("scope", "all")); });
    c.dwa.guard = s.get<bool>("guard", c.dwa.guard);
    s.finish();
  }
  {
    Section s = root.sub("data");
    c.data.root = s.get<std::string>("root", "data/synthetic");
    c.data.split_fraction = s.get<double>("split_fraction", c.data.split_fraction);
    c.data.patch_size_hr = s.get<int>("patch_size_hr", c.data.patch_size_hr);
    c.data.stride_hr = s.get<int>("stride_hr", c.data.stride_hr);
    c.data.seed = s.get<std::uint64_t>("seed", derive_seed(c.seed, "data"));
    s.finish();
  }
  {
    Section s = root.sub("optimizer");
    const double lr = c.regime.kind == train::RegimeKind::FineTune ? train::OptimizerConfig::kFineTuneLearningRate
                                                                   : train::OptimizerConfig{}.learning_rate;
    c.optimizer.learning_rate = s.get<double>("learning_rate", lr);
    c.optimizer.batch_size = s.get<int>("batch_size", c.optimizer.batch_size);
    c.optimizer.seed = s.get<std::uint64_t>("seed", derive_seed(c.seed, "optimizer"));
    c.optimizer.beta1 = s.get<double>("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = s.get<double>("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = s.get<double>("epsilon", c.optimizer.epsilon);
    c.optimizer.clip_norm = s.get<double>("clip_norm", c.optimizer.clip_norm);
    s.finish();
  }
  {
    Section s = root.sub("backend");
    c.backend.id = s.get<std::string>("id", c.backend.id);
    if (c.backend.id != "toy" && c.backend.id != "ctpn-ref")
      throw Error("config field backend.id: unknown backend '" + c.backend.id + "' (expected toy or ctpn-ref)");
    const std::string dflt = c.backend.id == "toy" ? default_toy_weights().string() : std::string();
    c.backend.weights = s.get<std::string>("weights", dflt);
    c.backend.confidence_threshold = s.get<double>("confidence_threshold", c.backend.confidence_threshold);
    s.finish();
  }
  c.output_dir = root.get<std::string>("output_dir", c.output_dir.string());
  root.finish();
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json losses = json::array();
  for (auto id : c.enabled_losses.items()) losses.push_back(std::string(to_string(id)));
  return {
      {"name", c.name},
      {"seed", c.seed},
      {"model", models::to_json(c.model)},
      {"regime",
       {{"kind", train::to_string(c.regime.kind)},
        {"epochs", c.regime.epochs},
        {"init_checkpoint", c.regime.init_checkpoint ? json(c.regime.init_checkpoint->string()) : json(nullptr)}}},
      {"enabled_losses", losses},
      {"dwa", {{"temperature", c.dwa.temperature}, {"scope", loss::to_string(c.dwa.scope)}, {"guard", c.dwa.guard}}},
      {"data",
       {{"root", c.data.root.string()},
        {"split_fraction", c.data.split_fraction},
        {"patch_size_hr", c.data.patch_size_hr},
        {"stride_hr", c.data.stride_hr},
        {"seed", c.data.seed}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"batch_size", c.optimizer.batch_size},
        {"seed", c.optimizer.seed},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"clip_norm", c.optimizer.clip_norm}}},
      {"backend",
       {{"id", c.backend.id},
        {"weights", c.backend.weights.string()},
        {"confidence_threshold", c.backend.confidence_threshold}}},
      {"output_dir", c.output_dir.string()},
  };
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

json merge_json(json base, const json& patch) {
  if (!patch.is_object() || !base.is_object()) return patch;
  for (const auto& [k, v] : patch.items())
    base[k] = base.contains(k) && base[k].is_object() && v.is_object() ? merge_json(base[k], v) : v;
  return base;
}

bool is_matrix(const json& j) { return j.is_object() && j.contains("rows"); }

MatrixConfig parse_matrix(const json& j, std::optional<std::uint64_t> seed_override) {
  Section root(j, "");
  const json base_json = root.has("base") ? root.raw("base") : json::object();
  const json& rows = root.raw("rows");
  root.finish();
  if (!rows.is_array()) throw Error("config field rows: expected a list");
  MatrixConfig m;
  json base_for_parse = base_json;
  if (!base_for_parse.contains("enabled_losses")) base_for_parse["enabled_losses"] = json::array({"L2_HR"});
  m.base = parse_experiment(base_for_parse, seed_override);
  std::set<std::string> names;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    MatrixEntry e;
    const json& r = rows[i];
    if (!r.is_object() || !r.contains("name") || !r["name"].is_string())
      throw Error("config field rows[" + std::to_string(i) + "].name: required string");
    e.name = r["name"].get<std::string>();
    if (!names.insert(e.name).second) throw Error("duplicate matrix row name '" + e.name + "'");
    json patch = r;
    if (patch.contains("init_from")) {
      if (!patch["init_from"].is_string())
        throw Error("config field rows[" + std::to_string(i) + "].init_from: expected a row name");
      e.init_from = patch["init_from"].get<std::string>();
      patch.erase("init_from");
    }
    json row_json = merge_json(base_json, patch);
    if (e.init_from) {
      row_json["regime"]["kind"] = "fine_tune";
      row_json["regime"]["init_checkpoint"] = (m.base.output_dir / *e.init_from / "final.ckpt").string();
    }
    try {
      e.config = parse_experiment(row_json, seed_override);
      if (e.config->output_dir != m.base.output_dir)
        throw Error("config field output_dir: matrix rows share the base output directory");
      if (!(e.config->data.root == m.base.data.root) || e.config->model.scale.value() != m.base.model.scale.value())
        throw Error("config field data: matrix rows share one dataset");
    } catch (const Error& err) {
      e.config.reset();
      e.error = err.what();
    }
    m.rows.push_back(std::move(e));
  }
  return m;
}

detector::DetectorBackend make_backend(const BackendConfig& cfg, std::uint64_t seed) {
  auto b = cfg.weights.empty() ? detector::DetectorBackend::by_name(cfg.id, derive_seed(seed, "detector"))
                               : detector::DetectorBackend::load(cfg.weights);
  if (b.id() != cfg.id)
    throw Error("detector weights " + cfg.weights.string() + " belong to backend '" + b.id() + "', config asks for '" +
                cfg.id + "'");
  b.set_confidence_threshold(cfg.confidence_threshold);
  return b;
}

}  // namespace tdsr::cli
