#include "tdsr/train/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "tdsr/core/error.hpp"
#include "tdsr/core/rng.hpp"
#include "tdsr/io/container.hpp"

namespace tdsr::train {

namespace fs = std::filesystem;

const char* to_string(RegimeKind kind) { return kind == RegimeKind::FromScratch ? "from_scratch" : "fine_tune"; }

RegimeKind parse_regime_kind(const std::string& name) {
  if (name == "from_scratch") return RegimeKind::FromScratch;
  if (name == "fine_tune") return RegimeKind::FineTune;
  throw Error("unknown regime '" + name + "' (expected from_scratch or fine_tune)");
}

TrainRegime TrainRegime::from_scratch(int epochs) { return {RegimeKind::FromScratch, epochs, std::nullopt}; }

TrainRegime TrainRegime::fine_tune(fs::path checkpoint, int epochs) {
  return {RegimeKind::FineTune, epochs, std::move(checkpoint)};
}

void TrainRegime::validate() const {
  if (epochs < 1) throw Error("regime.epochs must be positive");
  if (kind == RegimeKind::FineTune && !init_checkpoint)
    throw Error("regime.init_checkpoint is required for fine_tune");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw Error("optimizer.learning_rate must be positive");
  if (batch_size < 1) throw Error("optimizer.batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw Error("optimizer betas must lie in [0,1)");
  if (!(epsilon > 0.0)) throw Error("optimizer.epsilon must be positive");
}

void TrainSetup::validate() const {
  model.validate();
  regime.validate();
  optimizer.validate();
  if (enabled.empty()) throw Error("enabled_losses must not be empty");
  if (!(dwa.temperature > 0.0)) throw Error("dwa.temperature must be positive");
}

double global_norm(const nn::Grads& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g) sq += v * v;
  return std::sqrt(sq);
}

Adam::Adam(const nn::ParamStore& params, const OptimizerConfig& cfg)
    : cfg_(cfg), m_(nn::zero_grads(params)), v_(nn::zero_grads(params)) {
  cfg_.validate();
}

double Adam::step(nn::ParamStore& params, nn::Grads grads) {
  if (grads.size() != m_.size()) throw Error("gradient buffers do not match the parameters");
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw Error("non-finite gradient");
  if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
    const double k = cfg_.clip_norm / norm;
    for (auto& g : grads)
      for (auto& v : g) v *= k;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (int i = 0; i < params.size(); ++i) {
    auto& p = params[i].value;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j];
      m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
      v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
      p[j] -= cfg_.learning_rate * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + cfg_.epsilon);
    }
  }
  nn::round_to_float32(params);
  return norm;
}

std::pair<std::vector<std::string>, std::vector<std::string>> validation_split(
    const std::vector<std::string>& train_ids, std::uint64_t seed) {
  if (train_ids.size() < 2) return {train_ids, {}};
  auto [fit, val] = data::split_dataset(train_ids, 0.9, derive_seed(seed, "validation"));
  if (fit.empty()) return {train_ids, {}};
  return {fit, val};
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  io::write_file_bytes(path, std::vector<unsigned char>(text.begin(), text.end()));
}

void write_validation_csv(const RunLog& log, const fs::path& path) {
  std::string out = "epoch,component,value\n";
  for (const auto& e : log.epochs)
    for (const auto& [id, v] : e.validation)
      out += std::to_string(e.epoch) + "," + std::string(to_string(id)) + "," + fmt(v) + "\n";
  write_text_atomic(path, out);
}

struct Sample {
  ImageTensor lr, hr;
  std::string id;
};

std::vector<Sample> gather(const data::PreparedDataset& ds, const std::vector<std::string>& ids, int channels) {
  std::vector<Sample> out;
  for (const auto& p : ds.collect(ids))
    out.push_back({data::convert_channels(p.lr, channels), data::convert_channels(p.hr, channels), p.id});
  return out;
}

class Targets {
 public:
  Targets(const fs::path& cache_root, const detector::DetectorBackend& backend) : backend_(backend) {
    if (!cache_root.empty()) cache_.emplace(cache_root, backend);
  }
  detector::DetectionOutput get(const Sample& s) {
    if (cache_) return cache_->get(s.id, s.hr);
    auto it = memo_.find(s.id);
    if (it == memo_.end()) it = memo_.emplace(s.id, detector::extract_targets(backend_, s.hr)).first;
    return it->second;
  }

 private:
  const detector::DetectorBackend& backend_;
  std::optional<detector::TargetCache> cache_;
  std::map<std::string, detector::DetectionOutput> memo_;
};

loss::LossBreakdown evaluate_sample(const models::SrModel& model, const Sample& s, ScaleFactor scale,
                                    const detector::DetectorBackend& backend, Targets& targets,
                                    const loss::DwaState& dwa, LossSet enabled, nn::Grads* grads,
                                    double grad_scale) {
  nn::Cache cache;
  const FeatureMap sr_fm = model.forward(to_feature_map(s.lr), grads ? &cache : nullptr);
  const ImageTensor sr = to_image(sr_fm);
  detector::DetectionOutput det_sr, det_target;
  detector::DetectorTape tape;
  if (enabled.any_task()) {
    det_sr = backend.forward_taps(sr, grads ? &tape : nullptr);
    det_target = targets.get(s);
  }
  loss::LossGrads lg;
  auto bd = loss::composite_loss(sr, s.hr, s.lr, scale, det_sr, det_target, dwa, enabled,
                                 grads ? &lg : nullptr);
  for (const auto& [id, v] : bd.values)
    if (!std::isfinite(v)) throw Error("non-finite loss in component " + std::string(to_string(id)));
  if (grads) {
    ImageTensor g = loss::gradient_wrt_sr(lg, backend, tape);
    for (auto& v : g.values()) v *= grad_scale;
    model.backward(cache, to_feature_map(g), grads);
  }
  return bd;
}

}  // namespace

void write_metrics_csv(const RunLog& log, const fs::path& path) {
  std::string out = "epoch,component,raw_value,weight,weighted_value\n";
  for (const auto& e : log.epochs)
    for (const auto& [id, v] : e.means) {
      const double w = e.weights.at(id);
      out += std::to_string(e.epoch) + "," + std::string(to_string(id)) + "," + fmt(v) + "," + fmt(w) +
             "," + fmt(w * v) + "\n";
    }
  write_text_atomic(path, out);
}

std::pair<models::SrModel, RunLog> train_run(const TrainSetup& setup, const data::PreparedDataset& ds,
                                             const detector::DetectorBackend& backend,
                                             const RunOptions& options) {
  setup.validate();
  if (!(setup.model.scale == ds.scale))
    throw Error("model scale " + std::to_string(setup.model.scale.value()) + " differs from dataset scale " +
                std::to_string(ds.scale.value()));

  std::optional<models::SrModel> loaded;
  if (setup.regime.kind == RegimeKind::FineTune) {
    loaded = models::load_checkpoint(*setup.regime.init_checkpoint);
    if (!(loaded->config() == setup.model))
      throw Error("checkpoint/config mismatch: " + setup.regime.init_checkpoint->string() + " holds " +
                  models::to_json(loaded->config()).dump() + ", config asks for " +
                  models::to_json(setup.model).dump());
  }
  models::SrModel model =
      loaded ? std::move(*loaded) : models::build_model(setup.model, derive_seed(setup.seed, "model"));

  const auto [fit_ids, val_ids] = validation_split(ds.train_ids, setup.seed);
  const auto train = gather(ds, fit_ids, setup.model.channels);
  const auto val = gather(ds, val_ids, setup.model.channels);
  if (train.empty()) throw Error("no training patches");

  const fs::path& dir = options.run_dir;
  if (!dir.empty()) {
    fs::create_directories(dir / "checkpoints");
    if (!options.config_snapshot.is_null()) write_text_atomic(dir / "config.snapshot", options.config_snapshot.dump(2) + "\n");
  }

  RunLog log;
  log.detector_hash = backend.parameter_hash();
  Targets targets(options.cache_root, backend);
  loss::DwaState dwa(setup.enabled, setup.dwa);
  Adam adam(model.params(), setup.optimizer);
  const int batch = setup.optimizer.batch_size;

  for (int epoch = 1; epoch <= setup.regime.epochs; ++epoch) {
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(derive_seed(setup.optimizer.seed, "batches/" + std::to_string(epoch)));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);

    std::map<LossComponentId, double> sums;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      nn::Grads grads = nn::zero_grads(model.params());
      const double k = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto bd = evaluate_sample(model, train[order[i]], ds.scale, backend, targets, dwa, setup.enabled,
                                        &grads, k);
        for (const auto& [id, v] : bd.values) sums[id] += v;
      }
      adam.step(model.params(), std::move(grads));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.weights = dwa.weights();
    for (auto& [id, v] : sums) {
      rec.means[id] = v / static_cast<double>(train.size());
      rec.total += rec.weights[id] * rec.means[id];
    }
    if (!val.empty()) {
      std::map<LossComponentId, double> vs;
      for (const auto& s : val)
        for (const auto& [id, v] :
             evaluate_sample(model, s, ds.scale, backend, targets, dwa, setup.enabled, nullptr, 0.0).values)
          vs[id] += v;
      for (auto& [id, v] : vs) rec.validation[id] = v / static_cast<double>(val.size());
    }
    log.epochs.push_back(rec);
    log.steps = adam.steps();
    dwa = loss::dwa_update(dwa, rec.means);
    if (options.on_epoch) options.on_epoch(rec);

    if (backend.parameter_hash() != log.detector_hash)
      throw Error("detector parameters changed during training");
    if (!dir.empty()) {
      write_metrics_csv(log, dir / "metrics.csv");
      write_validation_csv(log, dir / "validation.csv");
      if (options.save_epoch_checkpoints) {
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
        models::save_checkpoint(model, dir / "checkpoints" / name,
                                {{"epoch", epoch}, {"losses", setup.enabled.label()}, {"name", options.run_name}});
      }
    }
  }
  if (!dir.empty())
    models::save_checkpoint(model, dir / "final.ckpt",
                            {{"epoch", setup.regime.epochs}, {"losses", setup.enabled.label()}, {"name", options.run_name}});
  return {std::move(model), std::move(log)};
}

std::vector<MatrixResult> training_matrix(const std::vector<MatrixRow>& rows, const data::PreparedDataset& ds,
                                          const detector::DetectorBackend& backend, const fs::path& base_dir,
                                          int jobs) {
  if (jobs < 1) throw Error("--jobs must be at least 1");
  const int n = static_cast<int>(rows.size());
  std::map<std::string, int> index;
  for (int i = 0; i < n; ++i) {
    if (rows[i].name.empty()) throw Error("matrix row " + std::to_string(i) + " has no name");
    if (!index.emplace(rows[i].name, i).second)
      throw Error("duplicate matrix row name '" + rows[i].name + "' (output directories must be disjoint)");
  }

  std::vector<MatrixResult> results(n);
  // Wave number: 0 for independent rows, 1 + wave of the parent otherwise; -1 marks a bad reference.
  std::vector<int> wave(n, -2);
  auto wave_of = [&](auto&& self, int i, int depth) -> int {
    if (wave[i] != -2) return wave[i];
    if (depth > n) return wave[i] = -1;
    if (!rows[i].init_from) return wave[i] = 0;
    auto it = index.find(*rows[i].init_from);
    if (it == index.end() || it->second == i) return wave[i] = -1;
    const int w = self(self, it->second, depth + 1);
    return wave[i] = w < 0 ? -1 : w + 1;
  };
  int max_wave = 0;
  for (int i = 0; i < n; ++i) {
    results[i].name = rows[i].name;
    results[i].run_dir = base_dir / rows[i].name;
    if (wave_of(wave_of, i, 0) < 0)
      results[i].error = "init_from '" + rows[i].init_from.value_or("") + "' does not name another row";
    max_wave = std::max(max_wave, wave[i]);
  }

  auto run_row = [&](int i) {
    MatrixResult& r = results[i];
    try {
      TrainSetup setup = rows[i].setup;
      nlohmann::json snapshot = rows[i].snapshot;
      if (rows[i].init_from) {
        const MatrixResult& parent = results[index.at(*rows[i].init_from)];
        if (!parent.ok) throw Error("dependency '" + parent.name + "' failed");
        setup.regime.kind = RegimeKind::FineTune;
        setup.regime.init_checkpoint = parent.run_dir / "final.ckpt";
        if (snapshot.is_object()) snapshot["regime"]["init_checkpoint"] = setup.regime.init_checkpoint->string();
      }
      RunOptions opts;
      opts.run_dir = r.run_dir;
      opts.config_snapshot = snapshot;
      opts.cache_root = ds.spec.root;
      opts.run_name = rows[i].name;
      r.log = train_run(setup, ds, backend, opts).second;
      r.ok = true;
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  };

  for (int w = 0; w <= max_wave; ++w) {
    std::vector<int> todo;
    for (int i = 0; i < n; ++i)
      if (wave[i] == w) todo.push_back(i);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t k; (k = next++) < todo.size();) run_row(todo[k]);
    };
    const int n_threads = std::min<int>(jobs, static_cast<int>(todo.size()));
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
  }
  return results;
}

void write_matrix_summary(const std::vector<MatrixResult>& results, const fs::path& path) {
  std::string out = "name,status,epochs,final_total,error\n";
  for (const auto& r : results) {
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '\n', ' ');
    std::replace(err.begin(), err.end(), ',', ';');
    out += r.name + "," + (r.ok ? "ok" : "failed") + "," + std::to_string(r.log.epochs.size()) + "," +
           (r.log.epochs.empty() ? std::string() : fmt(r.log.epochs.back().total)) + "," + err + "\n";
  }
  write_text_atomic(path, out);
}

}  // namespace tdsr::train
