#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "support.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/data/dataset.hpp"
#include "tdsr/data/synthetic.hpp"
#include "tdsr/io/container.hpp"
#include "tdsr/train/train.hpp"

using namespace tdsr;
using namespace tdsr::train;
using enum tdsr::LossComponentId;

namespace {

// Eight 64x64 synthetic pages cut into 32x32 patches: 6 train docs (one held
// out for validation) and 2 test docs.
const data::PreparedDataset& tiny_dataset() {
  static const data::PreparedDataset ds = [] {
    const auto root = tdsr::testing::temp_dir("train_data");
    std::filesystem::create_directories(root / "hr");
    for (int i = 0; i < 8; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "page_%04d.png", i);
      save_png(data::generate_synthetic_document(derive_seed(5, "synthetic/" + std::to_string(i)), 64, 64).image,
               root / "hr" / name);
    }
    data::DatasetSpec spec;
    spec.root = root;
    spec.patch_size_hr = 32;
    spec.stride_hr = 32;
    spec.seed = 3;
    return data::prepare_dataset(spec, ScaleFactor(4));
  }();
  return ds;
}

TrainSetup tiny_setup(LossSet enabled, int epochs) {
  TrainSetup s;
  s.model.arch = models::Arch::SRCNN;
  s.model.channels = 1;
  s.model.width_multiplier = 0.25;
  s.regime = TrainRegime::from_scratch(epochs);
  s.enabled = enabled;
  s.optimizer.learning_rate = 1e-3;
  s.optimizer.batch_size = 4;
  s.optimizer.seed = 11;
  s.seed = 7;
  return s;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

std::string read_text(const std::filesystem::path& p) {
  const auto b = io::read_file_bytes(p);
  return {b.begin(), b.end()};
}

}  // namespace

TEST_SUITE("train") {
  TEST_CASE("regime defaults and validation") {
    CHECK(TrainRegime::from_scratch().epochs == 60);
    CHECK(TrainRegime::fine_tune("x.ckpt").epochs == 100);
    CHECK(TrainRegime::fine_tune("x.ckpt").kind == RegimeKind::FineTune);
    TrainRegime r;
    r.kind = RegimeKind::FineTune;
    CHECK_THROWS_AS(r.validate(), Error);
    r = TrainRegime::from_scratch(0);
    CHECK_THROWS_AS(r.validate(), Error);
    CHECK(parse_regime_kind("fine_tune") == RegimeKind::FineTune);
    CHECK_THROWS_AS(parse_regime_kind("warm"), Error);
    OptimizerConfig o;
    CHECK(o.learning_rate == 1e-4);
    CHECK(o.batch_size == 16);
    CHECK(OptimizerConfig::kFineTuneLearningRate == 1e-5);
    o.learning_rate = 0;
    CHECK_THROWS_AS(o.validate(), Error);
  }

  TEST_CASE("adam matches a scalar reference") {
    nn::ParamStore p;
    p.add("w", {3});
    p[0].value = {0.5, -1.0, 2.0};
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.clip_norm = 0.0;
    Adam adam(p, cfg);
    std::vector<double> x = {0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
    for (int t = 1; t <= 5; ++t) {
      nn::Grads g = {{2 * p[0].value[0], 2 * p[0].value[1], 2 * p[0].value[2]}};
      std::vector<double> gr = {2 * x[0], 2 * x[1], 2 * x[2]};
      adam.step(p, g);
      for (int i = 0; i < 3; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * gr[i];
        v[i] = 0.999 * v[i] + 0.001 * gr[i] * gr[i];
        const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
        x[i] = static_cast<float>(x[i] - 0.01 * mh / (std::sqrt(vh) + 1e-8));
        CHECK(p[0].value[i] == x[i]);
      }
    }
    CHECK(adam.steps() == 5);
  }

  TEST_CASE("adam clips the global norm") {
    nn::ParamStore p;
    p.add("w", {2});
    OptimizerConfig cfg;
    cfg.learning_rate = 1.0;
    Adam adam(p, cfg);
    CHECK(adam.step(p, {{30.0, 40.0}}) == doctest::Approx(50.0));
    // First Adam step moves each coordinate by about lr regardless of scale.
    CHECK(p[0].value[0] == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(global_norm({{3.0}, {4.0}}) == 5.0);
    CHECK_THROWS_AS(adam.step(p, {{NAN, 0.0}}), Error);
  }

  TEST_CASE("validation split holds out a tenth of the training documents") {
    std::vector<std::string> ids;
    for (int i = 0; i < 20; ++i) ids.push_back("d" + std::to_string(i));
    const auto [fit, val] = validation_split(ids, 4);
    CHECK(fit.size() == 18);
    CHECK(val.size() == 2);
    CHECK(validation_split(ids, 4) == validation_split(ids, 4));
    CHECK(validation_split({"only"}, 4).second.empty());
  }

  TEST_CASE("gradients reach every SR parameter") {
    const auto& ds = tiny_dataset();
    const auto patches = ds.collect(ds.train_ids);
    REQUIRE(!patches.empty());
    for (auto arch : {models::Arch::SRCNN, models::Arch::FSRCNN, models::Arch::SRRESNET}) {
      models::SrModelConfig cfg;
      cfg.arch = arch;
      cfg.channels = 1;
      cfg.width_multiplier = 0.25;
      cfg.n_resblocks = 2;
      const auto model = build_model(cfg, 3);
      auto grads = nn::zero_grads(model.params());
      for (int i = 0; i < 4; ++i) {
        nn::Cache cache;
        const auto sr = model.forward(to_feature_map(patches[i].lr), &cache);
        ImageTensor g;
        loss::l2_hr(to_image(sr), patches[i].hr, &g);
        model.backward(cache, to_feature_map(g), &grads);
      }
      for (int i = 0; i < model.params().size(); ++i) {
        double sq = 0.0;
        for (double v : grads[i]) sq += v * v;
        CAPTURE(model.params()[i].name);
        CHECK(sq > 0.0);
      }
    }
  }

  TEST_CASE("two identical runs are bit identical") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    const auto a = tdsr::testing::temp_dir("train_det_a"), b = tdsr::testing::temp_dir("train_det_b");
    const auto setup = tiny_setup({L2_HR, L2_LR, TASK_DEEP, TASK_OUT}, 2);
    RunOptions oa, ob;
    oa.run_dir = a / "run";
    ob.run_dir = b / "run";
    oa.cache_root = a;
    ob.cache_root = b;
    const auto [ma, la] = train_run(setup, ds, det, oa);
    const auto [mb, lb] = train_run(setup, ds, det, ob);
    CHECK(ma.params() == mb.params());
    CHECK(io::read_file_bytes(a / "run" / "final.ckpt") == io::read_file_bytes(b / "run" / "final.ckpt"));
    CHECK(read_text(a / "run" / "metrics.csv") == read_text(b / "run" / "metrics.csv"));
    CHECK(read_text(a / "run" / "validation.csv") == read_text(b / "run" / "validation.csv"));
    CHECK(std::filesystem::exists(a / "run" / "checkpoints" / "epoch_001.ckpt"));
    CHECK(std::filesystem::exists(a / "run" / "checkpoints" / "epoch_002.ckpt"));
    REQUIRE(la.epochs.size() == 2);
    CHECK(la.epochs[0].means == lb.epochs[0].means);
    CHECK(!la.epochs[1].validation.empty());
    // 6 training docs minus one for validation, 4 patches each, batch 4.
    CHECK(la.steps == 2 * 5);
    const auto metrics = read_text(a / "run" / "metrics.csv");
    CHECK(metrics.rfind("epoch,component,raw_value,weight,weighted_value\n", 0) == 0);
    CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 1 + 2 * 4);
  }

  TEST_CASE("task-driven training leaves the detector untouched") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    const auto before = det.parameter_hash();
    const auto root = tdsr::testing::temp_dir("train_frozen");
    RunOptions opts;
    opts.cache_root = root;
    std::vector<std::vector<unsigned char>> cache_bytes;
    const auto [model, log] = train_run(tiny_setup({TASK_DEEP, TASK_OUT}, 3), ds, det, opts);
    CHECK(det.parameter_hash() == before);
    CHECK(log.detector_hash == before);
    // Cached targets are still valid entries for the unchanged detector.
    int n = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root / "cache" / "targets" / "toy"))
      if (e.is_regular_file()) ++n;
    CHECK(n == 6 * 4);
  }

  TEST_CASE("epoch-mean L2_HR loss decreases over five epochs") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    auto setup = tiny_setup({L2_HR}, 5);
    setup.optimizer.learning_rate = 1e-4;
    const auto [model, log] = train_run(setup, ds, det);
    REQUIRE(log.epochs.size() == 5);

    // Five transitions: untrained model -> epoch 1 -> ... -> epoch 5.
    const auto init = models::build_model(setup.model, derive_seed(setup.seed, "model"));
    const auto fit = ds.collect(validation_split(ds.train_ids, setup.seed).first);
    double start = 0.0;
    for (const auto& p : fit) start += loss::l2_hr(init.forward(p.lr), p.hr);
    start /= static_cast<double>(fit.size());
    std::vector<double> curve = {start};
    for (const auto& e : log.epochs) curve.push_back(e.total);
    int non_increasing = 0;
    for (std::size_t e = 1; e < curve.size(); ++e) non_increasing += curve[e] <= curve[e - 1] ? 1 : 0;
    CHECK(non_increasing >= 4);
    CHECK(curve.back() < curve.front());
    for (const auto& e : log.epochs) {
      CHECK(e.weights.at(L2_HR) == 1.0);
      CHECK(e.total == e.means.at(L2_HR));
    }
  }

  TEST_CASE("fine-tune checks the checkpoint against the config") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    const auto dir = tdsr::testing::temp_dir("train_ft");
    auto other = tiny_setup({L2_HR}, 1).model;
    other.arch = models::Arch::FSRCNN;
    models::save_checkpoint(models::build_model(other, 1), dir / "fsrcnn.ckpt");
    auto setup = tiny_setup({L2_HR}, 1);
    setup.regime = TrainRegime::fine_tune(dir / "fsrcnn.ckpt", 1);
    CHECK(error_of([&] { train_run(setup, ds, det); }).find("checkpoint/config mismatch") != std::string::npos);

    // A matching checkpoint is the starting point.
    const auto base = models::build_model(setup.model, 99);
    models::save_checkpoint(base, dir / "srcnn.ckpt");
    setup.regime = TrainRegime::fine_tune(dir / "srcnn.ckpt", 1);
    setup.optimizer.learning_rate = 1e-12;
    const auto [tuned, log] = train_run(setup, ds, det);
    double diff = 0.0;
    for (int i = 0; i < base.params().size(); ++i)
      for (std::size_t j = 0; j < base.params()[i].value.size(); ++j)
        diff = std::max(diff, std::fabs(tuned.params()[i].value[j] - base.params()[i].value[j]));
    CHECK(diff < 1e-6);
  }

  TEST_CASE("non-finite loss aborts with the component name") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    const auto dir = tdsr::testing::temp_dir("train_nan");
    auto setup = tiny_setup({L2_HR, TASK_OUT}, 1);
    auto bad = models::build_model(setup.model, 1);
    bad.params()[bad.params().find("tail.bias")].value[0] = NAN;
    models::save_checkpoint(bad, dir / "bad.ckpt");
    setup.regime = TrainRegime::fine_tune(dir / "bad.ckpt", 1);
    CHECK(error_of([&] { train_run(setup, ds, det); }).find("non-finite loss in component L2_HR") != std::string::npos);
  }

  TEST_CASE("matrix edge cases") {
    const auto& ds = tiny_dataset();
    const auto det = detector::DetectorBackend::toy(2);
    const auto dir = tdsr::testing::temp_dir("train_matrix");
    CHECK(training_matrix({}, ds, det, dir / "empty").empty());

    std::vector<MatrixRow> rows;
    rows.push_back({"base", tiny_setup({L2_HR}, 1), std::nullopt, {}});
    auto broken = tiny_setup({L2_HR}, 1);
    broken.optimizer.learning_rate = -1.0;
    rows.push_back({"broken", broken, std::nullopt, {}});
    rows.push_back({"tuned", tiny_setup({L2_HR, L2_LR}, 1), std::string("base"), {}});
    rows.push_back({"orphan", tiny_setup({L2_HR}, 1), std::string("broken"), {}});
    rows.push_back({"other", tiny_setup({L2_LR}, 1), std::nullopt, {}});
    const auto results = training_matrix(rows, ds, det, dir / "m", 2);
    REQUIRE(results.size() == 5);
    CHECK(results[0].ok);
    CHECK(!results[1].ok);
    CHECK(results[1].error.find("learning_rate") != std::string::npos);
    CHECK(results[2].ok);
    CHECK(!results[3].ok);
    CHECK(results[4].ok);
    CHECK(std::filesystem::exists(dir / "m" / "tuned" / "final.ckpt"));
    write_matrix_summary(results, dir / "summary.csv");
    const auto summary = read_text(dir / "summary.csv");
    CHECK(summary.rfind("name,status,epochs,final_total,error\n", 0) == 0);
    CHECK(summary.find("broken,failed") != std::string::npos);
    CHECK(summary.find("base,ok") != std::string::npos);

    rows.push_back({"base", tiny_setup({L2_HR}, 1), std::nullopt, {}});
    CHECK_THROWS_AS(training_matrix(rows, ds, det, dir / "dup"), Error);
  }
}
