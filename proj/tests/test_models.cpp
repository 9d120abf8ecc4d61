#include <cmath>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/data/resample.hpp"
#include "tdsr/io/container.hpp"
#include "tdsr/models/sr_model.hpp"

using namespace tdsr;
using namespace tdsr::models;
using tdsr::testing::grad_close;
using tdsr::testing::random_map;

namespace {

SrModelConfig toy(Arch arch, int scale = 4, int channels = 1) {
  SrModelConfig cfg;
  cfg.arch = arch;
  cfg.scale = ScaleFactor(scale);
  cfg.channels = channels;
  cfg.width_multiplier = 0.25;
  cfg.n_resblocks = 2;
  return cfg;
}

void zero_param(SrModel& m, const std::string& name) {
  const int i = m.params().find(name);
  REQUIRE(i >= 0);
  std::fill(m.params()[i].value.begin(), m.params()[i].value.end(), 0.0);
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("architecture structure") {
    SrModelConfig cfg;
    cfg.arch = Arch::SRCNN;
    cfg.channels = 3;
    const auto srcnn = build_model(cfg, 1);
    CHECK(srcnn.network().root->conv_count() == 3);
    CHECK(srcnn.describe().rfind("[bicubic_up4 ", 0) == 0);

    cfg.arch = Arch::SRRESNET;
    cfg.width_multiplier = 0.25;
    cfg.n_resblocks = 2;
    const auto srres = build_model(cfg, 1);
    const auto d = srres.describe();
    std::size_t n_shuffle = 0;
    for (auto pos = d.find("pixel_shuffle2"); pos != std::string::npos; pos = d.find("pixel_shuffle2", pos + 1)) ++n_shuffle;
    CHECK(n_shuffle == 2);
    CHECK(d.find("bicubic") == std::string::npos);
    CHECK(srres.params().find("upsample0.weight") >= 0);
    CHECK(srres.params().find("upsample1.weight") >= 0);
    CHECK(srres.params().find("upsample2.weight") < 0);

    cfg.arch = Arch::FSRCNN;
    const auto fsrcnn = build_model(cfg, 1);
    CHECK(fsrcnn.describe().find("bicubic") == std::string::npos);
    CHECK(fsrcnn.params()[fsrcnn.params().find("tail.weight")].shape[2] == 9);
  }

  TEST_CASE("full-width SRCNN uses 9-1-5 kernels with 64 and 32 filters") {
    SrModelConfig cfg;
    const auto m = build_model(cfg, 3);
    CHECK(m.params()[m.params().find("feature.weight")].shape == std::vector<int>{64, 3, 9, 9});
    CHECK(m.params()[m.params().find("mapping.weight")].shape == std::vector<int>{32, 64, 1, 1});
    CHECK(m.params()[m.params().find("tail.weight")].shape == std::vector<int>{3, 32, 5, 5});
  }

  TEST_CASE("config validation") {
    auto cfg = toy(Arch::SRCNN);
    cfg.width_multiplier = 0.001;
    CHECK_THROWS_AS(build_model(cfg, 1), Error);
    cfg = toy(Arch::SRCNN);
    cfg.channels = 2;
    CHECK_THROWS_AS(build_model(cfg, 1), Error);
    CHECK_THROWS_AS(parse_arch("EDSR"), Error);
    CHECK(parse_arch("SRRESNET") == Arch::SRRESNET);
    CHECK(scaled_width(64, 0.25) == 16);
    CHECK_THROWS_AS(scaled_width(12, 0.01), Error);
  }

  TEST_CASE("same seed gives identical parameters, another seed does not") {
    for (Arch a : {Arch::SRCNN, Arch::FSRCNN, Arch::SRRESNET}) {
      const auto m1 = build_model(toy(a), 77);
      const auto m2 = build_model(toy(a), 77);
      const auto m3 = build_model(toy(a), 78);
      CHECK(m1.params() == m2.params());
      CHECK(!(m1.params() == m3.params()));
      for (const auto& p : m1.params().items())
        for (double v : p.value) CHECK(static_cast<double>(static_cast<float>(v)) == v);
      Rng rng(1);
      const auto lr = tdsr::testing::random_image(rng, 8, 8, 1);
      CHECK(m1.forward(lr) == m2.forward(lr));
    }
  }

  TEST_CASE("output shape for random sizes") {
    Rng rng(19);
    for (Arch a : {Arch::SRCNN, Arch::FSRCNN, Arch::SRRESNET}) {
      for (int channels : {1, 3}) {
        const auto m = build_model(toy(a, 4, channels), 5);
        for (int trial = 0; trial < 3; ++trial) {
          const int h = rng.uniform_int(8, 24), w = rng.uniform_int(8, 24);
          const auto out = m.forward(tdsr::testing::random_image(rng, h, w, channels));
          CHECK(out.height() == 4 * h);
          CHECK(out.width() == 4 * w);
          CHECK(out.channels() == channels);
        }
      }
    }
    const auto m = build_model(toy(Arch::SRRESNET, 3), 5);
    CHECK(m.forward(ImageTensor(8, 9, 1, 0.5)).width() == 27);
  }

  TEST_CASE("channel mismatch is rejected") {
    const auto m = build_model(toy(Arch::SRCNN, 4, 1), 5);
    CHECK_THROWS_AS(m.forward(ImageTensor(8, 8, 3)), Error);
  }

  TEST_CASE("zeroed final layer reduces to the additive base") {
    Rng rng(2);
    const auto lr = tdsr::testing::random_image(rng, 10, 12, 1);
    auto srcnn = build_model(toy(Arch::SRCNN), 9);
    zero_param(srcnn, "tail.weight");
    zero_param(srcnn, "tail.bias");
    const auto base = data::bicubic_upsample(lr, ScaleFactor(4));
    CHECK(srcnn.forward(lr) == base);
    for (Arch a : {Arch::FSRCNN, Arch::SRRESNET}) {
      auto m = build_model(toy(a), 9);
      zero_param(m, "tail.weight");
      zero_param(m, "tail.bias");
      const auto out = m.forward(lr);
      for (double v : out.values()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("parameter and input gradients match central differences") {
    for (Arch a : {Arch::SRCNN, Arch::FSRCNN, Arch::SRRESNET}) {
      CAPTURE(to_string(a));
      auto model = build_model(toy(a), 13);
      Rng rng(101 + static_cast<int>(a));
      auto x = random_map(rng, 1, 8, 8, 0.0, 1.0);
      const auto r = random_map(rng, 1, 32, 32);
      auto loss = [&] { return tdsr::testing::dot(model.forward(x, nullptr).values(), r.values()); };

      nn::Cache cache;
      model.forward(x, &cache);
      auto grads = nn::zero_grads(model.params());
      const auto gx = model.backward(cache, r, &grads);

      for (int probe = 0; probe < 20; ++probe) {
        const int pi = rng.uniform_int(0, model.params().size() - 1);
        auto& values = model.params()[pi].value;
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(values.size()) - 1));
        const double numeric = tdsr::testing::central_difference(values, k, 1e-6, loss);
        CAPTURE(model.params()[pi].name);
        CHECK(grad_close(grads[pi][k], numeric));
      }
      for (int probe = 0; probe < 20; ++probe) {
        const auto k = static_cast<std::size_t>(rng.uniform_int(0, 63));
        const double numeric = tdsr::testing::central_difference(x.storage(), k, 1e-6, loss);
        CHECK(grad_close(gx.values()[k], numeric));
      }
    }
  }

  TEST_CASE("checkpoint round trip is bit exact") {
    const auto dir = tdsr::testing::temp_dir("models_ckpt");
    Rng rng(4);
    const auto lr = tdsr::testing::random_image(rng, 9, 7, 3);
    for (Arch a : {Arch::SRCNN, Arch::FSRCNN, Arch::SRRESNET}) {
      const auto m = build_model(toy(a, 4, 3), 21);
      const auto path = dir / (to_string(a) + ".ckpt");
      save_checkpoint(m, path, {{"run", "unit"}});
      const auto back = load_checkpoint(path);
      CHECK(back.config() == m.config());
      CHECK(back.seed() == m.seed());
      CHECK(back.params() == m.params());
      CHECK(back.forward(lr) == m.forward(lr));
      CHECK(checkpoint_meta(path).at("extra").at("run") == "unit");
    }
  }

  TEST_CASE("checkpoint config comes from the file, not its name") {
    const auto dir = tdsr::testing::temp_dir("models_name");
    const auto m = build_model(toy(Arch::SRCNN, 2), 1);
    save_checkpoint(m, dir / "srcnn_x4.ckpt");
    CHECK(load_checkpoint(dir / "srcnn_x4.ckpt").config().scale.value() == 2);
  }

  TEST_CASE("truncated checkpoints are reported as corrupt") {
    const auto dir = tdsr::testing::temp_dir("models_trunc");
    const auto path = dir / "m.ckpt";
    save_checkpoint(build_model(toy(Arch::FSRCNN), 1), path);
    const auto bytes = io::read_file_bytes(path);
    Rng rng(8);
    for (int trial = 0; trial < 40; ++trial) {
      const auto len = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(bytes.size()) - 1));
      io::write_file_bytes(dir / "t.ckpt", {bytes.begin(), bytes.begin() + static_cast<long>(len)});
      const auto msg = error_of([&] { load_checkpoint(dir / "t.ckpt"); });
      CAPTURE(len);
      CHECK(msg.find("corrupt checkpoint") != std::string::npos);
    }
    auto flipped = bytes;
    flipped[bytes.size() - 3] ^= 0x40;
    io::write_file_bytes(dir / "f.ckpt", flipped);
    CHECK(error_of([&] { load_checkpoint(dir / "f.ckpt"); }).find("corrupt checkpoint") != std::string::npos);
  }
}
