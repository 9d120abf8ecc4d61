#include <algorithm>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "support.hpp"
#include "tdsr/core/error.hpp"
#include "tdsr/core/hash.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/core/types.hpp"
#include "tdsr/io/container.hpp"

using namespace tdsr;
using tdsr::testing::random_image;

TEST_SUITE("core") {
  TEST_CASE("clamp_image saturates and keeps in-range values") {
    ImageTensor half(4, 4, 1, 0.5);
    CHECK(clamp_image(half) == half);
    ImageTensor img(1, 2, 1, std::vector<double>{1.3, -0.2});
    const auto c = clamp_image(img);
    CHECK(c.at(0, 0, 0) == 1.0);
    CHECK(c.at(0, 1, 0) == 0.0);
  }

  TEST_CASE("clamp_image matches an elementwise loop on random input") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const auto img = random_image(rng, 9, 7, 3, -2.0, 2.0);
      const auto c = clamp_image(img);
      REQUIRE(c.same_shape(img));
      for (std::size_t i = 0; i < img.size(); ++i) {
        double want = img.values()[i];
        if (want < 0.0) want = 0.0;
        if (want > 1.0) want = 1.0;
        CHECK(c.values()[i] == want);
      }
      CHECK(clamp_image(c) == c);
    }
  }

  TEST_CASE("clamp_image rejects non-finite pixels") {
    ImageTensor img(2, 2, 1, 0.5);
    img.at(1, 1, 0) = std::nan("");
    CHECK_THROWS_WITH_AS(clamp_image(img), "non-finite pixel", Error);
    img.at(1, 1, 0) = INFINITY;
    CHECK_THROWS_AS(clamp_image(img), Error);
  }

  TEST_CASE("to_grayscale uses BT.601 weights") {
    ImageTensor gray(3, 3, 1, 0.25);
    CHECK(to_grayscale(gray) == gray);
    CHECK(to_grayscale(ImageTensor(1, 1, 3, 1.0)).at(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    ImageTensor red(1, 1, 3, std::vector<double>{1.0, 0.0, 0.0});
    CHECK(to_grayscale(red).at(0, 0, 0) == 0.299);
    ImageTensor mixed(1, 1, 3, std::vector<double>{0.2, 0.4, 0.8});
    CHECK(to_grayscale(mixed).at(0, 0, 0) == doctest::Approx(0.299 * 0.2 + 0.587 * 0.4 + 0.114 * 0.8).epsilon(1e-15));
    CHECK_THROWS_AS(to_grayscale(ImageTensor(2, 2, 2)), Error);
  }

  TEST_CASE("to_grayscale preserves size and range") {
    Rng rng(5);
    for (int t = 0; t < 10; ++t) {
      const auto img = random_image(rng, 5 + t, 3 + t, 3);
      const auto g = to_grayscale(img);
      CHECK(g.height() == img.height());
      CHECK(g.width() == img.width());
      CHECK(g.channels() == 1);
      for (double v : g.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
  }

  TEST_CASE("image shape must be at least 1x1") {
    CHECK_THROWS_AS(ImageTensor(0, 3, 1), Error);
    CHECK_THROWS_AS(ImageTensor(2, 2, 1, std::vector<double>(3)), Error);
  }

  TEST_CASE("scale factor defaults to 4 and rejects values below 2") {
    CHECK(ScaleFactor{}.value() == 4);
    CHECK(ScaleFactor(3).value() == 3);
    CHECK_THROWS_AS(ScaleFactor(1), Error);
  }

  TEST_CASE("clip_box keeps boxes inside the frame") {
    const BBox b = clip_box({-3, 2, 15, 30}, 20, 10);
    CHECK(b == BBox{0, 2, 10, 20});
    CHECK(b.area() == 180);
    CHECK(!BBox{5, 5, 5, 8}.valid());
  }

  TEST_CASE("exactly four loss components, round-tripping through names") {
    CHECK(kAllLossComponents.size() == 4);
    for (auto id : kAllLossComponents) CHECK(parse_loss_component(to_string(id)) == id);
    CHECK(!parse_loss_component("L1_HR"));
    LossSet s{LossComponentId::TASK_OUT, LossComponentId::L2_HR};
    CHECK(s.label() == "L2_HR+TASK_OUT");
    CHECK(LossSet::parse_label("TASK_OUT+L2_HR") == s);
    CHECK(s.size() == 2);
    CHECK(s.any_task());
    CHECK(LossSet::parse_label("").empty());
    CHECK_THROWS_AS(LossSet::parse_label("L2_HR+BOGUS"), Error);
  }

  TEST_CASE("rng streams are reproducible and tag-separated") {
    Rng a(derive_seed(9, "x")), b(derive_seed(9, "x")), c(derive_seed(9, "y"));
    bool differs = false;
    for (int i = 0; i < 100; ++i) {
      const double va = a.uniform(), vb = b.uniform(), vc = c.uniform();
      CHECK(va == vb);
      CHECK((va >= 0.0 && va < 1.0));
      differs |= va != vc;
    }
    CHECK(differs);
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
      const int v = r.uniform_int(-2, 5);
      CHECK((v >= -2 && v <= 5));
    }
  }

  TEST_CASE("normal samples have roughly unit variance") {
    Rng r(17);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      const double v = r.normal();
      sum += v;
      sq += v * v;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
  }

  TEST_CASE("sha256 and fnv1a64 known vectors") {
    Sha256 h;
    h.update(std::string_view("abc"));
    CHECK(h.hex_digest() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Sha256 e;
    CHECK(e.hex_digest() == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
    const unsigned char a[] = {'a'};
    CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("png round trip divides by 255 and rounds half-up") {
    const auto dir = tdsr::testing::temp_dir("png");
    Rng rng(2);
    for (int c : {1, 3}) {
      const auto img = random_image(rng, 13, 17, c);
      save_png(img, dir / "a.png");
      const auto back = load_png(dir / "a.png");
      REQUIRE(back.same_shape(img));
      for (std::size_t i = 0; i < img.size(); ++i) {
        const double code = std::floor(img.values()[i] * 255.0 + 0.5);
        CHECK(back.values()[i] == code / 255.0);
      }
    }
    CHECK(quantize_u8(127.5 / 255.0) == 128);
    CHECK(quantize_u8(-1.0) == 0);
    CHECK(quantize_u8(2.0) == 255);
  }

  TEST_CASE("corrupt png is reported with its path") {
    const auto dir = tdsr::testing::temp_dir("png_bad");
    save_png(ImageTensor(32, 32, 1, 0.5), dir / "ok.png");
    auto bytes = io::read_file_bytes(dir / "ok.png");
    bytes.resize(bytes.size() / 2);
    io::write_file_bytes(dir / "bad.png", bytes);
    CHECK_THROWS_WITH_AS(load_png(dir / "bad.png"), doctest::Contains("bad.png"), Error);
  }

  TEST_CASE("container round trip is exact for f64 and float-grid f32 arrays") {
    io::Container c;
    c.kind = "test";
    c.meta = {{"k", 3}};
    c.arrays.push_back({"a", {2, 3}, io::DType::F64, {0.1, 0.2, 0.3, -1e300, 5, 6}});
    c.arrays.push_back({"b", {2}, io::DType::F32, {static_cast<float>(0.1), 2.5}});
    const auto bytes = io::serialize(c);
    CHECK(std::memcmp(bytes.data(), "TDSRCKPT", 8) == 0);
    const auto back = io::deserialize(bytes);
    CHECK(back.kind == "test");
    CHECK(back.meta["k"] == 3);
    CHECK(back.get("a").values == c.arrays[0].values);
    CHECK(back.get("b").values == c.arrays[1].values);
    CHECK(back.get("a").shape == std::vector<int>{2, 3});
    CHECK(!back.has("zzz"));
  }

  TEST_CASE("truncated or tampered containers are corrupt") {
    io::Container c;
    c.kind = "test";
    c.arrays.push_back({"a", {64}, io::DType::F32, std::vector<double>(64, 1.0)});
    const auto bytes = io::serialize(c);
    for (std::size_t cut : {std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
      auto t = bytes;
      t.resize(cut);
      CHECK_THROWS_WITH_AS(io::deserialize(t), doctest::Contains("corrupt checkpoint"), Error);
    }
    auto flipped = bytes;
    flipped.back() ^= 0x5A;
    CHECK_THROWS_WITH_AS(io::deserialize(flipped), doctest::Contains("corrupt checkpoint"), Error);
  }

  TEST_CASE("unknown format version is rejected") {
    io::Container c;
    c.kind = "test";
    auto bytes = io::serialize(c);
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 4);
    std::string header(bytes.begin() + 12, bytes.begin() + 12 + len);
    auto j = nlohmann::json::parse(header);
    j["format_version"] = 99;
    const std::string h2 = j.dump();
    std::vector<unsigned char> out(bytes.begin(), bytes.begin() + 8);
    const std::uint32_t len2 = static_cast<std::uint32_t>(h2.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(len2 >> (8 * i)));
    out.insert(out.end(), h2.begin(), h2.end());
    out.insert(out.end(), bytes.begin() + 12 + len, bytes.end());
    CHECK_THROWS_WITH_AS(io::deserialize(out), doctest::Contains("unsupported checkpoint format version 99"), Error);
  }

  TEST_CASE("feature map conversion round trips") {
    Rng rng(4);
    const auto img = random_image(rng, 5, 6, 3);
    const auto fm = to_feature_map(img);
    CHECK(fm.channels() == 3);
    CHECK(fm.at(2, 4, 5) == img.at(4, 5, 2));
    CHECK(to_image(fm) == img);
  }
}
