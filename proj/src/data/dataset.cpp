#include "tdsr/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tdsr/core/error.hpp"
#include "tdsr/core/png_io.hpp"
#include "tdsr/core/rng.hpp"
#include "tdsr/data/resample.hpp"
#include "tdsr/io/container.hpp"

namespace fs = std::filesystem;

namespace tdsr::data {

namespace {

constexpr const char* kPatchKind = "patch_set";

ImageTensor crop(const ImageTensor& img, int y0, int x0, int h, int w) {
  ImageTensor out(h, w, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

std::string patch_id(const std::string& doc, int y, int x) {
  return doc + "_y" + std::to_string(y) + "_x" + std::to_string(x);
}

fs::path patch_file(const PreparedDataset& ds, const std::string& id, const std::string& split) {
  return ds.spec.root / "patches" / split / (id + ".bin");
}

std::vector<std::string> png_stems(const fs::path& dir) {
  std::vector<std::string> stems;
  if (!fs::is_directory(dir)) return stems;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") stems.push_back(e.path().stem().string());
  std::sort(stems.begin(), stems.end());
  return stems;
}

io::ArrayRecord image_record(const std::string& name, const ImageTensor& img) {
  return {name, {img.height(), img.width(), img.channels()}, io::DType::F64, img.storage()};
}

ImageTensor record_image(const io::ArrayRecord& a) {
  if (a.shape.size() != 3) throw Error("corrupt checkpoint: patch array is not 3-D");
  return ImageTensor(a.shape[0], a.shape[1], a.shape[2], a.values);
}

}  // namespace

void DatasetSpec::validate(ScaleFactor s) const {
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw Error("split_fraction must lie in (0,1)");
  if (patch_size_hr <= 0 || patch_size_hr % 2 != 0) throw Error("patch_size_hr must be a positive even integer");
  if (patch_size_hr % s.value() != 0) throw Error("patch_size_hr must be divisible by the scale factor");
  if (stride_hr <= 0 || stride_hr % s.value() != 0)
    throw Error("stride_hr must be a positive multiple of the scale factor");
}

long patch_count(int height, int width, int patch, int stride) {
  if (patch > height || patch > width) return 0;
  return static_cast<long>((height - patch) / stride + 1) * ((width - patch) / stride + 1);
}

std::vector<SamplePair> extract_patches(const SamplePair& pair, const DatasetSpec& spec, ScaleFactor s) {
  spec.validate(s);
  const int f = s.value(), p = spec.patch_size_hr, st = spec.stride_hr;
  const auto& hr = pair.hr;
  if (p > std::min(hr.height(), hr.width()))
    throw Error("patch size " + std::to_string(p) + " exceeds image " + std::to_string(hr.height()) +
                "x" + std::to_string(hr.width()));
  if (pair.lr.height() * f != hr.height() || pair.lr.width() * f != hr.width())
    throw Error("LR/HR shapes are not related by the scale factor");
  std::vector<SamplePair> out;
  for (int y = 0; y + p <= hr.height(); y += st)
    for (int x = 0; x + p <= hr.width(); x += st)
      out.push_back({crop(pair.lr, y / f, x / f, p / f, p / f), crop(hr, y, x, p, p), patch_id(pair.id, y, x)});
  return out;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    std::vector<std::string> ids, double fraction, std::uint64_t seed) {
  if (ids.empty()) throw Error("cannot split an empty id list");
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split fraction must lie in (0,1)");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw Error("duplicate ids in split");
  Rng rng(derive_seed(seed, "split"));
  for (int i = static_cast<int>(ids.size()) - 1; i > 0; --i) std::swap(ids[i], ids[rng.uniform_int(0, i)]);
  const auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size())));
  std::vector<std::string> train(ids.begin(), ids.begin() + n_train);
  std::vector<std::string> test(ids.begin() + n_train, ids.end());
  return {train, test};
}

std::vector<SamplePair> patchify_document(const std::string& id, const ImageTensor& hr,
                                          const std::optional<ImageTensor>& lr,
                                          const DatasetSpec& spec, ScaleFactor s) {
  if (lr) return extract_patches({*lr, hr, id}, spec, s);
  // Placeholder LR of the right shape; every patch is then re-derived from its HR crop.
  SamplePair whole{ImageTensor(hr.height() / s.value(), hr.width() / s.value(), hr.channels()), hr, id};
  auto patches = extract_patches(whole, spec, s);
  for (auto& p : patches) p.lr = degrade(p.hr, s);
  return patches;
}

const std::vector<SamplePair>& PreparedDataset::patches_of(const std::string& id) const {
  for (const auto& [doc, patches] : documents)
    if (doc == id) return patches;
  throw Error("dataset has no document '" + id + "'");
}

std::vector<SamplePair> PreparedDataset::collect(const std::vector<std::string>& ids) const {
  std::vector<SamplePair> out;
  for (const auto& id : ids) {
    const auto& p = patches_of(id);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

PreparedDataset prepare_dataset(const DatasetSpec& spec, ScaleFactor s) {
  spec.validate(s);
  if (!fs::is_directory(spec.root)) throw Error("dataset root does not exist: " + spec.root.string());
  const auto stems = png_stems(spec.root / "hr");
  if (stems.empty()) throw Error("no PNG files under " + (spec.root / "hr").string());
  const bool has_lr = fs::is_directory(spec.root / "lr");

  PreparedDataset ds;
  ds.spec = spec;
  ds.scale = s;
  std::vector<std::string> ok_ids;
  for (const auto& id : stems) {
    try {
      ImageTensor hr = center_crop_to_multiple(load_png(spec.root / "hr" / (id + ".png")), s);
      std::optional<ImageTensor> lr;
      const auto lr_path = spec.root / "lr" / (id + ".png");
      if (has_lr && fs::exists(lr_path)) {
        lr = load_png(lr_path);
        if (lr->height() * s.value() != hr.height() || lr->width() * s.value() != hr.width())
          throw Error("LR image does not match the cropped HR size");
      }
      ds.documents.emplace_back(id, patchify_document(id, hr, lr, spec, s));
      ok_ids.push_back(id);
    } catch (const Error& e) {
      ds.errors.push_back(id + ": " + e.what());
    }
  }
  if (ok_ids.empty()) throw Error("no readable images under " + spec.root.string());
  std::tie(ds.train_ids, ds.test_ids) = split_dataset(ok_ids, spec.split_fraction, spec.seed);
  return ds;
}

nlohmann::json manifest_json(const PreparedDataset& ds) {
  nlohmann::json images = nlohmann::json::array();
  auto add = [&](const std::vector<std::string>& ids, const char* split) {
    for (const auto& id : ids)
      images.push_back({{"id", id},
                        {"split", split},
                        {"patches", ds.patches_of(id).size()},
                        {"file", (fs::path("patches") / split / (id + ".bin")).string()}});
  };
  add(ds.train_ids, "train");
  add(ds.test_ids, "test");
  return {{"format", "tdsr-manifest"},
          {"version", 1},
          {"scale", ds.scale.value()},
          {"split_fraction", ds.spec.split_fraction},
          {"patch_size_hr", ds.spec.patch_size_hr},
          {"stride_hr", ds.spec.stride_hr},
          {"seed", ds.spec.seed},
          {"train", ds.train_ids},
          {"test", ds.test_ids},
          {"images", images},
          {"errors", ds.errors}};
}

void write_prepared(const PreparedDataset& ds) {
  auto write_split = [&](const std::vector<std::string>& ids, const char* split) {
    for (const auto& id : ids) {
      io::Container c;
      c.kind = kPatchKind;
      c.meta = {{"document", id}};
      nlohmann::json pids = nlohmann::json::array();
      for (const auto& p : ds.patches_of(id)) {
        pids.push_back(p.id);
        c.arrays.push_back(image_record(p.id + "/hr", p.hr));
        c.arrays.push_back(image_record(p.id + "/lr", p.lr));
      }
      c.meta["patches"] = pids;
      io::write_container(c, patch_file(ds, id, split));
    }
  };
  write_split(ds.train_ids, "train");
  write_split(ds.test_ids, "test");
  const std::string text = manifest_json(ds).dump(2) + "\n";
  io::write_file_bytes(ds.spec.root / "manifest.json", {text.begin(), text.end()});
}

PreparedDataset load_prepared(const DatasetSpec& spec, ScaleFactor s) {
  spec.validate(s);
  const auto path = spec.root / "manifest.json";
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed manifest " + path.string() + ": " + e.what());
  }
  auto mismatch = [&](const char* field) {
    throw Error("manifest " + path.string() + " was prepared with a different " + field +
                "; re-run prepare");
  };
  if (m.at("scale").get<int>() != s.value()) mismatch("scale");
  if (m.at("patch_size_hr").get<int>() != spec.patch_size_hr) mismatch("patch_size_hr");
  if (m.at("stride_hr").get<int>() != spec.stride_hr) mismatch("stride_hr");
  if (m.at("split_fraction").get<double>() != spec.split_fraction) mismatch("split_fraction");
  if (m.at("seed").get<std::uint64_t>() != spec.seed) mismatch("seed");

  PreparedDataset ds;
  ds.spec = spec;
  ds.scale = s;
  ds.train_ids = m.at("train").get<std::vector<std::string>>();
  ds.test_ids = m.at("test").get<std::vector<std::string>>();
  ds.errors = m.at("errors").get<std::vector<std::string>>();
  for (const auto& entry : m.at("images")) {
    const auto id = entry.at("id").get<std::string>();
    const io::Container c = io::read_container(spec.root / entry.at("file").get<std::string>());
    std::vector<SamplePair> patches;
    for (const auto& pid : c.meta.at("patches")) {
      const auto name = pid.get<std::string>();
      patches.push_back({record_image(c.get(name + "/lr")), record_image(c.get(name + "/hr")), name});
    }
    ds.documents.emplace_back(id, std::move(patches));
  }
  return ds;
}

PreparedDataset open_dataset(const DatasetSpec& spec, ScaleFactor s) {
  if (fs::exists(spec.root / "manifest.json")) return load_prepared(spec, s);
  return prepare_dataset(spec, s);
}

ImageTensor convert_channels(const ImageTensor& img, int channels) {
  if (img.channels() == channels) return img;
  if (channels == 1) return to_grayscale(img);
  if (channels == 3 && img.channels() == 1) {
    ImageTensor out(img.height(), img.width(), 3);
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x)
        for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, 0);
    return out;
  }
  throw Error("unsupported channel conversion");
}

}  // namespace tdsr::data
