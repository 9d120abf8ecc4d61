#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tdsr/core/image.hpp"
#include "tdsr/core/types.hpp"

namespace tdsr::data {

/// Co-registered LR/HR pair; hr is exactly s times larger than lr.
struct SamplePair {
  ImageTensor lr;
  ImageTensor hr;
  std::string id;
};

struct DatasetSpec {
  std::filesystem::path root;
  double split_fraction = 0.7;
  int patch_size_hr = 128;
  int stride_hr = 128;
  std::uint64_t seed = 0;

  /// Patch size and stride must be positive multiples of s; fraction in (0,1).
  void validate(ScaleFactor s) const;
};

/// Regular-grid patches of the HR image with the co-located LR crop.
/// Count = floor((H-p)/stride + 1) * floor((W-p)/stride + 1).
std::vector<SamplePair> extract_patches(const SamplePair& pair, const DatasetSpec& spec, ScaleFactor s);

/// Closed-form number of patches for an H x W image.
long patch_count(int height, int width, int patch, int stride);

/// Seeded shuffle of the (sorted) ids; the first round(fraction * n) go to train.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    std::vector<std::string> ids, double fraction, std::uint64_t seed);

/// Patch pairs for one document. When `lr` is absent every LR patch is
/// degrade(HR patch); otherwise LR patches are crops of the supplied LR image.
std::vector<SamplePair> patchify_document(const std::string& id, const ImageTensor& hr,
                                          const std::optional<ImageTensor>& lr,
                                          const DatasetSpec& spec, ScaleFactor s);

struct PreparedDataset {
  DatasetSpec spec;
  ScaleFactor scale;
  std::vector<std::string> train_ids, test_ids;
  /// Patch pairs keyed by source document.
  std::vector<std::pair<std::string, std::vector<SamplePair>>> documents;
  std::vector<std::string> errors;

  const std::vector<SamplePair>& patches_of(const std::string& id) const;
  std::vector<SamplePair> collect(const std::vector<std::string>& ids) const;
};

/// Reads root/hr/*.png (and root/lr/*.png when present), center-crops to a
/// multiple of s, splits, and cuts patches. Unreadable files are recorded in
/// `errors` and skipped.
PreparedDataset prepare_dataset(const DatasetSpec& spec, ScaleFactor s);

/// Writes root/manifest.json and root/patches/<split>/<id>.bin. Deterministic bytes.
void write_prepared(const PreparedDataset& ds);
nlohmann::json manifest_json(const PreparedDataset& ds);

/// Loads a dataset previously written by write_prepared; throws if its
/// parameters differ from `spec`/`s`.
PreparedDataset load_prepared(const DatasetSpec& spec, ScaleFactor s);

/// load_prepared when root/manifest.json exists, otherwise prepare_dataset in memory.
PreparedDataset open_dataset(const DatasetSpec& spec, ScaleFactor s);

/// Converts between 1 and 3 channels (BT.601 luminance or replication).
ImageTensor convert_channels(const ImageTensor& img, int channels);

}  // namespace tdsr::data
