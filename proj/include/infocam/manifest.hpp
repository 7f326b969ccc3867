#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infocam/array.hpp"
#include "infocam/npy.hpp"

namespace infocam {

class ManifestError : public DataError {
 public:
  using DataError::DataError;
};

/// A reference to an array file. In JSON either a bare relative path or
/// {"path": ..., "shape": [...], "dtype": "<f4"|"<f8"}.
struct ArrayRef {
  std::filesystem::path path;  // resolved against the manifest directory
  std::optional<Shape> declared_shape;
  std::optional<npy::Dtype> declared_dtype;
  Shape shape;  // from the file header, filled during validation
};

struct SampleEntry {
  std::string id;
  ArrayRef features;
  std::optional<std::size_t> batch_index;  // row of a rank-4 (N,K,H,W) features file
  std::array<std::size_t, 2> image_size{};  // (H, W)
  std::vector<int> labels;
  std::vector<std::array<double, 4>> gt_boxes;  // x0, y0, x1, y1 in image pixels
  std::optional<ArrayRef> logits;
};

/// How the stored weight matrix meets the feature maps.
///   gap: weights act on globally averaged features (PyTorch avgpool+fc);
///   sum: weights act on spatially summed features.
enum class HeadPooling { gap, sum };

struct Manifest {
  std::filesystem::path directory;
  std::vector<SampleEntry> samples;
  ArrayRef weights;
  std::optional<ArrayRef> bias;
  std::size_t num_classes = 0;
  HeadPooling pooling = HeadPooling::gap;
  bool multi_label = false;  // "head": "sigmoid"
};

/// Parses and validates a feature manifest: every file must exist, header
/// shapes must match declarations, features are (K,H,W) or (N,K,H,W),
/// weights are (M,K) with matching K and M == num_classes.
Manifest load_manifest(const std::filesystem::path& path);

/// Loads the (K,H,W) feature stack of one sample.
Array load_features(const SampleEntry& sample);

Array load_weights(const Manifest& m);
std::optional<Array> load_bias(const Manifest& m);

// Named-array entries used by checkpoints and datasets.

/// Writes `a` to `dir/file` and returns its {"path","shape","dtype"} entry.
nlohmann::json write_entry(const std::filesystem::path& dir, const std::string& file,
                           const Array& a, npy::Dtype dtype = npy::Dtype::f64);

/// Reads an entry, checking the declared shape/dtype against the file header.
Array read_entry(const std::filesystem::path& dir, const nlohmann::json& entry);

/// Resolves and header-checks a path-or-object reference.
ArrayRef resolve_ref(const std::filesystem::path& dir, const nlohmann::json& value,
                     const std::string& what);

}  // namespace infocam
