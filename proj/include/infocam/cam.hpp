#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "infocam/array.hpp"

/// Intensity maps for weakly supervised localization.
///
/// All maps derive from the final-conv feature stack g_1..g_K (K,H,W) and the
/// classifier weights W (M,K). A CAM is the per-location weighted feature sum
/// for one label; its spatial sum is that label's logit. infoCAM subtracts the
/// mean of the other labels' maps and aggregates over a square region;
/// infoCAM+ subtracts the region-wise least likely label instead.
namespace infocam::cam {

enum class HeadMode { softmax, multi_label };

/// K feature maps of size H x W.
class FeatureStack {
 public:
  explicit FeatureStack(Array features);

  const Array& features() const { return features_; }
  std::size_t channels() const { return features_.dim(0); }
  std::size_t height() const { return features_.dim(1); }
  std::size_t width() const { return features_.dim(2); }

 private:
  Array features_;
};

/// Weight matrix (M,K), optional bias (M,).
class ClassifierHead {
 public:
  ClassifierHead(Array weights, std::optional<Array> bias = std::nullopt,
                 HeadMode mode = HeadMode::softmax);

  const Array& weights() const { return weights_; }
  const std::optional<Array>& bias() const { return bias_; }
  HeadMode mode() const { return mode_; }
  std::size_t num_classes() const { return weights_.dim(0); }
  std::size_t num_features() const { return weights_.dim(1); }

 private:
  Array weights_;
  std::optional<Array> bias_;
  HeadMode mode_;
};

enum class MapKind { cam, infocam, infocam_plus };

std::string to_string(MapKind kind);
MapKind map_kind_from_string(const std::string& s);

/// Window placement for region aggregation. `centered` needs an odd side;
/// `top_left` covers [a, a+s) x [b, b+s) and allows even sides.
enum class Anchor { centered, top_left };

struct RegionSpec {
  std::size_t side = 1;
  Anchor anchor = Anchor::centered;
};

struct IntensityMap {
  Array values;  // (H,W)
  std::size_t label = 0;
  MapKind kind = MapKind::cam;
  std::size_t region_side = 1;
};

/// Whether the infoCAM+ argmin may pick the true label itself.
enum class ArgminDomain { all_labels, exclude_true };

/// M_y(a,b) = sum_k w_k^y g_k(a,b).
IntensityMap cam(const FeatureStack& fs, const ClassifierHead& head, std::size_t y);

/// All M class maps at once, shape (M,H,W).
Array all_cams(const FeatureStack& fs, const ClassifierHead& head);

/// n_y as the spatial sum of the class map, plus bias.
Array logits(const FeatureStack& fs, const ClassifierHead& head);

/// n_y via global average pooling then the linear head, rescaled by H*W.
/// Independent route to the same numbers as logits().
Array logits_via_gap(const FeatureStack& fs, const ClassifierHead& head);

/// Max-shifted log-sum-exp.
double logsumexp(std::span<const double> n);

/// PMI(x, y) = n_y - logsumexp(n) + log M.
double pmi(std::span<const double> n, std::size_t y);

/// Mean PMI over (features, true label) pairs: an estimate of I(X;Y).
double estimate_mi(std::span<const FeatureStack> stacks, std::span<const std::size_t> labels,
                   const ClassifierHead& head);

/// Sum over the s x s window at every grid point, zero padded.
Array box_filter(const Array& grid, const RegionSpec& region);

void validate_region(const RegionSpec& region, std::size_t height, std::size_t width);

/// Region-summed PMI difference between y and the mean of the other labels.
IntensityMap infocam(const FeatureStack& fs, const ClassifierHead& head, std::size_t y,
                     const RegionSpec& region);

/// Region-summed difference between y and the per-window least likely label
/// (ties to the smallest index).
IntensityMap infocam_plus(const FeatureStack& fs, const ClassifierHead& head, std::size_t y,
                          const RegionSpec& region,
                          ArgminDomain domain = ArgminDomain::all_labels);

/// Per-label sigmoid heads: PMI(x, l=1) - PMI(x, l=0) is the label's logit, so
/// the per-window infoCAM is the region sum of the label's CAM.
IntensityMap multilabel_infocam(const FeatureStack& fs, const ClassifierHead& head,
                                std::size_t label, const RegionSpec& region);

/// Binary infoCAM+: argmin over {present: S(R), absent: 0}, i.e. max(S(R), 0).
IntensityMap multilabel_infocam_plus(const FeatureStack& fs, const ClassifierHead& head,
                                     std::size_t label, const RegionSpec& region);

}  // namespace infocam::cam
