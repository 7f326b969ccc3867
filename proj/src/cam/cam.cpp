#include "infocam/cam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace infocam::cam {

namespace {

void check_label(const ClassifierHead& head, std::size_t y) {
  if (y >= head.num_classes()) {
    throw std::out_of_range("label " + std::to_string(y) + " out of range for " +
                            std::to_string(head.num_classes()) + " classes");
  }
}

void check_compatible(const FeatureStack& fs, const ClassifierHead& head) {
  if (fs.channels() != head.num_features()) {
    throw std::invalid_argument("feature stack has K=" + std::to_string(fs.channels()) +
                                " but head expects K=" + std::to_string(head.num_features()));
  }
}

void check_softmax_mode(const ClassifierHead& head) {
  if (head.num_classes() < 2) throw std::invalid_argument("infoCAM needs at least two classes");
}

// Weighted feature sum for an arbitrary weight row of length K.
Array weighted_sum(const FeatureStack& fs, std::span<const double> w) {
  const std::size_t hw = fs.height() * fs.width();
  Array out({fs.height(), fs.width()});
  auto g = fs.features().data();
  auto o = out.data();
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double wk = w[k];
    const double* gk = g.data() + k * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] += wk * gk[i];
  }
  return out;
}

std::span<const double> row(const Array& a, std::size_t r) {
  return a.data().subspan(r * a.dim(1), a.dim(1));
}

}  // namespace

FeatureStack::FeatureStack(Array features) : features_(std::move(features)) {
  if (features_.rank() != 3) {
    throw std::invalid_argument("feature stack must be (K,H,W), got " +
                                shape_to_string(features_.shape()));
  }
  if (features_.dim(0) == 0 || features_.dim(1) == 0 || features_.dim(2) == 0) {
    throw std::invalid_argument("feature stack extents must be positive");
  }
}

ClassifierHead::ClassifierHead(Array weights, std::optional<Array> bias, HeadMode mode)
    : weights_(std::move(weights)), bias_(std::move(bias)), mode_(mode) {
  if (weights_.rank() != 2 || weights_.dim(0) == 0 || weights_.dim(1) == 0) {
    throw std::invalid_argument("classifier weights must be a non-empty (M,K) matrix");
  }
  if (bias_ && bias_->shape() != Shape{weights_.dim(0)}) {
    throw std::invalid_argument("classifier bias must have shape (M,)");
  }
  if (mode_ == HeadMode::softmax && weights_.dim(0) < 2) {
    throw std::invalid_argument("softmax head needs at least two classes");
  }
}

std::string to_string(MapKind kind) {
  switch (kind) {
    case MapKind::cam: return "cam";
    case MapKind::infocam: return "infocam";
    case MapKind::infocam_plus: return "infocam+";
  }
  return "?";
}

MapKind map_kind_from_string(const std::string& s) {
  if (s == "cam") return MapKind::cam;
  if (s == "infocam") return MapKind::infocam;
  if (s == "infocam+" || s == "infocam_plus") return MapKind::infocam_plus;
  throw std::invalid_argument("unknown map kind '" + s + "'");
}

IntensityMap cam(const FeatureStack& fs, const ClassifierHead& head, std::size_t y) {
  check_label(head, y);
  check_compatible(fs, head);
  return {weighted_sum(fs, row(head.weights(), y)), y, MapKind::cam, 1};
}

Array all_cams(const FeatureStack& fs, const ClassifierHead& head) {
  check_compatible(fs, head);
  const std::size_t m = head.num_classes(), hw = fs.height() * fs.width();
  Array out({m, fs.height(), fs.width()});
  for (std::size_t y = 0; y < m; ++y) {
    Array one = weighted_sum(fs, row(head.weights(), y));
    std::copy(one.storage().begin(), one.storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(y * hw));
  }
  return out;
}

Array logits(const FeatureStack& fs, const ClassifierHead& head) {
  check_compatible(fs, head);
  const std::size_t m = head.num_classes();
  Array n({m});
  for (std::size_t y = 0; y < m; ++y) {
    IntensityMap map = cam(fs, head, y);
    double s = 0.0;
    for (double v : map.values.data()) s += v;
    n[y] = s + (head.bias() ? (*head.bias())[y] : 0.0);
  }
  return n;
}

Array logits_via_gap(const FeatureStack& fs, const ClassifierHead& head) {
  check_compatible(fs, head);
  const std::size_t k = fs.channels(), hw = fs.height() * fs.width();
  std::vector<double> pooled(k, 0.0);
  auto g = fs.features().data();
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += g[c * hw + i];
    pooled[c] = s / static_cast<double>(hw);
  }
  const std::size_t m = head.num_classes();
  Array n({m});
  for (std::size_t y = 0; y < m; ++y) {
    auto w = row(head.weights(), y);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += w[c] * pooled[c];
    n[y] = static_cast<double>(hw) * s + (head.bias() ? (*head.bias())[y] : 0.0);
  }
  return n;
}

double logsumexp(std::span<const double> n) {
  if (n.empty()) throw std::invalid_argument("logsumexp of an empty vector");
  const double mx = *std::max_element(n.begin(), n.end());
  double s = 0.0;
  for (double v : n) s += std::exp(v - mx);
  return mx + std::log(s);
}

double pmi(std::span<const double> n, std::size_t y) {
  if (n.size() < 2) throw std::invalid_argument("PMI needs at least two classes");
  if (y >= n.size()) throw std::out_of_range("label out of range");
  return n[y] - logsumexp(n) + std::log(static_cast<double>(n.size()));
}

double estimate_mi(std::span<const FeatureStack> stacks, std::span<const std::size_t> labels,
                   const ClassifierHead& head) {
  if (stacks.empty()) throw std::invalid_argument("estimate_mi needs at least one sample");
  if (stacks.size() != labels.size()) throw std::invalid_argument("stacks/labels size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    Array n = logits(stacks[i], head);
    total += pmi(n.data(), labels[i]);
  }
  return total / static_cast<double>(stacks.size());
}

void validate_region(const RegionSpec& region, std::size_t height, std::size_t width) {
  if (region.side == 0) throw std::invalid_argument("region side must be positive");
  if (region.side > std::min(height, width)) {
    throw std::invalid_argument("region side " + std::to_string(region.side) +
                                " exceeds the feature grid " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (region.anchor == Anchor::centered && region.side % 2 == 0) {
    throw std::invalid_argument("centered regions need an odd side, got " +
                                std::to_string(region.side));
  }
}

Array box_filter(const Array& grid, const RegionSpec& region) {
  if (grid.rank() != 2) throw std::invalid_argument("box_filter expects an (H,W) grid");
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  validate_region(region, h, w);
  const auto s = static_cast<std::ptrdiff_t>(region.side);
  const std::ptrdiff_t lo = region.anchor == Anchor::centered ? -(s / 2) : 0;
  const std::ptrdiff_t hi = lo + s - 1;
  const auto H = static_cast<std::ptrdiff_t>(h), W = static_cast<std::ptrdiff_t>(w);

  // Separable: horizontal window sums, then vertical window sums of those.
  Array horiz({h, w});
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t d = std::max(lo, -c); d <= std::min(hi, W - 1 - c); ++d) {
        acc += grid.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c + d));
      }
      horiz.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  Array out({h, w});
  for (std::ptrdiff_t r = 0; r < H; ++r) {
    for (std::ptrdiff_t c = 0; c < W; ++c) {
      double acc = 0.0;
      for (std::ptrdiff_t d = std::max(lo, -r); d <= std::min(hi, H - 1 - r); ++d) {
        acc += horiz.at(static_cast<std::size_t>(r + d), static_cast<std::size_t>(c));
      }
      out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = acc;
    }
  }
  return out;
}

IntensityMap infocam(const FeatureStack& fs, const ClassifierHead& head, std::size_t y,
                     const RegionSpec& region) {
  check_label(head, y);
  check_compatible(fs, head);
  check_softmax_mode(head);
  validate_region(region, fs.height(), fs.width());

  const std::size_t m = head.num_classes(), k = head.num_features();
  // w~^y = w^y - mean_{y' != y} w^{y'}; the difference decomposes point-wise.
  std::vector<double> diff(k, 0.0);
  for (std::size_t other = 0; other < m; ++other) {
    if (other == y) continue;
    auto w = row(head.weights(), other);
    for (std::size_t c = 0; c < k; ++c) diff[c] += w[c];
  }
  auto wy = row(head.weights(), y);
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (std::size_t c = 0; c < k; ++c) diff[c] = wy[c] - inv * diff[c];

  Array pointwise = weighted_sum(fs, diff);
  return {box_filter(pointwise, region), y, MapKind::infocam, region.side};
}

IntensityMap infocam_plus(const FeatureStack& fs, const ClassifierHead& head, std::size_t y,
                          const RegionSpec& region, ArgminDomain domain) {
  check_label(head, y);
  check_compatible(fs, head);
  check_softmax_mode(head);
  validate_region(region, fs.height(), fs.width());

  const std::size_t m = head.num_classes(), h = fs.height(), w = fs.width(), hw = h * w;
  std::vector<Array> region_sums;
  region_sums.reserve(m);
  for (std::size_t c = 0; c < m; ++c) {
    region_sums.push_back(box_filter(weighted_sum(fs, row(head.weights(), c)), region));
  }
  Array out({h, w});
  for (std::size_t i = 0; i < hw; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      if (domain == ArgminDomain::exclude_true && c == y) continue;
      // Strict < keeps the smallest index on ties.
      if (region_sums[c][i] < best) best = region_sums[c][i];
    }
    out[i] = region_sums[y][i] - best;
  }
  return {std::move(out), y, MapKind::infocam_plus, region.side};
}

IntensityMap multilabel_infocam(const FeatureStack& fs, const ClassifierHead& head,
                                std::size_t label, const RegionSpec& region) {
  IntensityMap base = cam(fs, head, label);
  return {box_filter(base.values, region), label, MapKind::infocam, region.side};
}

IntensityMap multilabel_infocam_plus(const FeatureStack& fs, const ClassifierHead& head,
                                     std::size_t label, const RegionSpec& region) {
  IntensityMap map = multilabel_infocam(fs, head, label, region);
  for (double& v : map.values.storage()) v = std::max(v, 0.0);
  map.kind = MapKind::infocam_plus;
  return map;
}

}  // namespace infocam::cam
