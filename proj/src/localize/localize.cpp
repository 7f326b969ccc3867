#include "infocam/localize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace infocam::loc {

namespace {

class DisjointSet {
 public:
  std::size_t make() {
    parent_.push_back(parent_.size());
    return parent_.size() - 1;
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Keep the smaller provisional label as root so roots follow raster order.
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

Mask threshold_mask(const Array& values, double fraction, ThresholdMode mode) {
  if (values.rank() != 2) throw std::invalid_argument("threshold_mask expects an (H,W) map");
  const std::size_t h = values.dim(0), w = values.dim(1);
  Mask mask(h, w);
  if (values.empty()) return mask;
  auto [mn_it, mx_it] = std::minmax_element(values.storage().begin(), values.storage().end());
  const double mn = *mn_it, mx = *mx_it;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double v = values.at(r, c);
      bool keep;
      if (mode == ThresholdMode::raw) {
        keep = v > fraction * mx;
      } else if (mx == mn) {
        keep = true;
      } else {
        keep = (v - mn) / (mx - mn) > fraction;
      }
      mask.set(r, c, keep);
    }
  }
  return mask;
}

std::vector<std::size_t> label_components(const Mask& mask, Connectivity conn,
                                          std::size_t* num_components) {
  const std::size_t h = mask.height(), w = mask.width();
  std::vector<std::size_t> provisional(h * w, 0);  // 0 = background, else label+1
  DisjointSet sets;

  // First pass: raster scan, look at already visited neighbours.
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      std::size_t neigh[4];
      std::size_t n = 0;
      if (c > 0 && mask(r, c - 1)) neigh[n++] = provisional[r * w + c - 1];
      if (r > 0 && mask(r - 1, c)) neigh[n++] = provisional[(r - 1) * w + c];
      if (conn == Connectivity::eight && r > 0) {
        if (c > 0 && mask(r - 1, c - 1)) neigh[n++] = provisional[(r - 1) * w + c - 1];
        if (c + 1 < w && mask(r - 1, c + 1)) neigh[n++] = provisional[(r - 1) * w + c + 1];
      }
      if (n == 0) {
        provisional[r * w + c] = sets.make() + 1;
        continue;
      }
      std::size_t lab = neigh[0];
      for (std::size_t i = 1; i < n; ++i) lab = std::min(lab, neigh[i]);
      provisional[r * w + c] = lab;
      for (std::size_t i = 0; i < n; ++i) sets.unite(lab - 1, neigh[i] - 1);
    }
  }

  // Second pass: resolve to roots and renumber consecutively in raster order.
  std::vector<std::size_t> out(h * w, 0);
  std::vector<std::size_t> remap;
  std::size_t next = 0;
  for (std::size_t i = 0; i < h * w; ++i) {
    if (provisional[i] == 0) continue;
    std::size_t root = sets.find(provisional[i] - 1);
    if (root >= remap.size()) remap.resize(root + 1, 0);
    if (remap[root] == 0) remap[root] = ++next;
    out[i] = remap[root];
  }
  if (num_components) *num_components = next;
  return out;
}

std::vector<Point> largest_component(const Mask& mask, Connectivity conn) {
  std::size_t n = 0;
  auto labels = label_components(mask, conn, &n);
  if (n == 0) return {};
  std::vector<std::size_t> sizes(n + 1, 0);
  for (auto l : labels) {
    if (l) ++sizes[l];
  }
  // Labels are numbered by first raster cell, so the first maximum wins ties.
  std::size_t best = 1;
  for (std::size_t l = 2; l <= n; ++l) {
    if (sizes[l] > sizes[best]) best = l;
  }
  std::vector<Point> pts;
  pts.reserve(sizes[best]);
  const std::size_t w = mask.width();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == best) pts.push_back({i / w, i % w});
  }
  return pts;
}

namespace {

Box cover(std::span<const Point> pts, Space space) {
  std::size_t r0 = std::numeric_limits<std::size_t>::max(), c0 = r0, r1 = 0, c1 = 0;
  for (const auto& p : pts) {
    r0 = std::min(r0, p.row);
    c0 = std::min(c0, p.col);
    r1 = std::max(r1, p.row);
    c1 = std::max(c1, p.col);
  }
  return {static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 + 1),
          static_cast<double>(r1 + 1), space};
}

BoxResult box_from_map(const Array& map, const BoxOptions& opts, Space space) {
  if (map.rank() != 2 || map.empty()) throw std::invalid_argument("bounding_box expects a non-empty (H,W) map");
  Mask mask = threshold_mask(map, opts.fraction, opts.mode);
  auto comp = largest_component(mask, opts.connectivity);
  if (!comp.empty()) return {cover(comp, space), false};
  auto it = std::max_element(map.storage().begin(), map.storage().end());
  auto idx = static_cast<std::size_t>(it - map.storage().begin());
  Point p{idx / map.dim(1), idx % map.dim(1)};
  return {cover(std::span<const Point>(&p, 1), space), true};
}

}  // namespace

BoxResult bounding_box(const Array& map, const BoxOptions& opts) {
  return box_from_map(map, opts, Space::feature_grid);
}

Box to_image_space(const Box& b, std::array<std::size_t, 2> feat_hw,
                   std::array<std::size_t, 2> img_hw) {
  if (feat_hw[0] == 0 || feat_hw[1] == 0 || img_hw[0] == 0 || img_hw[1] == 0) {
    throw std::invalid_argument("to_image_space: zero-sized grid");
  }
  if (b.space != Space::feature_grid) throw std::invalid_argument("to_image_space: box is not in grid space");
  const double sx = static_cast<double>(img_hw[1]) / static_cast<double>(feat_hw[1]);
  const double sy = static_cast<double>(img_hw[0]) / static_cast<double>(feat_hw[0]);
  return {b.x0 * sx, b.y0 * sy, b.x1 * sx, b.y1 * sy, Space::image_pixels};
}

Array bilinear_resize(const Array& grid, std::size_t height, std::size_t width) {
  if (grid.rank() != 2 || grid.empty() || height == 0 || width == 0) {
    throw std::invalid_argument("bilinear_resize: bad extents");
  }
  const std::size_t h = grid.dim(0), w = grid.dim(1);
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  Array out({height, width});
  for (std::size_t r = 0; r < height; ++r) {
    double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    auto y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, h - 1);
    double ty = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < width; ++c) {
      double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      auto x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, w - 1);
      double tx = fx - static_cast<double>(x0);
      double top = grid.at(y0, x0) * (1 - tx) + grid.at(y0, x1) * tx;
      double bot = grid.at(y1, x0) * (1 - tx) + grid.at(y1, x1) * tx;
      out.at(r, c) = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

BoxResult bounding_box_upsampled(const Array& map, std::array<std::size_t, 2> img_hw,
                                 const BoxOptions& opts) {
  return box_from_map(bilinear_resize(map, img_hw[0], img_hw[1]), opts, Space::image_pixels);
}

double iou(const Box& a, const Box& b) {
  if (a.space != b.space) throw std::invalid_argument("iou: boxes are in different coordinate spaces");
  const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

double best_iou(const Box& predicted, std::span<const Box> ground_truth) {
  double best = 0.0;
  for (const auto& g : ground_truth) best = std::max(best, iou(predicted, g));
  return best;
}

LocalizationResult judge(const Box& predicted, std::size_t used_label,
                         std::span<const Box> ground_truth) {
  double v = best_iou(predicted, ground_truth);
  return {predicted, used_label, v, v > 0.5};
}

double evaluate(std::span<const EvalSample> samples, EvalMode mode) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  std::size_t hits = 0;
  for (const auto& s : samples) {
    if (mode == EvalMode::gt_loc) {
      if (best_iou(s.true_label_box, s.gt_boxes) > 0.5) ++hits;
    } else if (s.classified_correctly && best_iou(s.predicted_label_box, s.gt_boxes) > 0.5) {
      ++hits;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace infocam::loc
