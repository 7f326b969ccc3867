#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "infocam/array.hpp"

namespace infocam::loc {

enum class Space { feature_grid, image_pixels };

/// Half-open [x0,x1) x [y0,y1); x is the column axis.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  Space space = Space::feature_grid;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x0 < x1 && y0 < y1 && x0 >= 0 && y0 >= 0; }
  friend bool operator==(const Box&, const Box&) = default;
};

struct Point {
  std::size_t row = 0, col = 0;
  friend auto operator<=>(const Point&, const Point&) = default;
};

class Mask {
 public:
  Mask(std::size_t height, std::size_t width) : h_(height), w_(width), cells_(height * width, 0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  bool operator()(std::size_t r, std::size_t c) const { return cells_[r * w_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { cells_[r * w_ + c] = v ? 1 : 0; }
  std::size_t count() const;
  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t h_, w_;
  std::vector<std::uint8_t> cells_;
};

enum class Connectivity { four = 4, eight = 8 };
enum class ThresholdMode { normalized, raw };

struct BoxOptions {
  double fraction = 0.2;
  ThresholdMode mode = ThresholdMode::normalized;
  Connectivity connectivity = Connectivity::four;
};

/// normalized: min-max scale to [0,1] (constant maps give an all-true mask),
/// keep cells strictly above `fraction`. raw: keep v > fraction * max(v).
Mask threshold_mask(const Array& values, double fraction,
                    ThresholdMode mode = ThresholdMode::normalized);

/// Per-cell component ids (0 = background, 1.. in raster order of first cell).
std::vector<std::size_t> label_components(const Mask& mask, Connectivity conn,
                                          std::size_t* num_components = nullptr);

/// Largest component; ties go to the one whose first raster cell comes first.
/// Empty result for an empty mask.
std::vector<Point> largest_component(const Mask& mask, Connectivity conn = Connectivity::four);

struct BoxResult {
  Box box;
  bool fallback = false;  // mask was empty; box is the 1x1 cell at the argmax
};

/// Smallest box over the largest thresholded component, in grid cells.
BoxResult bounding_box(const Array& map, const BoxOptions& opts = {});

/// Linear corner scaling from an (H,W) grid to an (H_img,W_img) image.
Box to_image_space(const Box& b, std::array<std::size_t, 2> feat_hw,
                   std::array<std::size_t, 2> img_hw);

/// Bilinear resize with half-pixel centres (align_corners = false).
Array bilinear_resize(const Array& grid, std::size_t height, std::size_t width);

/// Alternative pipeline: upsample the map to image size, then threshold and box.
BoxResult bounding_box_upsampled(const Array& map, std::array<std::size_t, 2> img_hw,
                                 const BoxOptions& opts = {});

double iou(const Box& a, const Box& b);

/// Best IoU against any of the ground-truth boxes (0 if none).
double best_iou(const Box& predicted, std::span<const Box> ground_truth);

struct LocalizationResult {
  Box predicted_box;
  std::size_t used_label = 0;
  double iou = 0.0;
  bool correct = false;  // iou > 0.5
};

LocalizationResult judge(const Box& predicted, std::size_t used_label,
                         std::span<const Box> ground_truth);

enum class EvalMode { gt_loc, top1_loc };

/// Per-sample outcome fed to evaluate(): boxes from the true-label map and from
/// the predicted-label map, plus classification correctness.
struct EvalSample {
  std::vector<Box> gt_boxes;
  Box true_label_box;
  Box predicted_label_box;
  bool classified_correctly = false;
};

/// Localization accuracy in percent. A hit needs IoU > 0.5 against any GT box;
/// top1_loc additionally needs a correct classification.
double evaluate(std::span<const EvalSample> samples, EvalMode mode);

}  // namespace infocam::loc
