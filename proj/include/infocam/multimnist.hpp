#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "infocam/array.hpp"
#include "infocam/localize.hpp"

/// Double-digit MNIST: a 28x56 canvas with a left and a right 28x28 slot, each
/// occupied with probability p_slot; empty canvases are redrawn.
namespace infocam::mm {

inline constexpr std::size_t kDigitSide = 28;
inline constexpr std::size_t kCanvasHeight = 28;
inline constexpr std::size_t kCanvasWidth = 56;
inline constexpr std::size_t kNumDigits = 10;

class IdxError : public DataError {
 public:
  using DataError::DataError;
};

/// Grayscale digits with labels. Pixels keep their original bytes; value()
/// gives the [0,1] intensity byte/255.
struct MnistSource {
  std::size_t rows = kDigitSide, cols = kDigitSide;
  std::vector<std::uint8_t> pixels;  // N * rows * cols
  std::vector<std::uint8_t> labels;  // N, each in 0..9

  std::size_t size() const { return labels.size(); }
  double value(std::size_t image, std::size_t r, std::size_t c) const {
    return pixels[(image * rows + r) * cols + c] / 255.0;
  }
  /// (N,rows,cols) view in [0,1].
  Array images() const;
};

/// Reads the IDX image (magic 0x00000803) and label (0x00000801) files.
MnistSource load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const MnistSource& src);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t count = 0;
  double p_slot = 0.7;
};

struct MultiSample {
  static constexpr int kEmpty = -1;
  std::array<int, 2> digit{kEmpty, kEmpty};                  // left, right
  std::array<std::int64_t, 2> source{kEmpty, kEmpty};        // source image index
  std::array<loc::Box, 2> box{};                             // tight box, image pixels

  bool occupied(std::size_t slot) const { return digit[slot] != kEmpty; }
  std::size_t digit_count() const { return occupied(0) + occupied(1); }
  bool contains(int d) const { return digit[0] == d || digit[1] == d; }
  std::array<double, kNumDigits> present() const;
  std::vector<loc::Box> boxes_for(int d) const;
};

/// Tight box of the nonzero pixels of one source digit, offset by `x_offset`.
loc::Box tight_box(const MnistSource& src, std::size_t image, std::size_t x_offset);

std::vector<MultiSample> synthesize(const MnistSource& src, const SynthConfig& cfg);

/// Renders the (28,56) canvas for a sample.
Array compose(const MnistSource& src, const MultiSample& s);

struct EvalItem {
  std::size_t index;                 // into the sample list
  std::vector<loc::Box> gt_boxes;    // every box of the target digit
};

/// Samples containing `target`, each with its target-digit boxes.
std::vector<EvalItem> localization_eval_set(const std::vector<MultiSample>& samples, int target);

/// A synthesized dataset stored as dataset.json plus arrays. Canvases are not
/// materialised on disk; they are recomposed from the referenced IDX source.
struct Dataset {
  std::filesystem::path images_path, labels_path;
  SynthConfig config;
  MnistSource source;
  std::vector<MultiSample> samples;

  Array image(std::size_t i) const { return compose(source, samples[i]); }
};

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace infocam::mm
