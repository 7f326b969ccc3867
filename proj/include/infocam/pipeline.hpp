#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infocam/cam.hpp"
#include "infocam/localize.hpp"
#include "infocam/manifest.hpp"
#include "infocam/multimnist.hpp"
#include "infocam/nn.hpp"

namespace infocam::app {

/// How sigmoid (multi-label) heads resolve infoCAM's subtraction term.
///   binary: each label is its own two-class problem (subtract the absent class);
///   others: subtract the other labels' maps as for a softmax head.
enum class MultiLabelRule { binary, others };

struct MapOptions {
  cam::MapKind kind = cam::MapKind::cam;
  cam::RegionSpec region{};  // side 1: no region aggregation
  cam::ArgminDomain argmin = cam::ArgminDomain::all_labels;
  MultiLabelRule multi_label_rule = MultiLabelRule::binary;
};

/// kind=cam with side > 1 gives the region-summed CAM (no subtraction term).
cam::IntensityMap compute_map(const cam::FeatureStack& fs, const cam::ClassifierHead& head,
                              std::size_t label, const MapOptions& opts);

struct LocalizeConfig {
  MapOptions map;
  loc::BoxOptions box;
  bool upsample = false;  // bilinear-upsample the map, then threshold in pixels
  std::size_t threads = 1;
};

/// Everything the localization stage needs for one sample.
struct PreparedSample {
  std::string id;
  cam::FeatureStack features;
  std::shared_ptr<const cam::ClassifierHead> head;
  std::vector<double> logits;
  std::array<std::size_t, 2> image_size{};
  std::size_t true_label = 0;
  std::size_t predicted_label = 0;
  bool classified_correctly = false;
  std::vector<loc::Box> gt_boxes;
  std::optional<Array> image;  // (H,W) in [0,1], for overlays
};

struct SampleOutcome {
  std::string id;
  std::size_t label = 0, predicted_label = 0;
  loc::Box box;            // true-label map, image pixels
  loc::Box predicted_box;  // predicted-label map, image pixels
  double iou = 0.0;
  bool correct = false;            // true-label box hits a GT box
  bool predicted_correct = false;  // predicted-label box hits a GT box
  bool classified_correctly = false;
  bool fallback = false;
};

struct LocalizeSummary {
  std::size_t samples = 0;
  double gt_loc = 0.0;    // percent
  double top1_loc = 0.0;  // percent
  double classification = 0.0;  // percent classified correctly
  double fallback_rate = 0.0;   // fraction of samples with an empty mask
};

loc::Box localize_one(const PreparedSample& s, std::size_t label, const LocalizeConfig& cfg,
                      bool* fallback = nullptr);

/// Runs the map -> box -> image-space pipeline on every sample (optionally in
/// parallel; outcomes keep input order).
std::vector<SampleOutcome> localize_all(const std::vector<PreparedSample>& samples,
                                        const LocalizeConfig& cfg);

LocalizeSummary summarize(const std::vector<SampleOutcome>& outcomes);

/// Test samples that contain `target`, forwarded through `net`. For sigmoid
/// heads the "prediction" is whether the target's logit is positive.
std::vector<PreparedSample> prepare_multimnist(const nn::Network& net, const mm::Dataset& ds,
                                               int target, std::size_t limit = 0,
                                               std::size_t threads = 1);

/// Samples of an exported feature manifest; the head is rebuilt per grid size.
std::vector<PreparedSample> prepare_manifest(const Manifest& m, std::size_t limit = 0);

/// Per-digit classification quality of a multi-label network.
struct DigitMetrics {
  double accuracy = 0.0;           // fraction of images where label d is right
  double balanced_accuracy = 0.0;  // mean of recall on present / absent images
  std::size_t positives = 0;
};

struct ClassificationReport {
  std::vector<DigitMetrics> digits;
  double mean_balanced_accuracy = 0.0;
  double mean_accuracy = 0.0;
  double exact_match = 0.0;
  double mean_loss = 0.0;

  nlohmann::json to_json() const;
};

ClassificationReport evaluate_classification(const nn::Network& net, const mm::Dataset& ds,
                                             std::size_t threads = 1);

/// Empirical per-label presence rates, clamped into (0,1).
std::vector<double> label_priors(const mm::Dataset& ds);

std::vector<double> targets_for(nn::HeadMode mode, const mm::MultiSample& s);

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<ClassificationReport> test;
};

/// Shuffled mini-batch SGD over a synthesized dataset. Calls `on_epoch` after
/// each epoch.
nn::Network train_multimnist(const mm::Dataset& train, const mm::Dataset* test, nn::HeadMode head,
                             const nn::Architecture& arch, const nn::TrainConfig& cfg,
                             const std::function<void(const EpochLog&)>& on_epoch = {},
                             const std::function<void(std::size_t, double)>& on_batch = {});

/// Table-2 style row: "<name>  a0 a1 ... a9".
std::string accuracy_row(const std::string& name, const ClassificationReport& r);
std::string accuracy_header();

}  // namespace infocam::app
