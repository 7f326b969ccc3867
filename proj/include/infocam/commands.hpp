#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infocam/multimnist.hpp"
#include "infocam/nn.hpp"
#include "infocam/pipeline.hpp"

/// The subcommands of the `infocam` tool. Each takes a validated options
/// struct, writes its outputs under `out`, and reports progress on `log`.
namespace infocam::app {

namespace fs = std::filesystem;

/// Region side for a map kind: an explicit side, or 1 for cam and 3 otherwise.
/// Even sides with a centered anchor are rounded up to the next odd side.
cam::RegionSpec resolve_region(cam::MapKind kind, std::optional<std::size_t> side,
                               cam::Anchor anchor, std::ostream* log = nullptr);

struct SynthOptions {
  fs::path images, labels;  // IDX source files
  fs::path out;
  mm::SynthConfig config;
  std::size_t pgm = 0;  // canvases to dump as PGM for inspection
};

nlohmann::json cmd_synth(const SynthOptions& o, std::ostream& log);

struct TrainOptions {
  fs::path train, test;  // dataset dirs; test may be empty
  fs::path out;
  nn::HeadMode head = nn::HeadMode::sigmoid;
  std::string arch = "conv16,relu,pool,conv32,relu,pool,conv64,relu,gap,linear10";
  nn::TrainConfig config;
};

/// Trains, writes checkpoint/, train_log.json and metrics.json, and prints the
/// per-digit test accuracy table. Returns metrics.json's content.
nlohmann::json cmd_train(const TrainOptions& o, std::ostream& log);

/// Where localization samples come from: a checkpoint plus a synthesized
/// dataset, or an exported feature manifest.
struct SampleSource {
  fs::path checkpoint, dataset;
  fs::path manifest;
  int target = 0;  // digit to localize (multi-MNIST)
  std::size_t limit = 0;
  std::size_t threads = 1;
};

std::vector<PreparedSample> load_samples(const SampleSource& src);

struct LocalizeOptions {
  SampleSource source;
  LocalizeConfig config;
  fs::path out;
  std::size_t overlays = 0;  // samples rendered as PPM/PGM
};

/// Writes results.json, summary.json, summary.csv and overlays/.
LocalizeSummary cmd_localize(const LocalizeOptions& o, std::ostream& log);

struct AblationRow {
  std::size_t side = 1;
  bool subtraction = false;
  LocalizeSummary summary;
};

struct AblateOptions {
  SampleSource source;
  LocalizeConfig config;  // map kind is ignored; infocam vs cam per cell
  std::size_t side = 3;
  fs::path out;
};

/// The 2x2 grid over region size {1, side} and subtraction term {off, on}.
std::vector<AblationRow> cmd_ablate(const AblateOptions& o, std::ostream& log);

struct GradcheckOptions {
  fs::path checkpoint;  // empty: fresh network from arch/seed
  std::string arch = "conv16,relu,pool,conv32,relu,pool,conv64,relu,gap,linear10";
  nn::HeadMode head = nn::HeadMode::sigmoid;
  std::uint64_t seed = 1;
  std::size_t coords = 256;
  double step = 1e-5;
  double tolerance = 1e-4;
};

/// Throws NumericError when the worst relative error reaches the tolerance.
nn::GradcheckResult cmd_gradcheck(const GradcheckOptions& o, std::ostream& log);

struct ExportCheckOptions {
  fs::path manifest;
  fs::path out;  // optional: writes export_check.json
  double tolerance = 1e-3;
  LocalizeConfig config;
  std::size_t limit = 0;
};

struct ExportCheckReport {
  std::size_t samples = 0, with_logits = 0;
  double max_logit_error = 0.0;
  std::string worst_sample;
  LocalizeSummary localization;
  bool boxes_valid = true;

  nlohmann::json to_json() const;
};

/// Recomputes logits from exported features and weights, compares them with
/// the exported logits, and runs localization on every sample. Throws
/// NumericError on a logit mismatch above the tolerance.
ExportCheckReport cmd_export_check(const ExportCheckOptions& o, std::ostream& log);

nlohmann::json summary_to_json(const LocalizeSummary& s);

/// Writes `doc` as indented JSON with a trailing newline.
void write_json(const fs::path& path, const nlohmann::json& doc);

}  // namespace infocam::app
