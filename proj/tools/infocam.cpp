// infocam: dataset synthesis, training, localization and checks from one tool.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "infocam/commands.hpp"

namespace fs = std::filesystem;
using namespace infocam;

namespace {

struct MapFlags {
  std::string map = "cam";
  std::string region_side = "auto";
  std::string anchor = "centered";
  std::string rule = "binary";
  bool exclude_true = false;
  double threshold = 0.2;
  bool raw = false;
  int connectivity = 4;
  bool upsample = false;
};

void add_map_flags(CLI::App* cmd, MapFlags& f, bool with_kind) {
  if (with_kind) {
    cmd->add_option("--map", f.map, "Map kind")
        ->check(CLI::IsMember({"cam", "infocam", "infocam+"}))
        ->capture_default_str();
  }
  cmd->add_option("--region-side", f.region_side,
                  with_kind ? "Region side s, or auto (1 for cam, 3 otherwise)" : "Region side s of the s>1 column")
      ->capture_default_str();
  cmd->add_option("--region-anchor", f.anchor, "Window placement")
      ->check(CLI::IsMember({"centered", "top-left"}))
      ->capture_default_str();
  cmd->add_option("--multi-label-rule", f.rule,
                  "Subtraction term for sigmoid heads: binary (label vs absent) or others")
      ->check(CLI::IsMember({"binary", "others"}))
      ->capture_default_str();
  cmd->add_flag("--exclude-true-label-argmin", f.exclude_true,
                "infoCAM+: never pick the true label as the least likely one");
  cmd->add_option("--threshold", f.threshold, "Threshold fraction")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_flag("--raw-threshold", f.raw, "Keep v > fraction * max(v) instead of min-max normalizing");
  cmd->add_option("--connectivity", f.connectivity, "Pixel connectivity")
      ->check(CLI::IsMember({4, 8}))
      ->capture_default_str();
  cmd->add_flag("--upsample", f.upsample, "Upsample the map to image size before thresholding");
}

std::optional<std::size_t> parse_side(const std::string& s) {
  if (s == "auto") return std::nullopt;
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != s.size() || v <= 0) throw ConfigError("--region-side must be a positive integer or auto");
  return static_cast<std::size_t>(v);
}

app::LocalizeConfig to_config(const MapFlags& f, std::size_t threads, std::ostream& log) {
  app::LocalizeConfig c;
  c.map.kind = cam::map_kind_from_string(f.map);
  const auto anchor = f.anchor == "top-left" ? cam::Anchor::top_left : cam::Anchor::centered;
  c.map.region = app::resolve_region(c.map.kind, parse_side(f.region_side), anchor, &log);
  c.map.argmin = f.exclude_true ? cam::ArgminDomain::exclude_true : cam::ArgminDomain::all_labels;
  c.map.multi_label_rule = f.rule == "others" ? app::MultiLabelRule::others : app::MultiLabelRule::binary;
  c.box.fraction = f.threshold;
  c.box.mode = f.raw ? loc::ThresholdMode::raw : loc::ThresholdMode::normalized;
  c.box.connectivity = f.connectivity == 8 ? loc::Connectivity::eight : loc::Connectivity::four;
  c.upsample = f.upsample;
  c.threads = threads;
  return c;
}

void add_source_flags(CLI::App* cmd, app::SampleSource& s) {
  cmd->add_option("--checkpoint", s.checkpoint, "Checkpoint directory written by train");
  cmd->add_option("--dataset", s.dataset, "Synthesized dataset directory");
  cmd->add_option("--manifest", s.manifest, "Exported feature manifest (JSON)");
  cmd->add_option("--target", s.target, "Digit to localize")->check(CLI::Range(0, 9))->capture_default_str();
  cmd->add_option("--limit", s.limit, "Use at most this many samples (0: all)")->capture_default_str();
}

int run(int argc, char** argv) {
  CLI::App app{"Class activation maps, infoCAM and weakly supervised localization"};
  app.set_config("--config", "", "TOML config file; command-line flags take precedence");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for evaluation and batch gradients")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  // Subcommands inherit this, so --threads may follow the subcommand name.
  app.fallthrough();

  // synth
  app::SynthOptions synth;
  fs::path mnist_dir;
  std::string split = "train";
  auto* c_synth = app.add_subcommand("synth", "Synthesize a double-digit MNIST dataset");
  c_synth->add_option("--mnist-dir", mnist_dir, "Directory with the MNIST IDX files");
  c_synth->add_option("--split", split, "MNIST split used as the digit source")
      ->check(CLI::IsMember({"train", "test"}))
      ->capture_default_str();
  c_synth->add_option("--images", synth.images, "IDX image file (overrides --mnist-dir)");
  c_synth->add_option("--labels", synth.labels, "IDX label file (overrides --mnist-dir)");
  c_synth->add_option("--count", synth.config.count, "Number of samples")->required();
  c_synth->add_option("--seed", synth.config.seed, "Random seed")->capture_default_str();
  c_synth->add_option("--p-slot", synth.config.p_slot, "Slot occupancy probability")->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--pgm", synth.pgm, "Dump this many canvases as PGM")->capture_default_str();

  // train
  app::TrainOptions train;
  std::string head = "sigmoid";
  auto* c_train = app.add_subcommand("train", "Train the CNN on a synthesized dataset");
  c_train->add_option("--train", train.train, "Training dataset directory")->required();
  c_train->add_option("--test", train.test, "Test dataset directory");
  c_train->add_option("--out", train.out, "Output directory")->required();
  c_train->add_option("--head", head, "Classifier head")
      ->check(CLI::IsMember({"softmax", "sigmoid", "pc-sigmoid"}))
      ->capture_default_str();
  c_train->add_option("--arch", train.arch, "Layer list")->capture_default_str();
  c_train->add_option("--seed", train.config.seed, "Random seed")->capture_default_str();
  c_train->add_option("--epochs", train.config.epochs, "Epochs")->capture_default_str();
  c_train->add_option("--batch-size", train.config.batch_size, "Mini-batch size")->capture_default_str();
  c_train->add_option("--lr", train.config.learning_rate, "Learning rate")->capture_default_str();
  c_train->add_option("--momentum", train.config.momentum, "SGD momentum")->capture_default_str();
  c_train->add_option("--init-scale", train.config.weight_init_scale, "Weight init scale")->capture_default_str();

  // localize
  app::LocalizeOptions localize;
  MapFlags loc_flags;
  auto* c_loc = app.add_subcommand("localize", "Compute maps and boxes and score them");
  add_source_flags(c_loc, localize.source);
  add_map_flags(c_loc, loc_flags, true);
  c_loc->add_option("--out", localize.out, "Output directory")->required();
  c_loc->add_option("--overlays", localize.overlays, "Render this many overlay images")->capture_default_str();

  // ablate
  app::AblateOptions ablate;
  MapFlags abl_flags;
  abl_flags.region_side = "3";
  auto* c_abl = app.add_subcommand("ablate", "Region size x subtraction term ablation");
  add_source_flags(c_abl, ablate.source);
  add_map_flags(c_abl, abl_flags, false);
  c_abl->add_option("--out", ablate.out, "Output directory")->required();

  // gradcheck
  app::GradcheckOptions grad;
  std::string grad_head = "sigmoid";
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of backpropagation");
  c_grad->add_option("--checkpoint", grad.checkpoint, "Check a trained network instead of a fresh one");
  c_grad->add_option("--arch", grad.arch, "Layer list")->capture_default_str();
  c_grad->add_option("--head", grad_head, "Classifier head")
      ->check(CLI::IsMember({"softmax", "sigmoid", "pc-sigmoid"}))
      ->capture_default_str();
  c_grad->add_option("--seed", grad.seed, "Random seed")->capture_default_str();
  c_grad->add_option("--coords", grad.coords, "Sampled coordinates")->capture_default_str();
  c_grad->add_option("--step", grad.step, "Central-difference step h")->capture_default_str();
  c_grad->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();

  // export-check
  app::ExportCheckOptions exp;
  MapFlags exp_flags;
  auto* c_exp = app.add_subcommand("export-check", "Validate an exported feature manifest");
  c_exp->add_option("--manifest", exp.manifest, "Manifest JSON")->required();
  c_exp->add_option("--out", exp.out, "Write export_check.json here");
  c_exp->add_option("--tolerance", exp.tolerance, "Maximum absolute logit error")->capture_default_str();
  c_exp->add_option("--limit", exp.limit, "Use at most this many samples (0: all)")->capture_default_str();
  add_map_flags(c_exp, exp_flags, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::ostream& log = std::cout;
  if (c_synth->parsed()) {
    if (synth.images.empty() != synth.labels.empty()) throw ConfigError("--images and --labels go together");
    if (synth.images.empty()) {
      if (mnist_dir.empty()) throw ConfigError("synth needs --mnist-dir or --images/--labels");
      const std::string prefix = split == "train" ? "train" : "t10k";
      synth.images = mnist_dir / (prefix + "-images-idx3-ubyte");
      synth.labels = mnist_dir / (prefix + "-labels-idx1-ubyte");
    }
    app::cmd_synth(synth, log);
  } else if (c_train->parsed()) {
    train.head = nn::head_mode_from_string(head);
    train.config.threads = threads;
    app::cmd_train(train, log);
  } else if (c_loc->parsed()) {
    localize.source.threads = threads;
    localize.config = to_config(loc_flags, threads, log);
    app::cmd_localize(localize, log);
  } else if (c_abl->parsed()) {
    ablate.source.threads = threads;
    if (abl_flags.region_side == "auto") abl_flags.region_side = "3";
    ablate.config = to_config(abl_flags, threads, log);
    ablate.side = ablate.config.map.region.side;
    app::cmd_ablate(ablate, log);
  } else if (c_grad->parsed()) {
    grad.head = nn::head_mode_from_string(grad_head);
    app::cmd_gradcheck(grad, log);
  } else if (c_exp->parsed()) {
    exp.config = to_config(exp_flags, threads, log);
    app::cmd_export_check(exp, log);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
}
