#include "infocam/commands.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>

#include "infocam/image_io.hpp"
#include "infocam/manifest.hpp"
#include "infocam/npy.hpp"
#include "infocam/rng.hpp"

namespace infocam::app {

using nlohmann::json;

namespace {

json box_json(const loc::Box& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

json localize_config_json(const LocalizeConfig& c) {
  return {{"map", cam::to_string(c.map.kind)},
          {"region_side", c.map.region.side},
          {"region_anchor", c.map.region.anchor == cam::Anchor::centered ? "centered" : "top-left"},
          {"argmin", c.map.argmin == cam::ArgminDomain::all_labels ? "all" : "exclude-true"},
          {"multi_label_rule", c.map.multi_label_rule == MultiLabelRule::binary ? "binary" : "others"},
          {"threshold", c.box.fraction},
          {"threshold_mode", c.box.mode == loc::ThresholdMode::normalized ? "normalized" : "raw"},
          {"connectivity", static_cast<int>(c.box.connectivity)},
          {"upsample", c.upsample}};
}

std::string safe_name(const std::string& id) {
  std::string s = id;
  for (char& c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  }
  return s;
}

void require_gt(const std::vector<PreparedSample>& samples) {
  for (const auto& s : samples) {
    if (s.gt_boxes.empty()) throw DataError("sample " + s.id + " has no ground-truth boxes");
  }
  if (samples.empty()) throw DataError("no samples to localize");
}

}  // namespace

void write_json(const fs::path& path, const json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

json summary_to_json(const LocalizeSummary& s) {
  return {{"samples", s.samples},
          {"gt_loc", s.gt_loc},
          {"top1_loc", s.top1_loc},
          {"classification", s.classification},
          {"fallback_rate", s.fallback_rate}};
}

cam::RegionSpec resolve_region(cam::MapKind kind, std::optional<std::size_t> side, cam::Anchor anchor,
                               std::ostream* log) {
  cam::RegionSpec r;
  r.anchor = anchor;
  r.side = side.value_or(kind == cam::MapKind::cam ? 1 : 3);
  if (r.side == 0) throw ConfigError("region side must be positive");
  if (anchor == cam::Anchor::centered && r.side % 2 == 0) {
    if (log) *log << "note: centered windows need an odd side; using " << r.side + 1 << '\n';
    ++r.side;
  }
  return r;
}

// ---------------------------------------------------------------- synth

json cmd_synth(const SynthOptions& o, std::ostream& log) {
  mm::Dataset ds;
  ds.images_path = fs::absolute(o.images);
  ds.labels_path = fs::absolute(o.labels);
  ds.config = o.config;
  ds.source = mm::load_idx(o.images, o.labels);
  ds.samples = mm::synthesize(ds.source, o.config);
  mm::save_dataset(o.out, ds);

  std::size_t two = 0;
  for (const auto& s : ds.samples) two += s.digit_count() == 2;
  const auto n = static_cast<double>(ds.samples.size());
  json summary{{"count", ds.samples.size()},
               {"seed", o.config.seed},
               {"two_digits", static_cast<double>(two) / n},
               {"one_digit", 1.0 - static_cast<double>(two) / n}};
  for (std::size_t i = 0; i < std::min(o.pgm, ds.samples.size()); ++i) {
    img::write_pgm(o.out / "pgm" / ("sample-" + std::to_string(i) + ".pgm"), ds.image(i), true);
  }
  log << "synthesized " << ds.samples.size() << " samples from " << ds.source.size()
      << " digits into " << o.out.string() << " (two digits: " << fixed(100.0 * summary["two_digits"].get<double>())
      << "%)\n";
  return summary;
}

// ---------------------------------------------------------------- train

json cmd_train(const TrainOptions& o, std::ostream& log) {
  o.config.validate();
  mm::Dataset train = mm::load_dataset(o.train);
  std::optional<mm::Dataset> test;
  if (!o.test.empty()) test = mm::load_dataset(o.test);
  const auto arch = nn::Architecture::parse(o.arch, 1, mm::kCanvasHeight, mm::kCanvasWidth);

  json epochs = json::array();
  const std::size_t batches = (train.samples.size() + o.config.batch_size - 1) / o.config.batch_size;
  const std::size_t every = std::max<std::size_t>(1, batches / 4);
  nn::Network net = train_multimnist(
      train, test ? &*test : nullptr, o.head, arch, o.config,
      [&](const EpochLog& e) {
        json entry{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        log << "epoch " << e.epoch << "  train loss " << fixed(e.train_loss, 4);
        if (e.test) {
          entry["test"] = e.test->to_json();
          log << "  test mean accuracy " << fixed(e.test->mean_balanced_accuracy, 4);
        }
        log << std::endl;
        epochs.push_back(std::move(entry));
      },
      [&](std::size_t step, double loss) {
        if ((step + 1) % every == 0) log << "  step " << step + 1 << "  loss " << fixed(loss, 4) << std::endl;
      });

  json config{{"head", nn::to_string(o.head)}, {"arch", arch.to_string()}, {"train", o.config.to_json()}};
  nn::save_checkpoint(o.out / "checkpoint", net, {{"config", config}});
  write_json(o.out / "train_log.json", {{"config", config}, {"epochs", epochs}});

  json metrics{{"config", config}};
  if (test) {
    ClassificationReport r = evaluate_classification(net, *test, o.config.threads);
    metrics["test"] = r.to_json();
    log << accuracy_header() << '\n' << accuracy_row(nn::to_string(o.head), r) << '\n';
    log << "mean per-digit accuracy " << fixed(r.mean_balanced_accuracy, 4) << "  (plain "
        << fixed(r.mean_accuracy, 4) << ", exact match " << fixed(r.exact_match, 4) << ")\n";
  }
  write_json(o.out / "metrics.json", metrics);
  return metrics;
}

// ---------------------------------------------------------------- localize

std::vector<PreparedSample> load_samples(const SampleSource& src) {
  if (!src.manifest.empty()) {
    if (!src.checkpoint.empty()) throw ConfigError("give either a manifest or a checkpoint, not both");
    return prepare_manifest(load_manifest(src.manifest), src.limit);
  }
  if (src.checkpoint.empty() || src.dataset.empty()) {
    throw ConfigError("localization needs --manifest, or --checkpoint with --dataset");
  }
  if (src.target < 0 || src.target >= static_cast<int>(mm::kNumDigits)) {
    throw ConfigError("target digit must be in 0..9");
  }
  nn::Network net = nn::load_checkpoint(src.checkpoint);
  mm::Dataset ds = mm::load_dataset(src.dataset);
  return prepare_multimnist(net, ds, src.target, src.limit, src.threads);
}

LocalizeSummary cmd_localize(const LocalizeOptions& o, std::ostream& log) {
  std::vector<PreparedSample> samples = load_samples(o.source);
  require_gt(samples);
  std::vector<SampleOutcome> outcomes = localize_all(samples, o.config);
  LocalizeSummary summary = summarize(outcomes);

  json records = json::array();
  for (const auto& r : outcomes) {
    records.push_back({{"id", r.id},
                       {"label", r.label},
                       {"pred_label", r.predicted_label},
                       {"box", box_json(r.box)},
                       {"iou", r.iou},
                       {"correct", r.correct},
                       {"fallback", r.fallback}});
  }
  write_json(o.out / "results.json", records);
  write_json(o.out / "summary.json", {{"config", localize_config_json(o.config)},
                                      {"summary", summary_to_json(summary)}});
  {
    std::ofstream csv(o.out / "summary.csv");
    if (!csv) throw DataError("cannot write summary.csv");
    csv << "map,region_side,threshold,connectivity,samples,gt_loc,top1_loc,classification,fallback_rate\n"
        << cam::to_string(o.config.map.kind) << ',' << o.config.map.region.side << ','
        << o.config.box.fraction << ',' << static_cast<int>(o.config.box.connectivity) << ','
        << summary.samples << ',' << fixed(summary.gt_loc, 4) << ',' << fixed(summary.top1_loc, 4)
        << ',' << fixed(summary.classification, 4) << ',' << fixed(summary.fallback_rate, 4) << '\n';
  }

  for (std::size_t i = 0; i < std::min(o.overlays, samples.size()); ++i) {
    const auto& s = samples[i];
    const std::string name = safe_name(s.id);
    const auto map = compute_map(s.features, *s.head, s.true_label, o.config.map);
    img::write_pgm(o.out / "maps" / (name + ".pgm"), map.values);
    if (s.image) {
      img::write_ppm(o.out / "overlays" / (name + ".ppm"), img::overlay(*s.image, s.gt_boxes, outcomes[i].box));
      img::write_ppm(o.out / "overlays" / (name + "-heat.ppm"), img::heat_overlay(*s.image, map.values));
    }
  }

  log << std::left << std::setw(10) << "map" << std::setw(8) << "side" << std::setw(10) << "GT-Loc"
      << std::setw(12) << "Top-1-Loc" << std::setw(10) << "Cls" << "fallback\n"
      << std::setw(10) << cam::to_string(o.config.map.kind) << std::setw(8) << o.config.map.region.side
      << std::setw(10) << fixed(summary.gt_loc) << std::setw(12) << fixed(summary.top1_loc)
      << std::setw(10) << fixed(summary.classification) << fixed(summary.fallback_rate, 3) << '\n';
  return summary;
}

// ---------------------------------------------------------------- ablate

std::vector<AblationRow> cmd_ablate(const AblateOptions& o, std::ostream& log) {
  if (o.side < 2) throw ConfigError("ablation region side must be greater than 1");
  std::vector<PreparedSample> samples = load_samples(o.source);
  require_gt(samples);

  std::vector<AblationRow> rows;
  for (std::size_t side : {std::size_t{1}, o.side}) {
    for (bool sub : {false, true}) {
      LocalizeConfig cfg = o.config;
      cfg.map.kind = sub ? cam::MapKind::infocam : cam::MapKind::cam;
      cfg.map.region.side = side;
      if (cfg.map.region.anchor == cam::Anchor::centered && side % 2 == 0) {
        throw ConfigError("centered windows need an odd side; pass an odd --region-side or top-left anchoring");
      }
      rows.push_back({side, sub, summarize(localize_all(samples, cfg))});
    }
  }

  auto arrow = [](double v, double base) {
    if (v > base) return "(↑" + fixed(v - base) + ")";
    if (v < base) return "(↓" + fixed(base - v) + ")";
    return std::string("(=)");
  };
  const auto& base = rows.front().summary;
  json doc = json::array();
  fs::create_directories(o.out);
  std::ofstream csv(o.out / "ablation.csv");
  if (!csv) throw DataError("cannot write ablation.csv");
  csv << "region_side,subtraction,gt_loc,top1_loc\n";
  log << std::left << std::setw(8) << "region" << std::setw(13) << "subtraction" << std::setw(18)
      << "GT-Loc" << "Top-1-Loc\n";
  for (const auto& r : rows) {
    const bool is_base = &r == &rows.front();
    log << std::setw(8) << ("s=" + std::to_string(r.side)) << std::setw(13) << (r.subtraction ? "yes" : "no")
        << std::setw(18)
        << (fixed(r.summary.gt_loc) + " " + (is_base ? "(base)" : arrow(r.summary.gt_loc, base.gt_loc)))
        << fixed(r.summary.top1_loc) << ' '
        << (is_base ? "(base)" : arrow(r.summary.top1_loc, base.top1_loc)) << '\n';
    csv << r.side << ',' << (r.subtraction ? 1 : 0) << ',' << fixed(r.summary.gt_loc, 4) << ','
        << fixed(r.summary.top1_loc, 4) << '\n';
    doc.push_back({{"region_side", r.side}, {"subtraction", r.subtraction}, {"summary", summary_to_json(r.summary)}});
  }
  write_json(o.out / "ablation.json", {{"config", localize_config_json(o.config)}, {"rows", doc}});
  return rows;
}

// ---------------------------------------------------------------- gradcheck

nn::GradcheckResult cmd_gradcheck(const GradcheckOptions& o, std::ostream& log) {
  if (o.coords == 0) throw ConfigError("coordinate count must be positive");
  if (!(o.step > 0.0)) throw ConfigError("finite-difference step must be positive");
  nn::Network net = o.checkpoint.empty()
                        ? nn::Network(nn::Architecture::parse(o.arch, 1, mm::kCanvasHeight, mm::kCanvasWidth),
                                      o.head, o.seed)
                        : nn::load_checkpoint(o.checkpoint);
  const std::size_t m = net.num_classes();
  if (net.head_mode() == nn::HeadMode::pc_sigmoid && net.class_priors().empty()) {
    net.set_class_priors(std::vector<double>(m, 0.2));
  }

  Xoshiro256 rng(o.seed + 1);
  Array image(net.input_shape());
  for (double& v : image.storage()) v = rng.uniform();
  std::vector<double> target(m, 0.0);
  target[rng.below(m)] = 1.0;
  for (double& t : target) {
    if (rng.bernoulli(0.2)) t = 1.0;
  }
  if (net.head_mode() == nn::HeadMode::softmax) {
    double sum = 0.0;
    for (double t : target) sum += t;
    for (double& t : target) t /= sum;
  }

  nn::GradcheckResult r = nn::gradcheck(net, image, target, o.coords, o.seed, o.step);
  log << "checked " << r.checked << " coordinates (" << r.skipped_kinks << " skipped at kinks), "
      << "max relative error " << std::scientific << std::setprecision(3) << r.max_relative_error
      << std::defaultfloat << " at " << r.worst_parameter << '\n';
  if (r.checked == 0) throw NumericError("every sampled coordinate crossed a kink");
  if (!(r.max_relative_error < o.tolerance)) {
    throw NumericError("gradient check failed: relative error " + std::to_string(r.max_relative_error) +
                       " >= " + std::to_string(o.tolerance));
  }
  return r;
}

// ---------------------------------------------------------------- export-check

json ExportCheckReport::to_json() const {
  return {{"samples", samples},
          {"with_logits", with_logits},
          {"max_logit_error", max_logit_error},
          {"worst_sample", worst_sample},
          {"boxes_valid", boxes_valid},
          {"localization", summary_to_json(localization)}};
}

ExportCheckReport cmd_export_check(const ExportCheckOptions& o, std::ostream& log) {
  Manifest m = load_manifest(o.manifest);
  std::vector<PreparedSample> samples = prepare_manifest(m, o.limit);
  if (samples.empty()) throw DataError("manifest has no samples");

  ExportCheckReport rep;
  rep.samples = samples.size();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& entry = m.samples[i];
    if (!entry.logits) continue;
    Array exported = npy::read_array(entry.logits->path);
    ++rep.with_logits;
    for (std::size_t y = 0; y < exported.size(); ++y) {
      const double err = std::abs(exported[y] - samples[i].logits[y]);
      if (err > rep.max_logit_error || rep.worst_sample.empty()) {
        rep.max_logit_error = std::max(rep.max_logit_error, err);
        rep.worst_sample = entry.id;
      }
    }
  }

  std::vector<SampleOutcome> outcomes = localize_all(samples, o.config);
  rep.localization = summarize(outcomes);
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& b = outcomes[i].box;
    const auto& sz = samples[i].image_size;
    rep.boxes_valid &= b.valid() && b.x1 <= static_cast<double>(sz[1]) && b.y1 <= static_cast<double>(sz[0]);
  }
  if (!o.out.empty()) write_json(o.out / "export_check.json", rep.to_json());

  log << rep.samples << " samples, " << rep.with_logits << " with exported logits; max |logit error| "
      << std::scientific << std::setprecision(3) << rep.max_logit_error << std::defaultfloat
      << "; fallback rate " << fixed(rep.localization.fallback_rate, 3) << "; boxes "
      << (rep.boxes_valid ? "valid" : "INVALID") << '\n';
  if (rep.max_logit_error > o.tolerance) {
    throw NumericError("logit mismatch " + std::to_string(rep.max_logit_error) + " on sample " +
                       rep.worst_sample + " exceeds " + std::to_string(o.tolerance));
  }
  if (!rep.boxes_valid) throw NumericError("localization produced an invalid box");
  return rep;
}

}  // namespace infocam::app
