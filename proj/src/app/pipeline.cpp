#include "infocam/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <thread>

#include "infocam/rng.hpp"

namespace infocam::app {

namespace {

/// Calls fn(i) for i in [0,n) on `threads` workers with a static interleaved split.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

cam::IntensityMap compute_map(const cam::FeatureStack& fs, const cam::ClassifierHead& head,
                              std::size_t label, const MapOptions& opts) {
  const bool binary = head.mode() == cam::HeadMode::multi_label &&
                      opts.multi_label_rule == MultiLabelRule::binary;
  switch (opts.kind) {
    case cam::MapKind::cam: {
      cam::IntensityMap m = cam::cam(fs, head, label);
      if (opts.region.side > 1 || opts.region.anchor == cam::Anchor::top_left) {
        m.values = cam::box_filter(m.values, opts.region);
        m.region_side = opts.region.side;
      }
      return m;
    }
    case cam::MapKind::infocam:
      return binary ? cam::multilabel_infocam(fs, head, label, opts.region)
                    : cam::infocam(fs, head, label, opts.region);
    case cam::MapKind::infocam_plus:
      return binary ? cam::multilabel_infocam_plus(fs, head, label, opts.region)
                    : cam::infocam_plus(fs, head, label, opts.region, opts.argmin);
  }
  throw std::logic_error("unhandled map kind");
}

loc::Box localize_one(const PreparedSample& s, std::size_t label, const LocalizeConfig& cfg,
                      bool* fallback) {
  cam::IntensityMap map = compute_map(s.features, *s.head, label, cfg.map);
  loc::BoxResult r = cfg.upsample ? loc::bounding_box_upsampled(map.values, s.image_size, cfg.box)
                                  : loc::bounding_box(map.values, cfg.box);
  if (fallback) *fallback = r.fallback;
  if (cfg.upsample) return r.box;
  return loc::to_image_space(r.box, {s.features.height(), s.features.width()}, s.image_size);
}

std::vector<SampleOutcome> localize_all(const std::vector<PreparedSample>& samples,
                                        const LocalizeConfig& cfg) {
  std::vector<SampleOutcome> out(samples.size());
  parallel_for(samples.size(), cfg.threads, [&](std::size_t i) {
    const PreparedSample& s = samples[i];
    SampleOutcome o;
    o.id = s.id;
    o.label = s.true_label;
    o.predicted_label = s.predicted_label;
    o.classified_correctly = s.classified_correctly;
    o.box = localize_one(s, s.true_label, cfg, &o.fallback);
    o.predicted_box = s.predicted_label == s.true_label ? o.box : localize_one(s, s.predicted_label, cfg);
    loc::LocalizationResult judged = loc::judge(o.box, s.true_label, s.gt_boxes);
    o.iou = judged.iou;
    o.correct = judged.correct;
    o.predicted_correct = loc::judge(o.predicted_box, s.predicted_label, s.gt_boxes).correct;
    out[i] = std::move(o);
  });
  return out;
}

LocalizeSummary summarize(const std::vector<SampleOutcome>& outcomes) {
  LocalizeSummary s;
  s.samples = outcomes.size();
  if (outcomes.empty()) return s;
  std::size_t gt_hits = 0, top1_hits = 0, correct_cls = 0, fallbacks = 0;
  for (const auto& o : outcomes) {
    gt_hits += o.correct;
    top1_hits += o.classified_correctly && o.predicted_correct;
    correct_cls += o.classified_correctly;
    fallbacks += o.fallback;
  }
  const auto n = static_cast<double>(outcomes.size());
  s.gt_loc = 100.0 * static_cast<double>(gt_hits) / n;
  s.top1_loc = 100.0 * static_cast<double>(top1_hits) / n;
  s.classification = 100.0 * static_cast<double>(correct_cls) / n;
  s.fallback_rate = static_cast<double>(fallbacks) / n;
  return s;
}

std::vector<double> targets_for(nn::HeadMode mode, const mm::MultiSample& s) {
  auto p = s.present();
  std::vector<double> t(p.begin(), p.end());
  if (mode == nn::HeadMode::softmax) {
    const double n = std::accumulate(t.begin(), t.end(), 0.0);
    for (double& v : t) v /= n;
  }
  return t;
}

std::vector<PreparedSample> prepare_multimnist(const nn::Network& net, const mm::Dataset& ds,
                                               int target, std::size_t limit, std::size_t threads) {
  auto items = mm::localization_eval_set(ds.samples, target);
  if (limit && items.size() > limit) items.resize(limit);
  const Shape fshape = net.feature_shape();
  auto head = std::make_shared<const cam::ClassifierHead>(net.classifier_head(fshape[1], fshape[2]));
  const bool multi = net.head_mode() != nn::HeadMode::softmax;
  const auto label = static_cast<std::size_t>(target);

  std::vector<std::optional<PreparedSample>> slots(items.size());
  parallel_for(items.size(), threads, [&](std::size_t i) {
    const auto& item = items[i];
    Array image = ds.image(item.index);
    nn::ForwardResult fr = net.forward(image.reshaped({1, mm::kCanvasHeight, mm::kCanvasWidth}));
    PreparedSample s{"test-" + std::to_string(item.index),
                     cam::FeatureStack(std::move(fr.features)),
                     head,
                     std::vector<double>(fr.logits.storage()),
                     {mm::kCanvasHeight, mm::kCanvasWidth},
                     label,
                     label,
                     false,
                     item.gt_boxes,
                     std::move(image)};
    if (multi) {
      s.classified_correctly = s.logits[label] > 0.0;
    } else {
      s.predicted_label = static_cast<std::size_t>(
          std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
      s.classified_correctly = s.predicted_label == label;
    }
    slots[i] = std::move(s);
  });
  std::vector<PreparedSample> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::vector<PreparedSample> prepare_manifest(const Manifest& m, std::size_t limit) {
  Array weights = load_weights(m);
  std::optional<Array> bias = load_bias(m);
  const auto mode = m.multi_label ? cam::HeadMode::multi_label : cam::HeadMode::softmax;
  std::vector<PreparedSample> out;
  std::map<std::pair<std::size_t, std::size_t>, std::shared_ptr<const cam::ClassifierHead>> heads;
  for (const auto& e : m.samples) {
    if (limit && out.size() >= limit) break;
    if (e.labels.empty()) throw ManifestError("sample " + e.id + " has no labels");
    cam::FeatureStack fs(load_features(e));
    auto key = std::make_pair(fs.height(), fs.width());
    auto& head = heads[key];
    if (!head) {
      Array w = weights;
      if (m.pooling == HeadPooling::gap) {
        const double inv = 1.0 / static_cast<double>(fs.height() * fs.width());
        for (double& v : w.storage()) v *= inv;
      }
      head = std::make_shared<const cam::ClassifierHead>(std::move(w), bias, mode);
    }
    Array n = cam::logits(fs, *head);
    PreparedSample s{e.id, std::move(fs), head, std::vector<double>(n.storage()), e.image_size,
                     static_cast<std::size_t>(e.labels.front()), 0, false, {}, std::nullopt};
    if (m.multi_label) {
      s.predicted_label = s.true_label;
      s.classified_correctly = s.logits[s.true_label] > 0.0;
    } else {
      s.predicted_label = static_cast<std::size_t>(
          std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
      s.classified_correctly = s.predicted_label == s.true_label;
    }
    for (const auto& b : e.gt_boxes) s.gt_boxes.push_back({b[0], b[1], b[2], b[3], loc::Space::image_pixels});
    out.push_back(std::move(s));
  }
  return out;
}

nlohmann::json ClassificationReport::to_json() const {
  nlohmann::json digits_json = nlohmann::json::array();
  for (std::size_t d = 0; d < digits.size(); ++d) {
    digits_json.push_back({{"digit", d},
                           {"accuracy", digits[d].accuracy},
                           {"balanced_accuracy", digits[d].balanced_accuracy},
                           {"positives", digits[d].positives}});
  }
  return {{"digits", digits_json},
          {"mean_balanced_accuracy", mean_balanced_accuracy},
          {"mean_accuracy", mean_accuracy},
          {"exact_match", exact_match},
          {"mean_loss", mean_loss}};
}

ClassificationReport evaluate_classification(const nn::Network& net, const mm::Dataset& ds,
                                             std::size_t threads) {
  const std::size_t n = ds.samples.size(), m = net.num_classes();
  std::vector<std::vector<bool>> preds(n);
  std::vector<double> losses(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    Array image = ds.image(i).reshaped({1, mm::kCanvasHeight, mm::kCanvasWidth});
    nn::ForwardResult fr = net.forward(image);
    auto t = targets_for(net.head_mode(), ds.samples[i]);
    losses[i] = nn::loss(net.head_mode(), fr.logits.data(), t, net.class_priors()).loss;
    if (net.head_mode() == nn::HeadMode::softmax) {
      // Multi-hot truth: predict the top-k labels, k = number of digits present.
      const std::size_t k = ds.samples[i].digit_count();
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return fr.logits[a] > fr.logits[b]; });
      preds[i].assign(m, false);
      for (std::size_t j = 0; j < k && j < m; ++j) preds[i][order[j]] = true;
    } else {
      preds[i] = nn::predict(net.head_mode(), fr.logits.data());
    }
  });

  ClassificationReport r;
  r.digits.resize(m);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto truth = ds.samples[i].present();
    bool all = true;
    for (std::size_t d = 0; d < m; ++d) all &= preds[i][d] == (truth[d] > 0.5);
    exact += all;
  }
  for (std::size_t d = 0; d < m; ++d) {
    std::size_t tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool truth = ds.samples[i].present()[d] > 0.5;
      (truth ? pos : neg)++;
      if (truth && preds[i][d]) ++tp;
      if (!truth && !preds[i][d]) ++tn;
    }
    auto& dm = r.digits[d];
    dm.positives = pos;
    dm.accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
    const double tpr = pos ? static_cast<double>(tp) / static_cast<double>(pos) : 1.0;
    const double tnr = neg ? static_cast<double>(tn) / static_cast<double>(neg) : 1.0;
    dm.balanced_accuracy = 0.5 * (tpr + tnr);
    r.mean_balanced_accuracy += dm.balanced_accuracy / static_cast<double>(m);
    r.mean_accuracy += dm.accuracy / static_cast<double>(m);
  }
  r.exact_match = static_cast<double>(exact) / static_cast<double>(n);
  r.mean_loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
  return r;
}

std::vector<double> label_priors(const mm::Dataset& ds) {
  std::vector<double> counts(mm::kNumDigits, 0.0);
  for (const auto& s : ds.samples) {
    auto p = s.present();
    for (std::size_t d = 0; d < mm::kNumDigits; ++d) counts[d] += p[d];
  }
  const auto n = static_cast<double>(ds.samples.size());
  const double floor = 0.5 / n;
  for (double& c : counts) c = std::clamp(c / n, floor, 1.0 - floor);
  return counts;
}

nn::Network train_multimnist(const mm::Dataset& train, const mm::Dataset* test, nn::HeadMode head,
                             const nn::Architecture& arch, const nn::TrainConfig& cfg,
                             const std::function<void(const EpochLog&)>& on_epoch,
                             const std::function<void(std::size_t, double)>& on_batch) {
  cfg.validate();
  nn::Network net(arch, head, cfg.seed, cfg.weight_init_scale);
  if (head == nn::HeadMode::pc_sigmoid) net.set_class_priors(label_priors(train));
  nn::Sgd opt(net, cfg.learning_rate, cfg.momentum);

  const std::size_t n = train.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Xoshiro256 shuffle_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);

  std::vector<Array> images;
  std::vector<std::vector<double>> targets;
  std::vector<nn::Example> batch;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      images.resize(len);
      targets.resize(len);
      batch.clear();
      for (std::size_t j = 0; j < len; ++j) {
        const auto& s = train.samples[order[start + j]];
        images[j] = mm::compose(train.source, s).reshaped({1, mm::kCanvasHeight, mm::kCanvasWidth});
        targets[j] = targets_for(head, s);
      }
      for (std::size_t j = 0; j < len; ++j) batch.push_back({&images[j], targets[j]});
      const double l = opt.step(net, batch, cfg.threads);
      epoch_loss += l;
      ++batches;
      if (on_batch) on_batch(step, l);
      ++step;
    }
    if (on_epoch) {
      EpochLog log{epoch, epoch_loss / static_cast<double>(batches), std::nullopt};
      if (test) log.test = evaluate_classification(net, *test, cfg.threads);
      on_epoch(log);
    }
  }
  return net;
}

std::string accuracy_header() {
  std::string s = "Type        ";
  for (std::size_t d = 0; d < mm::kNumDigits; ++d) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%6zu", d);
    s += buf;
  }
  return s;
}

std::string accuracy_row(const std::string& name, const ClassificationReport& r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
  std::string s = buf;
  for (const auto& d : r.digits) {
    std::snprintf(buf, sizeof buf, "%6.2f", d.balanced_accuracy);
    s += buf;
  }
  return s;
}

}  // namespace infocam::app
