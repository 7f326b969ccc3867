#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "infocam/manifest.hpp"
#include "infocam/pipeline.hpp"

using namespace infocam;
using namespace infocam::app;
using nlohmann::json;

namespace {

mm::Dataset tiny_dataset(std::uint64_t seed, std::size_t count) {
  mm::Dataset ds;
  Xoshiro256 rng(99);
  for (std::size_t d = 0; d < 10; ++d) {
    for (int j = 0; j < 4; ++j) {
      ds.source.labels.push_back(static_cast<std::uint8_t>(d));
      std::vector<std::uint8_t> img(28 * 28, 0);
      // A class-specific stroke plus noise.
      for (std::size_t r = 4; r < 24; ++r) {
        img[r * 28 + 4 + 2 * d] = 255;
        img[(4 + 2 * d) * 28 + r] = static_cast<std::uint8_t>(128 + rng.below(128));
      }
      ds.source.pixels.insert(ds.source.pixels.end(), img.begin(), img.end());
    }
  }
  ds.config = {seed, count, 0.7};
  ds.samples = mm::synthesize(ds.source, ds.config);
  return ds;
}

PreparedSample handmade(const Array& features, std::shared_ptr<const cam::ClassifierHead> head,
                        std::size_t label, std::vector<loc::Box> gts) {
  cam::FeatureStack fs(features);
  Array n = cam::logits(fs, *head);
  PreparedSample s{"s", fs, head, std::vector<double>(n.storage()), {28, 56}, label, label, true, std::move(gts)};
  return s;
}

}  // namespace

TEST_CASE("compute_map: cam at s=1 is the plain class map; region cam is its box filter") {
  Xoshiro256 rng(1);
  cam::FeatureStack fs(testing::random_array({3, 7, 14}, rng, 0.0, 1.0));
  cam::ClassifierHead head(testing::random_array({4, 3}, rng));
  MapOptions o;
  CHECK(compute_map(fs, head, 2, o).values == cam::cam(fs, head, 2).values);
  o.region.side = 3;
  CHECK(compute_map(fs, head, 2, o).values == cam::box_filter(cam::cam(fs, head, 2).values, {3}));
  o.kind = cam::MapKind::infocam;
  CHECK(compute_map(fs, head, 2, o).values == cam::infocam(fs, head, 2, {3}).values);

  cam::ClassifierHead multi(head.weights(), std::nullopt, cam::HeadMode::multi_label);
  CHECK(compute_map(fs, multi, 2, o).values == cam::multilabel_infocam(fs, multi, 2, {3}).values);
  o.multi_label_rule = MultiLabelRule::others;
  CHECK(compute_map(fs, multi, 2, o).values == cam::infocam(fs, head, 2, {3}).values);
}

TEST_CASE("localize a handcrafted feature blob") {
  // One channel, blob at grid rows 2..3, cols 4..6 of a 7x14 grid.
  Array f({1, 7, 14});
  for (std::size_t r = 2; r < 4; ++r) {
    for (std::size_t c = 4; c < 7; ++c) f.at(0, r, c) = 1.0;
  }
  auto head = std::make_shared<const cam::ClassifierHead>(Array({2, 1}, {1.0, -1.0}));
  loc::Box gt{16, 8, 28, 16, loc::Space::image_pixels};
  PreparedSample s = handmade(f, head, 0, {gt});
  LocalizeConfig cfg;
  loc::Box b = localize_one(s, 0, cfg);
  CHECK(b == gt);
  auto out = localize_all({s}, cfg);
  CHECK(out[0].correct);
  CHECK(out[0].iou == 1.0);
  LocalizeSummary sum = summarize(out);
  CHECK(sum.gt_loc == 100.0);
  CHECK(sum.top1_loc == 100.0);
  CHECK(sum.fallback_rate == 0.0);
}

TEST_CASE("summary counts") {
  std::vector<SampleOutcome> o(4);
  o[0].correct = o[0].predicted_correct = o[0].classified_correctly = true;
  o[1].correct = true;
  o[1].classified_correctly = true;  // predicted-label box misses
  o[2].correct = o[2].predicted_correct = true;  // misclassified
  o[3].fallback = true;
  LocalizeSummary s = summarize(o);
  CHECK(s.gt_loc == 75.0);
  CHECK(s.top1_loc == 25.0);
  CHECK(s.classification == 50.0);
  CHECK(s.fallback_rate == 0.25);
}

TEST_CASE("manifest samples rebuild logits under gap pooling") {
  auto dir = testing::scratch_dir("pipeline-manifest");
  Xoshiro256 rng(2);
  Array w = testing::random_array({3, 4}, rng);
  Array f = testing::random_array({4, 5, 6}, rng, 0.0, 2.0);
  // Reference: GAP then linear, as an exporting framework computes it.
  std::vector<double> ref(3, 0.0);
  for (std::size_t y = 0; y < 3; ++y) {
    for (std::size_t k = 0; k < 4; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 30; ++i) mean += f[k * 30 + i] / 30.0;
      ref[y] += w.at(y, k) * mean;
    }
  }
  npy::write_array(dir / "w.npy", w);
  npy::write_array(dir / "f.npy", f);
  json doc{{"num_classes", 3},
           {"weights", "w.npy"},
           {"samples", {{{"id", "x"}, {"features", "f.npy"}, {"image_size", {50, 60}}, {"labels", {1}}}}}};
  testing::spit(dir / "m.json", doc.dump());
  auto samples = prepare_manifest(load_manifest(dir / "m.json"));
  REQUIRE(samples.size() == 1);
  for (std::size_t y = 0; y < 3; ++y) CHECK(samples[0].logits[y] == doctest::Approx(ref[y]).epsilon(1e-12));
  CHECK(samples[0].true_label == 1);

  doc["head_pooling"] = "sum";
  testing::spit(dir / "m.json", doc.dump());
  auto summed = prepare_manifest(load_manifest(dir / "m.json"));
  CHECK(summed[0].logits[0] == doctest::Approx(30.0 * ref[0]).epsilon(1e-12));
}

TEST_CASE("targets and priors") {
  mm::MultiSample s;
  s.digit = {3, 5};
  auto soft = targets_for(nn::HeadMode::softmax, s);
  CHECK(soft[3] == 0.5);
  CHECK(soft[5] == 0.5);
  auto hard = targets_for(nn::HeadMode::sigmoid, s);
  CHECK(hard[3] == 1.0);
  CHECK(hard[0] == 0.0);

  mm::Dataset ds = tiny_dataset(3, 500);
  auto pri = label_priors(ds);
  for (std::size_t d = 0; d < 10; ++d) {
    double count = 0;
    for (const auto& x : ds.samples) count += x.contains(static_cast<int>(d));
    CHECK(pri[d] == doctest::Approx(count / 500.0));
  }
}

TEST_CASE("training is deterministic, thread-count independent, and learns") {
  mm::Dataset train = tiny_dataset(4, 384);
  mm::Dataset test = tiny_dataset(5, 200);
  auto arch = nn::Architecture::parse("conv8,relu,pool,conv8,relu,gap,linear10", 1, 28, 56);
  nn::TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.learning_rate = 0.1;
  std::vector<double> losses;
  nn::Network a = train_multimnist(train, &test, nn::HeadMode::sigmoid, arch, cfg, {},
                                   [&](std::size_t, double l) { losses.push_back(l); });
  cfg.threads = 3;
  nn::Network b = train_multimnist(train, nullptr, nn::HeadMode::sigmoid, arch, cfg);
  CHECK(a == b);
  REQUIRE(losses.size() == 24);
  CHECK(losses.back() < losses.front());

  cfg.learning_rate = 0.0;
  nn::Network frozen = train_multimnist(train, nullptr, nn::HeadMode::sigmoid, arch, cfg);
  CHECK(frozen == nn::Network(arch, nn::HeadMode::sigmoid, cfg.seed, cfg.weight_init_scale));

  ClassificationReport r = evaluate_classification(a, test, 2);
  CHECK(r.digits.size() == 10);
  CHECK(r.to_json()["digits"].size() == 10);
  CHECK(evaluate_classification(a, test, 1).to_json() == r.to_json());
}

TEST_CASE("classification report against a counting oracle") {
  mm::Dataset test = tiny_dataset(6, 120);
  auto arch = nn::Architecture::parse("conv4,relu,gap,linear10", 1, 28, 56);
  nn::Network net(arch, nn::HeadMode::sigmoid, 7);
  ClassificationReport r = evaluate_classification(net, test);
  for (std::size_t d = 0; d < 10; ++d) {
    std::size_t tp = 0, tn = 0, pos = 0;
    for (std::size_t i = 0; i < test.samples.size(); ++i) {
      auto fr = net.forward(test.image(i).reshaped({1, 28, 56}));
      const bool truth = test.samples[i].contains(static_cast<int>(d));
      const bool pred = fr.logits[d] > 0.0;
      pos += truth;
      tp += truth && pred;
      tn += !truth && !pred;
    }
    const double neg = 120.0 - static_cast<double>(pos);
    CHECK(r.digits[d].accuracy == doctest::Approx((tp + tn) / 120.0));
    const double bal = 0.5 * ((pos ? tp / static_cast<double>(pos) : 1.0) + (neg > 0 ? tn / neg : 1.0));
    CHECK(r.digits[d].balanced_accuracy == doctest::Approx(bal));
  }
}

TEST_CASE("prepare_multimnist keeps every sample with the target") {
  mm::Dataset ds = tiny_dataset(8, 150);
  auto arch = nn::Architecture::parse("conv4,relu,pool,gap,linear10", 1, 28, 56);
  nn::Network net(arch, nn::HeadMode::sigmoid, 9);
  auto samples = prepare_multimnist(net, ds, 4, 0, 2);
  std::size_t want = 0;
  for (const auto& s : ds.samples) want += s.contains(4);
  CHECK(samples.size() == want);
  for (const auto& s : samples) {
    CHECK(s.features.height() == 14);
    CHECK(s.features.width() == 28);
    CHECK(s.classified_correctly == (s.logits[4] > 0.0));
    CHECK_FALSE(s.gt_boxes.empty());
  }
  CHECK(prepare_multimnist(net, ds, 4, 5).size() == 5);
}
