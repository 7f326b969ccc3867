#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "infocam/multimnist.hpp"

using namespace infocam;
using namespace infocam::mm;

namespace {

// Small fake source: digit i has a filled rectangle whose position depends on i.
MnistSource fake_source(std::size_t per_class = 3) {
  MnistSource src;
  for (std::size_t d = 0; d < kNumDigits; ++d) {
    for (std::size_t j = 0; j < per_class; ++j) {
      src.labels.push_back(static_cast<std::uint8_t>(d));
      std::vector<std::uint8_t> img(kDigitSide * kDigitSide, 0);
      for (std::size_t r = 2 + d; r < 12 + d + j; ++r) {
        for (std::size_t c = 4 + j; c < 20 - d / 2; ++c) img[r * kDigitSide + c] = static_cast<std::uint8_t>(50 + 20 * d);
      }
      src.pixels.insert(src.pixels.end(), img.begin(), img.end());
    }
  }
  return src;
}

}  // namespace

TEST_CASE("IDX round trip and format errors") {
  auto dir = testing::scratch_dir("idx");
  MnistSource src = fake_source();
  write_idx(dir / "img", dir / "lab", src);
  MnistSource back = load_idx(dir / "img", dir / "lab");
  CHECK(back.pixels == src.pixels);
  CHECK(back.labels == src.labels);
  CHECK(back.value(0, 2, 4) == doctest::Approx(50.0 / 255.0));

  // Header is big-endian: magic 0x00000803, then count.
  std::string raw = testing::slurp(dir / "img");
  CHECK(static_cast<unsigned char>(raw[2]) == 0x08);
  CHECK(static_cast<unsigned char>(raw[3]) == 0x03);
  CHECK(static_cast<unsigned char>(raw[7]) == src.size());

  CHECK_THROWS_AS(load_idx(dir / "lab", dir / "lab"), IdxError);
  testing::spit(dir / "short", raw.substr(0, raw.size() - 5));
  CHECK_THROWS_AS(load_idx(dir / "short", dir / "lab"), IdxError);
  CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab"), IdxError);
  std::string labels = testing::slurp(dir / "lab");
  labels.back() = 12;
  testing::spit(dir / "badlab", labels);
  CHECK_THROWS_AS(load_idx(dir / "img", dir / "badlab"), IdxError);
}

TEST_CASE("tight box matches a pixel scan") {
  MnistSource src = fake_source();
  for (std::size_t i = 0; i < src.size(); ++i) {
    // Oracle: collect every nonzero pixel's coordinates.
    std::vector<std::size_t> rows, cols;
    for (std::size_t p = 0; p < kDigitSide * kDigitSide; ++p) {
      if (src.pixels[i * kDigitSide * kDigitSide + p]) {
        rows.push_back(p / kDigitSide);
        cols.push_back(p % kDigitSide);
      }
    }
    for (std::size_t off : {0u, 28u}) {
      loc::Box b = tight_box(src, i, off);
      CHECK(b.x0 == static_cast<double>(*std::min_element(cols.begin(), cols.end()) + off));
      CHECK(b.x1 == static_cast<double>(*std::max_element(cols.begin(), cols.end()) + 1 + off));
      CHECK(b.y0 == static_cast<double>(*std::min_element(rows.begin(), rows.end())));
      CHECK(b.y1 == static_cast<double>(*std::max_element(rows.begin(), rows.end()) + 1));
    }
  }
}

TEST_CASE("synthesized samples are consistent") {
  MnistSource src = fake_source();
  auto samples = synthesize(src, {5, 3000, 0.7});
  REQUIRE(samples.size() == 3000);
  for (const auto& s : samples) {
    CHECK(s.digit_count() >= 1);
    auto p = s.present();
    for (int d = 0; d < 10; ++d) CHECK((p[static_cast<std::size_t>(d)] == 1.0) == (s.digit[0] == d || s.digit[1] == d));
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!s.occupied(slot)) continue;
      CHECK(src.labels[static_cast<std::size_t>(s.source[slot])] == s.digit[slot]);
      CHECK(s.box[slot] == tight_box(src, static_cast<std::size_t>(s.source[slot]), slot * kDigitSide));
    }
  }
  Array canvas = compose(src, samples[0]);
  CHECK(canvas.shape() == Shape{28, 56});
}

TEST_CASE("canvas pixels come from the referenced source digits") {
  MnistSource src = fake_source();
  MultiSample s;
  s.digit = {3, 7};
  s.source = {10, 22};
  Array c = compose(src, s);
  for (std::size_t r = 0; r < 28; ++r) {
    for (std::size_t col = 0; col < 28; ++col) {
      CHECK(c.at(r, col) == src.value(10, r, col));
      CHECK(c.at(r, col + 28) == src.value(22, r, col));
    }
  }
  s.digit[1] = MultiSample::kEmpty;
  s.source[1] = MultiSample::kEmpty;
  Array left = compose(src, s);
  for (std::size_t r = 0; r < 28; ++r) CHECK(left.at(r, 40) == 0.0);
}

TEST_CASE("synthesis is deterministic per seed") {
  MnistSource src = fake_source();
  auto a = synthesize(src, {9, 500, 0.7});
  auto b = synthesize(src, {9, 500, 0.7});
  auto c = synthesize(src, {10, 500, 0.7});
  auto same = [](const std::vector<MultiSample>& x, const std::vector<MultiSample>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i].digit != y[i].digit || x[i].source != y[i].source) return false;
    }
    return true;
  };
  CHECK(same(a, b));
  CHECK_FALSE(same(a, c));
}

TEST_CASE("composition and class frequencies") {
  MnistSource src = fake_source();
  auto samples = synthesize(src, {21, 40000, 0.7});
  std::size_t two = 0, left = 0;
  std::array<std::size_t, 10> digit_counts{};
  for (const auto& s : samples) {
    two += s.digit_count() == 2;
    left += s.occupied(0);
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (s.occupied(slot)) ++digit_counts[static_cast<std::size_t>(s.digit[slot])];
    }
  }
  const double n = 40000.0;
  CHECK(two / n == doctest::Approx(0.49 / 0.91).epsilon(0.03));
  // P(left occupied | not both empty) = 0.7 / 0.91.
  CHECK(left / n == doctest::Approx(0.7 / 0.91).epsilon(0.02));
  const double total = static_cast<double>(n + two);
  for (auto c : digit_counts) CHECK(c / total == doctest::Approx(0.1).epsilon(0.08));
}

TEST_CASE("localization eval set matches a counting scan") {
  MnistSource src = fake_source();
  auto samples = synthesize(src, {4, 2000, 0.7});
  for (int d = 0; d < 10; ++d) {
    auto items = localization_eval_set(samples, d);
    std::size_t count = 0, boxes = 0;
    for (const auto& s : samples) {
      if (s.digit[0] == d || s.digit[1] == d) ++count;
      boxes += (s.digit[0] == d) + (s.digit[1] == d);
    }
    CHECK(items.size() == count);
    std::size_t got_boxes = 0;
    for (const auto& it : items) got_boxes += it.gt_boxes.size();
    CHECK(got_boxes == boxes);
  }
  CHECK_THROWS_AS(localization_eval_set(samples, 10), ConfigError);
}

TEST_CASE("config errors") {
  MnistSource src = fake_source();
  CHECK_THROWS_AS(synthesize(src, {1, 0, 0.7}), ConfigError);
  CHECK_THROWS_AS(synthesize(src, {1, 10, 1.0}), ConfigError);
  CHECK_THROWS_AS(synthesize(MnistSource{}, {1, 10, 0.7}), DataError);
}

TEST_CASE("dataset save/load round trip is byte-stable") {
  auto dir = testing::scratch_dir("dataset");
  MnistSource src = fake_source();
  write_idx(dir / "img", dir / "lab", src);
  Dataset ds;
  ds.images_path = dir / "img";
  ds.labels_path = dir / "lab";
  ds.config = {3, 200, 0.7};
  ds.source = src;
  ds.samples = synthesize(src, ds.config);
  save_dataset(dir / "a", ds);
  Dataset back = load_dataset(dir / "a");
  REQUIRE(back.samples.size() == 200);
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(back.samples[i].digit == ds.samples[i].digit);
    CHECK(back.samples[i].box == ds.samples[i].box);
    CHECK(back.image(i) == ds.image(i));
  }
  save_dataset(dir / "b", back);
  for (auto f : {"dataset.json", "digits.npy", "sources.npy", "gt_boxes.npy", "present.npy"}) {
    CHECK(testing::slurp(dir / "a" / f) == testing::slurp(dir / "b" / f));
  }
  // Tampering with a referenced source index is caught.
  std::filesystem::copy_file(dir / "img", dir / "img2");
  MnistSource other = src;
  std::rotate(other.labels.begin(), other.labels.begin() + 1, other.labels.end());
  write_idx(dir / "img", dir / "lab", other);
  CHECK_THROWS_AS(load_dataset(dir / "a"), DataError);
}
