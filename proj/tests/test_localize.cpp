#include <doctest.h>

#include <deque>
#include <set>

#include "helpers.hpp"
#include "infocam/localize.hpp"

using namespace infocam;
using namespace infocam::loc;

namespace {

Mask mask_from(const std::vector<std::string>& rows) {
  Mask m(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m.set(r, c, rows[r][c] == '#');
  }
  return m;
}

// BFS flood fill in raster order of seeds; ids 1.. follow first-cell order.
std::vector<std::size_t> flood_fill(const Mask& m, int conn) {
  const std::size_t h = m.height(), w = m.width();
  std::vector<std::size_t> lab(h * w, 0);
  std::size_t next = 0;
  for (std::size_t r0 = 0; r0 < h; ++r0) {
    for (std::size_t c0 = 0; c0 < w; ++c0) {
      if (!m(r0, c0) || lab[r0 * w + c0]) continue;
      ++next;
      std::deque<std::pair<long, long>> q{{static_cast<long>(r0), static_cast<long>(c0)}};
      lab[r0 * w + c0] = next;
      while (!q.empty()) {
        auto [r, c] = q.front();
        q.pop_front();
        for (long dr = -1; dr <= 1; ++dr) {
          for (long dc = -1; dc <= 1; ++dc) {
            if ((dr == 0 && dc == 0) || (conn == 4 && dr != 0 && dc != 0)) continue;
            long nr = r + dr, nc = c + dc;
            if (nr < 0 || nc < 0 || nr >= static_cast<long>(h) || nc >= static_cast<long>(w)) continue;
            auto idx = static_cast<std::size_t>(nr) * w + static_cast<std::size_t>(nc);
            if (!m(static_cast<std::size_t>(nr), static_cast<std::size_t>(nc)) || lab[idx]) continue;
            lab[idx] = next;
            q.push_back({nr, nc});
          }
        }
      }
    }
  }
  return lab;
}

}  // namespace

TEST_CASE("normalized threshold is strict") {
  Array map({1, 6}, {0.0, 0.2, 0.2000001, 0.5, 1.0, 0.1});
  Mask m = threshold_mask(map, 0.2);
  CHECK_FALSE(m(0, 0));
  CHECK_FALSE(m(0, 1));
  CHECK(m(0, 2));
  CHECK(m(0, 4));
  CHECK(m.count() == 3);
}

TEST_CASE("normalization is min-max, raw mode is relative to max") {
  Array map({1, 4}, {10.0, 12.0, 14.0, 20.0});
  // normalized: (v-10)/10 > 0.3 keeps 14 and 20.
  CHECK(threshold_mask(map, 0.3).count() == 2);
  // raw: v > 0.3*20 = 6 keeps everything.
  CHECK(threshold_mask(map, 0.3, ThresholdMode::raw).count() == 4);
}

TEST_CASE("constant map keeps everything") {
  Array flat({3, 3});
  for (double& v : flat.storage()) v = -2.0;
  CHECK(threshold_mask(flat, 0.2).count() == 9);
  BoxResult b = bounding_box(flat);
  CHECK_FALSE(b.fallback);
  CHECK(b.box == Box{0, 0, 3, 3, Space::feature_grid});
}

TEST_CASE("components agree with a flood fill oracle") {
  Xoshiro256 rng(1);
  for (int t = 0; t < 500; ++t) {
    const std::size_t h = 1 + rng.below(16), w = 1 + rng.below(16);
    const double p = rng.uniform(0.2, 0.8);
    Mask m(h, w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) m.set(r, c, rng.bernoulli(p));
    }
    for (auto conn : {Connectivity::four, Connectivity::eight}) {
      std::size_t n = 0;
      auto got = label_components(m, conn, &n);
      auto want = flood_fill(m, static_cast<int>(conn));
      CHECK(got == want);
      CHECK(n == (want.empty() ? 0 : *std::max_element(want.begin(), want.end())));
    }
  }
}

TEST_CASE("diagonal neighbours join only under 8-connectivity") {
  Mask m = mask_from({"#..",
                      ".#.",
                      "..#"});
  std::size_t n4 = 0, n8 = 0;
  label_components(m, Connectivity::four, &n4);
  label_components(m, Connectivity::eight, &n8);
  CHECK(n4 == 3);
  CHECK(n8 == 1);
}

TEST_CASE("U shape merges labels from both arms") {
  Mask m = mask_from({"#.#",
                      "#.#",
                      "###"});
  std::size_t n = 0;
  auto lab = label_components(m, Connectivity::four, &n);
  CHECK(n == 1);
  CHECK(lab[2] == 1);
}

TEST_CASE("largest component: size wins, ties go to the first in raster order") {
  Mask m = mask_from({"##..#",
                      "....#",
                      "###.."});
  auto pts = largest_component(m);
  CHECK(pts.size() == 3);
  CHECK(pts.front() == Point{2, 0});

  Mask tie = mask_from({"##.##"});
  auto first = largest_component(tie);
  CHECK(first == std::vector<Point>{{0, 0}, {0, 1}});
  CHECK(largest_component(Mask(2, 2)).empty());
}

TEST_CASE("bounding box over a handcrafted map") {
  Array map({4, 5});
  map.at(1, 1) = 1.0;
  map.at(1, 2) = 0.9;
  map.at(2, 2) = 0.8;
  map.at(3, 4) = 0.7;  // separate, smaller component
  BoxResult b = bounding_box(map);
  CHECK_FALSE(b.fallback);
  CHECK(b.box == Box{1, 1, 3, 3, Space::feature_grid});
  CHECK(b.box.area() == 4.0);

  BoxOptions eight;
  eight.connectivity = Connectivity::eight;
  map.at(3, 3) = 0.7;  // joins the blob diagonally
  CHECK(bounding_box(map, eight).box == Box{1, 1, 5, 4, Space::feature_grid});
}

TEST_CASE("empty mask falls back to the argmax cell") {
  Array map({3, 3}, {-5, -4, -3, -2, -1, -1.5, -3, -4, -5});
  BoxOptions raw;
  raw.mode = ThresholdMode::raw;
  raw.fraction = 0.5;  // v > 0.5 * (-1) = -0.5 keeps nothing
  BoxResult b = bounding_box(map, raw);
  CHECK(b.fallback);
  CHECK(b.box == Box{1, 1, 2, 2, Space::feature_grid});
}

TEST_CASE("grid boxes scale linearly to image pixels") {
  Box g{1, 2, 3, 7, Space::feature_grid};
  Box p = to_image_space(g, {7, 14}, {28, 56});
  CHECK(p == Box{4, 8, 12, 28, Space::image_pixels});
  Box whole = to_image_space({0, 0, 14, 7, Space::feature_grid}, {7, 14}, {224, 300});
  CHECK(whole.x1 == 300.0);
  CHECK(whole.y1 == 224.0);
  CHECK_THROWS_AS(to_image_space(p, {7, 14}, {28, 56}), std::invalid_argument);
}

TEST_CASE("iou known values") {
  Box a{0, 0, 2, 2, Space::image_pixels}, b{1, 1, 3, 3, Space::image_pixels};
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, {2, 0, 4, 2, Space::image_pixels}) == 0.0);
  CHECK(iou(a, {0, 0, 1, 2, Space::image_pixels}) == 0.5);
  CHECK_THROWS_AS(iou(a, {0, 0, 1, 1, Space::feature_grid}), std::invalid_argument);
}

TEST_CASE("iou is symmetric and bounded") {
  Xoshiro256 rng(2);
  for (int t = 0; t < 1000; ++t) {
    auto rb = [&] {
      double x0 = rng.uniform(0, 10), y0 = rng.uniform(0, 10);
      return Box{x0, y0, x0 + rng.uniform(0.1, 5), y0 + rng.uniform(0.1, 5), Space::image_pixels};
    };
    Box a = rb(), b = rb();
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == iou(b, a));
  }
}

TEST_CASE("judge and evaluate: strict 0.5, any gt box, top-1 needs classification") {
  std::vector<Box> gts{{0, 0, 2, 2, Space::image_pixels}, {10, 10, 12, 12, Space::image_pixels}};
  Box half{0, 0, 1, 2, Space::image_pixels};
  CHECK_FALSE(judge(half, 0, gts).correct);
  Box second{10, 10, 12, 12, Space::image_pixels};
  CHECK(judge(second, 0, gts).correct);
  CHECK(judge(second, 0, gts).iou == 1.0);

  std::vector<EvalSample> s{
      {gts, second, second, true},   // hit both
      {gts, second, half, true},     // gt hit, top-1 miss (predicted-label box)
      {gts, second, second, false},  // gt hit, misclassified
      {gts, half, half, true},       // miss
  };
  CHECK(evaluate(s, EvalMode::gt_loc) == 75.0);
  CHECK(evaluate(s, EvalMode::top1_loc) == 25.0);
}

TEST_CASE("bilinear resize") {
  Array g({2, 2}, {0, 1, 2, 3});
  CHECK(bilinear_resize(g, 2, 2) == g);
  Array up = bilinear_resize(g, 4, 4);
  CHECK(up.at(0, 0) == 0.0);
  CHECK(up.at(3, 3) == 3.0);
  CHECK(up.at(1, 1) == doctest::Approx(0.75));  // fy = fx = 0.25
  Array map({7, 14});
  map.at(3, 5) = 1.0;
  BoxResult b = bounding_box_upsampled(map, {28, 56});
  CHECK(b.box.space == Space::image_pixels);
  CHECK(b.box.x0 >= 16.0);
  CHECK(b.box.x1 <= 28.0);
}
