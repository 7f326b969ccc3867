#include "infocam/multimnist.hpp"

#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "infocam/manifest.hpp"
#include "infocam/rng.hpp"

namespace infocam::mm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IdxError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

Array MnistSource::images() const {
  std::vector<double> v(pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pixels[i] / 255.0;
  return Array({size(), rows, cols}, std::move(v));
}

MnistSource load_idx(const fs::path& images, const fs::path& labels) {
  auto ib = slurp(images);
  auto lb = slurp(labels);
  if (ib.size() < 16 || be32(ib, 0) != kImageMagic) {
    throw IdxError(images.string() + ": bad magic (expected 0x00000803)");
  }
  if (lb.size() < 8 || be32(lb, 0) != kLabelMagic) {
    throw IdxError(labels.string() + ": bad magic (expected 0x00000801)");
  }
  const std::size_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
  const std::size_t nl = be32(lb, 4);
  if (n != nl) {
    throw IdxError("count mismatch: " + std::to_string(n) + " images vs " + std::to_string(nl) +
                   " labels");
  }
  if (n == 0) throw IdxError(images.string() + ": no images");
  if (rows != kDigitSide || cols != kDigitSide) {
    throw IdxError(images.string() + ": expected 28x28 digits, got " + std::to_string(rows) + "x" +
                   std::to_string(cols));
  }
  if (ib.size() - 16 < n * rows * cols) throw IdxError(images.string() + ": truncated payload");
  if (lb.size() - 8 < n) throw IdxError(labels.string() + ": truncated payload");

  MnistSource src;
  src.rows = rows;
  src.cols = cols;
  src.pixels.assign(ib.begin() + 16, ib.begin() + 16 + static_cast<std::ptrdiff_t>(n * rows * cols));
  src.labels.assign(lb.begin() + 8, lb.begin() + 8 + static_cast<std::ptrdiff_t>(n));
  for (auto l : src.labels) {
    if (l >= kNumDigits) throw IdxError(labels.string() + ": label " + std::to_string(l) + " is not a digit");
  }
  return src;
}

void write_idx(const fs::path& images, const fs::path& labels, const MnistSource& src) {
  std::ofstream io(images, std::ios::binary), lo(labels, std::ios::binary);
  if (!io || !lo) throw IdxError("cannot write IDX files");
  put_be32(io, kImageMagic);
  put_be32(io, static_cast<std::uint32_t>(src.size()));
  put_be32(io, static_cast<std::uint32_t>(src.rows));
  put_be32(io, static_cast<std::uint32_t>(src.cols));
  io.write(reinterpret_cast<const char*>(src.pixels.data()), static_cast<std::streamsize>(src.pixels.size()));
  put_be32(lo, kLabelMagic);
  put_be32(lo, static_cast<std::uint32_t>(src.size()));
  lo.write(reinterpret_cast<const char*>(src.labels.data()), static_cast<std::streamsize>(src.labels.size()));
}

std::array<double, kNumDigits> MultiSample::present() const {
  std::array<double, kNumDigits> p{};
  for (std::size_t s = 0; s < 2; ++s) {
    if (occupied(s)) p[static_cast<std::size_t>(digit[s])] = 1.0;
  }
  return p;
}

std::vector<loc::Box> MultiSample::boxes_for(int d) const {
  std::vector<loc::Box> out;
  for (std::size_t s = 0; s < 2; ++s) {
    if (digit[s] == d) out.push_back(box[s]);
  }
  return out;
}

loc::Box tight_box(const MnistSource& src, std::size_t image, std::size_t x_offset) {
  std::size_t r0 = src.rows, c0 = src.cols, r1 = 0, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < src.rows; ++r) {
    for (std::size_t c = 0; c < src.cols; ++c) {
      if (src.pixels[(image * src.rows + r) * src.cols + c] == 0) continue;
      any = true;
      r0 = std::min(r0, r);
      c0 = std::min(c0, c);
      r1 = std::max(r1, r);
      c1 = std::max(c1, c);
    }
  }
  if (!any) {  // blank digit: the whole slot
    r0 = c0 = 0;
    r1 = src.rows - 1;
    c1 = src.cols - 1;
  }
  const auto off = static_cast<double>(x_offset);
  return {static_cast<double>(c0) + off, static_cast<double>(r0), static_cast<double>(c1 + 1) + off,
          static_cast<double>(r1 + 1), loc::Space::image_pixels};
}

std::vector<MultiSample> synthesize(const MnistSource& src, const SynthConfig& cfg) {
  if (src.size() == 0) throw DataError("synthesize: empty MNIST source");
  if (!(cfg.p_slot > 0.0 && cfg.p_slot < 1.0)) throw ConfigError("p_slot must lie in (0,1)");
  if (cfg.count == 0) throw ConfigError("count must be positive");

  std::array<std::vector<std::size_t>, kNumDigits> by_class;
  for (std::size_t i = 0; i < src.size(); ++i) by_class[src.labels[i]].push_back(i);
  std::vector<int> classes;
  for (std::size_t d = 0; d < kNumDigits; ++d) {
    if (!by_class[d].empty()) classes.push_back(static_cast<int>(d));
  }

  Xoshiro256 rng(cfg.seed);
  std::vector<MultiSample> out;
  out.reserve(cfg.count);
  for (std::size_t n = 0; n < cfg.count; ++n) {
    std::array<bool, 2> occ{};
    do {
      occ[0] = rng.bernoulli(cfg.p_slot);
      occ[1] = rng.bernoulli(cfg.p_slot);
    } while (!occ[0] && !occ[1]);

    MultiSample s;
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (!occ[slot]) continue;
      const int d = classes[rng.below(classes.size())];
      const auto& pool = by_class[static_cast<std::size_t>(d)];
      const std::size_t idx = pool[rng.below(pool.size())];
      s.digit[slot] = d;
      s.source[slot] = static_cast<std::int64_t>(idx);
      s.box[slot] = tight_box(src, idx, slot * kDigitSide);
    }
    out.push_back(s);
  }
  return out;
}

Array compose(const MnistSource& src, const MultiSample& s) {
  Array canvas({kCanvasHeight, kCanvasWidth});
  for (std::size_t slot = 0; slot < 2; ++slot) {
    if (!s.occupied(slot)) continue;
    const auto idx = static_cast<std::size_t>(s.source[slot]);
    for (std::size_t r = 0; r < kDigitSide; ++r) {
      for (std::size_t c = 0; c < kDigitSide; ++c) {
        canvas.at(r, slot * kDigitSide + c) = src.value(idx, r, c);
      }
    }
  }
  return canvas;
}

std::vector<EvalItem> localization_eval_set(const std::vector<MultiSample>& samples, int target) {
  if (target < 0 || target >= static_cast<int>(kNumDigits)) {
    throw ConfigError("target digit must be in 0..9");
  }
  std::vector<EvalItem> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].contains(target)) out.push_back({i, samples[i].boxes_for(target)});
  }
  if (out.empty()) throw DataError("no sample contains digit " + std::to_string(target));
  return out;
}

void save_dataset(const fs::path& dir, const Dataset& ds) {
  fs::create_directories(dir);
  const std::size_t n = ds.samples.size();
  Array digits({n, 2}), sources({n, 2}), boxes({n, 2, 4}), present({n, kNumDigits});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = ds.samples[i];
    auto p = s.present();
    for (std::size_t d = 0; d < kNumDigits; ++d) present.at(i, d) = p[d];
    for (std::size_t slot = 0; slot < 2; ++slot) {
      digits.at(i, slot) = s.digit[slot];
      sources.at(i, slot) = static_cast<double>(s.source[slot]);
      if (!s.occupied(slot)) continue;
      const auto& b = s.box[slot];
      boxes.at(i, slot, 0) = b.x0;
      boxes.at(i, slot, 1) = b.y0;
      boxes.at(i, slot, 2) = b.x1;
      boxes.at(i, slot, 3) = b.y1;
    }
  }
  auto rel = [&](const fs::path& p) {
    return fs::relative(fs::absolute(p), fs::absolute(dir)).generic_string();
  };
  json doc{
      {"format", "multimnist-v1"},
      {"seed", ds.config.seed},
      {"count", n},
      {"p_slot", ds.config.p_slot},
      {"canvas", {kCanvasHeight, kCanvasWidth}},
      {"source", {{"images", rel(ds.images_path)}, {"labels", rel(ds.labels_path)}}},
      {"arrays",
       {{"digits", write_entry(dir, "digits.npy", digits)},
        {"sources", write_entry(dir, "sources.npy", sources)},
        {"gt_boxes", write_entry(dir, "gt_boxes.npy", boxes)},
        {"present", write_entry(dir, "present.npy", present)}}},
  };
  std::ofstream out(dir / "dataset.json");
  if (!out) throw DataError("cannot write " + (dir / "dataset.json").string());
  out << doc.dump(2) << '\n';
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream in(dir / "dataset.json");
  if (!in) throw DataError("no dataset.json in " + dir.string());
  json doc;
  try {
    doc = json::parse(in);
    if (doc.at("format") != "multimnist-v1") throw DataError("unknown dataset format");
    Dataset ds;
    ds.images_path = dir / doc.at("source").at("images").get<std::string>();
    ds.labels_path = dir / doc.at("source").at("labels").get<std::string>();
    ds.config.seed = doc.at("seed").get<std::uint64_t>();
    ds.config.p_slot = doc.at("p_slot").get<double>();
    ds.config.count = doc.at("count").get<std::size_t>();
    ds.source = load_idx(ds.images_path, ds.labels_path);

    const auto& arrays = doc.at("arrays");
    Array digits = read_entry(dir, arrays.at("digits"));
    Array sources = read_entry(dir, arrays.at("sources"));
    Array boxes = read_entry(dir, arrays.at("gt_boxes"));
    const std::size_t n = ds.config.count;
    if (digits.shape() != Shape{n, 2} || sources.shape() != Shape{n, 2} ||
        boxes.shape() != Shape{n, 2, 4}) {
      throw DataError("dataset arrays do not match count " + std::to_string(n));
    }
    ds.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = ds.samples[i];
      for (std::size_t slot = 0; slot < 2; ++slot) {
        s.digit[slot] = static_cast<int>(digits.at(i, slot));
        s.source[slot] = static_cast<std::int64_t>(sources.at(i, slot));
        if (!s.occupied(slot)) continue;
        if (s.source[slot] < 0 || static_cast<std::size_t>(s.source[slot]) >= ds.source.size() ||
            ds.source.labels[static_cast<std::size_t>(s.source[slot])] != s.digit[slot]) {
          throw DataError("sample " + std::to_string(i) + " references an inconsistent source digit");
        }
        s.box[slot] = {boxes.at(i, slot, 0), boxes.at(i, slot, 1), boxes.at(i, slot, 2),
                       boxes.at(i, slot, 3), loc::Space::image_pixels};
      }
    }
    return ds;
  } catch (const json::exception& e) {
    throw DataError((dir / "dataset.json").string() + ": " + e.what());
  }
}

}  // namespace infocam::mm
