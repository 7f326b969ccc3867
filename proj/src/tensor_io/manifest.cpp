#include "infocam/manifest.hpp"

#include <fstream>
#include <set>

namespace infocam {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const json& require(const json& obj, const char* key, const std::string& ctx) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ManifestError(ctx + ": missing \"" + key + "\"");
  return *it;
}

Shape shape_from_json(const json& j, const std::string& ctx) {
  if (!j.is_array()) throw ManifestError(ctx + ": shape must be an array");
  Shape s;
  for (const auto& d : j) {
    if (!d.is_number_unsigned()) throw ManifestError(ctx + ": shape extents must be non-negative integers");
    s.push_back(d.get<std::size_t>());
  }
  return s;
}

}  // namespace

ArrayRef resolve_ref(const fs::path& dir, const json& value, const std::string& what) {
  ArrayRef ref;
  if (value.is_string()) {
    ref.path = dir / value.get<std::string>();
  } else if (value.is_object()) {
    ref.path = dir / require(value, "path", what).get<std::string>();
    if (value.contains("shape")) ref.declared_shape = shape_from_json(value["shape"], what);
    if (value.contains("dtype")) {
      try {
        ref.declared_dtype = npy::dtype_from_descr(value["dtype"].get<std::string>());
      } catch (const npy::NpyError& e) {
        throw ManifestError(what + ": " + e.what());
      }
    }
  } else {
    throw ManifestError(what + ": expected a path string or {\"path\",...} object");
  }
  if (!fs::exists(ref.path)) throw ManifestError(what + ": dangling path " + ref.path.string());
  npy::Header h = npy::read_header(ref.path);
  ref.shape = h.shape;
  if (ref.declared_shape && *ref.declared_shape != h.shape) {
    throw ManifestError(what + ": shape mismatch, declared " + shape_to_string(*ref.declared_shape) +
                        " but " + ref.path.string() + " holds " + shape_to_string(h.shape));
  }
  if (ref.declared_dtype && *ref.declared_dtype != h.dtype) {
    throw ManifestError(what + ": dtype mismatch for " + ref.path.string());
  }
  return ref;
}

static Manifest parse_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ManifestError(path.string() + ": top level must be an object");

  Manifest m;
  m.directory = path.parent_path();
  const std::string ctx = path.string();

  const json& nc = require(doc, "num_classes", ctx);
  if (!nc.is_number_unsigned() || nc.get<std::size_t>() == 0) {
    throw ManifestError(ctx + ": num_classes must be a positive integer");
  }
  m.num_classes = nc.get<std::size_t>();

  m.weights = resolve_ref(m.directory, require(doc, "weights", ctx), "weights");
  if (m.weights.shape.size() != 2) {
    throw ManifestError("weights must be rank-2 (M,K), got " + shape_to_string(m.weights.shape));
  }
  if (m.weights.shape[0] != m.num_classes) {
    throw ManifestError("weights has " + std::to_string(m.weights.shape[0]) +
                        " rows but num_classes is " + std::to_string(m.num_classes));
  }
  const std::size_t k = m.weights.shape[1];

  if (doc.contains("bias")) {
    m.bias = resolve_ref(m.directory, doc["bias"], "bias");
    if (m.bias->shape != Shape{m.num_classes}) {
      throw ManifestError("bias must have shape (M,), got " + shape_to_string(m.bias->shape));
    }
  }
  if (doc.contains("head_pooling")) {
    auto p = doc["head_pooling"].get<std::string>();
    if (p == "gap") m.pooling = HeadPooling::gap;
    else if (p == "sum") m.pooling = HeadPooling::sum;
    else throw ManifestError("head_pooling must be \"gap\" or \"sum\"");
  }
  if (doc.contains("head")) {
    auto h = doc["head"].get<std::string>();
    if (h == "sigmoid") m.multi_label = true;
    else if (h != "softmax") throw ManifestError("head must be \"softmax\" or \"sigmoid\"");
  }

  const json& samples = require(doc, "samples", ctx);
  if (!samples.is_array()) throw ManifestError(ctx + ": samples must be an array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const json& s = samples[i];
    const std::string sctx = "samples[" + std::to_string(i) + "]";
    SampleEntry e;
    e.id = require(s, "id", sctx).get<std::string>();
    if (!ids.insert(e.id).second) throw ManifestError(sctx + ": duplicate id " + e.id);

    e.features = resolve_ref(m.directory, require(s, "features", sctx), sctx + ".features");
    const Shape& fs = e.features.shape;
    if (fs.size() == 4) {
      std::size_t idx = s.value("index", std::size_t{0});
      if (idx >= fs[0]) throw ManifestError(sctx + ": index out of range for batched features");
      e.batch_index = idx;
    } else if (fs.size() != 3) {
      throw ManifestError(sctx + ": features must be rank-3 (K,H,W) or rank-4 (N,K,H,W), got " +
                          shape_to_string(fs));
    }
    const std::size_t off = fs.size() - 3;
    if (fs[off] != k) {
      throw ManifestError(sctx + ": features have K=" + std::to_string(fs[off]) +
                          " but weights have K=" + std::to_string(k));
    }
    if (fs[off + 1] == 0 || fs[off + 2] == 0) throw ManifestError(sctx + ": empty feature grid");

    const json& isz = require(s, "image_size", sctx);
    if (!isz.is_array() || isz.size() != 2) throw ManifestError(sctx + ": image_size must be [H,W]");
    e.image_size = {isz[0].get<std::size_t>(), isz[1].get<std::size_t>()};
    if (e.image_size[0] == 0 || e.image_size[1] == 0) throw ManifestError(sctx + ": zero image_size");

    for (const auto& l : require(s, "labels", sctx)) {
      int label = l.get<int>();
      if (label < 0 || static_cast<std::size_t>(label) >= m.num_classes) {
        throw ManifestError(sctx + ": label " + std::to_string(label) + " out of range");
      }
      e.labels.push_back(label);
    }
    if (s.contains("gt_boxes")) {
      for (const auto& b : s["gt_boxes"]) {
        if (!b.is_array() || b.size() != 4) throw ManifestError(sctx + ": gt_boxes entries must be [x0,y0,x1,y1]");
        std::array<double, 4> box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                  b[3].get<double>()};
        if (!(box[0] < box[2] && box[1] < box[3]) || box[0] < 0 || box[1] < 0) {
          throw ManifestError(sctx + ": degenerate gt box");
        }
        e.gt_boxes.push_back(box);
      }
    }
    if (s.contains("logits")) {
      e.logits = resolve_ref(m.directory, s["logits"], sctx + ".logits");
      if (e.logits->shape != Shape{m.num_classes}) {
        throw ManifestError(sctx + ": logits must have shape (M,)");
      }
    }
    m.samples.push_back(std::move(e));
  }
  return m;
}

Manifest load_manifest(const fs::path& path) {
  try {
    return parse_manifest(path);
  } catch (const json::exception& e) {
    throw ManifestError(path.string() + ": " + e.what());
  }
}

Array load_features(const SampleEntry& sample) {
  Array a = npy::read_array(sample.features.path);
  if (a.rank() == 3) return a;
  const Shape& s = a.shape();
  const std::size_t per = s[1] * s[2] * s[3];
  const std::size_t n = *sample.batch_index;
  std::vector<double> slice(a.storage().begin() + static_cast<std::ptrdiff_t>(n * per),
                            a.storage().begin() + static_cast<std::ptrdiff_t>((n + 1) * per));
  return Array({s[1], s[2], s[3]}, std::move(slice));
}

Array load_weights(const Manifest& m) { return npy::read_array(m.weights.path); }

std::optional<Array> load_bias(const Manifest& m) {
  if (!m.bias) return std::nullopt;
  return npy::read_array(m.bias->path);
}

json write_entry(const fs::path& dir, const std::string& file, const Array& a, npy::Dtype dtype) {
  npy::write_array(dir / file, a, dtype);
  return json{{"path", file}, {"shape", a.shape()}, {"dtype", npy::dtype_descr(dtype)}};
}

Array read_entry(const fs::path& dir, const json& entry) {
  ArrayRef ref = resolve_ref(dir, entry, entry.is_object() ? entry.value("path", "?") : "entry");
  return npy::read_array(ref.path);
}

}  // namespace infocam
