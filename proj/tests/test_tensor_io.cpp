#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "infocam/manifest.hpp"
#include "infocam/npy.hpp"

using namespace infocam;
using nlohmann::json;

namespace {

// Header text numpy 2.x writes for np.save(np.array([1., 2., 3.])); 118 bytes
// so that magic + version + length + header is 128.
const std::string kNumpyHeader3 =
    "{'descr': '<f8', 'fortran_order': False, 'shape': (3,), }" + std::string(60, ' ') + "\n";

std::vector<std::uint8_t> raw_npy(const std::string& header, std::size_t payload_bytes,
                                  std::uint8_t major = 1) {
  std::vector<std::uint8_t> v = {0x93, 'N', 'U', 'M', 'P', 'Y', major, 0};
  v.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  v.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  v.insert(v.end(), header.begin(), header.end());
  v.resize(v.size() + payload_bytes, 0);
  return v;
}

npy::ErrorKind kind_of(const std::vector<std::uint8_t>& bytes) {
  try {
    npy::decode(bytes);
  } catch (const npy::NpyError& e) {
    return e.kind();
  }
  FAIL("decode accepted a malformed file");
  return npy::ErrorKind::io;
}

}  // namespace

TEST_CASE("npy header matches numpy byte for byte") {
  auto bytes = npy::encode(Array({3}, {1.0, 2.0, 3.0}), npy::Dtype::f64);
  REQUIRE(bytes.size() == 128 + 24);
  CHECK(std::string(bytes.begin() + 10, bytes.begin() + 128) == kNumpyHeader3);
  double second;
  std::memcpy(&second, bytes.data() + 136, 8);
  CHECK(second == 2.0);
}

TEST_CASE("npy preamble is a multiple of 64 for many shapes") {
  for (Shape s : {Shape{}, Shape{0}, Shape{7}, Shape{2, 3}, Shape{1, 2, 3, 4}, Shape{123456, 2}}) {
    for (auto dt : {npy::Dtype::f32, npy::Dtype::f64}) {
      Array a(s);
      auto bytes = npy::encode(a, dt);
      const std::size_t hl = bytes[8] | (bytes[9] << 8);
      CHECK((10 + hl) % 64 == 0);
      CHECK(bytes[9 + hl] == '\n');
      CHECK(bytes.size() == 10 + hl + a.size() * (dt == npy::Dtype::f32 ? 4 : 8));
    }
  }
}

TEST_CASE("npy round trip f64 is exact, f32 rounds to nearest") {
  Xoshiro256 rng(7);
  Array a = testing::random_array({4, 5, 6}, rng, -1e3, 1e3);
  CHECK(npy::decode(npy::encode(a, npy::Dtype::f64)) == a);

  Array b = npy::decode(npy::encode(a, npy::Dtype::f32));
  CHECK(b.shape() == a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));

  auto dir = testing::scratch_dir("npy-file");
  npy::write_array(dir / "a.npy", a, npy::Dtype::f32);
  CHECK(npy::read_header(dir / "a.npy").dtype == npy::Dtype::f32);
  CHECK(npy::read_array(dir / "a.npy") == b);
}

TEST_CASE("npy parses header variants numpy may produce") {
  const std::string h = "{'fortran_order': False, 'shape': (2,), 'descr': '<f8'}";
  std::string padded = h + std::string(64 - (10 + h.size() + 1) % 64, ' ') + "\n";
  auto bytes = raw_npy(padded, 16);
  CHECK(npy::decode(bytes).shape() == Shape{2});

  const std::string scalar = "{'descr': '<f4', 'fortran_order': False, 'shape': (), }\n";
  CHECK(npy::decode(raw_npy(scalar, 4)).shape() == Shape{});
}

TEST_CASE("npy errors carry their kind") {
  auto good = npy::encode(Array({3}, {1.0, 2.0, 3.0}), npy::Dtype::f64);

  auto bad_magic = good;
  bad_magic[1] = 'X';
  CHECK(kind_of(bad_magic) == npy::ErrorKind::bad_magic);

  auto version = good;
  version[6] = 3;
  CHECK(kind_of(version) == npy::ErrorKind::unsupported_version);

  auto truncated = good;
  truncated.pop_back();
  CHECK(kind_of(truncated) == npy::ErrorKind::truncated);
  CHECK(kind_of(std::vector<std::uint8_t>(good.begin(), good.begin() + 9)) == npy::ErrorKind::truncated);

  CHECK(kind_of(raw_npy("{'descr': '<i4', 'fortran_order': False, 'shape': (3,), }\n", 12)) ==
        npy::ErrorKind::unsupported_dtype);
  CHECK(kind_of(raw_npy("{'descr': '>f8', 'fortran_order': False, 'shape': (3,), }\n", 24)) ==
        npy::ErrorKind::unsupported_dtype);
  CHECK(kind_of(raw_npy("{'descr': '<f8', 'fortran_order': True, 'shape': (3,), }\n", 24)) ==
        npy::ErrorKind::bad_header);
  CHECK(kind_of(raw_npy("{'descr': '<f8', 'shape': (3,), }\n", 24)) == npy::ErrorKind::bad_header);
  CHECK(kind_of(raw_npy("not a dict\n", 24)) == npy::ErrorKind::bad_header);

  auto nan = npy::encode(Array({3}, {1.0, 2.0, 3.0}), npy::Dtype::f64);
  const double q = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan.data() + 128 + 8, &q, 8);
  CHECK(kind_of(nan) == npy::ErrorKind::non_finite);

  CHECK_THROWS_AS(npy::read_array("/nonexistent/file.npy"), npy::NpyError);
}

TEST_CASE("npy refuses to narrow values that overflow f32") {
  CHECK_THROWS_AS(npy::encode(Array({1}, {1e300}), npy::Dtype::f32), NumericError);
}

namespace {

struct ManifestFixture {
  std::filesystem::path dir = testing::scratch_dir("manifest");
  Xoshiro256 rng{3};
  Array weights = testing::random_array({4, 3}, rng);
  Array feats = testing::random_array({2, 3, 5, 6}, rng, 0.0, 2.0);

  json doc() {
    npy::write_array(dir / "w.npy", weights, npy::Dtype::f32);
    npy::write_array(dir / "f.npy", feats, npy::Dtype::f32);
    npy::write_array(dir / "b.npy", Array({4}, {0.1, 0.2, 0.3, 0.4}));
    return {{"num_classes", 4},
            {"weights", {{"path", "w.npy"}, {"shape", {4, 3}}, {"dtype", "<f4"}}},
            {"bias", "b.npy"},
            {"samples",
             {{{"id", "a"}, {"features", "f.npy"}, {"index", 1}, {"image_size", {50, 60}}, {"labels", {2}},
               {"gt_boxes", {{1, 2, 30, 40}}}}}}};
  }

  std::filesystem::path save(const json& d) {
    testing::spit(dir / "manifest.json", d.dump());
    return dir / "manifest.json";
  }
};

}  // namespace

TEST_CASE_FIXTURE(ManifestFixture, "manifest loads and slices batched features") {
  Manifest m = load_manifest(save(doc()));
  REQUIRE(m.samples.size() == 1);
  CHECK(m.num_classes == 4);
  CHECK(m.pooling == HeadPooling::gap);
  CHECK_FALSE(m.multi_label);
  const auto& s = m.samples[0];
  CHECK(s.image_size == std::array<std::size_t, 2>{50, 60});
  CHECK(s.gt_boxes.size() == 1);
  Array f = load_features(s);
  REQUIRE(f.shape() == Shape{3, 5, 6});
  // Row 1 of the batch, widened from f32.
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(f[i] == static_cast<double>(static_cast<float>(feats[90 + i])));
  }
  CHECK(load_bias(m)->storage() == std::vector<double>{0.1, 0.2, 0.3, 0.4});
}

TEST_CASE_FIXTURE(ManifestFixture, "manifest validation failures") {
  auto rejects = [&](json d) { CHECK_THROWS_AS(load_manifest(save(d)), ManifestError); };
  json d = doc();

  json dangling = d;
  dangling["samples"][0]["features"] = "missing.npy";
  rejects(dangling);

  json shape = d;
  shape["weights"]["shape"] = {3, 4};
  rejects(shape);

  json dtype = d;
  dtype["weights"]["dtype"] = "<f8";
  rejects(dtype);

  json classes = d;
  classes["num_classes"] = 5;
  rejects(classes);

  json label = d;
  label["samples"][0]["labels"] = {4};
  rejects(label);

  json index = d;
  index["samples"][0]["index"] = 2;
  rejects(index);

  json box = d;
  box["samples"][0]["gt_boxes"] = {{5, 5, 5, 9}};
  rejects(box);

  json wrong_type = d;
  wrong_type["samples"][0]["image_size"] = {"a", "b"};
  rejects(wrong_type);

  json dup = d;
  dup["samples"].push_back(d["samples"][0]);
  rejects(dup);

  json pooling = d;
  pooling["head_pooling"] = "max";
  rejects(pooling);

  json k = d;
  npy::write_array(dir / "f2.npy", Array({2, 5, 6}));
  k["samples"][0]["features"] = "f2.npy";
  k["samples"][0].erase("index");
  CHECK_THROWS_AS(load_manifest(save(k)), ManifestError);

  testing::spit(dir / "bad.json", "{not json");
  CHECK_THROWS_AS(load_manifest(dir / "bad.json"), ManifestError);
  CHECK_THROWS_AS(load_manifest(dir / "absent.json"), ManifestError);
}

TEST_CASE("named array entries round trip and check declarations") {
  auto dir = testing::scratch_dir("entries");
  Array a({2, 2}, {1, 2, 3, 4});
  json e = write_entry(dir, "a.npy", a);
  CHECK(e["shape"] == json::array({2, 2}));
  CHECK(e["dtype"] == "<f8");
  CHECK(read_entry(dir, e) == a);
  e["shape"] = {4};
  CHECK_THROWS_AS(read_entry(dir, e), ManifestError);
}
