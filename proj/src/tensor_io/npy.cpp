#include "infocam/npy.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace infocam::npy {

static_assert(std::endian::native == std::endian::little, "NPY codec assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;
constexpr std::size_t kPreamble = kMagicLen + 2 + 2;  // magic, version, header_len (v1.0)

std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 8; }

std::string header_dict(Dtype dtype, const Shape& shape) {
  std::string s = "{'descr': '" + dtype_descr(dtype) + "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ',';
  s += "), }";
  return s;
}

// Minimal parser for the Python-literal dict numpy writes into the header.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : text_(text) {}

  Header parse() {
    Header h;
    bool have_descr = false, have_order = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      std::string key = quoted();
      expect(':');
      if (key == "descr") {
        h.dtype = dtype_from_descr(quoted());
        have_descr = true;
      } else if (key == "fortran_order") {
        std::string word = bare_word();
        if (word == "True") throw NpyError(ErrorKind::bad_header, "fortran_order=True is not supported");
        if (word != "False") fail("fortran_order must be True or False");
        have_order = true;
      } else if (key == "shape") {
        h.shape = tuple();
        have_shape = true;
      } else {
        fail("unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') ++pos_;
    }
    if (!have_descr || !have_order || !have_shape) fail("missing descr, fortran_order or shape");
    return h;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) {
    throw NpyError(ErrorKind::bad_header, "malformed NPY header: " + msg);
  }
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  char peek() {
    if (pos_ >= text_.size()) fail("unexpected end");
    return text_[pos_];
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string quoted() {
    skip_ws();
    char q = peek();
    if (q != '\'' && q != '"') fail("expected a string");
    auto end = text_.find(q, pos_ + 1);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string s(text_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return s;
  }
  std::string bare_word() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }
  Shape tuple() {
    expect('(');
    Shape shape;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return shape;
      }
      std::size_t start = pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
      if (start == pos_) fail("expected a dimension");
      shape.push_back(std::stoull(std::string(text_.substr(start, pos_ - start))));
      skip_ws();
      if (peek() == ',') ++pos_;
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NpyError(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Header parse_header(const std::uint8_t* bytes, std::size_t n) {
  if (n < kMagicLen || std::memcmp(bytes, kMagic, kMagicLen) != 0) {
    throw NpyError(ErrorKind::bad_magic, "not an NPY file (bad magic)");
  }
  if (n < kPreamble) throw NpyError(ErrorKind::truncated, "truncated NPY preamble");
  if (bytes[6] != 1 || bytes[7] != 0) {
    throw NpyError(ErrorKind::unsupported_version, "unsupported NPY version " +
                                                       std::to_string(bytes[6]) + "." +
                                                       std::to_string(bytes[7]));
  }
  std::size_t header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  if (kPreamble + header_len > n) throw NpyError(ErrorKind::truncated, "truncated NPY header");
  std::string_view text(reinterpret_cast<const char*>(bytes + kPreamble), header_len);
  Header h = HeaderParser(text).parse();
  h.payload_offset = kPreamble + header_len;
  return h;
}

}  // namespace

NpyError::NpyError(ErrorKind kind, const std::string& what)
    : DataError(what), kind_(kind) {}

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::unsupported_version: return "unsupported_version";
    case ErrorKind::bad_header: return "bad_header";
    case ErrorKind::unsupported_dtype: return "unsupported_dtype";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::non_finite: return "non_finite";
  }
  return "unknown";
}

std::string dtype_descr(Dtype d) { return d == Dtype::f32 ? "<f4" : "<f8"; }

Dtype dtype_from_descr(const std::string& descr) {
  if (descr == "<f4") return Dtype::f32;
  if (descr == "<f8") return Dtype::f64;
  throw NpyError(ErrorKind::unsupported_dtype, "unsupported dtype '" + descr + "' (expected <f4 or <f8)");
}

std::vector<std::uint8_t> encode(const Array& a, Dtype dtype) {
  std::string dict = header_dict(dtype, a.shape());
  // Pad with spaces so the payload starts on a 64-byte boundary; newline terminates.
  std::size_t unpadded = kPreamble + dict.size() + 1;
  std::size_t padding = (64 - unpadded % 64) % 64;
  dict.append(padding, ' ');
  dict.push_back('\n');

  std::vector<std::uint8_t> out;
  out.reserve(kPreamble + dict.size() + a.size() * dtype_size(dtype));
  out.insert(out.end(), kMagic, kMagic + kMagicLen);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(dict.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(dict.size() >> 8));
  out.insert(out.end(), dict.begin(), dict.end());

  std::size_t offset = out.size();
  out.resize(offset + a.size() * dtype_size(dtype));
  if (dtype == Dtype::f64) {
    std::memcpy(out.data() + offset, a.data().data(), a.size() * 8);
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) {
      float f = static_cast<float>(a[i]);
      if (!std::isfinite(f)) {
        throw NumericError("value " + std::to_string(a[i]) + " at index " + std::to_string(i) +
                           " is not representable as f32");
      }
      std::memcpy(out.data() + offset + 4 * i, &f, 4);
    }
  }
  return out;
}

Array decode(const std::vector<std::uint8_t>& bytes) {
  Header h = parse_header(bytes.data(), bytes.size());
  std::size_t count = element_count(h.shape);
  std::size_t need = count * dtype_size(h.dtype);
  if (bytes.size() - h.payload_offset < need) {
    throw NpyError(ErrorKind::truncated, "payload holds " +
                                             std::to_string(bytes.size() - h.payload_offset) +
                                             " bytes, shape " + shape_to_string(h.shape) +
                                             " needs " + std::to_string(need));
  }
  std::vector<double> data(count);
  const std::uint8_t* p = bytes.data() + h.payload_offset;
  if (h.dtype == Dtype::f64) {
    std::memcpy(data.data(), p, need);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, p + 4 * i, 4);
      data[i] = f;
    }
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::isfinite(data[i])) {
      throw NpyError(ErrorKind::non_finite, "non-finite value at flat index " + std::to_string(i));
    }
  }
  return Array(std::move(h.shape), std::move(data));
}

Header read_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NpyError(ErrorKind::io, "cannot open " + path.string());
  std::vector<std::uint8_t> pre(kPreamble);
  in.read(reinterpret_cast<char*>(pre.data()), kPreamble);
  pre.resize(static_cast<std::size_t>(in.gcount()));
  if (pre.size() < kPreamble) {
    throw NpyError(ErrorKind::bad_magic, path.string() + ": not an NPY file (bad magic)");
  }
  std::size_t header_len = pre[8] | (static_cast<std::size_t>(pre[9]) << 8);
  pre.resize(kPreamble + header_len);
  in.read(reinterpret_cast<char*>(pre.data() + kPreamble), header_len);
  pre.resize(kPreamble + static_cast<std::size_t>(in.gcount()));
  return parse_header(pre.data(), pre.size());
}

Array read_array(const std::filesystem::path& path) {
  try {
    return decode(slurp(path));
  } catch (const NpyError& e) {
    if (e.kind() == ErrorKind::io) throw;
    throw NpyError(e.kind(), path.string() + ": " + e.what());
  }
}

void write_array(const std::filesystem::path& path, const Array& a, Dtype dtype) {
  auto bytes = encode(a, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw NpyError(ErrorKind::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw NpyError(ErrorKind::io, "write failed for " + path.string());
}

}  // namespace infocam::npy
