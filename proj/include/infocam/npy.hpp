#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "infocam/array.hpp"

namespace infocam::npy {

enum class Dtype { f32, f64 };

std::string dtype_descr(Dtype d);  // "<f4" / "<f8"
Dtype dtype_from_descr(const std::string& descr);

enum class ErrorKind {
  io,
  bad_magic,
  unsupported_version,
  bad_header,
  unsupported_dtype,
  truncated,
  non_finite,
};

const char* error_kind_name(ErrorKind kind);

class NpyError : public DataError {
 public:
  NpyError(ErrorKind kind, const std::string& what);
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct Header {
  Dtype dtype = Dtype::f64;
  Shape shape;
  std::size_t payload_offset = 0;
};

/// Encodes an NPY v1.0 file image in memory.
std::vector<std::uint8_t> encode(const Array& a, Dtype dtype);

/// Decodes an NPY v1.0 image; f32 payloads are widened to f64.
Array decode(const std::vector<std::uint8_t>& bytes);

Header read_header(const std::filesystem::path& path);

Array read_array(const std::filesystem::path& path);

/// Writes `a` as NPY v1.0. f64 -> f32 narrowing rounds to nearest even.
void write_array(const std::filesystem::path& path, const Array& a, Dtype dtype = Dtype::f64);

}  // namespace infocam::npy
