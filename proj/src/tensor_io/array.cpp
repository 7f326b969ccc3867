#include "infocam/array.hpp"

#include <cmath>
#include <sstream>

namespace infocam {

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

Array::Array(Shape shape) : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}

Array::Array(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw std::invalid_argument("Array: shape " + shape_to_string(shape_) + " does not match " +
                                std::to_string(data_.size()) + " elements");
  }
}

Array::Array(Shape shape, std::initializer_list<double> data)
    : Array(std::move(shape), std::vector<double>(data)) {}

Array Array::reshaped(Shape shape) const { return Array(std::move(shape), data_); }

bool Array::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace infocam
