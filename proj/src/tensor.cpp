#include "realm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "realm/error.hpp"

namespace realm {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_numel(shape)) {
    throw Error(ErrorCode::ShapeMismatch, "value count " + std::to_string(data.size()) +
                                              " does not match shape " + shape_str(shape));
  }
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::abs_max() const {
  double m = 0.0;
  for (double v : data) m = std::max(m, std::abs(v));
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data) s += v;
  return s;
}

}  // namespace realm
