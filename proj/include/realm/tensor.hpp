#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace realm {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major double tensor. Rank is whatever `shape` says; the
/// accessors below cover the 1/2/3-d layouts used throughout.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  double at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  std::span<double> row(int i) { return {data.data() + static_cast<std::size_t>(i) * shape.back(), static_cast<std::size_t>(shape.back())}; }
  std::span<const double> row(int i) const { return {data.data() + static_cast<std::size_t>(i) * shape.back(), static_cast<std::size_t>(shape.back())}; }

  bool all_finite() const;
  double abs_max() const;
  double sum() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

}  // namespace realm
