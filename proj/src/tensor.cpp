#include "afrpn/tensor.hpp"

#include <numeric>
#include <sstream>

namespace afrpn {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<int> s, double fill_v) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), fill_v);
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

void Tensor::add_(const Tensor& other) {
  if (!same_shape(other))
    throw ShapeError("add_: shape mismatch " + shape_str(shape) + " vs " +
                     shape_str(other.shape));
  for (size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
}

Tensor Tensor::gaussian(std::vector<int> s, double stddev, Rng& rng) {
  Tensor t(std::move(s));
  for (double& v : t.data) v = stddev * rng.gaussian();
  return t;
}

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
  grad = Tensor(value.shape, 0.0);
  momentum = Tensor(value.shape, 0.0);
}

}  // namespace afrpn
