#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afrpn/common.hpp"
#include "afrpn/rng.hpp"

namespace afrpn {

// Dense N-d array of doubles. Feature maps use N x C x H x W layout.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  // NCHW accessors; no bounds checks, callers validate shapes up front.
  double& at4(int n, int c, int y, int x) {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double at4(int n, int c, int y, int x) const {
    return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
  }
  double& at3(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
  double at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }

  void fill(double v);
  void add_(const Tensor& other);  // elementwise, shapes must match
  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  static Tensor gaussian(std::vector<int> s, double stddev, Rng& rng);
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Trainable tensor with its gradient and SGD momentum buffer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor momentum;

  Parameter() = default;
  Parameter(std::string n, Tensor v);

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace afrpn
