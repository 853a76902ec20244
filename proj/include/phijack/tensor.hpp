#pragma once

#include <string>
#include <vector>

#include "phijack/rng.hpp"

namespace phijack {

// Dense row-major matrix of doubles. Vectors are 1 x n.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return v[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<size_t>(r) * cols + c]; }
  size_t len() const { return v.size(); }

  static Tensor gaussian(int r, int c, double stddev, RandomStream& rng) {
    Tensor t(r, c);
    for (double& x : t.v) x = stddev * rng.gaussian();
    return t;
  }

  static Tensor fill(int r, int c, double value) {
    Tensor t(r, c);
    for (double& x : t.v) x = value;
    return t;
  }
};

// Named parameter reference, used for binding weights into graphs and for
// checkpoint serialization order.
struct ParamRef {
  std::string name;
  Tensor* tensor;
};

}  // namespace phijack
