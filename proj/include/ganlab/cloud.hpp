#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ganlab::ipm {

// A weighted sample cloud in R^d. Points stored row-major (n x d); an empty
// weight vector means uniform 1/n.
struct PointCloud {
  int d = 1;
  std::vector<double> pts;
  std::vector<double> weights;

  int size() const { return static_cast<int>(pts.size()) / d; }
  const double* point(int i) const { return pts.data() + static_cast<std::size_t>(i) * d; }
  double weight(int i) const {
    return weights.empty() ? 1.0 / size() : weights[static_cast<std::size_t>(i)];
  }

  // weights nonnegative and summing to 1 (within 1e-12)
  void check() const {
    if (d <= 0 || pts.size() % static_cast<std::size_t>(d) != 0)
      throw std::invalid_argument("PointCloud: bad shape");
    if (!weights.empty()) {
      if (weights.size() != static_cast<std::size_t>(size()))
        throw std::invalid_argument("PointCloud: weight count mismatch");
      double s = 0;
      for (double w : weights) {
        if (w < 0) throw std::invalid_argument("PointCloud: negative weight");
        s += w;
      }
      if (std::abs(s - 1.0) > 1e-12)
        throw std::invalid_argument("PointCloud: weights must sum to 1");
    }
  }
};

inline PointCloud make_cloud_1d(std::vector<double> xs) {
  PointCloud c;
  c.d = 1;
  c.pts = std::move(xs);
  return c;
}

}  // namespace ganlab::ipm
