#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

namespace ganlab {

// Largest integer strictly smaller than x (so an integer maps to itself
// minus one). This is the floor convention used throughout for smoothness
// indices: the top Taylor order of a class with index b is strict_floor(b).
inline int strict_floor(double x) {
  double f = std::floor(x);
  if (f == x) f -= 1.0;
  return static_cast<int>(f);
}

// Composite Simpson on [a, b] with `panels` panels (panels made even).
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      int panels) {
  if (panels < 2) panels = 2;
  if (panels % 2 != 0) ++panels;
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int i = 1; i < panels; ++i) {
    const double x = a + h * i;
    s += f(x) * (i % 2 == 0 ? 2.0 : 4.0);
  }
  return s * h / 3.0;
}

// Ordinary least squares y = intercept + slope * x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  // 95% normal-approximation interval for the slope
  double slope_lo = 0.0;
  double slope_hi = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2) throw std::invalid_argument("fit_line: need >= 2 points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit out;
  out.slope = sxy / sxx;
  out.intercept = my - out.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (out.intercept + out.slope * x[i]);
    rss += r * r;
  }
  const double dof = n > 2 ? static_cast<double>(n - 2) : 1.0;
  out.slope_stderr = std::sqrt(rss / dof / sxx);
  out.slope_lo = out.slope - 1.96 * out.slope_stderr;
  out.slope_hi = out.slope + 1.96 * out.slope_stderr;
  return out;
}

// Bisection solve for f(x) = target on [lo, hi]; f must be nondecreasing.
inline double bisect_increasing(const std::function<double(double)>& f, double lo,
                                double hi, double target, double tol = 1e-12) {
  double flo = f(lo) - target;
  if (flo >= 0.0) return lo;
  if (f(hi) - target <= 0.0) return hi;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) - target <= 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Monotone piecewise-cubic interpolant (Fritsch-Carlson). Preserves
// monotonicity of the knot values, which plain cubic splines do not.
class MonotoneCubic {
 public:
  MonotoneCubic() = default;
  MonotoneCubic(std::vector<double> xs, std::vector<double> ys)
      : x_(std::move(xs)), y_(std::move(ys)) {
    const std::size_t n = x_.size();
    if (n < 2 || n != y_.size())
      throw std::invalid_argument("MonotoneCubic: need >= 2 knots");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1]))
        throw std::invalid_argument("MonotoneCubic: knots must increase");
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i + 1 < n; ++i)
      d[i] = (y_[i + 1] - y_[i]) / (x_[i + 1] - x_[i]);
    m_.assign(n, 0.0);
    m_[0] = d[0];
    m_[n - 1] = d[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
      if (d[i - 1] * d[i] <= 0.0)
        m_[i] = 0.0;
      else
        m_[i] = 0.5 * (d[i - 1] + d[i]);
    }
    // limiter: keep |m| within 3x the adjacent secant slopes
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (d[i] == 0.0) {
        m_[i] = m_[i + 1] = 0.0;
      } else {
        const double a = m_[i] / d[i], b = m_[i + 1] / d[i];
        const double s = a * a + b * b;
        if (s > 9.0) {
          const double t = 3.0 / std::sqrt(s);
          m_[i] = t * a * d[i];
          m_[i + 1] = t * b * d[i];
        }
      }
    }
  }

  double operator()(double x) const {
    const std::size_t n = x_.size();
    if (x <= x_.front()) return y_.front() + m_.front() * (x - x_.front());
    if (x >= x_.back()) return y_.back() + m_.back() * (x - x_.back());
    std::size_t i =
        static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double t2 = t * t, t3 = t2 * t;
    const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
    const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
    return h00 * y_[i] + h10 * h * m_[i] + h01 * y_[i + 1] + h11 * h * m_[i + 1];
  }

  double derivative(double x) const {
    const std::size_t n = x_.size();
    if (x <= x_.front()) return m_.front();
    if (x >= x_.back()) return m_.back();
    std::size_t i =
        static_cast<std::size_t>(std::upper_bound(x_.begin(), x_.end(), x) - x_.begin()) - 1;
    const double h = x_[i + 1] - x_[i];
    const double t = (x - x_[i]) / h;
    const double dh00 = (6 * t * t - 6 * t) / h, dh10 = (3 * t * t - 4 * t + 1);
    const double dh01 = (-6 * t * t + 6 * t) / h, dh11 = (3 * t * t - 2 * t);
    return dh00 * y_[i] + dh10 * m_[i] + dh01 * y_[i + 1] + dh11 * m_[i + 1];
  }

  const std::vector<double>& knots() const { return x_; }
  const std::vector<double>& values() const { return y_; }

 private:
  std::vector<double> x_, y_, m_;
};

}  // namespace ganlab
