#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ganlab/numerics.hpp"
#include "ganlab/rng.hpp"

namespace ganlab::density {

inline constexpr double kPi = std::numbers::pi;

// Easy-to-sample latent distribution: uniform on [0,1]^d.
struct BaseDistribution {
  int d = 1;
  std::vector<double> sample(int n, std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<double> out(static_cast<std::size_t>(n) * d);
    for (auto& v : out) v = rng.uniform();
    return out;
  }
};

namespace detail {

// 1D cosine density p(y) = c0 + sum_k a_k cos(pi k y) on [0,1]; every mode
// integrates to zero so c0 is also the total mass.
struct CosineSeries1D {
  double c0 = 1.0;
  std::vector<double> a;  // a[k-1] multiplies cos(pi k y)

  double eval(double y) const {
    double s = c0;
    for (std::size_t k = 0; k < a.size(); ++k)
      s += a[k] * std::cos(kPi * (k + 1) * y);
    return s;
  }

  // s-th derivative: d^s/dy^s cos(pi k y) = (pi k)^s cos(pi k y + s pi/2)
  double deriv(double y, int s) const {
    if (s == 0) return eval(y);
    double out = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = kPi * (k + 1);
      out += a[k] * std::pow(w, s) * std::cos(w * y + s * kPi / 2.0);
    }
    return out;
  }

  // antiderivative with F(0) = 0
  double cdf(double y) const {
    double s = c0 * y;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double w = kPi * (k + 1);
      s += a[k] * std::sin(w * y) / w;
    }
    return s;
  }

  double quantile(double u) const {
    return bisect_increasing([this](double y) { return cdf(y); }, 0.0, 1.0, u, 1e-13);
  }
};

}  // namespace detail

// Synthetic density on [0, B]^d built from a finite cosine series, scaled so
// that it stays above tau, integrates to one, and has smoothness-class norm
// at most one for the given index alpha.
//
// coeffs layout: d=1 -> a_k for k=1..k_max; d=2 -> (k_max+1)^2 row-major over
// frequency pairs (k1,k2) with the (0,0) slot unused.
struct HolderDensity {
  int d = 1;
  double alpha = 1.0;
  double tau = 0.1;
  double B = 1.0;
  std::vector<double> coeffs;
  double normalizer = 1.0;

  int k_max() const {
    if (d == 1) return static_cast<int>(coeffs.size());
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(coeffs.size()))));
    return side - 1;
  }

  double coeff2(int k1, int k2) const {
    const int side = k_max() + 1;
    return coeffs[static_cast<std::size_t>(k1) * side + k2];
  }

  bool in_support(const double* x) const {
    for (int j = 0; j < d; ++j)
      if (x[j] < 0.0 || x[j] > B) return false;
    return true;
  }

  double eval(const double* x) const {
    if (!in_support(x)) throw std::domain_error("HolderDensity: point outside support");
    return eval_unchecked(x);
  }

  double eval_unchecked(const double* x) const {
    if (d == 1) {
      double s = normalizer;
      for (std::size_t k = 0; k < coeffs.size(); ++k)
        s += coeffs[k] * std::cos(kPi * (k + 1) * x[0]);
      return s;
    }
    const int side = k_max() + 1;
    double s = normalizer;
    for (int k1 = 0; k1 < side; ++k1)
      for (int k2 = 0; k2 < side; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        const double a = coeff2(k1, k2);
        if (a == 0.0) continue;
        s += a * std::cos(kPi * k1 * x[0]) * std::cos(kPi * k2 * x[1]);
      }
    return s;
  }

  // partial derivative of order (s1, s2); d=1 uses s1 only
  double deriv(const double* x, int s1, int s2 = 0) const {
    if (d == 1) {
      if (s1 == 0) return eval_unchecked(x);
      double out = 0;
      for (std::size_t k = 0; k < coeffs.size(); ++k) {
        const double w = kPi * (k + 1);
        out += coeffs[k] * std::pow(w, s1) * std::cos(w * x[0] + s1 * kPi / 2.0);
      }
      return out;
    }
    if (s1 == 0 && s2 == 0) return eval_unchecked(x);
    const int side = k_max() + 1;
    double out = 0;
    for (int k1 = 0; k1 < side; ++k1)
      for (int k2 = 0; k2 < side; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        const double a = coeff2(k1, k2);
        if (a == 0.0) continue;
        const double w1 = kPi * k1, w2 = kPi * k2;
        double t1 = (s1 == 0) ? std::cos(w1 * x[0])
                              : std::pow(w1, s1) * std::cos(w1 * x[0] + s1 * kPi / 2.0);
        double t2 = (s2 == 0) ? std::cos(w2 * x[1])
                              : std::pow(w2, s2) * std::cos(w2 * x[1] + s2 * kPi / 2.0);
        out += a * t1 * t2;
      }
    return out;
  }

  detail::CosineSeries1D as_series_1d() const {
    if (d != 1) throw std::invalid_argument("as_series_1d: density is not 1D");
    return detail::CosineSeries1D{normalizer, coeffs};
  }

  // marginal in x1 (d=2): the modes with k2 >= 1 integrate out
  detail::CosineSeries1D marginal_x1() const {
    if (d != 2) throw std::invalid_argument("marginal_x1: density is not 2D");
    const int side = k_max() + 1;
    detail::CosineSeries1D s;
    s.c0 = normalizer;
    s.a.assign(static_cast<std::size_t>(side - 1), 0.0);
    for (int k1 = 1; k1 < side; ++k1) s.a[static_cast<std::size_t>(k1 - 1)] = coeff2(k1, 0);
    return s;
  }

  // conditional density of x2 given x1 (d=2), itself a cosine series
  detail::CosineSeries1D conditional_x2(double x1) const {
    if (d != 2) throw std::invalid_argument("conditional_x2: density is not 2D");
    const int side = k_max() + 1;
    double px = normalizer;
    for (int k1 = 1; k1 < side; ++k1) px += coeff2(k1, 0) * std::cos(kPi * k1 * x1);
    detail::CosineSeries1D s;
    s.c0 = 1.0;
    s.a.assign(static_cast<std::size_t>(side - 1), 0.0);
    for (int k2 = 1; k2 < side; ++k2) {
      double bk = 0;
      for (int k1 = 0; k1 < side; ++k1)
        bk += coeff2(k1, k2) * std::cos(kPi * k1 * x1);
      s.a[static_cast<std::size_t>(k2 - 1)] = bk / px;
    }
    return s;
  }
};

inline double eval_density(const HolderDensity& pd, const double* x) { return pd.eval(x); }
inline double eval_density(const HolderDensity& pd, double x) { return pd.eval(&x); }

inline double cdf_1d(const HolderDensity& pd, double x) {
  if (pd.d != 1) throw std::invalid_argument("cdf_1d: density is not 1D");
  if (x < 0.0 || x > pd.B) throw std::domain_error("cdf_1d: point outside support");
  return pd.as_series_1d().cdf(x);
}

inline double quantile_1d(const HolderDensity& pd, double u) {
  if (pd.d != 1) throw std::invalid_argument("quantile_1d: density is not 1D");
  if (u < 0.0 || u > 1.0) throw std::invalid_argument("quantile_1d: u outside [0,1]");
  return pd.as_series_1d().quantile(u);
}

// Exact sampling: inverse CDF in 1D; marginal-then-conditional in 2D.
// Deterministic in the seed; returns n*d values row-major.
inline std::vector<double> sample(const HolderDensity& pd, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n) * pd.d);
  if (pd.d == 1) {
    const auto s = pd.as_series_1d();
    for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = s.quantile(rng.uniform());
    return out;
  }
  const auto m1 = pd.marginal_x1();
  for (int i = 0; i < n; ++i) {
    const double x1 = m1.quantile(rng.uniform());
    const double x2 = pd.conditional_x2(x1).quantile(rng.uniform());
    out[static_cast<std::size_t>(i) * 2] = x1;
    out[static_cast<std::size_t>(i) * 2 + 1] = x2;
  }
  return out;
}

struct InvariantReport {
  double min_density = 0.0;
  double integral = 0.0;
  double holder_seminorm = 0.0;
  bool lower_bound_ok = false;
  bool integral_ok = false;
  bool holder_ok = false;
  bool pass() const { return lower_bound_ok && integral_ok && holder_ok; }
};

// Numerical re-verification on a 512^d grid: density floor, unit mass by
// composite trapezoid, and a finite-difference estimate of the top-order
// smoothness quotient.
inline InvariantReport check_invariants(const HolderDensity& pd, int grid = 512) {
  InvariantReport rep;
  const int t = std::max(0, strict_floor(pd.alpha));
  const double gamma = pd.alpha - t;
  const double h = pd.B / (grid - 1);

  if (pd.d == 1) {
    std::vector<double> p(static_cast<std::size_t>(grid));
    double mn = 1e300, integral = 0;
    for (int i = 0; i < grid; ++i) {
      const double x = i * h;
      p[static_cast<std::size_t>(i)] = pd.eval_unchecked(&x);
      mn = std::min(mn, p[static_cast<std::size_t>(i)]);
      integral += p[static_cast<std::size_t>(i)] * ((i == 0 || i == grid - 1) ? 0.5 : 1.0);
    }
    integral *= h;
    // t-fold central differencing, then the Holder quotient over all pairs
    std::vector<double> dt = p;
    for (int s = 0; s < t; ++s) {
      std::vector<double> nxt(dt.size());
      for (std::size_t i = 0; i < dt.size(); ++i) {
        if (i == 0)
          nxt[i] = (dt[i + 1] - dt[i]) / h;
        else if (i + 1 == dt.size())
          nxt[i] = (dt[i] - dt[i - 1]) / h;
        else
          nxt[i] = (dt[i + 1] - dt[i - 1]) / (2 * h);
      }
      dt.swap(nxt);
    }
    double semi = 0;
    for (int i = 0; i < grid; ++i)
      for (int j = i + 1; j < grid; ++j) {
        const double dist = (j - i) * h;
        semi = std::max(semi, std::abs(dt[static_cast<std::size_t>(i)] -
                                       dt[static_cast<std::size_t>(j)]) /
                                  std::pow(dist, gamma));
      }
    rep.min_density = mn;
    rep.integral = integral;
    rep.holder_seminorm = semi;
  } else {
    double mn = 1e300, integral = 0;
    std::vector<double> dx(static_cast<std::size_t>(grid) * grid);
    for (int i = 0; i < grid; ++i)
      for (int j = 0; j < grid; ++j) {
        const double x[2] = {i * h, j * h};
        const double v = pd.eval_unchecked(x);
        dx[static_cast<std::size_t>(i) * grid + j] = v;
        mn = std::min(mn, v);
        const double wi = (i == 0 || i == grid - 1) ? 0.5 : 1.0;
        const double wj = (j == 0 || j == grid - 1) ? 0.5 : 1.0;
        integral += v * wi * wj;
      }
    integral *= h * h;
    rep.min_density = mn;
    rep.integral = integral;
    // top-order partials evaluated analytically on a coarser grid, quotient
    // over axis-adjacent and seeded random pairs
    const int g2 = 128;
    const double h2 = pd.B / (g2 - 1);
    double semi = 0;
    auto quot = [&](const double* xa, const double* xb) {
      const double dist = std::hypot(xa[0] - xb[0], xa[1] - xb[1]);
      if (dist == 0.0) return;
      for (int s1 = 0; s1 <= t; ++s1) {
        const int s2 = t - s1;
        const double q =
            std::abs(pd.deriv(xa, s1, s2) - pd.deriv(xb, s1, s2)) / std::pow(dist, gamma);
        semi = std::max(semi, q);
      }
    };
    for (int i = 0; i < g2; ++i)
      for (int j = 0; j < g2; ++j) {
        const double xa[2] = {i * h2, j * h2};
        if (i + 1 < g2) {
          const double xb[2] = {(i + 1) * h2, j * h2};
          quot(xa, xb);
        }
        if (j + 1 < g2) {
          const double xb[2] = {i * h2, (j + 1) * h2};
          quot(xa, xb);
        }
      }
    Rng rng(0xC0FFEE);
    for (int r = 0; r < 50000; ++r) {
      const double xa[2] = {rng.uniform() * pd.B, rng.uniform() * pd.B};
      const double xb[2] = {rng.uniform() * pd.B, rng.uniform() * pd.B};
      quot(xa, xb);
    }
    rep.holder_seminorm = semi;
  }
  rep.lower_bound_ok = rep.min_density >= pd.tau;
  rep.integral_ok = std::abs(rep.integral - 1.0) <= 1e-6;
  rep.holder_ok = rep.holder_seminorm <= 1.0 + 1e-3;
  return rep;
}

// Draws raw cosine coefficients with geometric decay, then rescales them by
// the worst constraint ratio so the class invariants hold by construction:
//   sum |a| <= 1 - tau            (density floor)
//   M_s     <= 1 for s = 1..t+1   (derivative magnitudes, M_s = sum |a| (pi kbar)^s)
//   2 M_t   <= 1 when d >= 2      (pairs farther apart than 1)
inline HolderDensity synthesize(std::uint64_t seed, int d, double alpha, double tau,
                                int k_max = 8) {
  if (d != 1 && d != 2) throw std::invalid_argument("synthesize: d must be 1 or 2");
  if (!(alpha > 0)) throw std::invalid_argument("synthesize: alpha must be positive");
  if (!(tau > 0) || tau >= 1.0)
    throw std::invalid_argument("synthesize: tau must lie in (0,1) on the unit box");
  if (k_max < 1) throw std::invalid_argument("synthesize: k_max must be >= 1");

  HolderDensity pd;
  pd.d = d;
  pd.alpha = alpha;
  pd.tau = tau;
  pd.B = 1.0;
  pd.normalizer = 1.0;

  Rng rng(seed);
  std::vector<double> kbar;  // max frequency per coefficient
  if (d == 1) {
    pd.coeffs.resize(static_cast<std::size_t>(k_max));
    for (int k = 1; k <= k_max; ++k) {
      pd.coeffs[static_cast<std::size_t>(k - 1)] =
          rng.uniform(-1.0, 1.0) * std::pow(0.5, k - 1);
      kbar.push_back(k);
    }
  } else {
    const int side = k_max + 1;
    pd.coeffs.assign(static_cast<std::size_t>(side) * side, 0.0);
    for (int k1 = 0; k1 < side; ++k1)
      for (int k2 = 0; k2 < side; ++k2) {
        if (k1 == 0 && k2 == 0) continue;
        pd.coeffs[static_cast<std::size_t>(k1) * side + k2] =
            rng.uniform(-1.0, 1.0) * std::pow(0.5, k1 + k2 - 1);
        kbar.push_back(std::max(k1, k2));
      }
  }

  const int t = std::max(0, strict_floor(alpha));
  auto moment = [&](int s) {
    double m = 0;
    std::size_t idx = 0;
    for (std::size_t i = 0; i < pd.coeffs.size(); ++i) {
      if (d == 2 && i == 0) continue;  // (0,0) slot in 2D
      const double a = std::abs(pd.coeffs[i]);
      if (a == 0.0) {
        ++idx;
        continue;
      }
      m += a * std::pow(kPi * kbar[idx], s);
      ++idx;
    }
    return m;
  };

  const double margin = 0.999;
  double worst = 1.0;
  worst = std::max(worst, moment(0) / ((1.0 - tau) * margin));
  for (int s = 1; s <= t + 1; ++s) worst = std::max(worst, moment(s) / margin);
  if (d >= 2) worst = std::max(worst, 2.0 * moment(t) / margin);
  for (auto& a : pd.coeffs) a /= worst;
  return pd;
}

// Fixture file {d, alpha, tau, B, coeffs, normalizer}.
inline nlohmann::json to_json(const HolderDensity& pd) {
  nlohmann::json j;
  j["d"] = pd.d;
  j["alpha"] = pd.alpha;
  j["tau"] = pd.tau;
  j["B"] = pd.B;
  j["coeffs"] = pd.coeffs;
  j["normalizer"] = pd.normalizer;
  return j;
}

inline HolderDensity density_from_json(const nlohmann::json& j) {
  HolderDensity pd;
  pd.d = j.at("d").get<int>();
  pd.alpha = j.at("alpha").get<double>();
  pd.tau = j.at("tau").get<double>();
  pd.B = j.at("B").get<double>();
  pd.coeffs = j.at("coeffs").get<std::vector<double>>();
  pd.normalizer = j.at("normalizer").get<double>();
  return pd;
}

inline void save_density(const HolderDensity& pd, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_density: cannot open " + path);
  out << to_json(pd).dump(1) << "\n";
}

inline HolderDensity load_density(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_density: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return density_from_json(j);
}

}  // namespace ganlab::density
