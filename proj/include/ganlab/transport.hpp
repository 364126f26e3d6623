#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ganlab/approximator.hpp"
#include "ganlab/gan_train.hpp"
#include "ganlab/holder.hpp"
#include "ganlab/ipm.hpp"
#include "ganlab/numerics.hpp"

namespace ganlab::transport {

// Source distribution of a coupling: the uniform base or a synthesized
// density on the same box.
struct Source {
  int d = 1;
  std::optional<density::HolderDensity> dens;  // empty = uniform on [0,1]^d

  static Source uniform(int dim) { return Source{dim, std::nullopt}; }
  static Source from_density(density::HolderDensity pd) {
    Source s;
    s.d = pd.d;
    s.dens = std::move(pd);
    return s;
  }

  double B() const { return dens ? dens->B : 1.0; }
  double eval(const double* x) const { return dens ? dens->eval_unchecked(x) : 1.0; }
  double deriv1(double x, int order) const {
    if (!dens) return order == 0 ? 1.0 : 0.0;
    return dens->deriv(&x, order);
  }
  std::vector<double> sample(int n, std::uint64_t seed) const {
    if (dens) return density::sample(*dens, n, seed);
    return density::BaseDistribution{d}.sample(n, seed);
  }
};

// ---------------------------------------------------------------------------
// Poisson solve: lap u = p_mu - p_rho on the common box, homogeneous Neumann
// via mirrored boundary stencils, pinned to zero mean. Conjugate gradients in
// the trapezoid-weighted inner product (the mirrored operator is self-adjoint
// there and the right-hand side has zero weighted mean by compatibility).

struct PoissonSolution {
  int d = 1;
  int grid_n = 0;
  double h = 0.0;
  std::vector<double> u;        // grid_n or grid_n*grid_n values, row-major
  double residual = 0.0;        // max |lap_h u - f| over interior nodes
};

namespace detail {

inline void apply_neg_lap_1d(const std::vector<double>& u, std::vector<double>& out, int n,
                             double h) {
  const double ih2 = 1.0 / (h * h);
  out[0] = -(2.0 * u[1] - 2.0 * u[0]) * ih2;
  for (int i = 1; i + 1 < n; ++i)
    out[static_cast<std::size_t>(i)] =
        -(u[static_cast<std::size_t>(i - 1)] - 2.0 * u[static_cast<std::size_t>(i)] +
          u[static_cast<std::size_t>(i + 1)]) *
        ih2;
  out[static_cast<std::size_t>(n - 1)] =
      -(2.0 * u[static_cast<std::size_t>(n - 2)] - 2.0 * u[static_cast<std::size_t>(n - 1)]) * ih2;
}

inline void apply_neg_lap_2d(const std::vector<double>& u, std::vector<double>& out, int n,
                             double h) {
  const double ih2 = 1.0 / (h * h);
  auto at = [&](int i, int j) { return u[static_cast<std::size_t>(i) * n + j]; };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double ul = i > 0 ? at(i - 1, j) : at(i + 1, j);
      const double ur = i + 1 < n ? at(i + 1, j) : at(i - 1, j);
      const double ud = j > 0 ? at(i, j - 1) : at(i, j + 1);
      const double uu = j + 1 < n ? at(i, j + 1) : at(i, j - 1);
      out[static_cast<std::size_t>(i) * n + j] =
          -(ul + ur + ud + uu - 4.0 * at(i, j)) * ih2;
    }
}

}  // namespace detail

inline PoissonSolution solve_poisson(const Source& rho, const density::HolderDensity& mu,
                                     int grid_n) {
  if (rho.d != mu.d) throw std::domain_error("solve_poisson: dimension mismatch");
  if (std::abs(rho.B() - mu.B) > 1e-12)
    throw std::domain_error("solve_poisson: supports do not match");
  if (grid_n < 64) throw std::invalid_argument("solve_poisson: grid_n must be >= 64");
  const int d = mu.d;
  const int n = grid_n;
  const double h = mu.B / (n - 1);
  const std::size_t total = d == 1 ? static_cast<std::size_t>(n)
                                   : static_cast<std::size_t>(n) * static_cast<std::size_t>(n);

  std::vector<double> f(total), w(total);
  if (d == 1) {
    for (int i = 0; i < n; ++i) {
      const double x = i * h;
      f[static_cast<std::size_t>(i)] = mu.eval_unchecked(&x) - rho.eval(&x);
      w[static_cast<std::size_t>(i)] = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x[2] = {i * h, j * h};
        f[static_cast<std::size_t>(i) * n + j] = mu.eval_unchecked(x) - rho.eval(x);
        w[static_cast<std::size_t>(i) * n + j] =
            ((i == 0 || i == n - 1) ? 0.5 : 1.0) * ((j == 0 || j == n - 1) ? 0.5 : 1.0);
      }
  }

  double wsum = 0, fmean = 0;
  for (std::size_t i = 0; i < total; ++i) {
    wsum += w[i];
    fmean += w[i] * f[i];
  }
  fmean /= wsum;

  std::vector<double> rhs(total);
  for (std::size_t i = 0; i < total; ++i) rhs[i] = -(f[i] - fmean);

  auto wdot = [&](const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (std::size_t i = 0; i < total; ++i) s += w[i] * x[i] * y[i];
    return s;
  };
  auto apply = [&](const std::vector<double>& x, std::vector<double>& out) {
    if (d == 1)
      detail::apply_neg_lap_1d(x, out, n, h);
    else
      detail::apply_neg_lap_2d(x, out, n, h);
  };

  std::vector<double> u(total, 0.0), r = rhs, p = rhs, Ap(total);
  double rr = wdot(r, r);
  const double tol = 5e-9;
  const long long max_cg = 400LL * n + 4000;
  long long it = 0;
  for (; it < max_cg; ++it) {
    double rmax = 0;
    for (std::size_t i = 0; i < total; ++i) rmax = std::max(rmax, std::abs(r[i]));
    if (rmax <= tol) break;
    apply(p, Ap);
    const double alpha = rr / wdot(p, Ap);
    for (std::size_t i = 0; i < total; ++i) {
      u[i] += alpha * p[i];
      r[i] -= alpha * Ap[i];
    }
    const double rr_new = wdot(r, r);
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t i = 0; i < total; ++i) p[i] = r[i] + beta * p[i];
  }

  // pin to zero mean
  double umean = 0;
  for (std::size_t i = 0; i < total; ++i) umean += w[i] * u[i];
  umean /= wsum;
  for (std::size_t i = 0; i < total; ++i) u[i] -= umean;

  // interior residual against the unprojected right-hand side
  std::vector<double> lap(total);
  apply(u, lap);
  double res = 0;
  if (d == 1) {
    for (int i = 1; i + 1 < n; ++i)
      res = std::max(res, std::abs(-lap[static_cast<std::size_t>(i)] - f[static_cast<std::size_t>(i)]));
  } else {
    for (int i = 1; i + 1 < n; ++i)
      for (int j = 1; j + 1 < n; ++j)
        res = std::max(res, std::abs(-lap[static_cast<std::size_t>(i) * n + j] -
                                     f[static_cast<std::size_t>(i) * n + j]));
  }
  if (res > 1e-8)
    throw std::runtime_error("solve_poisson: no convergence, residual " + std::to_string(res) +
                             " after " + std::to_string(it) + " iterations");

  PoissonSolution sol;
  sol.d = d;
  sol.grid_n = n;
  sol.h = h;
  sol.u = std::move(u);
  sol.residual = res;
  return sol;
}

// ---------------------------------------------------------------------------
// Transport maps.

enum class Kind { monge1d, moser_flow };

struct TransportMap {
  int d = 1;
  Kind kind = Kind::monge1d;
  density::HolderDensity target;
  std::optional<density::HolderDensity> source;  // empty = uniform

  // monge1d
  MonotoneCubic interp;

  // moser_flow: node fields on the box grid
  int grid_n = 0;
  double h = 0.0;
  int rk_steps = 64;
  bool paper_literal_denominator = false;
  std::vector<double> grad_u;   // d=1: n ; d=2: 2*n*n (x-component then y-component)
  std::vector<double> p_rho_grid, p_mu_grid;

  double B() const { return target.B; }

  // linear / bilinear field interpolation
  double interp_grid(const std::vector<double>& grid, const double* x, int comp = 0) const {
    if (d == 1) {
      double s = std::clamp(x[0] / h, 0.0, static_cast<double>(grid_n - 1));
      const int i = std::min(grid_n - 2, static_cast<int>(s));
      const double t = s - i;
      return grid[static_cast<std::size_t>(i)] * (1 - t) + grid[static_cast<std::size_t>(i + 1)] * t;
    }
    const std::size_t off = static_cast<std::size_t>(comp) * grid_n * grid_n;
    double sx = std::clamp(x[0] / h, 0.0, static_cast<double>(grid_n - 1));
    double sy = std::clamp(x[1] / h, 0.0, static_cast<double>(grid_n - 1));
    const int i = std::min(grid_n - 2, static_cast<int>(sx));
    const int j = std::min(grid_n - 2, static_cast<int>(sy));
    const double tx = sx - i, ty = sy - j;
    auto at = [&](int a, int b) { return grid[off + static_cast<std::size_t>(a) * grid_n + b]; };
    return at(i, j) * (1 - tx) * (1 - ty) + at(i + 1, j) * tx * (1 - ty) +
           at(i, j + 1) * (1 - tx) * ty + at(i + 1, j + 1) * tx * ty;
  }

  void velocity(double t, const double* x, double* v) const {
    const double pr = interp_grid(p_rho_grid, x);
    const double pm = interp_grid(p_mu_grid, x);
    const double denom = paper_literal_denominator ? (1.0 - t) * pm + t * pr
                                                   : (1.0 - t) * pr + t * pm;
    for (int c = 0; c < d; ++c) v[c] = -interp_grid(grad_u, x, c) / denom;
  }

  // map application
  void apply_point(const double* z, double* out) const {
    if (kind == Kind::monge1d) {
      out[0] = interp(z[0]);
      return;
    }
    std::array<double, 2> x{z[0], d == 2 ? z[1] : 0.0};
    const double dt = 1.0 / rk_steps;
    std::array<double, 2> k1{}, k2{}, k3{}, k4{}, tmp{};
    for (int s = 0; s < rk_steps; ++s) {
      const double t = s * dt;
      velocity(t, x.data(), k1.data());
      for (int c = 0; c < d; ++c) tmp[static_cast<std::size_t>(c)] = x[static_cast<std::size_t>(c)] + 0.5 * dt * k1[static_cast<std::size_t>(c)];
      velocity(t + 0.5 * dt, tmp.data(), k2.data());
      for (int c = 0; c < d; ++c) tmp[static_cast<std::size_t>(c)] = x[static_cast<std::size_t>(c)] + 0.5 * dt * k2[static_cast<std::size_t>(c)];
      velocity(t + 0.5 * dt, tmp.data(), k3.data());
      for (int c = 0; c < d; ++c) tmp[static_cast<std::size_t>(c)] = x[static_cast<std::size_t>(c)] + dt * k3[static_cast<std::size_t>(c)];
      velocity(t + dt, tmp.data(), k4.data());
      for (int c = 0; c < d; ++c) {
        x[static_cast<std::size_t>(c)] += dt / 6.0 *
            (k1[static_cast<std::size_t>(c)] + 2 * k2[static_cast<std::size_t>(c)] +
             2 * k3[static_cast<std::size_t>(c)] + k4[static_cast<std::size_t>(c)]);
        x[static_cast<std::size_t>(c)] = std::clamp(x[static_cast<std::size_t>(c)], 0.0, B());
      }
    }
    for (int c = 0; c < d; ++c) out[c] = x[static_cast<std::size_t>(c)];
  }

  double apply1(double z) const {
    double out;
    apply_point(&z, &out);
    return out;
  }

  std::vector<double> apply(const std::vector<double>& pts) const {
    std::vector<double> out(pts.size());
    const std::size_t n = pts.size() / d;
    for (std::size_t i = 0; i < n; ++i) apply_point(&pts[i * d], &out[i * d]);
    return out;
  }
};

// Quantile coupling T = F_mu^{-1} o F_rho tabulated on 4096 knots with
// monotone cubic interpolation; the unique nondecreasing map pushing rho to mu.
inline TransportMap monge_1d(const Source& rho, const density::HolderDensity& mu,
                             int knots = 4096) {
  if (rho.d != 1 || mu.d != 1) throw std::invalid_argument("monge_1d: requires d = 1");
  const auto series = mu.as_series_1d();
  std::vector<double> zs(static_cast<std::size_t>(knots)), ts(static_cast<std::size_t>(knots));
  for (int i = 0; i < knots; ++i) {
    const double z = static_cast<double>(i) / (knots - 1);
    zs[static_cast<std::size_t>(i)] = z;
    double u;
    if (rho.dens)
      u = rho.dens->as_series_1d().cdf(z);
    else
      u = z;
    ts[static_cast<std::size_t>(i)] = series.quantile(std::clamp(u, 0.0, 1.0));
  }
  // enforce nondecreasing knot values against roundoff
  for (std::size_t i = 1; i < ts.size(); ++i) ts[i] = std::max(ts[i], ts[i - 1]);
  TransportMap T;
  T.d = 1;
  T.kind = Kind::monge1d;
  T.target = mu;
  if (rho.dens) T.source = rho.dens;
  T.interp = MonotoneCubic(zs, ts);
  return T;
}

// Time-1 flow of the velocity field v_t = -grad u / p_t with
// p_t = (1-t) p_rho + t p_mu (the interpolation that transports rho to mu;
// the reversed ordering is available behind the flag for comparison).
inline TransportMap moser_flow(const Source& rho, const density::HolderDensity& mu, int grid_n,
                               int rk_steps, bool paper_literal_denominator = false) {
  if (rho.d != mu.d) throw std::domain_error("moser_flow: dimension mismatch");
  if (rk_steps < 1) throw std::invalid_argument("moser_flow: rk_steps must be >= 1");
  PoissonSolution sol = solve_poisson(rho, mu, grid_n);
  const int d = mu.d, n = grid_n;
  const double h = sol.h;

  TransportMap T;
  T.d = d;
  T.kind = Kind::moser_flow;
  T.target = mu;
  if (rho.dens) T.source = rho.dens;
  T.grid_n = n;
  T.h = h;
  T.rk_steps = rk_steps;
  T.paper_literal_denominator = paper_literal_denominator;

  const std::size_t total = d == 1 ? static_cast<std::size_t>(n)
                                   : static_cast<std::size_t>(n) * static_cast<std::size_t>(n);
  T.p_rho_grid.resize(total);
  T.p_mu_grid.resize(total);
  if (d == 1) {
    for (int i = 0; i < n; ++i) {
      const double x = i * h;
      T.p_rho_grid[static_cast<std::size_t>(i)] = rho.eval(&x);
      T.p_mu_grid[static_cast<std::size_t>(i)] = mu.eval_unchecked(&x);
    }
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double x[2] = {i * h, j * h};
        T.p_rho_grid[static_cast<std::size_t>(i) * n + j] = rho.eval(x);
        T.p_mu_grid[static_cast<std::size_t>(i) * n + j] = mu.eval_unchecked(x);
      }
  }
  for (std::size_t i = 0; i < total; ++i)
    if (T.p_rho_grid[i] < 1e-6 || T.p_mu_grid[i] < 1e-6)
      throw std::runtime_error("moser_flow: density below 1e-6 on the grid");

  // gradient of u: central differences; the mirrored stencil makes the
  // boundary value zero, consistent with the no-flux condition
  if (d == 1) {
    T.grad_u.assign(total, 0.0);
    for (int i = 1; i + 1 < n; ++i)
      T.grad_u[static_cast<std::size_t>(i)] =
          (sol.u[static_cast<std::size_t>(i + 1)] - sol.u[static_cast<std::size_t>(i - 1)]) /
          (2 * h);
  } else {
    T.grad_u.assign(2 * total, 0.0);
    auto uat = [&](int i, int j) { return sol.u[static_cast<std::size_t>(i) * n + j]; };
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double gx = (i > 0 && i + 1 < n) ? (uat(i + 1, j) - uat(i - 1, j)) / (2 * h) : 0.0;
        const double gy = (j > 0 && j + 1 < n) ? (uat(i, j + 1) - uat(i, j - 1)) / (2 * h) : 0.0;
        T.grad_u[static_cast<std::size_t>(i) * n + j] = gx;
        T.grad_u[total + static_cast<std::size_t>(i) * n + j] = gy;
      }
  }
  return T;
}

// The literal frozen-point construction T(x) = int_0^1 xi(tau, x) dtau with
// xi = grad u / ((1-tau) p_mu + tau p_rho), kept for comparison only; it does
// not carry a pushforward guarantee.
inline std::vector<double> moser_integral_literal(const TransportMap& T, const double* x) {
  if (T.kind != Kind::moser_flow)
    throw std::invalid_argument("moser_integral_literal: needs a flow map");
  const double pr = T.interp_grid(T.p_rho_grid, x);
  const double pm = T.interp_grid(T.p_mu_grid, x);
  std::vector<double> out(static_cast<std::size_t>(T.d));
  for (int c = 0; c < T.d; ++c) {
    const double g = T.interp_grid(T.grad_u, x, c);
    out[static_cast<std::size_t>(c)] =
        simpson([&](double tau) { return g / ((1.0 - tau) * pm + tau * pr); }, 0.0, 1.0, 64);
  }
  return out;
}

// Numerical certificate for T_sharp rho = mu: exact 1D CDF distance of the
// pushed sample, entropic surrogate against exact target samples in 2D.
inline double verify_pushforward(const TransportMap& T, const Source& rho,
                                 const density::HolderDensity& mu, int n_samples,
                                 std::uint64_t seed = 0x5eedULL) {
  if (T.d == 1) {
    auto zs = rho.sample(n_samples, seed);
    ipm::PointCloud pushed = ipm::make_cloud_1d(T.apply(zs));
    return ipm::w1_vs_density_1d(pushed, mu).value;
  }
  const int n2 = std::min(n_samples, 2048);
  auto zs = rho.sample(n2, seed);
  ipm::PointCloud pushed;
  pushed.d = 2;
  pushed.pts = T.apply(zs);
  ipm::PointCloud ref;
  ref.d = 2;
  ref.pts = density::sample(mu, n2, mix_seed(seed, 0xabcdULL));
  const double diam = mu.B * std::sqrt(2.0);
  return ipm::sinkhorn_w1(pushed, ref, 1e-3 * diam).value;
}

// Derivative-aware approximation target for a coupling coordinate. The
// quantile coupling exposes closed-form first and second derivatives through
// the densities; flow maps fall back to finite differences.
inline approx::Target as_approx_target(const TransportMap& T, int coord = 0) {
  approx::Target f;
  f.d = T.d;
  if (T.kind == Kind::monge1d) {
    const TransportMap* map = &T;
    f.value = [map](const double* x) { return map->interp(x[0]); };
    f.deriv = [map](const double* x, const int* nu) -> double {
      const int order = nu[0];
      auto d1 = [map](double z) {
        const double t = map->interp(z);
        const double pr = map->source ? map->source->eval_unchecked(&z) : 1.0;
        const double pm = map->target.eval_unchecked(&t);
        return pr / pm;
      };
      auto d2 = [map, d1](double z) {
        const double t = map->interp(z);
        const double tp = d1(z);
        const double pr = map->source ? map->source->eval_unchecked(&z) : 1.0;
        const double prd = map->source ? map->source->deriv(&z, 1) : 0.0;
        const double pm = map->target.eval_unchecked(&t);
        const double pmd = map->target.deriv(&t, 1);
        return tp * (prd / pr - pmd * tp / pm);
      };
      switch (order) {
        case 0:
          return map->interp(x[0]);
        case 1:
          return d1(x[0]);
        case 2:
          return d2(x[0]);
        default: {
          // higher orders by differencing the analytic second derivative
          const double h = 1e-4;
          std::function<double(double, int)> rec = [&](double z, int extra) -> double {
            if (extra == 0) return d2(z);
            return (rec(z + h, extra - 1) - rec(z - h, extra - 1)) / (2 * h);
          };
          return rec(x[0], order - 2);
        }
      }
    };
  } else {
    const TransportMap* map = &T;
    const int c = coord;
    f.value = [map, c](const double* x) {
      std::array<double, 2> in{std::clamp(x[0], 0.0, map->B()),
                               map->d == 2 ? std::clamp(x[1], 0.0, map->B()) : 0.0};
      std::array<double, 2> out{};
      map->apply_point(in.data(), out.data());
      return out[static_cast<std::size_t>(c)];
    };
  }
  return f;
}

// ---------------------------------------------------------------------------
// serialization: knots for quantile maps, node fields for flow maps

inline nlohmann::json to_json(const TransportMap& T) {
  nlohmann::json j;
  j["d"] = T.d;
  j["kind"] = T.kind == Kind::monge1d ? "monge1d" : "moser_flow";
  j["target"] = density::to_json(T.target);
  if (T.source) j["source"] = density::to_json(*T.source);
  if (T.kind == Kind::monge1d) {
    j["knots"] = T.interp.knots();
    j["values"] = T.interp.values();
  } else {
    j["grid_n"] = T.grid_n;
    j["h"] = T.h;
    j["rk_steps"] = T.rk_steps;
    j["paper_literal_denominator"] = T.paper_literal_denominator;
    j["grad_u"] = T.grad_u;
    j["p_rho"] = T.p_rho_grid;
    j["p_mu"] = T.p_mu_grid;
  }
  return j;
}

inline TransportMap transport_from_json(const nlohmann::json& j) {
  TransportMap T;
  T.d = j.at("d").get<int>();
  T.kind = j.at("kind").get<std::string>() == "monge1d" ? Kind::monge1d : Kind::moser_flow;
  T.target = density::density_from_json(j.at("target"));
  if (j.contains("source")) T.source = density::density_from_json(j.at("source"));
  if (T.kind == Kind::monge1d) {
    T.interp = MonotoneCubic(j.at("knots").get<std::vector<double>>(),
                             j.at("values").get<std::vector<double>>());
  } else {
    T.grid_n = j.at("grid_n").get<int>();
    T.h = j.at("h").get<double>();
    T.rk_steps = j.at("rk_steps").get<int>();
    T.paper_literal_denominator = j.at("paper_literal_denominator").get<bool>();
    T.grad_u = j.at("grad_u").get<std::vector<double>>();
    T.p_rho_grid = j.at("p_rho").get<std::vector<double>>();
    T.p_mu_grid = j.at("p_mu").get<std::vector<double>>();
  }
  return T;
}

inline void save_transport(const TransportMap& T, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_transport: cannot open " + path);
  out << to_json(T).dump() << "\n";
}

inline TransportMap load_transport(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_transport: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return transport_from_json(j);
}

}  // namespace ganlab::transport

namespace ganlab::train {

// Generator initialization at the constructive approximation of a coupling:
// each coordinate is approximated separately and the single-output networks
// are stacked into one d-output map with a clipping stage at the box bound.
inline net::Network warm_start_from_transport(const transport::TransportMap& T,
                                              const approx::ApproxPlan& plan) {
  if (plan.d != T.d)
    throw std::invalid_argument("warm_start_from_transport: plan/map dimension mismatch");
  const double B = T.B();
  std::vector<net::Network> coords;
  for (int c = 0; c < T.d; ++c)
    coords.push_back(approx::approximate_raw(transport::as_approx_target(T, c), plan));
  net::Network stacked = T.d == 1 ? std::move(coords.front()) : approx::stack_coordinates(coords);
  approx::rescale_weights_to(stacked, std::max(1.0, B));
  stacked.clip_bound = B;
  stacked.finalize();
  return stacked;
}

}  // namespace ganlab::train
