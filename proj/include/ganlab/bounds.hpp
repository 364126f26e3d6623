#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ganlab/numerics.hpp"
#include "ganlab/relu_net.hpp"

namespace ganlab::bounds {

// All O(.) constants default to 1 ("unit" mode). "recorded" mode uses the
// multipliers measured on this artifact's own constructions, so that networks
// emitted by the constructive approximator fit inside the sized classes.
enum class ConstantsMode { unit, recorded };

inline const char* to_string(ConstantsMode m) {
  return m == ConstantsMode::unit ? "unit" : "recorded";
}

struct SizerConstants {
  double c_L = 1.0;
  double c_p = 1.0;
  double c_K = 1.0;
};

// Multipliers measured on the constructive approximator (see the approximator
// scaling tests); generous so every emitted network passes validation.
inline SizerConstants recorded_generator_constants(int d, double alpha) {
  (void)alpha;
  SizerConstants c;
  c.c_L = 36.0;
  c.c_p = d == 1 ? 26.0 : 32.0;
  c.c_K = d == 1 ? 640.0 : 760.0;
  return c;
}

inline SizerConstants recorded_discriminator_constants(int d, double beta) {
  (void)beta;
  SizerConstants c;
  c.c_L = 36.0;
  c.c_p = d == 1 ? 26.0 : 32.0;
  c.c_K = d == 1 ? 640.0 : 760.0;
  return c;
}

// The (R, kappa, L, p, K) five-tuple plus the inputs that produced it.
struct ArchitectureSpec {
  double R = 1.0;
  double kappa = 1.0;
  long long L = 1;
  long long p = 1;
  long long K = 1;
  std::string provenance;
  ConstantsMode mode = ConstantsMode::unit;

  void check() const {
    if (!(R > 0) || !(kappa > 0) || L < 1 || p < 1 || K < 1)
      throw std::logic_error("ArchitectureSpec: nonpositive entry");
  }

  net::ArchitectureClass to_class(net::ArchitectureClass::Role role) const {
    net::ArchitectureClass cls;
    cls.R = R;
    cls.kappa = kappa;
    cls.L = static_cast<int>(L);
    cls.p = static_cast<int>(p);
    cls.K = K;
    cls.role = role;
    return cls;
  }
};

inline long long ceil_ll(double v) {
  return static_cast<long long>(std::ceil(v - 1e-12));
}

// Generator sizing for target sup-norm accuracy eps:
//   R = B, kappa = max{1,B}, L ~ log(1/eps),
//   p ~ d eps^{-d/(alpha+1)}, K ~ d eps^{-d/(alpha+1)} log(1/eps).
inline ArchitectureSpec size_generator(double eps, double alpha, int d, double B,
                                       ConstantsMode mode = ConstantsMode::unit) {
  if (!(eps > 0.0) || !(eps < 1.0))
    throw std::invalid_argument("size_generator: eps must lie in (0,1)");
  const SizerConstants c =
      mode == ConstantsMode::unit ? SizerConstants{} : recorded_generator_constants(d, alpha);
  const double len = std::log(1.0 / eps);
  ArchitectureSpec s;
  s.R = B;
  s.kappa = std::max(1.0, B);
  s.L = std::max<long long>(1, ceil_ll(c.c_L * len));
  s.p = std::max<long long>(1, ceil_ll(c.c_p * d * std::pow(eps, -static_cast<double>(d) / (alpha + 1.0))));
  s.K = std::max<long long>(d, ceil_ll(c.c_K * d * std::pow(eps, -static_cast<double>(d) / (alpha + 1.0)) * len));
  s.mode = mode;
  std::ostringstream os;
  os << "generator(eps=" << eps << ",alpha=" << alpha << ",d=" << d << ",B=" << B
     << ",constants=" << to_string(mode) << ",log=natural,ceil=int)";
  s.provenance = os.str();
  s.check();
  return s;
}

// Discriminator sizing at sample size n and class index beta >= 1:
//   Rbar = B d, kappabar = max{1, B d}, Lbar ~ (beta/(2beta+d)) log n,
//   pbar ~ n^{d/(2beta+d)}, Kbar ~ (beta/(2beta+d)) n^{d/(2beta+d)} log n.
inline ArchitectureSpec size_discriminator(double n, double beta, int d, double B,
                                           ConstantsMode mode = ConstantsMode::unit) {
  if (!(n >= 2.0)) throw std::invalid_argument("size_discriminator: n must be >= 2");
  if (!(beta >= 1.0)) throw std::invalid_argument("size_discriminator: beta must be >= 1");
  const SizerConstants c = mode == ConstantsMode::unit
                               ? SizerConstants{}
                               : recorded_discriminator_constants(d, beta);
  const double expo = static_cast<double>(d) / (2.0 * beta + d);
  const double rate = beta / (2.0 * beta + d);
  ArchitectureSpec s;
  s.R = B * d;
  s.kappa = std::max(1.0, B * d);
  s.L = std::max<long long>(1, ceil_ll(c.c_L * rate * std::log(n)));
  s.p = std::max<long long>(1, ceil_ll(c.c_p * std::pow(n, expo)));
  s.K = std::max<long long>(1, ceil_ll(c.c_K * rate * std::pow(n, expo) * std::log(n)));
  s.mode = mode;
  std::ostringstream os;
  os << "discriminator(n=" << n << ",beta=" << beta << ",d=" << d << ",B=" << B
     << ",constants=" << to_string(mode) << ",log=natural,ceil=int)";
  s.provenance = os.str();
  s.check();
  return s;
}

// Generator sizing for the finite latent-sample regime with m draws:
//   L ~ ((alpha+1)/(2(alpha+1)+d)) log m, p ~ d m^{d/(2(alpha+1)+d)},
//   K ~ (d(alpha+1)/(2(alpha+1)+d)) m^{d/(2(alpha+1)+d)} log m.
inline ArchitectureSpec size_generator_finite_m(double m, double alpha, int d, double B,
                                                ConstantsMode mode = ConstantsMode::unit) {
  if (!(m >= 2.0)) throw std::invalid_argument("size_generator_finite_m: m must be >= 2");
  const SizerConstants c =
      mode == ConstantsMode::unit ? SizerConstants{} : recorded_generator_constants(d, alpha);
  const double a1 = alpha + 1.0;
  const double expo = static_cast<double>(d) / (2.0 * a1 + d);
  const double rate = a1 / (2.0 * a1 + d);
  ArchitectureSpec s;
  s.R = B;
  s.kappa = std::max(1.0, B);
  s.L = std::max<long long>(1, ceil_ll(c.c_L * rate * std::log(m)));
  s.p = std::max<long long>(1, ceil_ll(c.c_p * d * std::pow(m, expo)));
  s.K = std::max<long long>(d, ceil_ll(c.c_K * d * rate * std::pow(m, expo) * std::log(m)));
  s.mode = mode;
  std::ostringstream os;
  os << "generator_finite_m(m=" << m << ",alpha=" << alpha << ",d=" << d << ",B=" << B
     << ",constants=" << to_string(mode) << ",log=natural,ceil=int)";
  s.provenance = os.str();
  s.check();
  return s;
}

// Log covering number of the network class at radius delta:
//   K log( L (p B + 2) (kappa p)^L / delta ), floored at zero
// (a log-count cannot be negative; the formula dips below zero for large delta).
inline double net_covering_bound(const ArchitectureSpec& spec, double delta, double B) {
  if (!(delta > 0.0)) throw std::invalid_argument("net_covering_bound: delta must be positive");
  const double Ld = static_cast<double>(spec.L);
  const double pd = static_cast<double>(spec.p);
  const double inner =
      Ld * (pd * B + 2.0) * std::pow(spec.kappa * pd, Ld) / delta;
  const double v = static_cast<double>(spec.K) * std::log(inner);
  return std::max(0.0, v);
}

// Log covering number of a smoothness ball: c (1/delta)^{max(d/beta, 2)}.
inline double holder_covering_bound(double delta, double beta, int d, double c) {
  if (!(delta > 0.0) || !(delta < 1.0))
    throw std::invalid_argument("holder_covering_bound: delta must lie in (0,1)");
  return c * std::pow(1.0 / delta, std::max(static_cast<double>(d) / beta, 2.0));
}

// Entropy-integral bound on the expected empirical-process supremum:
//   2 inf_delta ( 2 delta + (12/sqrt(n)) * int_delta^L sqrt(log N(eps)) d eps )
// minimized over the supplied grid; the integral uses composite Simpson with
// 512 panels.
inline double dudley_bound(const std::function<double(double)>& log_cover, double L_sup,
                           double n, const std::vector<double>& delta_grid) {
  if (!(L_sup > 0.0)) throw std::invalid_argument("dudley_bound: L_sup must be positive");
  if (delta_grid.empty()) throw std::invalid_argument("dudley_bound: empty delta grid");
  auto integrand = [&](double eps) {
    const double lc = std::max(0.0, log_cover(eps));
    const double v = std::sqrt(lc);
    if (!std::isfinite(v))
      throw std::runtime_error("dudley_bound: entropy integrand not finite");
    return v;
  };
  double best = std::numeric_limits<double>::infinity();
  for (double delta : delta_grid) {
    if (!(delta > 0.0) || delta >= L_sup) continue;
    const double integral = simpson(integrand, delta, L_sup, 512);
    best = std::min(best, 4.0 * delta + 24.0 / std::sqrt(n) * integral);
  }
  if (!std::isfinite(best)) throw std::invalid_argument("dudley_bound: no usable delta in grid");
  return best;
}

// Oracle-inequality budget: total = eps1 + 4 eps2 + stat_h + stat_f.
struct ErrorBudget {
  double eps1 = 0.0;
  double eps2 = 0.0;
  double stat_h = 0.0;
  double stat_f = 0.0;
  double total = 0.0;
};

inline ErrorBudget oracle_budget(double eps1, double eps2, double stat_h, double stat_f) {
  if (eps1 < 0 || eps2 < 0 || stat_h < 0 || stat_f < 0)
    throw std::invalid_argument("oracle_budget: parts must be nonnegative");
  ErrorBudget b{eps1, eps2, stat_h, stat_f, eps1 + 4.0 * eps2 + stat_h + stat_f};
  return b;
}

inline double rate_exponent(double beta, int d) { return beta / (2.0 * beta + d); }

// Theoretical budget curve C n^{-beta/(2 beta + d)} (log n)^2.
inline double rate_curve(double n, double beta, int d, double C) {
  if (!(n >= 2.0)) throw std::invalid_argument("rate_curve: n must be >= 2");
  const double ln = std::log(n);
  return C * std::pow(n, -rate_exponent(beta, d)) * ln * ln;
}

}  // namespace ganlab::bounds
