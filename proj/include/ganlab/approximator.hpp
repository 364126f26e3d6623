#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <vector>

#include "ganlab/numerics.hpp"
#include "ganlab/relu_net.hpp"

namespace ganlab::approx {

// ---------------------------------------------------------------------------
// Staged network construction. An Expr is an affine form over the units of
// the builder's current top layer; staging a unit appends ReLU(expr) to the
// layer under construction, and commit() seals it.

struct Expr {
  std::vector<std::pair<int, double>> terms;
  double c = 0.0;

  Expr() = default;
  Expr(int unit, double coeff) { terms.emplace_back(unit, coeff); }

  Expr& add(int unit, double coeff) {
    terms.emplace_back(unit, coeff);
    return *this;
  }
  Expr& operator+=(const Expr& o) {
    terms.insert(terms.end(), o.terms.begin(), o.terms.end());
    c += o.c;
    return *this;
  }
  Expr& operator*=(double s) {
    for (auto& t : terms) t.second *= s;
    c *= s;
    return *this;
  }
  bool zero() const {
    if (c != 0.0) return false;
    for (const auto& t : terms)
      if (t.second != 0.0) return false;
    return true;
  }
};

inline Expr operator+(Expr a, const Expr& b) { return a += b; }
inline Expr operator*(double s, Expr e) { return e *= s; }
inline Expr operator+(Expr a, double k) {
  a.c += k;
  return a;
}
inline Expr operator-(Expr a, const Expr& b) {
  Expr nb = b;
  nb *= -1.0;
  return a += nb;
}

class NetBuilder {
 public:
  explicit NetBuilder(int input_dim) : input_dim_(input_dim), top_size_(input_dim) {}

  int depth() const { return static_cast<int>(layers_.size()); }
  int top_size() const { return top_size_; }

  // Stages ReLU(expr) for the next layer; returns its unit index there.
  int stage_unit(const Expr& pre) {
    staged_.push_back(pre);
    return static_cast<int>(staged_.size()) - 1;
  }

  void commit() {
    if (staged_.empty()) throw std::logic_error("NetBuilder: committing empty layer");
    layers_.push_back(std::move(staged_));
    staged_.clear();
    top_size_ = static_cast<int>(layers_.back().size());
  }

  // Final affine stage from expressions over the current top layer.
  net::Network finalize(const std::vector<Expr>& outputs) const {
    if (!staged_.empty()) throw std::logic_error("NetBuilder: uncommitted units at finalize");
    net::Network out;
    out.input_dim = input_dim_;
    out.output_dim = static_cast<int>(outputs.size());
    int prev = input_dim_;
    for (const auto& rows : layers_) {
      out.layers.push_back(rows_to_layer(rows, prev));
      prev = static_cast<int>(rows.size());
    }
    out.layers.push_back(rows_to_layer(outputs, prev));
    out.finalize();
    return out;
  }

 private:
  static net::Layer rows_to_layer(const std::vector<Expr>& rows, int cols) {
    net::Layer L(static_cast<int>(rows.size()), cols);
    std::fill(L.mask.begin(), L.mask.end(), 0);
    for (int r = 0; r < L.rows; ++r) {
      const Expr& e = rows[static_cast<std::size_t>(r)];
      L.b[static_cast<std::size_t>(r)] = e.c;
      for (const auto& [unit, coeff] : e.terms) {
        if (unit < 0 || unit >= cols) throw std::logic_error("NetBuilder: unit out of range");
        if (coeff == 0.0) continue;
        L.at(r, unit) += coeff;
        L.mask_at(r, unit) = 1;
      }
      // merged duplicates may cancel exactly
      for (int c2 = 0; c2 < cols; ++c2)
        if (L.mask_at(r, c2) && L.at(r, c2) == 0.0) L.mask_at(r, c2) = 0;
    }
    return L;
  }

  int input_dim_;
  int top_size_;
  std::vector<std::vector<Expr>> layers_;
  std::vector<Expr> staged_;
};

// ---------------------------------------------------------------------------
// Multiplication gadget. The squaring unit is the classic sawtooth scheme:
// hat(z) = 2 ReLU(z) - 4 ReLU(z - 1/2) on [0,1], iterated m times, with the
// running dyadic interpolant of z^2 accumulated alongside. Products come from
// the polarization identity
//     x y = 2 M^2 [ s((x+y)/2M) - s(x/2M) - s(y/2M) ],  s(z) = z^2,
// evaluated at |.| via paired ReLUs. Each square is approximated within
// 2^{-2m-2}, so the product error is at most 6 M^2 2^{-2m-2}.
class MultChain {
 public:
  MultChain(int m, double M, Expr u, Expr v)
      : m_(m), M_(M), u_(std::move(u)), v_(std::move(v)) {
    if (m_ < 1) throw std::invalid_argument("MultChain: m must be >= 1");
    if (!(M_ > 0)) throw std::invalid_argument("MultChain: M must be positive");
  }

  static int stages(int m) { return m + 2; }
  bool ready() const { return phase_ == 2 && j_ == m_; }

  // One staged layer per call; call exactly once between builder commits.
  void step(NetBuilder& b) {
    if (ready()) throw std::logic_error("MultChain: already complete");
    if (phase_ == 0) {
      const double s = 1.0 / (2.0 * M_);
      const Expr combos[3] = {s * (u_ + v_), s * u_, s * v_};
      for (int i = 0; i < 3; ++i) {
        rpos_[i] = b.stage_unit(combos[i]);
        rneg_[i] = b.stage_unit(-1.0 * combos[i]);
      }
      phase_ = 1;
      return;
    }
    if (phase_ == 1) {
      for (int i = 0; i < 3; ++i) {
        Expr z(rpos_[i], 1.0);
        z.add(rneg_[i], 1.0);
        p_[i] = b.stage_unit(z);
        q_[i] = b.stage_unit(z + (-0.5));
        c_[i] = p_[i];  // the interpolant starts at the chord z
      }
      phase_ = 2;
      j_ = 0;
      return;
    }
    const int j = j_ + 1;
    const double w = std::pow(0.25, j);
    for (int i = 0; i < 3; ++i) {
      Expr g(p_[i], 2.0);
      g.add(q_[i], -4.0);
      const int np = b.stage_unit(g);
      const int nq = b.stage_unit(g + (-0.5));
      Expr cexpr(c_[i], 1.0);
      cexpr += (-w) * g;
      const int nc = b.stage_unit(cexpr);
      p_[i] = np;
      q_[i] = nq;
      c_[i] = nc;
    }
    ++j_;
  }

  Expr output() const {
    if (!ready()) throw std::logic_error("MultChain: output requested before completion");
    const double s = 2.0 * M_ * M_;
    Expr out(c_[0], s);
    out.add(c_[1], -s);
    out.add(c_[2], -s);
    return out;
  }

 private:
  int m_;
  double M_;
  Expr u_, v_;
  int phase_ = 0;
  int j_ = 0;
  int rpos_[3] = {0, 0, 0}, rneg_[3] = {0, 0, 0};
  int p_[3] = {0, 0, 0}, q_[3] = {0, 0, 0}, c_[3] = {0, 0, 0};
};

// ---------------------------------------------------------------------------
// Weight-magnitude enforcement. ReLU is positively homogeneous, so each layer
// can run at 1/c of its true scale as long as the deficit is repaid at the
// output. The repayment tail doubles a sign-split copy of the output once per
// layer using unit weights.
inline void rescale_weights_to(net::Network& net, double kappa) {
  if (!(kappa > 0)) throw std::invalid_argument("rescale_weights_to: kappa must be positive");
  double c_prev = 1.0;
  for (auto& L : net.layers) {
    double wmax = 0, bmax = 0;
    for (double v : L.w) wmax = std::max(wmax, std::abs(v));
    for (double v : L.b) bmax = std::max(bmax, std::abs(v));
    const double c_i = std::max({1.0, c_prev * wmax / kappa, bmax / kappa});
    const double wf = c_prev / c_i;
    for (double& v : L.w) v *= wf;
    for (double& v : L.b) v /= c_i;
    c_prev = c_i;
  }
  const double F = c_prev;
  if (F > 1.0 + 1e-14) {
    const int out = net.output_dim;
    net::Layer last = net.layers.back();
    net.layers.pop_back();

    // sign split with duplicates: rows (a+, b+, a-, b-) per output coordinate
    net::Layer split(4 * out, last.cols);
    std::fill(split.mask.begin(), split.mask.end(), 0);
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < last.cols; ++c) {
        if (!last.mask_at(r, c)) continue;
        const double v = last.at(r, c);
        for (int rep = 0; rep < 2; ++rep) {
          split.at(4 * r + rep, c) = v;
          split.mask_at(4 * r + rep, c) = 1;
          split.at(4 * r + 2 + rep, c) = -v;
          split.mask_at(4 * r + 2 + rep, c) = 1;
        }
      }
      for (int rep = 0; rep < 2; ++rep) {
        split.b[static_cast<std::size_t>(4 * r + rep)] = last.b[static_cast<std::size_t>(r)];
        split.b[static_cast<std::size_t>(4 * r + 2 + rep)] = -last.b[static_cast<std::size_t>(r)];
      }
    }
    net.layers.push_back(std::move(split));

    const int k = std::max(0, static_cast<int>(std::ceil(std::log2(F))) - 1);
    for (int step = 0; step < k; ++step) {
      net::Layer dbl(4 * out, 4 * out);
      std::fill(dbl.mask.begin(), dbl.mask.end(), 0);
      for (int r = 0; r < out; ++r) {
        for (int sign = 0; sign < 2; ++sign) {
          const int ca = 4 * r + 2 * sign, cb = ca + 1;
          for (int rep = 0; rep < 2; ++rep) {
            dbl.at(ca + rep, ca) = 1.0;
            dbl.at(ca + rep, cb) = 1.0;
            dbl.mask_at(ca + rep, ca) = 1;
            dbl.mask_at(ca + rep, cb) = 1;
          }
        }
      }
      net.layers.push_back(std::move(dbl));
    }

    // remaining factor F / 2^k lies in (1, 2]; halved across the duplicates
    const double coeff = F / std::pow(2.0, k + 1);
    net::Layer comb(out, 4 * out);
    std::fill(comb.mask.begin(), comb.mask.end(), 0);
    for (int r = 0; r < out; ++r) {
      comb.at(r, 4 * r) = coeff;
      comb.at(r, 4 * r + 1) = coeff;
      comb.at(r, 4 * r + 2) = -coeff;
      comb.at(r, 4 * r + 3) = -coeff;
      comb.mask_at(r, 4 * r) = comb.mask_at(r, 4 * r + 1) = 1;
      comb.mask_at(r, 4 * r + 2) = comb.mask_at(r, 4 * r + 3) = 1;
    }
    net.layers.push_back(std::move(comb));
  }
  net.finalize();
}

// ---------------------------------------------------------------------------

// Standalone product gadget over [-M, M]^2.
struct MultGadget {
  int depth_m = 1;
  double range_scale = 1.0;
  net::Network net;
};

inline MultGadget build_mult_gadget(int m, double M) {
  if (m < 1) throw std::invalid_argument("build_mult_gadget: m must be >= 1");
  if (!(M > 0)) throw std::invalid_argument("build_mult_gadget: M must be positive");
  NetBuilder b(2);
  MultChain chain(m, M, Expr(0, 1.0), Expr(1, 1.0));
  for (int s = 0; s < MultChain::stages(m); ++s) {
    chain.step(b);
    b.commit();
  }
  net::Network net = b.finalize({chain.output()});
  rescale_weights_to(net, std::max(1.0, 1.0));
  MultGadget g;
  g.depth_m = m;
  g.range_scale = M;
  g.net = std::move(net);
  return g;
}

// ---------------------------------------------------------------------------
// Approximation plan: patch grid, Taylor order, and gadget depth for target
// accuracy delta, together with the predicted resource budget.

struct BudgetPrediction {
  long long layers = 0;
  long long neurons = 0;
  long long params = 0;
};

struct ApproxConstants {
  double c_layers = 1.0;
  double c_neurons = 1.0;
  double c_params = 1.0;
};

// Multipliers measured on this artifact's constructions per (d, order).
inline ApproxConstants approx_constants(int d, double beta) {
  ApproxConstants c;
  if (d == 1) {
    if (beta < 2.0) {
      c = {3.0, 30.0, 60.0};
    } else if (beta < 3.0) {
      c = {16.0, 150.0, 420.0};
    } else {
      c = {26.0, 260.0, 760.0};
    }
  } else {
    c = {26.0, 1800.0, 5200.0};
  }
  return c;
}

struct ApproxPlan {
  double beta = 1.0;
  int d = 1;
  double delta = 0.1;
  int grid_N = 1;       // patches per axis (knots 0..grid_N)
  int taylor_order = 0;
  int gadget_m = 3;
  BudgetPrediction budget;
};

inline ApproxPlan plan(double beta, int d, double delta) {
  if (!(delta > 0.0) || !(delta < 1.0))
    throw std::invalid_argument("plan: delta must lie in (0,1)");
  if (!(beta >= 1.0)) throw std::invalid_argument("plan: beta must be >= 1");
  if (d != 1 && d != 2) throw std::invalid_argument("plan: d must be 1 or 2");
  ApproxPlan p;
  p.beta = beta;
  p.d = d;
  p.delta = delta;
  p.grid_N = static_cast<int>(std::ceil(std::pow(delta, -1.0 / beta) - 1e-12));
  p.grid_N = std::max(1, p.grid_N);
  p.taylor_order = std::max(0, strict_floor(beta));
  p.gadget_m = static_cast<int>(std::ceil(std::log2(1.0 / delta) - 1e-12)) + 2;
  const ApproxConstants c = approx_constants(d, beta);
  const double len = std::log(1.0 / delta) + 1.0;
  const double size = std::pow(delta, -static_cast<double>(d) / beta) * len;
  p.budget.layers = static_cast<long long>(std::ceil(c.c_layers * len));
  p.budget.neurons = static_cast<long long>(std::ceil(c.c_neurons * size));
  p.budget.params = static_cast<long long>(std::ceil(c.c_params * size));
  return p;
}

// ---------------------------------------------------------------------------
// Approximation target: a function on [0,1]^d with derivative access. When no
// analytic derivative is supplied, central finite differences with step 1e-4
// are used (iterated per axis for higher orders).

struct Target {
  int d = 1;
  std::function<double(const double*)> value;
  std::function<double(const double*, const int*)> deriv;  // optional
};

namespace detail {

inline double fd_derivative(const Target& f, const double* x, const int* nu, int axis) {
  while (axis < f.d && nu[axis] == 0) ++axis;
  if (axis >= f.d) return f.value(x);
  const double h = 1e-4;
  std::array<int, 4> rest{};
  for (int j = 0; j < f.d; ++j) rest[static_cast<std::size_t>(j)] = nu[j];
  rest[static_cast<std::size_t>(axis)] -= 1;
  std::array<double, 4> xp{}, xm{};
  for (int j = 0; j < f.d; ++j) {
    xp[static_cast<std::size_t>(j)] = x[j];
    xm[static_cast<std::size_t>(j)] = x[j];
  }
  xp[static_cast<std::size_t>(axis)] += h;
  xm[static_cast<std::size_t>(axis)] -= h;
  return (fd_derivative(f, xp.data(), rest.data(), axis) -
          fd_derivative(f, xm.data(), rest.data(), axis)) /
         (2.0 * h);
}

}  // namespace detail

inline double target_derivative(const Target& f, const double* x, const int* nu) {
  int total = 0;
  for (int j = 0; j < f.d; ++j) total += nu[j];
  if (total == 0) return f.value(x);
  if (f.deriv) return f.deriv(x, nu);
  return detail::fd_derivative(f, x, nu, 0);
}

// ---------------------------------------------------------------------------
// The end-to-end construction: a weighted sum of local Taylor polynomials
// under the piecewise-linear partition of unity, every product realized by
// multiplication gadgets. Patch layout and chain scheduling are fixed by grid
// index, so concurrent patch preparation cannot change the emitted network.

namespace detail {

struct Monomial {
  std::array<int, 2> nu{0, 0};
  int order = 0;
};

inline std::vector<Monomial> monomials_up_to(int d, int t) {
  std::vector<Monomial> out;
  if (d == 1) {
    for (int s = 0; s <= t; ++s) out.push_back({{s, 0}, s});
  } else {
    for (int s = 0; s <= t; ++s)
      for (int i = s; i >= 0; --i) out.push_back({{i, s - i}, s});
  }
  return out;
}

}  // namespace detail

inline net::Network approximate_raw(const Target& f, const ApproxPlan& p) {
  if (f.d != p.d) throw std::invalid_argument("approximate: target/plan dimension mismatch");
  if (!f.value) throw std::invalid_argument("approximate: target has no value function");
  const int d = p.d, N = p.grid_N, t = p.taylor_order, m = p.gadget_m;
  const double hN = 1.0 / N;

  NetBuilder b(d);

  // hat basis: units ReLU(x_j - i/N) for i = -1..N+1 per axis; every hat and
  // the coordinate itself are affine in these, and they are carried through
  // all later stages
  std::vector<std::vector<int>> hat_ids(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) {
    for (int i = -1; i <= N + 1; ++i) {
      Expr e(j, 1.0);
      e.c = -static_cast<double>(i) * hN;
      hat_ids[static_cast<std::size_t>(j)].push_back(b.stage_unit(e));
    }
  }
  b.commit();

  auto base_unit = [&](int axis, int i) {
    return hat_ids[static_cast<std::size_t>(axis)][static_cast<std::size_t>(i + 1)];
  };
  auto hat_expr = [&](int axis, int k) {
    Expr e(base_unit(axis, k - 1), static_cast<double>(N));
    e.add(base_unit(axis, k), -2.0 * N);
    e.add(base_unit(axis, k + 1), static_cast<double>(N));
    return e;
  };
  auto coord_expr = [&](int axis) {
    Expr e(base_unit(axis, -1), 1.0);
    e.c = -hN;
    return e;
  };

  // patch data: Taylor coefficients around each knot, scaled into [-1,1]
  const auto monos = detail::monomials_up_to(d, t);
  const int n_patches = d == 1 ? (N + 1) : (N + 1) * (N + 1);
  struct Patch {
    std::array<double, 2> center{0, 0};
    std::vector<double> coeff;  // aligned with monos
    double scale = 1.0;         // max(1, sum |coeff|)
    bool trivial = true;
  };
  std::vector<Patch> patches(static_cast<std::size_t>(n_patches));
  for (int pi = 0; pi < n_patches; ++pi) {
    Patch& pk = patches[static_cast<std::size_t>(pi)];
    const int k0 = d == 1 ? pi : pi / (N + 1);
    const int k1 = d == 1 ? 0 : pi % (N + 1);
    pk.center = {k0 * hN, d == 1 ? 0.0 : k1 * hN};
    double sum = 0;
    for (const auto& mo : monos) {
      int nu[2] = {mo.nu[0], mo.nu[1]};
      double fact = 1.0;
      for (int j = 0; j < d; ++j)
        for (int q = 2; q <= nu[j]; ++q) fact *= q;
      const double a = target_derivative(f, pk.center.data(), nu) / fact;
      pk.coeff.push_back(a);
      sum += std::abs(a);
    }
    pk.scale = std::max(1.0, sum);
    pk.trivial = (sum == 0.0);
  }

  const bool all_trivial =
      std::all_of(patches.begin(), patches.end(), [](const Patch& pk) { return pk.trivial; });

  // bank schedule: degree-s monomials need s-1 chained products, the d=2
  // partition factor needs one, and one final product attaches the partition
  const int poly_banks = std::max(0, t - 1);
  const int phi_banks = d - 1;
  const int pre_banks = std::max(poly_banks, phi_banks);
  const int total_banks = all_trivial ? 0 : (t >= 1 ? pre_banks + 1 : pre_banks);

  // chain state per patch
  struct MonoState {
    int remaining = 0;                 // products still to apply
    std::vector<std::array<int, 2>> factors;  // per product: (axis, unused)
    bool live = false;
    bool is_unit = false;   // carried as offset unit
    int unit = -1;
    double offset = 0.0;
    Expr expr;              // valid when produced this bank
  };
  // states indexed [patch][mono]; phi state per patch for d=2
  std::vector<std::vector<MonoState>> mstate(patches.size());
  std::vector<MonoState> phistate(patches.size());

  auto factor_expr = [&](int patch, int axis) {
    Expr e = coord_expr(axis);
    e.c -= patches[static_cast<std::size_t>(patch)].center[static_cast<std::size_t>(axis)];
    return e;
  };

  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    mstate[pi].resize(monos.size());
    for (std::size_t mi = 0; mi < monos.size(); ++mi) {
      MonoState& ms = mstate[pi][mi];
      ms.live = !patches[pi].trivial && monos[mi].order >= 2 &&
                patches[pi].coeff[mi] != 0.0;
      if (ms.live) {
        for (int j = 0; j < d; ++j)
          for (int q = 0; q < monos[mi].nu[static_cast<std::size_t>(j)]; ++q)
            ms.factors.push_back({j, 0});
        ms.remaining = static_cast<int>(ms.factors.size()) - 1;
      }
    }
    phistate[pi].live = (d == 2) && !patches[pi].trivial;
  }

  std::vector<Expr> patch_out(patches.size());
  std::vector<bool> patch_done(patches.size(), false);

  for (int bank = 1; bank <= total_banks; ++bank) {
    const bool final_bank = (t >= 1) && bank == total_banks;
    std::vector<MultChain> chains;
    struct Hook {
      enum Kind { mono, phi, final } kind;
      std::size_t patch;
      std::size_t mi;
    };
    std::vector<Hook> hooks;

    for (std::size_t pi = 0; pi < patches.size(); ++pi) {
      const Patch& pk = patches[pi];
      if (pk.trivial) continue;
      if (!final_bank) {
        for (std::size_t mi = 0; mi < monos.size(); ++mi) {
          MonoState& ms = mstate[pi][mi];
          if (!ms.live || ms.remaining <= 0) continue;
          const int done = static_cast<int>(ms.factors.size()) - 1 - ms.remaining;
          Expr left = done == 0 ? factor_expr(static_cast<int>(pi), ms.factors[0][0])
                                : (ms.is_unit ? Expr(ms.unit, 1.0) + (-ms.offset) : ms.expr);
          Expr right = factor_expr(static_cast<int>(pi),
                                   ms.factors[static_cast<std::size_t>(done + 1)][0]);
          chains.emplace_back(m, 1.0, left, right);
          hooks.push_back({Hook::mono, pi, mi});
        }
        // schedule the partition-product in the last pre bank so its output
        // lands right where the final bank starts
        if (phistate[pi].live && bank == pre_banks) {
          const int k0 = d == 1 ? static_cast<int>(pi) : static_cast<int>(pi) / (N + 1);
          const int k1 = d == 1 ? 0 : static_cast<int>(pi) % (N + 1);
          chains.emplace_back(m, 1.0, hat_expr(0, k0), hat_expr(1, k1));
          hooks.push_back({Hook::phi, pi, 0});
        }
      } else {
        // P_k / S_k as an expression over the current top layer
        Expr poly;
        poly.c = 0.0;
        for (std::size_t mi = 0; mi < monos.size(); ++mi) {
          const double a = pk.coeff[mi] / pk.scale;
          if (a == 0.0) continue;
          if (monos[mi].order == 0) {
            poly.c += a;
          } else if (monos[mi].order == 1) {
            const int axis = monos[mi].nu[0] == 1 ? 0 : 1;
            poly += a * factor_expr(static_cast<int>(pi), axis);
          } else {
            const MonoState& ms = mstate[pi][mi];
            Expr val = ms.is_unit ? Expr(ms.unit, 1.0) + (-ms.offset) : ms.expr;
            poly += a * val;
          }
        }
        Expr phi;
        if (d == 1) {
          phi = hat_expr(0, static_cast<int>(pi));
        } else {
          const MonoState& ps = phistate[pi];
          phi = ps.is_unit ? Expr(ps.unit, 1.0) + (-ps.offset) : ps.expr;
        }
        chains.emplace_back(m, 1.0, phi, poly);
        hooks.push_back({Hook::final, pi, 0});
      }
    }

    if (chains.empty()) continue;

    const bool keep_alive = bank < total_banks;  // nothing survives the last bank
    for (int stage = 0; stage < MultChain::stages(m); ++stage) {
      for (auto& ch : chains) ch.step(b);
      if (keep_alive) {
        for (int j = 0; j < d; ++j)
          for (std::size_t i = 0; i < hat_ids[static_cast<std::size_t>(j)].size(); ++i)
            hat_ids[static_cast<std::size_t>(j)][i] =
                b.stage_unit(Expr(hat_ids[static_cast<std::size_t>(j)][i], 1.0));
        for (auto& pv : mstate)
          for (auto& ms : pv)
            if (ms.live && ms.is_unit) ms.unit = b.stage_unit(Expr(ms.unit, 1.0));
        for (auto& ps : phistate)
          if (ps.live && ps.is_unit) ps.unit = b.stage_unit(Expr(ps.unit, 1.0));
      }
      b.commit();
    }

    // collect outputs; values are near [-1,1] so an offset keeps the carry
    // unit nonnegative
    const double kCarryOffset = 1.5;
    std::vector<std::pair<Hook, Expr>> produced;
    std::size_t ci = 0;
    for (const auto& hk : hooks) produced.emplace_back(hk, chains[ci++].output());

    const bool more_banks = bank < total_banks;
    std::vector<int> staged_units(produced.size(), -1);
    if (more_banks) {
      // materialize outputs that must survive into the next bank
      for (std::size_t i = 0; i < produced.size(); ++i) {
        const auto& [hk, expr] = produced[i];
        bool needs_carry = false;
        if (hk.kind == Hook::mono)
          needs_carry = true;  // consumed at the final bank (or next product)
        if (hk.kind == Hook::phi) needs_carry = true;
        if (needs_carry) staged_units[i] = b.stage_unit(expr + kCarryOffset);
      }
      // do not lose the hat basis between banks
      for (int j = 0; j < d; ++j)
        for (std::size_t i = 0; i < hat_ids[static_cast<std::size_t>(j)].size(); ++i)
          hat_ids[static_cast<std::size_t>(j)][i] =
              b.stage_unit(Expr(hat_ids[static_cast<std::size_t>(j)][i], 1.0));
      for (auto& pv : mstate)
        for (auto& ms : pv)
          if (ms.live && ms.is_unit) ms.unit = b.stage_unit(Expr(ms.unit, 1.0));
      b.commit();
    }

    for (std::size_t i = 0; i < produced.size(); ++i) {
      const auto& [hk, expr] = produced[i];
      if (hk.kind == Hook::mono) {
        MonoState& ms = mstate[hk.patch][hk.mi];
        ms.remaining -= 1;
        if (more_banks) {
          ms.is_unit = true;
          ms.unit = staged_units[i];
          ms.offset = kCarryOffset;
        } else {
          ms.is_unit = false;
          ms.expr = expr;
        }
      } else if (hk.kind == Hook::phi) {
        MonoState& ps = phistate[hk.patch];
        if (more_banks) {
          ps.is_unit = true;
          ps.unit = staged_units[i];
          ps.offset = kCarryOffset;
        } else {
          ps.is_unit = false;
          ps.expr = expr;
        }
      } else {
        patch_out[hk.patch] = expr;
        patch_done[hk.patch] = true;
      }
    }
  }

  // final affine combination
  Expr out;
  out.c = 0.0;
  for (std::size_t pi = 0; pi < patches.size(); ++pi) {
    const Patch& pk = patches[pi];
    if (pk.trivial) continue;
    if (t >= 1) {
      if (!patch_done[pi]) throw std::logic_error("approximate: patch chain did not finish");
      out += pk.scale * patch_out[pi];
    } else {
      // order zero: the polynomial is a constant, no product needed
      if (d == 1) {
        out += pk.coeff[0] * hat_expr(0, static_cast<int>(pi));
      } else {
        const MonoState& ps = phistate[pi];
        Expr phi = ps.is_unit ? Expr(ps.unit, 1.0) + (-ps.offset) : ps.expr;
        out += pk.coeff[0] * phi;
      }
    }
  }
  return b.finalize({out});
}

inline net::Network approximate(const Target& f, const ApproxPlan& p, double B = 1.0) {
  net::Network raw = approximate_raw(f, p);
  rescale_weights_to(raw, std::max(1.0, B));
  return raw;
}

// Stack equal-depth single-output coordinate networks into one d-output map.
inline net::Network stack_coordinates(const std::vector<net::Network>& nets) {
  if (nets.empty()) throw std::invalid_argument("stack_coordinates: no networks");
  const int depth = nets.front().depth();
  const int in = nets.front().input_dim;
  for (const auto& n : nets) {
    if (n.depth() != depth)
      throw std::invalid_argument("stack_coordinates: depths differ");
    if (n.input_dim != in)
      throw std::invalid_argument("stack_coordinates: input dims differ");
  }
  net::Network out;
  out.input_dim = in;
  out.output_dim = 0;
  for (const auto& n : nets) out.output_dim += n.output_dim;
  for (int li = 0; li < depth; ++li) {
    int rows = 0, cols = 0;
    for (const auto& n : nets) {
      rows += n.layers[static_cast<std::size_t>(li)].rows;
      cols = li == 0 ? in : cols + n.layers[static_cast<std::size_t>(li)].cols;
    }
    net::Layer L(rows, cols);
    std::fill(L.mask.begin(), L.mask.end(), 0);
    int roff = 0, coff = 0;
    for (const auto& n : nets) {
      const net::Layer& src = n.layers[static_cast<std::size_t>(li)];
      const int cbase = li == 0 ? 0 : coff;
      for (int r = 0; r < src.rows; ++r) {
        L.b[static_cast<std::size_t>(roff + r)] = src.b[static_cast<std::size_t>(r)];
        for (int c = 0; c < src.cols; ++c) {
          if (!src.mask_at(r, c)) continue;
          L.at(roff + r, cbase + c) = src.at(r, c);
          L.mask_at(roff + r, cbase + c) = 1;
        }
      }
      roff += src.rows;
      if (li != 0) coff += src.cols;
    }
    out.layers.push_back(std::move(L));
  }
  out.finalize();
  return out;
}

// Max deviation over an explicit evaluation grid.
inline double sup_error(const net::Network& net, const Target& f,
                        const std::vector<std::vector<double>>& grid_points) {
  double worst = 0;
  for (const auto& x : grid_points) {
    const double v = net.forward(std::span<const double>(x.data(), x.size()))[0];
    worst = std::max(worst, std::abs(v - f.value(x.data())));
  }
  return worst;
}

// Convenience: tensor grid with n points per axis on [0,1]^d.
inline std::vector<std::vector<double>> unit_grid(int d, int n) {
  std::vector<std::vector<double>> pts;
  if (d == 1) {
    for (int i = 0; i < n; ++i) pts.push_back({static_cast<double>(i) / (n - 1)});
  } else {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        pts.push_back({static_cast<double>(i) / (n - 1), static_cast<double>(j) / (n - 1)});
  }
  return pts;
}

}  // namespace ganlab::approx
