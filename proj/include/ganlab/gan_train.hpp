#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ganlab/cloud.hpp"
#include "ganlab/relu_net.hpp"
#include "ganlab/rng.hpp"

namespace ganlab::train {

inline constexpr long long kPopulation = -1;

// Optimization settings for the alternating minimax loop. The latent count m
// selects between fresh latent draws every step (population regime) and a
// fixed implicit pool of m latent samples addressed by index.
struct TrainConfig {
  double gen_lr = 1e-3;
  double disc_lr = 1e-3;
  int disc_steps_per_gen = 5;
  int epochs = 10;
  int batch = 256;
  int updates_per_epoch = 4;
  long long m = kPopulation;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int eval_n = 2048;
  // return the iterate with the best validation metric instead of the last
  // one (constructive warm starts sit at sharp minima; the sawtooth stages
  // amplify parameter noise like an iterated doubling map, so late iterates
  // can be much worse than early ones)
  bool keep_best = false;
  // restrict generator updates to the last k layers (-1 trains everything);
  // warm-started runs train the output head, since the product-gadget core
  // does not survive in-place gradient steps
  int gen_trainable_layers = -1;

  void check() const {
    if (!(gen_lr > 0) || !(disc_lr > 0))
      throw std::invalid_argument("TrainConfig: step sizes must be positive");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch < 1 || disc_steps_per_gen < 1 || updates_per_epoch < 1 || eval_n < 1)
      throw std::invalid_argument("TrainConfig: counts must be positive");
    if (m != kPopulation && m < 1)
      throw std::invalid_argument("TrainConfig: latent count must be positive");
  }
};

// Per-parameter gradients, shaped like the network's layers.
struct Grads {
  std::vector<std::vector<double>> w;
  std::vector<std::vector<double>> b;
  std::vector<double> input;

  void init_like(const net::Network& n) {
    w.clear();
    b.clear();
    for (const auto& L : n.layers) {
      w.emplace_back(L.w.size(), 0.0);
      b.emplace_back(L.b.size(), 0.0);
    }
    input.assign(static_cast<std::size_t>(n.input_dim), 0.0);
  }
  void zero() {
    for (auto& v : w) std::fill(v.begin(), v.end(), 0.0);
    for (auto& v : b) std::fill(v.begin(), v.end(), 0.0);
    std::fill(input.begin(), input.end(), 0.0);
  }
};

// Reusable activation storage for batched forward/backward sweeps.
struct Workspace {
  std::vector<std::vector<double>> pre;   // pre-activation per layer
  std::vector<std::vector<double>> act;   // inputs to each layer (act[0] = x)
  std::vector<double> out;                // clipped output
  std::vector<double> delta, delta_next;

  void init_like(const net::Network& n) {
    pre.assign(n.layers.size(), {});
    act.assign(n.layers.size() + 1, {});
    act[0].assign(static_cast<std::size_t>(n.input_dim), 0.0);
    for (std::size_t i = 0; i < n.layers.size(); ++i) {
      pre[i].assign(static_cast<std::size_t>(n.layers[i].rows), 0.0);
      act[i + 1].assign(static_cast<std::size_t>(n.layers[i].rows), 0.0);
    }
    out.assign(static_cast<std::size_t>(n.output_dim), 0.0);
  }
};

inline void forward_cached(const net::Network& n, std::span<const double> x, Workspace& ws) {
  if (static_cast<int>(x.size()) != n.input_dim)
    throw std::invalid_argument("forward_cached: input dimension mismatch");
  std::copy(x.begin(), x.end(), ws.act[0].begin());
  const auto& plans = n.plans();
  for (std::size_t li = 0; li < n.layers.size(); ++li) {
    const net::Layer& L = n.layers[li];
    const net::LayerPlan& p = plans[li];
    const auto& in = ws.act[li];
    auto& pre = ws.pre[li];
    auto& out = ws.act[li + 1];
    for (int r = 0; r < L.rows; ++r) {
      double acc = L.b[static_cast<std::size_t>(r)];
      for (int k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k)
        acc += L.w[static_cast<std::size_t>(p.widx[k])] * in[static_cast<std::size_t>(p.col[k])];
      pre[static_cast<std::size_t>(r)] = acc;
      out[static_cast<std::size_t>(r)] =
          (li + 1 < n.layers.size()) ? net::relu(acc) : acc;
    }
  }
  const auto& last = ws.act[n.layers.size()];
  for (int i = 0; i < n.output_dim; ++i)
    ws.out[static_cast<std::size_t>(i)] =
        n.clip_bound ? net::clip(last[static_cast<std::size_t>(i)], *n.clip_bound)
                     : last[static_cast<std::size_t>(i)];
}

// Reverse sweep. Accumulates coef * d<upstream, f(x)>/dparam into g; the
// (hidden) ReLU subgradient at zero is taken as zero, and the clipping stage
// contributes its indicator through the same convention. Requires a prior
// forward_cached on the same input.
inline void backward_accumulate(const net::Network& n, Workspace& ws,
                                std::span<const double> upstream, double coef, Grads& g,
                                bool want_input_grad = false) {
  const auto& plans = n.plans();
  const std::size_t Lc = n.layers.size();
  ws.delta.assign(static_cast<std::size_t>(n.output_dim), 0.0);
  for (int i = 0; i < n.output_dim; ++i) {
    double u = upstream[static_cast<std::size_t>(i)] * coef;
    if (n.clip_bound) {
      const double a = ws.act[Lc][static_cast<std::size_t>(i)];
      const double R = *n.clip_bound;
      const double ind = (a + R > 0.0 ? 1.0 : 0.0) - (a - R > 0.0 ? 1.0 : 0.0);
      u *= ind;
    }
    ws.delta[static_cast<std::size_t>(i)] = u;
  }
  for (std::size_t li = Lc; li-- > 0;) {
    const net::Layer& L = n.layers[li];
    const net::LayerPlan& p = plans[li];
    const auto& in = ws.act[li];
    auto& gw = g.w[li];
    auto& gb = g.b[li];
    ws.delta_next.assign(static_cast<std::size_t>(L.cols), 0.0);
    for (int r = 0; r < L.rows; ++r) {
      const double dr = ws.delta[static_cast<std::size_t>(r)];
      if (dr == 0.0) continue;
      gb[static_cast<std::size_t>(r)] += dr;
      for (int k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k) {
        const int c = p.col[k];
        const int wi = p.widx[k];
        gw[static_cast<std::size_t>(wi)] += dr * in[static_cast<std::size_t>(c)];
        ws.delta_next[static_cast<std::size_t>(c)] += dr * L.w[static_cast<std::size_t>(wi)];
      }
    }
    if (li > 0) {
      const auto& pre_prev = ws.pre[li - 1];
      for (std::size_t c = 0; c < ws.delta_next.size(); ++c)
        if (!(pre_prev[c] > 0.0)) ws.delta_next[c] = 0.0;
    }
    ws.delta.swap(ws.delta_next);
  }
  if (want_input_grad)
    for (std::size_t i = 0; i < ws.delta.size(); ++i) g.input[i] += ws.delta[i];
}

// Exact reverse-mode derivatives of <upstream, forward(net, x)> with respect
// to all unmasked weights and biases, plus the gradient in the input.
inline Grads gradients(const net::Network& n, std::span<const double> upstream,
                       std::span<const double> x) {
  if (static_cast<int>(upstream.size()) != n.output_dim)
    throw std::invalid_argument("gradients: upstream dimension mismatch");
  Grads g;
  g.init_like(n);
  Workspace ws;
  ws.init_like(n);
  forward_cached(n, x, ws);
  backward_accumulate(n, ws, upstream, 1.0, g, true);
  return g;
}

// Class-membership projection: clamp magnitudes to kappa and re-zero masked
// entries. Idempotent.
inline net::Network project(net::Network n, const net::ArchitectureClass& cls) {
  for (auto& L : n.layers) {
    for (std::size_t i = 0; i < L.w.size(); ++i) {
      if (!L.mask[i]) {
        L.w[i] = 0.0;
        continue;
      }
      L.w[i] = std::clamp(L.w[i], -cls.kappa, cls.kappa);
    }
    for (auto& v : L.b) v = std::clamp(v, -cls.kappa, cls.kappa);
  }
  n.finalize();
  return n;
}

inline void project_in_place(net::Network& n, const net::ArchitectureClass& cls) {
  for (auto& L : n.layers) {
    for (std::size_t i = 0; i < L.w.size(); ++i)
      L.w[i] = L.mask[i] ? std::clamp(L.w[i], -cls.kappa, cls.kappa) : 0.0;
    for (auto& v : L.b) v = std::clamp(v, -cls.kappa, cls.kappa);
  }
}

// A dense network inside the class budgets: depth and width chosen so that
// the parameter count fits K (with the clipping stage charged when present).
inline net::Network init_network_in_class(const net::ArchitectureClass& cls, int in_dim,
                                          int out_dim, Rng& rng, bool clip_output) {
  cls.check(in_dim);
  const long long clip_cost = clip_output ? 7LL * out_dim : 0;
  const int depth_allow = cls.L - (clip_output ? 1 : 0);
  if (depth_allow < 1)
    throw std::invalid_argument("init_network_in_class: depth budget too small");
  const long long K_allow = cls.K - clip_cost;

  auto cost = [&](int width, int hidden) -> long long {
    if (hidden == 0) return static_cast<long long>(in_dim) * out_dim + out_dim;
    long long c = static_cast<long long>(in_dim) * width + width;
    for (int i = 1; i < hidden; ++i) c += static_cast<long long>(width) * width + width;
    c += static_cast<long long>(width) * out_dim + out_dim;
    return c;
  };

  int hidden = std::min(depth_allow - 1, 3);
  int width = 0;
  for (; hidden >= 1; --hidden) {
    for (int w = std::min(cls.p, 16); w >= 1; --w) {
      if (clip_output && 2 * out_dim > cls.p) break;
      if (cost(w, hidden) <= K_allow) {
        width = w;
        break;
      }
    }
    if (width > 0) break;
  }

  net::Network n;
  n.input_dim = in_dim;
  n.output_dim = out_dim;
  auto fill = [&](net::Layer& L) {
    const double s = std::min(cls.kappa, 1.0 / std::sqrt(static_cast<double>(L.cols)));
    for (auto& v : L.w) v = rng.uniform(-s, s);
    for (auto& v : L.b) v = rng.uniform(-s, s) * 0.1;
  };
  if (width == 0) {
    // single affine stage, masked down to the budget if necessary
    net::Layer L(out_dim, in_dim);
    fill(L);
    long long budget = K_allow - out_dim;  // biases kept
    for (int r = 0; r < out_dim; ++r)
      for (int c = 0; c < in_dim; ++c)
        if (static_cast<long long>(r) * in_dim + c >= budget) L.mask_at(r, c) = 0;
    n.layers.push_back(std::move(L));
  } else {
    net::Layer first(width, in_dim);
    fill(first);
    n.layers.push_back(std::move(first));
    for (int i = 1; i < hidden; ++i) {
      net::Layer mid(width, width);
      fill(mid);
      n.layers.push_back(std::move(mid));
    }
    net::Layer last(out_dim, width);
    fill(last);
    n.layers.push_back(std::move(last));
  }
  if (clip_output) n.clip_bound = cls.R;
  n.finalize();
  return n;
}

// Adam with projection back into the class after every step.
class AdamOpt {
 public:
  AdamOpt(const net::Network& n, double lr, const TrainConfig& cfg)
      : lr_(lr), b1_(cfg.adam_beta1), b2_(cfg.adam_beta2), eps_(cfg.adam_eps) {
    for (const auto& L : n.layers) {
      mw_.emplace_back(L.w.size(), 0.0);
      vw_.emplace_back(L.w.size(), 0.0);
      mb_.emplace_back(L.b.size(), 0.0);
      vb_.emplace_back(L.b.size(), 0.0);
    }
  }

  // direction +1 ascends, -1 descends; layers before first_layer are frozen
  void step(net::Network& n, const Grads& g, double direction,
            const net::ArchitectureClass& cls, std::size_t first_layer = 0) {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, t_);
    const double bc2 = 1.0 - std::pow(b2_, t_);
    const auto& plans = n.plans();
    for (std::size_t li = first_layer; li < n.layers.size(); ++li) {
      net::Layer& L = n.layers[li];
      const net::LayerPlan& p = plans[li];
      for (std::size_t k = 0; k < p.widx.size(); ++k) {
        const std::size_t wi = static_cast<std::size_t>(p.widx[k]);
        const double gr = g.w[li][wi];
        mw_[li][wi] = b1_ * mw_[li][wi] + (1 - b1_) * gr;
        vw_[li][wi] = b2_ * vw_[li][wi] + (1 - b2_) * gr * gr;
        const double upd = (mw_[li][wi] / bc1) / (std::sqrt(vw_[li][wi] / bc2) + eps_);
        L.w[wi] = std::clamp(L.w[wi] + direction * lr_ * upd, -cls.kappa, cls.kappa);
      }
      for (std::size_t r = 0; r < L.b.size(); ++r) {
        const double gr = g.b[li][r];
        mb_[li][r] = b1_ * mb_[li][r] + (1 - b1_) * gr;
        vb_[li][r] = b2_ * vb_[li][r] + (1 - b2_) * gr * gr;
        const double upd = (mb_[li][r] / bc1) / (std::sqrt(vb_[li][r] / bc2) + eps_);
        L.b[r] = std::clamp(L.b[r] + direction * lr_ * upd, -cls.kappa, cls.kappa);
      }
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<std::vector<double>> mw_, vw_, mb_, vb_;
};

struct EpochStat {
  double objective = 0.0;
  double eval_ipm = 0.0;
};

struct TrainedGAN {
  net::Network generator;
  net::Network discriminator;
  std::vector<EpochStat> history;
  TrainConfig config;
  net::ArchitectureClass gen_class;
  net::ArchitectureClass disc_class;
};

struct TrainingError : std::runtime_error {
  TrainedGAN last_state;
  TrainingError(const std::string& msg, TrainedGAN state)
      : std::runtime_error(msg), last_state(std::move(state)) {}
};

// Latent access: either fresh draws or a fixed pool addressed by index whose
// values are derived statelessly from the seed (no m-sized storage).
class LatentSource {
 public:
  LatentSource(int d, long long m, std::uint64_t seed)
      : d_(d), m_(m), pool_seed_(mix_seed(seed, 0x9a7eULL)) {}

  void draw(Rng& rng, double* z) const {
    if (m_ == kPopulation) {
      for (int j = 0; j < d_; ++j) z[j] = rng.uniform();
    } else {
      const std::uint64_t idx = rng.uniform_int(static_cast<std::uint64_t>(m_));
      by_index(static_cast<long long>(idx), z);
    }
  }
  void by_index(long long idx, double* z) const {
    for (int j = 0; j < d_; ++j)
      z[j] = hash_uniform(mix_seed(pool_seed_, static_cast<std::uint64_t>(idx) * 16 + j));
  }
  long long pool_size() const { return m_; }

 private:
  int d_;
  long long m_;
  std::uint64_t pool_seed_;
};

// Empirical objective mean_z f(g(z)) - sum_i w_i f(x_i) on explicit latents.
inline double objective_full(const net::Network& gen, const net::Network& disc,
                             std::span<const double> latents, const ipm::PointCloud& data) {
  const int dz = gen.input_dim;
  const long long nz = static_cast<long long>(latents.size()) / dz;
  Workspace wg, wd;
  wg.init_like(gen);
  wd.init_like(disc);
  double left = 0;
  for (long long i = 0; i < nz; ++i) {
    forward_cached(gen, latents.subspan(static_cast<std::size_t>(i) * dz, dz), wg);
    forward_cached(disc, wg.out, wd);
    left += wd.out[0];
  }
  left /= static_cast<double>(nz);
  double right = 0;
  for (int i = 0; i < data.size(); ++i) {
    forward_cached(disc, std::span<const double>(data.point(i), data.d), wd);
    right += data.weight(i) * wd.out[0];
  }
  return left - right;
}

// Alternating projected optimization of the empirical minimax objective:
// disc_steps_per_gen ascent steps on the discriminator, one descent step on
// the generator, projection back into the classes after every step.
inline TrainedGAN train(const net::ArchitectureClass& gen_cls,
                        const net::ArchitectureClass& disc_cls, const ipm::PointCloud& data,
                        int latent_dim, const TrainConfig& cfg,
                        std::optional<net::Network> gen_init = std::nullopt,
                        std::optional<net::Network> disc_init = std::nullopt,
                        const std::function<double(const net::Network&)>& eval_metric = {}) {
  cfg.check();
  data.check();
  const int dx = data.d;
  Rng init_rng(mix_seed(cfg.seed, 0x11a1ULL));
  net::Network gen = gen_init ? std::move(*gen_init)
                              : init_network_in_class(gen_cls, latent_dim, dx, init_rng, true);
  net::Network disc = disc_init
                          ? std::move(*disc_init)
                          : init_network_in_class(disc_cls, dx, 1, init_rng, true);
  project_in_place(gen, gen_cls);
  project_in_place(disc, disc_cls);

  LatentSource latent(latent_dim, cfg.m, cfg.seed);
  Rng step_rng(mix_seed(cfg.seed, 0x57e9ULL));

  // fixed evaluation latents: from the pool when finite, fresh-but-frozen
  // otherwise
  const long long eval_n =
      cfg.m == kPopulation ? cfg.eval_n : std::min<long long>(cfg.m, cfg.eval_n);
  std::vector<double> eval_latents(static_cast<std::size_t>(eval_n) * latent_dim);
  {
    Rng eval_rng(mix_seed(cfg.seed, 0xe7a1ULL));
    for (long long i = 0; i < eval_n; ++i) {
      if (cfg.m == kPopulation) {
        for (int j = 0; j < latent_dim; ++j)
          eval_latents[static_cast<std::size_t>(i * latent_dim + j)] = eval_rng.uniform();
      } else {
        latent.by_index(i, &eval_latents[static_cast<std::size_t>(i * latent_dim)]);
      }
    }
  }

  AdamOpt gen_opt(gen, cfg.gen_lr, cfg);
  AdamOpt disc_opt(disc, cfg.disc_lr, cfg);
  Workspace wg, wd;
  wg.init_like(gen);
  wd.init_like(disc);
  Grads g_disc, g_gen;
  g_disc.init_like(disc);
  g_gen.init_like(gen);
  std::vector<double> zbuf(static_cast<std::size_t>(latent_dim));
  const double upstream1[1] = {1.0};

  TrainedGAN result;
  result.config = cfg;
  result.gen_class = gen_cls;
  result.disc_class = disc_cls;

  auto finite = [](const net::Network& n) {
    for (const auto& L : n.layers) {
      for (double v : L.w)
        if (!std::isfinite(v)) return false;
      for (double v : L.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  };

  net::Network gen_snapshot = gen, disc_snapshot = disc;
  net::Network best_gen = gen;
  double best_metric = eval_metric ? eval_metric(gen) : std::numeric_limits<double>::infinity();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int upd = 0; upd < cfg.updates_per_epoch; ++upd) {
      for (int ds = 0; ds < cfg.disc_steps_per_gen; ++ds) {
        g_disc.zero();
        for (int i = 0; i < cfg.batch; ++i) {
          latent.draw(step_rng, zbuf.data());
          forward_cached(gen, zbuf, wg);
          forward_cached(disc, wg.out, wd);
          backward_accumulate(disc, wd, upstream1, 1.0 / cfg.batch, g_disc);
        }
        for (int i = 0; i < data.size(); ++i) {
          forward_cached(disc, std::span<const double>(data.point(i), data.d), wd);
          backward_accumulate(disc, wd, upstream1, -data.weight(i), g_disc);
        }
        disc_opt.step(disc, g_disc, +1.0, disc_cls);
        project_in_place(disc, disc_cls);
      }
      g_gen.zero();
      for (int i = 0; i < cfg.batch; ++i) {
        latent.draw(step_rng, zbuf.data());
        forward_cached(gen, zbuf, wg);
        forward_cached(disc, wg.out, wd);
        g_disc.zero();  // reused as scratch for the input gradient
        std::fill(g_disc.input.begin(), g_disc.input.end(), 0.0);
        backward_accumulate(disc, wd, upstream1, 1.0 / cfg.batch, g_disc, true);
        backward_accumulate(gen, wg, std::span<const double>(g_disc.input.data(),
                                                             g_disc.input.size()),
                            1.0, g_gen);
      }
      const std::size_t gen_first =
          cfg.gen_trainable_layers < 0
              ? 0
              : gen.layers.size() -
                    std::min<std::size_t>(gen.layers.size(),
                                          static_cast<std::size_t>(cfg.gen_trainable_layers));
      gen_opt.step(gen, g_gen, -1.0, gen_cls, gen_first);
      project_in_place(gen, gen_cls);
    }
    const double obj = objective_full(gen, disc, eval_latents, data);
    const double metric = eval_metric ? eval_metric(gen) : std::abs(obj);
    result.history.push_back({obj, metric});
    if (!std::isfinite(obj) || !finite(gen) || !finite(disc)) {
      result.generator = std::move(gen_snapshot);
      result.discriminator = std::move(disc_snapshot);
      throw TrainingError("train: non-finite state at epoch " + std::to_string(epoch),
                          std::move(result));
    }
    if (eval_metric && metric < best_metric) {
      best_metric = metric;
      best_gen = gen;
    }
    gen_snapshot = gen;
    disc_snapshot = disc;
  }
  result.generator = (cfg.keep_best && eval_metric) ? std::move(best_gen) : std::move(gen);
  result.discriminator = std::move(disc);
  return result;
}

// History checkpoint CSV: epoch, objective, eval_ipm.
inline std::string history_csv(const TrainedGAN& t) {
  std::string out = "epoch,objective,eval_ipm\n";
  for (std::size_t e = 0; e < t.history.size(); ++e) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", e, t.history[e].objective,
                  t.history[e].eval_ipm);
    out += buf;
  }
  return out;
}

}  // namespace ganlab::train
