#pragma once

#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ganlab/approximator.hpp"
#include "ganlab/bounds.hpp"
#include "ganlab/gan_train.hpp"
#include "ganlab/holder.hpp"
#include "ganlab/ipm.hpp"
#include "ganlab/numerics.hpp"
#include "ganlab/relu_net.hpp"
#include "ganlab/rng.hpp"
#include "ganlab/transport.hpp"

namespace ganlab::harness {

// ---------------------------------------------------------------------------
// deterministic number formatting (shortest round-trip decimal)

inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{}) throw std::invalid_argument("parse_double: bad value '" + s + "'");
  return v;
}

// keyed work, order-independent aggregation
template <class F>
void parallel_for_indexed(int n, F&& f) {
  const unsigned hw = std::thread::hardware_concurrency();
  if (hw <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      int i;
      while ((i = next.fetch_add(1)) < n) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// reports

struct Cell {
  long long n = 0;
  long long seed = 0;
  double value = 0.0;
  bool ok = true;
  std::string msg;
};

struct Series {
  std::string metric;
  std::vector<Cell> cells;
  bool has_fit = false;
  LineFit fit;
  double exponent_theory = 0.0;
  bool has_exponent = false;
  bool verdict = true;
  std::vector<std::pair<double, double>> budget_curve;  // (n, bound)
};

struct Report {
  std::string experiment;
  std::vector<Series> series;
  bool verdict = true;
  std::string notes;
};

// OLS slope on logarithmic axes; the spec'd measurement primitive.
inline LineFit fit_loglog_slope(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3)
    throw std::invalid_argument("fit_loglog_slope: need at least 3 points");
  std::vector<double> x, y;
  for (const auto& [n, v] : points) {
    if (!(v > 0.0) || !(n > 0.0))
      throw std::invalid_argument("fit_loglog_slope: nonpositive value");
    x.push_back(std::log(n));
    y.push_back(std::log(v));
  }
  return fit_line(x, y);
}

// per-n means over ok cells
inline std::vector<std::pair<double, double>> mean_by_n(const Series& s) {
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < s.cells.size();) {
    const long long n = s.cells[i].n;
    double sum = 0;
    int cnt = 0;
    std::size_t j = i;
    for (; j < s.cells.size() && s.cells[j].n == n; ++j) {
      if (s.cells[j].ok) {
        sum += s.cells[j].value;
        ++cnt;
      }
    }
    if (cnt > 0) out.emplace_back(static_cast<double>(n), sum / cnt);
    i = j;
  }
  return out;
}

// CSV schema: experiment,n,seed,metric,value,slope,exponent_theory,verdict
inline std::string to_csv(const Report& r) {
  std::string out = "experiment,n,seed,metric,value,slope,exponent_theory,verdict\n";
  auto row = [&](const std::string& n, const std::string& seed, const std::string& metric,
                 const std::string& value, const std::string& slope,
                 const std::string& expo, const std::string& verdict) {
    out += r.experiment + "," + n + "," + seed + "," + metric + "," + value + "," + slope +
           "," + expo + "," + verdict + "\n";
  };
  for (const auto& s : r.series) {
    for (const auto& c : s.cells)
      row(std::to_string(c.n), std::to_string(c.seed), c.ok ? s.metric : s.metric + "_failed",
          c.ok ? fmt_double(c.value) : "", "", "", c.ok ? "" : "false");
    if (s.has_fit)
      row("", "", s.metric + "_slope", fmt_double(s.fit.slope), fmt_double(s.fit.slope),
          s.has_exponent ? fmt_double(s.exponent_theory) : "", s.verdict ? "true" : "false");
    else if (!s.has_fit && (s.verdict || true))
      row("", "", s.metric + "_verdict", "", "",
          s.has_exponent ? fmt_double(s.exponent_theory) : "", s.verdict ? "true" : "false");
  }
  row("", "", "overall", "", "", "", r.verdict ? "true" : "false");
  return out;
}

struct CsvRecord {
  std::string experiment, metric;
  std::optional<long long> n, seed;
  std::optional<double> value, slope, exponent_theory;
  std::optional<bool> verdict;
};

inline std::vector<CsvRecord> parse_csv(const std::string& text) {
  std::vector<CsvRecord> out;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        f.push_back(cur);
        cur.clear();
      } else
        cur += ch;
    }
    f.push_back(cur);
    if (f.size() != 8) throw std::invalid_argument("parse_csv: bad row '" + line + "'");
    CsvRecord rec;
    rec.experiment = f[0];
    if (!f[1].empty()) rec.n = std::stoll(f[1]);
    if (!f[2].empty()) rec.seed = std::stoll(f[2]);
    rec.metric = f[3];
    if (!f[4].empty()) rec.value = parse_double(f[4]);
    if (!f[5].empty()) rec.slope = parse_double(f[5]);
    if (!f[6].empty()) rec.exponent_theory = parse_double(f[6]);
    if (!f[7].empty()) rec.verdict = (f[7] == "true");
    out.push_back(std::move(rec));
  }
  return out;
}

inline void emit_csv(const Report& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_csv: cannot open " + path);
  out << to_csv(r);
}

// log-log scatter with fitted line and budget curve
inline std::string to_svg(const Report& r) {
  const int W = 720, H = 520, ML = 70, MR = 20, MT = 40, MB = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  auto upd = [&](double n, double v) {
    if (!(n > 0) || !(v > 0)) return;
    xmin = std::min(xmin, std::log(n));
    xmax = std::max(xmax, std::log(n));
    ymin = std::min(ymin, std::log(v));
    ymax = std::max(ymax, std::log(v));
  };
  for (const auto& s : r.series) {
    for (const auto& c : s.cells)
      if (c.ok) upd(static_cast<double>(c.n), c.value);
    for (const auto& [n, v] : s.budget_curve) upd(n, v);
  }
  if (xmin > xmax) {
    xmin = ymin = 0;
    xmax = ymax = 1;
  }
  if (xmax - xmin < 1e-9) xmax = xmin + 1;
  if (ymax - ymin < 1e-9) ymax = ymin + 1;
  auto X = [&](double n) {
    return ML + (std::log(n) - xmin) / (xmax - xmin) * (W - ML - MR);
  };
  auto Y = [&](double v) {
    return H - MB - (std::log(v) - ymin) / (ymax - ymin) * (H - MT - MB);
  };
  char buf[256];
  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  std::snprintf(buf, sizeof(buf),
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                "viewBox=\"0 0 %d %d\">\n",
                W, H, W, H);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<rect x=\"0\" y=\"0\" width=\"%d\" height=\"%d\" fill=\"white\"/>\n", W, H);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<text x=\"%d\" y=\"24\" font-family=\"monospace\" font-size=\"16\">%s "
                "(log-log)</text>\n",
                ML, r.experiment.c_str());
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ML,
                H - MB, W - MR, H - MB);
  svg += buf;
  std::snprintf(buf, sizeof(buf),
                "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", ML, MT,
                ML, H - MB);
  svg += buf;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
  int si = 0;
  for (const auto& s : r.series) {
    const char* col = colors[si % 5];
    ++si;
    for (const auto& c : s.cells) {
      if (!c.ok) continue;
      std::snprintf(buf, sizeof(buf),
                    "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3\" fill=\"%s\" fill-opacity=\"0.5\"/>\n",
                    X(static_cast<double>(c.n)), Y(c.value), col);
      svg += buf;
    }
    if (s.has_fit) {
      const double n0 = std::exp(xmin), n1 = std::exp(xmax);
      const double v0 = std::exp(s.fit.intercept + s.fit.slope * xmin);
      const double v1 = std::exp(s.fit.intercept + s.fit.slope * xmax);
      std::snprintf(buf, sizeof(buf),
                    "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"%s\" "
                    "stroke-width=\"1.5\"/>\n",
                    X(n0), Y(std::max(v0, 1e-300)), X(n1), Y(std::max(v1, 1e-300)), col);
      svg += buf;
      std::snprintf(buf, sizeof(buf),
                    "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"12\" "
                    "fill=\"%s\">%s slope=%.4f</text>\n",
                    ML + 8, MT + 16 * si, col, s.metric.c_str(), s.fit.slope);
      svg += buf;
    }
    if (!s.budget_curve.empty()) {
      std::string pts;
      for (const auto& [n, v] : s.budget_curve) {
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", X(n), Y(v));
        pts += buf;
      }
      svg += "<polyline fill=\"none\" stroke=\"#444444\" stroke-dasharray=\"5,3\" points=\"" +
             pts + "\"/>\n";
    }
  }
  svg += "</svg>\n";
  return svg;
}

inline void emit_svg(const Report& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_svg: cannot open " + path);
  out << to_svg(r);
}

// ---------------------------------------------------------------------------
// experiment configuration

struct ExperimentConfig {
  std::string kind = "rate";  // rate | approx_scaling | transport_check |
                              // covering_oracle | stat_error
  std::uint64_t seed = 20240601;
  std::string out_dir;

  // fixture
  std::optional<std::string> fixture_path;
  std::uint64_t fixture_seed = 7;
  int d = 1;
  double alpha = 2.0;
  double tau = 0.5;
  int k_max = 4;

  std::vector<long long> n_grid = {128, 256, 512, 1024, 2048, 4096, 8192};
  int seeds = 5;
  double beta = 1.0;
  double slope_tol = 0.1;
  bounds::ConstantsMode constants_mode = bounds::ConstantsMode::recorded;
  double m_exponent = 0.0;  // 0 = fresh latent draws; e > 0 fixes m = n^e
  std::vector<double> delta_grid = {0.1, 0.05};
  int eval_points = 32768;

  train::TrainConfig train;

  ExperimentConfig() {
    train.epochs = 8;
    train.updates_per_epoch = 3;
    train.batch = 256;
    train.disc_steps_per_gen = 5;
    train.gen_lr = 1e-4;
    train.disc_lr = 1e-3;
    train.keep_best = true;
    train.gen_trainable_layers = 1;
  }

  void check_for_slope() const {
    if (n_grid.size() < 3)
      throw std::invalid_argument("ExperimentConfig: slope experiments need >= 3 grid points");
    for (std::size_t i = 1; i < n_grid.size(); ++i)
      if (n_grid[i] <= n_grid[i - 1])
        throw std::invalid_argument("ExperimentConfig: n_grid must increase strictly");
    if (seeds < 3)
      throw std::invalid_argument("ExperimentConfig: slope experiments need >= 3 seeds");
  }

  density::HolderDensity fixture() const {
    if (fixture_path) return density::load_density(*fixture_path);
    return density::synthesize(fixture_seed, d, alpha, tau, k_max);
  }
};

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("kind")) c.kind = j.at("kind").get<std::string>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("fixture_path")) c.fixture_path = j.at("fixture_path").get<std::string>();
  if (j.contains("fixture_seed")) c.fixture_seed = j.at("fixture_seed").get<std::uint64_t>();
  if (j.contains("d")) c.d = j.at("d").get<int>();
  if (j.contains("alpha")) c.alpha = j.at("alpha").get<double>();
  if (j.contains("tau")) c.tau = j.at("tau").get<double>();
  if (j.contains("k_max")) c.k_max = j.at("k_max").get<int>();
  if (j.contains("n_grid")) c.n_grid = j.at("n_grid").get<std::vector<long long>>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<int>();
  if (j.contains("beta")) c.beta = j.at("beta").get<double>();
  if (j.contains("slope_tol")) c.slope_tol = j.at("slope_tol").get<double>();
  if (j.contains("constants_mode"))
    c.constants_mode = j.at("constants_mode").get<std::string>() == "unit"
                           ? bounds::ConstantsMode::unit
                           : bounds::ConstantsMode::recorded;
  if (j.contains("m_exponent")) c.m_exponent = j.at("m_exponent").get<double>();
  if (j.contains("delta_grid")) c.delta_grid = j.at("delta_grid").get<std::vector<double>>();
  if (j.contains("eval_points")) c.eval_points = j.at("eval_points").get<int>();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("gen_lr")) c.train.gen_lr = t.at("gen_lr").get<double>();
    if (t.contains("disc_lr")) c.train.disc_lr = t.at("disc_lr").get<double>();
    if (t.contains("epochs")) c.train.epochs = t.at("epochs").get<int>();
    if (t.contains("batch")) c.train.batch = t.at("batch").get<int>();
    if (t.contains("disc_steps_per_gen"))
      c.train.disc_steps_per_gen = t.at("disc_steps_per_gen").get<int>();
    if (t.contains("updates_per_epoch"))
      c.train.updates_per_epoch = t.at("updates_per_epoch").get<int>();
    if (t.contains("eval_n")) c.train.eval_n = t.at("eval_n").get<int>();
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// rate experiment: sample, size, warm start, train, measure, fit

struct RateReport {
  Report report;
  std::vector<std::pair<double, double>> means;
  double slope = 0.0, slope_lo = 0.0, slope_hi = 0.0;
  double exponent_theory = 0.0;
  double budget_C = 0.0;
  bool slope_ok = false;
  bool budget_ok = false;
  bool verdict = false;
};

inline RateReport run_rate_experiment(const ExperimentConfig& cfg) {
  cfg.check_for_slope();
  const density::HolderDensity mu = cfg.fixture();
  const int d = mu.d;
  const double beta = cfg.beta;
  const double rate = bounds::rate_exponent(beta, d);
  const transport::Source rho = transport::Source::uniform(d);
  const transport::TransportMap T =
      d == 1 ? transport::monge_1d(rho, mu) : transport::moser_flow(rho, mu, 256, 64);

  // deterministic evaluation reference: stratified quantiles of the target
  const int M = cfg.eval_points;
  std::vector<double> ref_sorted;
  if (d == 1) {
    const auto series = mu.as_series_1d();
    ref_sorted.resize(static_cast<std::size_t>(M));
    for (int i = 0; i < M; ++i)
      ref_sorted[static_cast<std::size_t>(i)] = series.quantile((i + 0.5) / M);
  }

  // warm starts shared across replicates at fixed n
  struct PerN {
    long long n;
    double eps;
    net::Network warm;
    bounds::ArchitectureSpec gen_spec, disc_spec;
    approx::ApproxPlan plan;
  };
  std::vector<PerN> per_n;
  for (long long n : cfg.n_grid) {
    PerN pn;
    pn.n = n;
    const double nn = static_cast<double>(n);
    if (cfg.m_exponent > 0.0) {
      const double m = std::pow(nn, cfg.m_exponent);
      pn.eps = std::pow(m, -(cfg.alpha + 1.0) / (2.0 * (cfg.alpha + 1.0) + d));
      pn.gen_spec = bounds::size_generator_finite_m(m, cfg.alpha, d, mu.B, cfg.constants_mode);
    } else {
      pn.eps = std::pow(nn, -rate);
      pn.gen_spec = bounds::size_generator(pn.eps, cfg.alpha, d, mu.B, cfg.constants_mode);
    }
    // the trained discriminator is initialized inside the unit-constant class
    pn.disc_spec = bounds::size_discriminator(nn, beta, d, mu.B, bounds::ConstantsMode::unit);
    pn.plan = approx::plan(cfg.alpha + 1.0, d, std::min(0.9, pn.eps));
    pn.warm = train::warm_start_from_transport(T, pn.plan);
    per_n.push_back(std::move(pn));
  }

  const int total_cells = static_cast<int>(per_n.size()) * cfg.seeds;
  std::vector<Cell> cells(static_cast<std::size_t>(total_cells));
  auto run_cell = [&](int idx) {
    const int ni = idx / cfg.seeds;
    const int rep = idx % cfg.seeds;
    const PerN& pn = per_n[static_cast<std::size_t>(ni)];
    Cell& cell = cells[static_cast<std::size_t>(idx)];
    cell.n = pn.n;
    cell.seed = rep;
    try {
      const std::uint64_t cell_seed =
          mix_seed(cfg.seed, static_cast<std::uint64_t>(pn.n), static_cast<std::uint64_t>(rep));
      ipm::PointCloud data;
      data.d = d;
      data.pts = density::sample(mu, static_cast<int>(pn.n), mix_seed(cell_seed, 1));

      train::TrainConfig tc = cfg.train;
      tc.seed = cell_seed;
      if (cfg.m_exponent > 0.0)
        tc.m = static_cast<long long>(
            std::llround(std::pow(static_cast<double>(pn.n), cfg.m_exponent)));

      auto gen_cls = pn.gen_spec.to_class(net::ArchitectureClass::Role::generator);
      auto disc_cls = pn.disc_spec.to_class(net::ArchitectureClass::Role::discriminator);

      // validation metric for checkpoint selection: exact W1 between a
      // stratified pushforward and the training sample (d = 1)
      std::function<double(const net::Network&)> eval_metric;
      if (d == 1) {
        const ipm::PointCloud* data_ptr = &data;
        eval_metric = [data_ptr](const net::Network& g) {
          const int ne = 2048;
          train::Workspace ws;
          ws.init_like(g);
          std::vector<double> pushed(static_cast<std::size_t>(ne));
          for (int i = 0; i < ne; ++i) {
            const double z = (i + 0.5) / ne;
            train::forward_cached(g, std::span<const double>(&z, 1), ws);
            pushed[static_cast<std::size_t>(i)] = ws.out[0];
          }
          return ipm::w1_exact_1d(ipm::make_cloud_1d(std::move(pushed)), *data_ptr).value;
        };
      }
      train::TrainedGAN out =
          train::train(gen_cls, disc_cls, data, d, tc, pn.warm, std::nullopt, eval_metric);

      if (d == 1 && beta <= 1.0) {
        // stratified pushforward vs target quantiles: exact 1-Wasserstein
        std::vector<double> pushed(static_cast<std::size_t>(M));
        train::Workspace ws;
        ws.init_like(out.generator);
        for (int i = 0; i < M; ++i) {
          const double z = (i + 0.5) / M;
          train::forward_cached(out.generator, std::span<const double>(&z, 1), ws);
          pushed[static_cast<std::size_t>(i)] = ws.out[0];
        }
        std::sort(pushed.begin(), pushed.end());
        double acc = 0;
        for (int i = 0; i < M; ++i)
          acc += std::abs(pushed[static_cast<std::size_t>(i)] - ref_sorted[static_cast<std::size_t>(i)]);
        cell.value = acc / M;
      } else if (d == 2 && beta <= 1.0) {
        const int m2 = 2048;
        ipm::PointCloud pushed;
        pushed.d = 2;
        std::vector<double> zs = rho.sample(m2, mix_seed(cell_seed, 2));
        pushed.pts.resize(zs.size());
        train::Workspace ws;
        ws.init_like(out.generator);
        for (int i = 0; i < m2; ++i) {
          train::forward_cached(out.generator,
                                std::span<const double>(&zs[static_cast<std::size_t>(i) * 2], 2), ws);
          pushed.pts[static_cast<std::size_t>(i) * 2] = ws.out[0];
          pushed.pts[static_cast<std::size_t>(i) * 2 + 1] = ws.out[1];
        }
        ipm::PointCloud refc;
        refc.d = 2;
        refc.pts = density::sample(mu, m2, mix_seed(cell_seed, 3));
        cell.value = ipm::sinkhorn_w1(pushed, refc, 1e-3 * mu.B * std::sqrt(2.0)).value;
      } else {
        // smoothness index above 1: surrogate class distance with the sized
        // discriminator (labeled as such in the metric name)
        ipm::PointCloud pushed;
        pushed.d = d;
        const int m2 = 2048;
        std::vector<double> zs = rho.sample(m2, mix_seed(cell_seed, 2));
        pushed.pts.resize(zs.size());
        train::Workspace ws;
        ws.init_like(out.generator);
        for (int i = 0; i < m2; ++i) {
          train::forward_cached(out.generator,
                                std::span<const double>(&zs[static_cast<std::size_t>(i) * d],
                                                        static_cast<std::size_t>(d)),
                                ws);
          for (int c2 = 0; c2 < d; ++c2)
            pushed.pts[static_cast<std::size_t>(i) * d + c2] = ws.out[static_cast<std::size_t>(c2)];
        }
        ipm::PointCloud refc;
        refc.d = d;
        refc.pts = density::sample(mu, m2, mix_seed(cell_seed, 3));
        train::TrainConfig nb;
        nb.seed = mix_seed(cell_seed, 4);
        nb.epochs = 60;
        nb.updates_per_epoch = 1;
        nb.disc_steps_per_gen = 1;
        nb.disc_lr = 1e-2;
        cell.value = ipm::neural_net_distance(
                         pushed, refc,
                         pn.disc_spec.to_class(net::ArchitectureClass::Role::discriminator), nb)
                         .value;
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.msg = e.what();
    }
  };
  parallel_for_indexed(total_cells, run_cell);

  RateReport rr;
  rr.exponent_theory = -rate;
  Series s;
  s.metric = (beta <= 1.0) ? (d == 1 ? "w1" : "sinkhorn_w1") : "neural_surrogate";
  s.cells = cells;
  rr.means = mean_by_n(s);
  if (rr.means.size() < 3)
    throw std::runtime_error("run_rate_experiment: too many failed cells for a slope fit");
  s.fit = fit_loglog_slope(rr.means);
  s.has_fit = true;
  s.exponent_theory = -rate;
  s.has_exponent = true;
  rr.slope = s.fit.slope;
  rr.slope_lo = s.fit.slope_lo;
  rr.slope_hi = s.fit.slope_hi;
  rr.slope_ok = rr.slope <= -rate + cfg.slope_tol;

  rr.budget_C = rr.means.front().second /
                bounds::rate_curve(rr.means.front().first, beta, d, 1.0);
  rr.budget_ok = true;
  for (const auto& [n, v] : rr.means) {
    const double cap = bounds::rate_curve(n, beta, d, rr.budget_C);
    s.budget_curve.emplace_back(n, cap);
    if (v > cap * (1.0 + 1e-9)) rr.budget_ok = false;
  }
  s.verdict = rr.slope_ok && rr.budget_ok;
  rr.verdict = s.verdict;

  rr.report.experiment = cfg.m_exponent > 0.0 ? "rate_finite_m" : "rate";
  rr.report.series.push_back(std::move(s));
  rr.report.verdict = rr.verdict;
  rr.report.notes = "eps=" + fmt_double(rate) + " exponent; discriminator sized at unit constants";
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    emit_csv(rr.report, cfg.out_dir + "/" + rr.report.experiment + ".csv");
    emit_svg(rr.report, cfg.out_dir + "/" + rr.report.experiment + ".svg");
  }
  return rr;
}

// ---------------------------------------------------------------------------
// statistical error experiment: E[W1(empirical_n, mu)] decay

inline Report run_stat_error(const ExperimentConfig& cfg) {
  cfg.check_for_slope();
  Report rep;
  rep.experiment = "stat_error";
  density::HolderDensity uniform;
  uniform.d = 1;
  uniform.alpha = cfg.alpha;
  uniform.tau = 0.9;
  uniform.B = 1.0;
  uniform.normalizer = 1.0;
  const density::HolderDensity cosine = cfg.fixture();
  const std::pair<std::string, const density::HolderDensity*> fixtures[2] = {
      {"w1_uniform", &uniform}, {"w1_cosine", &cosine}};

  for (const auto& [name, pd] : fixtures) {
    Series s;
    s.metric = name;
    const int total = static_cast<int>(cfg.n_grid.size()) * cfg.seeds;
    s.cells.resize(static_cast<std::size_t>(total));
    const density::HolderDensity* target = pd;
    auto run_cell = [&, target](int idx) {
      const int ni = idx / cfg.seeds;
      const int rep_i = idx % cfg.seeds;
      Cell& cell = s.cells[static_cast<std::size_t>(idx)];
      cell.n = cfg.n_grid[static_cast<std::size_t>(ni)];
      cell.seed = rep_i;
      try {
        const std::uint64_t cs = mix_seed(cfg.seed, static_cast<std::uint64_t>(cell.n),
                                          static_cast<std::uint64_t>(rep_i));
        ipm::PointCloud cloud =
            ipm::make_cloud_1d(density::sample(*target, static_cast<int>(cell.n), cs));
        cell.value = ipm::w1_vs_density_1d(cloud, *target).value;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.msg = e.what();
      }
    };
    parallel_for_indexed(total, run_cell);
    s.fit = fit_loglog_slope(mean_by_n(s));
    s.has_fit = true;
    s.exponent_theory = -0.5;
    s.has_exponent = true;
    s.verdict = std::abs(s.fit.slope + 0.5) <= 0.07;
    rep.verdict = rep.verdict && s.verdict;
    rep.series.push_back(std::move(s));
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    emit_csv(rep, cfg.out_dir + "/stat_error.csv");
    emit_svg(rep, cfg.out_dir + "/stat_error.svg");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// approximation scaling: sup error <= delta, parameter growth in 1/delta

inline Report run_approx_scaling(const ExperimentConfig& cfg) {
  Report rep;
  rep.experiment = "approx_scaling";
  const double betas[3] = {1.0, 2.0, 3.0};
  const int per_beta[3] = {7, 7, 6};
  const auto grid = approx::unit_grid(1, 8193);

  for (int bi = 0; bi < 3; ++bi) {
    const double beta = betas[bi];
    Series err_s, par_s;
    err_s.metric = "sup_error_beta" + std::to_string(static_cast<int>(beta));
    par_s.metric = "params_beta" + std::to_string(static_cast<int>(beta));
    bool errors_ok = true;
    for (int ti = 0; ti < per_beta[bi]; ++ti) {
      const density::HolderDensity f =
          density::synthesize(mix_seed(cfg.seed, 100 + bi * 10 + ti), 1, beta, 0.5, 6);
      approx::Target target;
      target.d = 1;
      target.value = [f](const double* x) { return f.eval_unchecked(x); };
      target.deriv = [f](const double* x, const int* nu) { return f.deriv(x, nu[0]); };
      for (double delta : cfg.delta_grid) {
        const auto p = approx::plan(beta, 1, delta);
        const net::Network net = approx::approximate(target, p);
        const double err = approx::sup_error(net, target, grid);
        const long long inv = std::llround(1.0 / delta);
        err_s.cells.push_back({inv, ti, err, true, ""});
        par_s.cells.push_back({inv, ti, static_cast<double>(net::count_nonzero(net)), true, ""});
        if (err > delta) errors_ok = false;
      }
    }
    err_s.verdict = errors_ok;
    par_s.fit = fit_loglog_slope(mean_by_n(par_s));
    par_s.has_fit = true;
    par_s.exponent_theory = 1.0 / beta;
    par_s.has_exponent = true;
    par_s.verdict = par_s.fit.slope <= 1.0 / beta + 0.3;
    rep.verdict = rep.verdict && err_s.verdict && par_s.verdict;
    rep.series.push_back(std::move(err_s));
    rep.series.push_back(std::move(par_s));
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    emit_csv(rep, cfg.out_dir + "/approx_scaling.csv");
    emit_svg(rep, cfg.out_dir + "/approx_scaling.svg");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// transport check: pushforward residuals and cross-method agreement

inline Report run_transport_check(const ExperimentConfig& cfg, int fixtures = 20,
                                  int n_samples = 100000, int grid_n = 512, int rk_steps = 64) {
  Report rep;
  rep.experiment = "transport_check";
  Series monge_s, moser_s, agree_s;
  monge_s.metric = "w1_monge";
  moser_s.metric = "w1_moser";
  agree_s.metric = "sup_agreement";
  monge_s.cells.resize(static_cast<std::size_t>(fixtures));
  moser_s.cells.resize(static_cast<std::size_t>(fixtures));
  agree_s.cells.resize(static_cast<std::size_t>(fixtures));

  auto run_cell = [&](int i) {
    const std::uint64_t fseed = mix_seed(cfg.seed, 7000 + static_cast<std::uint64_t>(i));
    Cell &cm = monge_s.cells[static_cast<std::size_t>(i)],
         &cf = moser_s.cells[static_cast<std::size_t>(i)],
         &ca = agree_s.cells[static_cast<std::size_t>(i)];
    cm.n = cf.n = ca.n = i + 1;
    cm.seed = cf.seed = ca.seed = static_cast<long long>(fseed & 0xffff);
    try {
      const auto mu = density::synthesize(fseed, 1, cfg.alpha, 0.4, 6);
      const auto rho = transport::Source::uniform(1);
      const auto Tm = transport::monge_1d(rho, mu);
      const auto Tf = transport::moser_flow(rho, mu, grid_n, rk_steps);
      cm.value = transport::verify_pushforward(Tm, rho, mu, n_samples, mix_seed(fseed, 1));
      cf.value = transport::verify_pushforward(Tf, rho, mu, n_samples, mix_seed(fseed, 2));
      double sup = 0;
      for (int k = 0; k < 1000; ++k) {
        const double z = (k + 0.5) / 1000.0;
        sup = std::max(sup, std::abs(Tm.apply1(z) - Tf.apply1(z)));
      }
      ca.value = sup;
    } catch (const std::exception& e) {
      cm.ok = cf.ok = ca.ok = false;
      cm.msg = cf.msg = ca.msg = e.what();
    }
  };
  parallel_for_indexed(fixtures, run_cell);

  auto all_below = [](const Series& s, double cap) {
    for (const auto& c : s.cells)
      if (!c.ok || c.value > cap) return false;
    return true;
  };
  monge_s.verdict = all_below(monge_s, 1e-2);
  moser_s.verdict = all_below(moser_s, 1e-2);
  agree_s.verdict = all_below(agree_s, 1e-2);
  rep.verdict = monge_s.verdict && moser_s.verdict && agree_s.verdict;
  rep.series.push_back(std::move(monge_s));
  rep.series.push_back(std::move(moser_s));
  rep.series.push_back(std::move(agree_s));
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    emit_csv(rep, cfg.out_dir + "/transport_check.csv");
    emit_svg(rep, cfg.out_dir + "/transport_check.svg");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// brute-force covering oracle on tiny parameterized families

struct TinyParamFamily {
  std::string name;
  net::Network base;
  struct Free {
    int layer;
    int row;
    int col;  // -1 addresses the bias
  };
  std::vector<Free> params;
  double kappa = 1.0;
  bounds::ArchitectureSpec spec;  // for the covering bound comparison
};

inline long long brute_force_covering(const TinyParamFamily& fam, double delta,
                                      double param_step, const std::vector<double>& eval_grid) {
  if (fam.params.size() > 3)
    throw std::invalid_argument("brute_force_covering: at most 3 free parameters");
  if (fam.kappa > 1.0)
    throw std::invalid_argument("brute_force_covering: kappa must be <= 1");
  const int P = static_cast<int>(fam.params.size());
  const long long g =
      static_cast<long long>(std::floor(2.0 * fam.kappa / param_step + 1e-9)) + 1;
  long long total = 1;
  for (int i = 0; i < P; ++i) {
    total *= g;
    if (total > 10000000LL)
      throw std::runtime_error("brute_force_covering: enumeration exceeds 1e7 networks");
  }
  const long long N = total;
  if (N * N / 8 > (1LL << 29))
    throw std::runtime_error("brute_force_covering: adjacency storage exceeds budget");

  const int G = static_cast<int>(eval_grid.size());
  std::vector<double> values(static_cast<std::size_t>(N) * G);
  net::Network work = fam.base;
  for (long long idx = 0; idx < N; ++idx) {
    long long rem = idx;
    for (int pi = 0; pi < P; ++pi) {
      const double v = -fam.kappa + param_step * static_cast<double>(rem % g);
      rem /= g;
      const auto& fp = fam.params[static_cast<std::size_t>(pi)];
      if (fp.col < 0)
        work.layers[static_cast<std::size_t>(fp.layer)].b[static_cast<std::size_t>(fp.row)] = v;
      else
        work.layers[static_cast<std::size_t>(fp.layer)].at(fp.row, fp.col) = v;
    }
    for (int k = 0; k < G; ++k)
      values[static_cast<std::size_t>(idx) * G + k] = work.forward1(eval_grid[static_cast<std::size_t>(k)]);
  }

  // adjacency bitset: within sup-delta on the evaluation grid
  const std::size_t words = (static_cast<std::size_t>(N) + 63) / 64;
  std::vector<std::uint64_t> adj(static_cast<std::size_t>(N) * words, 0);
  for (long long i = 0; i < N; ++i) {
    adj[static_cast<std::size_t>(i) * words + static_cast<std::size_t>(i) / 64] |=
        1ULL << (i % 64);
    for (long long j = i + 1; j < N; ++j) {
      double dmax = 0;
      const double* vi = values.data() + static_cast<std::size_t>(i) * G;
      const double* vj = values.data() + static_cast<std::size_t>(j) * G;
      for (int k = 0; k < G; ++k) {
        dmax = std::max(dmax, std::abs(vi[k] - vj[k]));
        if (dmax > delta) break;
      }
      if (dmax <= delta) {
        adj[static_cast<std::size_t>(i) * words + static_cast<std::size_t>(j) / 64] |=
            1ULL << (j % 64);
        adj[static_cast<std::size_t>(j) * words + static_cast<std::size_t>(i) / 64] |=
            1ULL << (i % 64);
      }
    }
  }

  // greedy max-coverage; ties resolved toward the lowest index
  std::vector<std::uint64_t> uncovered(words, ~0ULL);
  if (N % 64 != 0) uncovered[words - 1] = (1ULL << (N % 64)) - 1;
  long long remaining = N;
  long long count = 0;
  while (remaining > 0) {
    long long best = -1, best_cover = -1;
    for (long long i = 0; i < N; ++i) {
      long long cover = 0;
      const std::uint64_t* row = adj.data() + static_cast<std::size_t>(i) * words;
      for (std::size_t wi = 0; wi < words; ++wi)
        cover += static_cast<long long>(std::popcount(row[wi] & uncovered[wi]));
      if (cover > best_cover) {
        best_cover = cover;
        best = i;
      }
    }
    const std::uint64_t* row = adj.data() + static_cast<std::size_t>(best) * words;
    for (std::size_t wi = 0; wi < words; ++wi) {
      remaining -= static_cast<long long>(std::popcount(row[wi] & uncovered[wi]));
      uncovered[wi] &= ~row[wi];
    }
    ++count;
  }
  return count;
}

// shipped fixtures: one, two, and three free parameters, all with kappa = 1
inline std::vector<std::pair<TinyParamFamily, double>> covering_fixtures() {
  std::vector<std::pair<TinyParamFamily, double>> out;
  {
    TinyParamFamily f;
    f.name = "scale1";
    net::Network n;
    n.input_dim = 1;
    n.output_dim = 1;
    net::Layer L(1, 1);
    L.at(0, 0) = 0.0;
    n.layers.push_back(L);
    n.finalize();
    f.base = n;
    f.params = {{0, 0, 0}};
    f.spec.R = 1;
    f.spec.kappa = 1;
    f.spec.L = 1;
    f.spec.p = 1;
    f.spec.K = 1;
    out.emplace_back(std::move(f), 1e-3);
  }
  {
    TinyParamFamily f;
    f.name = "affine2";
    net::Network n;
    n.input_dim = 1;
    n.output_dim = 1;
    net::Layer L(1, 1);
    n.layers.push_back(L);
    n.finalize();
    f.base = n;
    f.params = {{0, 0, 0}, {0, 0, -1}};
    f.spec.R = 1;
    f.spec.kappa = 1;
    f.spec.L = 1;
    f.spec.p = 1;
    f.spec.K = 2;
    out.emplace_back(std::move(f), 0.02);
  }
  {
    TinyParamFamily f;
    f.name = "relu3";
    net::Network n;
    n.input_dim = 1;
    n.output_dim = 1;
    net::Layer L1(1, 1), L2(1, 1);
    n.layers.push_back(L1);
    n.layers.push_back(L2);
    n.finalize();
    f.base = n;
    f.params = {{0, 0, 0}, {0, 0, -1}, {1, 0, 0}};
    f.spec.R = 1;
    f.spec.kappa = 1;
    f.spec.L = 2;
    f.spec.p = 1;
    f.spec.K = 3;
    out.emplace_back(std::move(f), 0.1);
  }
  return out;
}

inline Report run_covering_oracle(const ExperimentConfig& cfg) {
  Report rep;
  rep.experiment = "covering_oracle";
  const std::vector<double> deltas = {0.5, 0.1, 0.05};
  std::vector<double> eval_grid;
  for (int i = 0; i < 33; ++i) eval_grid.push_back(i / 32.0);
  for (auto& [fam, step] : covering_fixtures()) {
    Series s;
    s.metric = "cover_" + fam.name;
    bool ok = true;
    for (double delta : deltas) {
      const long long count = brute_force_covering(fam, delta, step, eval_grid);
      const double bound = std::exp(bounds::net_covering_bound(fam.spec, delta, 1.0));
      s.cells.push_back({std::llround(1.0 / delta), 0, static_cast<double>(count), true, ""});
      s.cells.push_back({std::llround(1.0 / delta), 1, bound, true, ""});
      if (static_cast<double>(count) > bound) ok = false;
    }
    s.verdict = ok;
    rep.verdict = rep.verdict && ok;
    rep.series.push_back(std::move(s));
  }
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    emit_csv(rep, cfg.out_dir + "/covering_oracle.csv");
    emit_svg(rep, cfg.out_dir + "/covering_oracle.svg");
  }
  return rep;
}

// dispatch by kind
inline Report run_experiment(const ExperimentConfig& cfg) {
  if (cfg.kind == "rate") return run_rate_experiment(cfg).report;
  if (cfg.kind == "stat_error") return run_stat_error(cfg);
  if (cfg.kind == "approx_scaling") return run_approx_scaling(cfg);
  if (cfg.kind == "transport_check") return run_transport_check(cfg);
  if (cfg.kind == "covering_oracle") return run_covering_oracle(cfg);
  throw std::invalid_argument("run_experiment: unknown kind '" + cfg.kind + "'");
}

}  // namespace ganlab::harness
