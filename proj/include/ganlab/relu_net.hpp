#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace ganlab::net {

inline double relu(double a) { return a > 0.0 ? a : 0.0; }

// Coordinate clipping to [-R, R], realized as a two-unit ReLU combination.
// The max/min form is recovered identically on all three regimes.
inline double clip(double a, double R) {
  return relu(a + R) - relu(a - R) - R;
}

// One affine stage: y = W x + b with a 0/1 mask marking structural zeros.
// Row-major storage, rows x cols.
struct Layer {
  int rows = 0;
  int cols = 0;
  std::vector<double> w;
  std::vector<double> b;
  std::vector<std::uint8_t> mask;

  Layer() = default;
  Layer(int r, int c)
      : rows(r),
        cols(c),
        w(static_cast<std::size_t>(r) * c, 0.0),
        b(static_cast<std::size_t>(r), 0.0),
        mask(static_cast<std::size_t>(r) * c, 1) {}

  double& at(int r, int c) { return w[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return w[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t& mask_at(int r, int c) { return mask[static_cast<std::size_t>(r) * cols + c]; }
  std::uint8_t mask_at(int r, int c) const { return mask[static_cast<std::size_t>(r) * cols + c]; }
};

// Iteration plan over the structurally nonzero entries of a layer; shared by
// forward and backprop so dense zero blocks cost nothing.
struct LayerPlan {
  std::vector<int> row_ptr;  // rows+1
  std::vector<int> col;      // column per active entry
  std::vector<int> widx;     // flat index into Layer::w
};

class Network {
 public:
  int input_dim = 0;
  int output_dim = 0;
  std::optional<double> clip_bound;
  std::vector<Layer> layers;

  Network() = default;

  int depth() const { return static_cast<int>(layers.size()); }

  // Dimension chaining, mask consistency, plan construction. Must be called
  // after any structural edit; value copies keep sharing the plans.
  void finalize() {
    if (layers.empty()) throw std::invalid_argument("Network: no layers");
    if (layers.front().cols != input_dim)
      throw std::invalid_argument("Network: first layer width != input_dim");
    for (std::size_t i = 0; i + 1 < layers.size(); ++i)
      if (layers[i].rows != layers[i + 1].cols)
        throw std::invalid_argument("Network: layer dimensions do not chain");
    if (layers.back().rows != output_dim)
      throw std::invalid_argument("Network: last layer rows != output_dim");
    if (clip_bound && !(*clip_bound > 0.0))
      throw std::invalid_argument("Network: clip bound must be positive");
    for (auto& L : layers) {
      if (L.b.size() != static_cast<std::size_t>(L.rows) ||
          L.w.size() != static_cast<std::size_t>(L.rows) * L.cols ||
          L.mask.size() != L.w.size())
        throw std::invalid_argument("Network: inconsistent layer storage");
      for (std::size_t k = 0; k < L.w.size(); ++k)
        if (!L.mask[k]) L.w[k] = 0.0;  // masked entries are exactly zero
    }
    auto plans = std::make_shared<std::vector<LayerPlan>>();
    plans->reserve(layers.size());
    for (const auto& L : layers) {
      LayerPlan p;
      p.row_ptr.assign(static_cast<std::size_t>(L.rows) + 1, 0);
      for (int r = 0; r < L.rows; ++r) {
        p.row_ptr[r] = static_cast<int>(p.col.size());
        for (int c = 0; c < L.cols; ++c) {
          if (L.mask_at(r, c)) {
            p.col.push_back(c);
            p.widx.push_back(r * L.cols + c);
          }
        }
      }
      p.row_ptr[L.rows] = static_cast<int>(p.col.size());
      plans->push_back(std::move(p));
    }
    plans_ = std::move(plans);
  }

  bool finalized() const { return static_cast<bool>(plans_); }
  const std::vector<LayerPlan>& plans() const {
    if (!plans_) throw std::logic_error("Network: finalize() not called");
    return *plans_;
  }

  int max_hidden_width() const {
    int w = 0;
    for (std::size_t i = 0; i + 1 < layers.size(); ++i) w = std::max(w, layers[i].rows);
    return w;
  }

  // Affine stages with ReLU between them, no ReLU after the last stage,
  // then optional coordinate clipping.
  std::vector<double> forward(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != input_dim)
      throw std::invalid_argument("forward: input has dimension " +
                                  std::to_string(x.size()) + ", expected " +
                                  std::to_string(input_dim));
    const auto& ps = plans();
    std::vector<double> cur(x.begin(), x.end()), nxt;
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const Layer& L = layers[li];
      const LayerPlan& p = ps[li];
      nxt.assign(static_cast<std::size_t>(L.rows), 0.0);
      for (int r = 0; r < L.rows; ++r) {
        double acc = L.b[static_cast<std::size_t>(r)];
        for (int k = p.row_ptr[r]; k < p.row_ptr[r + 1]; ++k)
          acc += L.w[static_cast<std::size_t>(p.widx[k])] * cur[static_cast<std::size_t>(p.col[k])];
        nxt[static_cast<std::size_t>(r)] = (li + 1 < layers.size()) ? relu(acc) : acc;
      }
      cur.swap(nxt);
    }
    if (clip_bound)
      for (double& v : cur) v = clip(v, *clip_bound);
    return cur;
  }

  double forward1(double x) const {
    double v[1] = {x};
    return forward(std::span<const double>(v, 1))[0];
  }

 private:
  std::shared_ptr<const std::vector<LayerPlan>> plans_;
};

// Total nonzero weight and bias entries.
inline long long count_nonzero(const Network& net) {
  long long n = 0;
  for (const auto& L : net.layers) {
    for (double v : L.w)
      if (v != 0.0) ++n;
    for (double v : L.b)
      if (v != 0.0) ++n;
  }
  return n;
}

// Constraint bundle defining class membership for generators/discriminators:
// output bound R, magnitude bound kappa, depth L, width p, nonzero budget K.
struct ArchitectureClass {
  double R = 1.0;
  double kappa = 1.0;
  int L = 1;
  int p = 1;
  long long K = 1;
  enum class Role { generator, discriminator } role = Role::discriminator;

  void check(int input_dim) const {
    if (!(R > 0) || !(kappa > 0) || L < 1 || p < 1 || K < 1)
      throw std::invalid_argument("ArchitectureClass: fields must be positive");
    if (K < input_dim)
      throw std::invalid_argument("ArchitectureClass: K below input dimension");
  }
};

struct ConstraintCheck {
  std::string name;
  double measured = 0.0;
  double bound = 0.0;
  bool pass = false;
};

struct MembershipReport {
  std::vector<ConstraintCheck> checks;
  bool pass = false;
  // the clipping stage is charged to the depth/width/sparsity budgets
  // (one extra layer, two ReLU units and seven nonzeros per output coordinate)
  bool clip_counted_in_budget = false;

  const ConstraintCheck* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

// Checks every class constraint and reports the measured values; failures are
// entries, not errors. The output bound is certified by the presence of a
// clipping stage with radius <= R.
inline MembershipReport validate(const Network& net, const ArchitectureClass& cls) {
  MembershipReport rep;
  const bool clipped = net.clip_bound.has_value();
  rep.clip_counted_in_budget = clipped;

  const double depth = net.depth() + (clipped ? 1 : 0);
  rep.checks.push_back({"depth", depth, static_cast<double>(cls.L), depth <= cls.L});

  double width = net.max_hidden_width();
  if (clipped) width = std::max(width, 2.0 * net.output_dim);
  rep.checks.push_back({"width", width, static_cast<double>(cls.p), width <= cls.p});

  double mag = 0.0;
  for (const auto& L : net.layers) {
    for (double v : L.w) mag = std::max(mag, std::abs(v));
    for (double v : L.b) mag = std::max(mag, std::abs(v));
  }
  if (clipped) mag = std::max(mag, std::max(1.0, *net.clip_bound));
  rep.checks.push_back({"magnitude", mag, cls.kappa, mag <= cls.kappa});

  double nnz = static_cast<double>(count_nonzero(net));
  if (clipped) nnz += 7.0 * net.output_dim;
  rep.checks.push_back({"sparsity", nnz, static_cast<double>(cls.K), nnz <= cls.K});

  const double rad = clipped ? *net.clip_bound : std::numeric_limits<double>::infinity();
  rep.checks.push_back({"output_bound", rad, cls.R, clipped && rad <= cls.R});

  rep.pass = true;
  for (const auto& c : rep.checks) rep.pass = rep.pass && c.pass;
  return rep;
}

// ---------------------------------------------------------------------------
// Weights file format: {input_dim, output_dim, clip_bound, layers:[{w,b,mask}]}
// with w and mask row-major. Doubles serialize with round-trip precision.

inline nlohmann::json to_json(const Network& net) {
  nlohmann::json j;
  j["input_dim"] = net.input_dim;
  j["output_dim"] = net.output_dim;
  if (net.clip_bound)
    j["clip_bound"] = *net.clip_bound;
  else
    j["clip_bound"] = nullptr;
  j["layers"] = nlohmann::json::array();
  for (const auto& L : net.layers) {
    nlohmann::json jl;
    jl["w"] = L.w;
    jl["b"] = L.b;
    jl["mask"] = std::vector<int>(L.mask.begin(), L.mask.end());
    j["layers"].push_back(std::move(jl));
  }
  return j;
}

inline Network network_from_json(const nlohmann::json& j) {
  Network net;
  net.input_dim = j.at("input_dim").get<int>();
  net.output_dim = j.at("output_dim").get<int>();
  if (!j.at("clip_bound").is_null()) net.clip_bound = j.at("clip_bound").get<double>();
  int prev = net.input_dim;
  for (const auto& jl : j.at("layers")) {
    Layer L;
    L.b = jl.at("b").get<std::vector<double>>();
    L.w = jl.at("w").get<std::vector<double>>();
    L.rows = static_cast<int>(L.b.size());
    L.cols = prev;
    if (L.w.size() != static_cast<std::size_t>(L.rows) * L.cols)
      throw std::invalid_argument("network_from_json: layer size mismatch");
    auto m = jl.at("mask").get<std::vector<int>>();
    L.mask.assign(m.begin(), m.end());
    prev = L.rows;
    net.layers.push_back(std::move(L));
  }
  net.finalize();
  return net;
}

inline void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_network: cannot open " + path);
  out << to_json(net).dump(1) << "\n";
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_network: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return network_from_json(j);
}

}  // namespace ganlab::net
