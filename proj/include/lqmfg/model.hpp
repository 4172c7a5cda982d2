#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "lqmfg/portfolio_params.hpp"
#include "lqmfg/types.hpp"

namespace lqmfg {

struct Dimensions {
  int n = 1;  // state
  int m = 1;  // control
  int d = 1;  // individual noise; the common noise is scalar
};

struct GridSpec {
  double T = 1.0;
  int K = 1;

  [[nodiscard]] double dt() const { return T / K; }
  [[nodiscard]] double node(int k) const { return k == K ? T : k * dt(); }
};

/// Index of the grid interval whose left end is at or before t (right-continuous).
/// Returns K for t == T.
inline int node_index(const GridSpec& grid, double t) {
  if (!(t >= 0.0) || t > grid.T) {
    throw DomainError("time " + std::to_string(t) + " outside [0, " + std::to_string(grid.T) + "]");
  }
  // Nudge so that t = k*dt computed in floating point lands on node k.
  const double x = t / grid.dt();
  int k = static_cast<int>(std::floor(x + 1e-9 * std::max(1.0, x)));
  return std::min(std::max(k, 0), grid.K);
}

/// Piecewise-constant, right-continuous coefficient sampled at grid nodes.
/// Holds either one sample (constant) or K+1 samples.
class CoefficientPath {
 public:
  CoefficientPath() = default;
  explicit CoefficientPath(Mat constant) { samples_.push_back(std::move(constant)); }
  explicit CoefficientPath(std::vector<Mat> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw DimensionError("coefficient path without samples");
    for (const auto& s : samples_) {
      if (s.rows() != samples_.front().rows() || s.cols() != samples_.front().cols()) {
        throw DimensionError("coefficient path samples differ in shape");
      }
    }
  }

  static CoefficientPath zeros(int rows, int cols) { return CoefficientPath(Mat::Zero(rows, cols)); }
  static CoefficientPath scalar(double v) { return CoefficientPath(Mat::Constant(1, 1, v)); }
  static CoefficientPath vector(const Vec& v) { return CoefficientPath(Mat(v)); }

  /// Sample governing node k and the interval [t_k, t_{k+1}).
  [[nodiscard]] const Mat& at(int k) const {
    return samples_.size() == 1 ? samples_.front() : samples_[static_cast<std::size_t>(k)];
  }
  [[nodiscard]] double scalar_at(int k) const { return at(k)(0, 0); }

  [[nodiscard]] bool is_constant() const { return samples_.size() == 1; }
  [[nodiscard]] std::size_t size() const { return samples_.size(); }
  [[nodiscard]] Eigen::Index rows() const { return samples_.front().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return samples_.front().cols(); }
  [[nodiscard]] const std::vector<Mat>& samples() const { return samples_; }

  [[nodiscard]] bool is_zero() const {
    for (const auto& s : samples_)
      if (!s.isZero(0.0)) return false;
    return true;
  }

 private:
  std::vector<Mat> samples_;
};

inline Mat coeff_at(const CoefficientPath& path, const GridSpec& grid, double t) {
  return path.at(node_index(grid, t));
}

struct MeanFieldWeights {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double alpha3 = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
};

/// Coefficients of the linear state, observation and cost system.
///
///   dx   = (A x + B u + A_bar x_avg + B_bar u_avg + b)dt
///        + (D x + F u + D_bar x_avg + F_bar u_avg + b_bar)dW0 + sigma dW + sigma_bar dW_bar
///   dy   = (G x + H u + G_bar x_avg + H_bar u_avg + b_tilde)dt + sigma_tilde dW_bar
///   dth  = (I th + b_check)dt + sigma_check dW0
///
/// Running cost <Q(x - a1 xa) + 2q, x - a1 xa> + <R(u - b1 ua) + 2r, u - b1 ua>
/// + 2<S(u - b2 ua), x - a2 xa>, terminal <L_T(x - a3 xa) + 2 l_T, x - a3 xa>, all halved.
struct ProblemSpec {
  Dimensions dims;
  GridSpec grid;

  CoefficientPath A, A_bar, B, B_bar, D, D_bar, F, F_bar, b, b_bar, sigma, sigma_bar;
  CoefficientPath G, G_bar, H, H_bar, b_tilde, sigma_tilde;
  CoefficientPath I, b_check, sigma_check;
  CoefficientPath Q, R, S, q, r;
  Mat L_T;
  Vec l_T;
  MeanFieldWeights weights;
  Vec initial_state;

  double sigma_check_floor = 1e-12;

  /// Set when the instance was built from market parameters.
  std::optional<PortfolioParams> portfolio;

  /// All-zero instance of the given shape, with sigma_check = 1.
  static ProblemSpec zero(Dimensions dims, GridSpec grid) {
    const int n = dims.n, m = dims.m, d = dims.d;
    ProblemSpec p;
    p.dims = dims;
    p.grid = grid;
    p.A = p.A_bar = p.D = p.D_bar = CoefficientPath::zeros(n, n);
    p.B = p.B_bar = p.F = p.F_bar = CoefficientPath::zeros(n, m);
    p.b = p.b_bar = CoefficientPath::zeros(n, 1);
    p.sigma = p.sigma_bar = CoefficientPath::zeros(n, d);
    p.G = p.G_bar = CoefficientPath::zeros(n, n);
    p.H = p.H_bar = CoefficientPath::zeros(n, m);
    p.b_tilde = CoefficientPath::zeros(n, 1);
    p.sigma_tilde = CoefficientPath::zeros(n, d);
    p.I = CoefficientPath::scalar(0.0);
    p.b_check = CoefficientPath::scalar(0.0);
    p.sigma_check = CoefficientPath::scalar(1.0);
    p.Q = CoefficientPath::zeros(n, n);
    p.R = CoefficientPath::zeros(m, m);
    p.S = CoefficientPath::zeros(n, m);
    p.q = CoefficientPath::zeros(n, 1);
    p.r = CoefficientPath::zeros(m, 1);
    p.L_T = Mat::Zero(n, n);
    p.l_T = Vec::Zero(n);
    p.initial_state = Vec::Zero(n);
    return p;
  }
};

/// Scalar instance for the mean-variance liability problem.
inline ProblemSpec portfolio_problem(const PortfolioParams& pp, int K) {
  pp.validate();
  ProblemSpec p = ProblemSpec::zero({1, 1, 1}, {pp.T, K});
  auto s = [](double v) { return CoefficientPath::scalar(v); };
  p.A = s(pp.r);
  p.B = s(pp.excess_return());
  p.b = s(-pp.b);
  p.F = s(pp.sigma);
  p.sigma = s(pp.c);
  p.sigma_bar = s(pp.c_bar);
  p.G = s(pp.G);
  p.b_tilde = s(pp.b_tilde);
  p.sigma_tilde = s(pp.sigma_tilde);
  p.I = s(pp.I);
  p.b_check = s(pp.b_check);
  p.sigma_check = s(pp.sigma_check);
  p.L_T = Mat::Constant(1, 1, pp.gamma);
  p.l_T = Vec::Constant(1, -0.5);
  p.weights = {1.0, 1.0, 1.0, 0.0, 0.0};
  p.initial_state = Vec::Constant(1, pp.x0);
  p.portfolio = pp;
  return p;
}

namespace detail {

using nlohmann::json;

inline int json_depth(const json& j) {
  int depth = 0;
  const json* cur = &j;
  while (cur->is_array()) {
    ++depth;
    if (cur->empty()) break;
    cur = &cur->front();
  }
  return depth;
}

inline double as_real(const json& j, const std::string& key) {
  if (!j.is_number()) throw ParseError("key '" + key + "': expected a number");
  return j.get<double>();
}

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ParseError("key '" + where + "': expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!ok.count(it.key())) {
      throw ParseError("unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
    }
  }
}

/// One sample: a number (1x1 only), a flat array (vector, cols == 1), or a nested row-major array.
inline Mat parse_sample(const json& j, int rows, int cols, const std::string& key) {
  if (j.is_number()) {
    if (rows != 1 || cols != 1) {
      throw DimensionError("key '" + key + "': scalar given for a " + std::to_string(rows) + "x" +
                           std::to_string(cols) + " coefficient");
    }
    return Mat::Constant(1, 1, j.get<double>());
  }
  if (!j.is_array()) throw ParseError("key '" + key + "': expected a number or an array");
  Mat out(rows, cols);
  if (cols == 1 && json_depth(j) == 1) {
    if (static_cast<int>(j.size()) != rows) {
      throw DimensionError("key '" + key + "': expected " + std::to_string(rows) + " entries, got " +
                           std::to_string(j.size()));
    }
    for (int i = 0; i < rows; ++i) out(i, 0) = as_real(j[i], key);
    return out;
  }
  if (static_cast<int>(j.size()) != rows) {
    throw DimensionError("key '" + key + "': expected " + std::to_string(rows) + " rows, got " +
                         std::to_string(j.size()));
  }
  for (int i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<int>(j[i].size()) != cols) {
      throw DimensionError("key '" + key + "': row " + std::to_string(i) + " must have " +
                           std::to_string(cols) + " entries");
    }
    for (int c = 0; c < cols; ++c) out(i, c) = as_real(j[i][c], key);
  }
  return out;
}

/// A constant sample or an array of K+1 samples.
inline CoefficientPath parse_path(const json& j, int rows, int cols, int K, const std::string& key) {
  const int depth = json_depth(j);
  const auto n_samples = static_cast<std::size_t>(K) + 1;
  bool varying = false;
  if (rows == 1 && cols == 1) {
    // v, [v] and [[v]] are constant; [v0, ..., vK] and nested forms are time-varying.
    varying = depth == 3 || (depth >= 1 && j.size() == n_samples);
  } else if (cols == 1) {
    // [..] and [[a],[b],..] are constant.
    const bool column_form = depth == 2 && static_cast<int>(j.size()) == rows && j.front().size() == 1;
    varying = depth == 3 || (depth == 2 && !column_form);
  } else {
    varying = depth == 3;
  }
  if (!varying) return CoefficientPath(parse_sample(j, rows, cols, key));
  if (j.size() != n_samples) {
    throw DimensionError("key '" + key + "': time-varying coefficient needs K+1 = " + std::to_string(K + 1) +
                         " samples, got " + std::to_string(j.size()));
  }
  std::vector<Mat> samples;
  samples.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) samples.push_back(parse_sample(j[k], rows, cols, key));
  return CoefficientPath(std::move(samples));
}

inline CoefficientPath optional_path(const json& parent, const char* name, const std::string& section, int rows,
                                     int cols, int K) {
  const std::string key = section + "." + name;
  if (!parent.contains(name)) return CoefficientPath::zeros(rows, cols);
  return parse_path(parent.at(name), rows, cols, K, key);
}

inline json sample_to_json(const Mat& M) {
  if (M.rows() == 1 && M.cols() == 1) return M(0, 0);
  if (M.cols() == 1) {
    json a = json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) a.push_back(M(i, 0));
    return a;
  }
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < M.cols(); ++c) row.push_back(M(i, c));
    rows.push_back(row);
  }
  return rows;
}

inline json path_to_json(const CoefficientPath& p) {
  if (p.is_constant()) return sample_to_json(p.at(0));
  json a = json::array();
  for (const auto& s : p.samples()) a.push_back(sample_to_json(s));
  return a;
}

inline PortfolioParams parse_portfolio(const json& j, double T) {
  check_keys(j, "portfolio",
             {"r", "mu", "b", "sigma", "c", "c_bar", "G", "b_tilde", "sigma_tilde", "I", "b_check", "sigma_check",
              "gamma", "x0"});
  PortfolioParams pp;
  pp.T = T;
  auto get = [&](const char* name, double& dst) {
    if (j.contains(name)) dst = as_real(j.at(name), std::string("portfolio.") + name);
  };
  for (const char* required : {"r", "mu", "sigma", "gamma", "x0", "sigma_check"}) {
    if (!j.contains(required)) throw ParseError(std::string("missing key 'portfolio.") + required + "'");
  }
  get("r", pp.r);
  get("mu", pp.mu);
  get("b", pp.b);
  get("sigma", pp.sigma);
  get("c", pp.c);
  get("c_bar", pp.c_bar);
  get("G", pp.G);
  get("b_tilde", pp.b_tilde);
  get("sigma_tilde", pp.sigma_tilde);
  get("I", pp.I);
  get("b_check", pp.b_check);
  get("sigma_check", pp.sigma_check);
  get("gamma", pp.gamma);
  get("x0", pp.x0);
  return pp;
}

inline json portfolio_to_json(const PortfolioParams& pp) {
  return json{{"r", pp.r},         {"mu", pp.mu},
              {"b", pp.b},         {"sigma", pp.sigma},
              {"c", pp.c},         {"c_bar", pp.c_bar},
              {"G", pp.G},         {"b_tilde", pp.b_tilde},
              {"sigma_tilde", pp.sigma_tilde}, {"I", pp.I},
              {"b_check", pp.b_check},         {"sigma_check", pp.sigma_check},
              {"gamma", pp.gamma}, {"x0", pp.x0}};
}

inline GridSpec parse_grid(const json& root) {
  if (!root.contains("grid")) throw ParseError("missing key 'grid'");
  const json& g = root.at("grid");
  check_keys(g, "grid", {"T", "K"});
  if (!g.contains("T")) throw ParseError("missing key 'grid.T'");
  if (!g.contains("K")) throw ParseError("missing key 'grid.K'");
  GridSpec grid;
  grid.T = as_real(g.at("T"), "grid.T");
  if (!g.at("K").is_number_integer()) throw ParseError("key 'grid.K': expected an integer");
  grid.K = g.at("K").get<int>();
  if (!(grid.T > 0.0)) throw ParseError("key 'grid.T': must be positive");
  if (grid.K < 1) throw ParseError("key 'grid.K': must be at least 1");
  return grid;
}

}  // namespace detail

/// Parse a problem instance from JSON text.
///
/// Two layouts are accepted: the generic coefficient layout (dims, grid, dynamics, observation,
/// common_observation, cost, meanfield, initial_state) and a market layout (grid, portfolio).
/// A top-level "notes" entry is ignored.
inline ProblemSpec load_problem(const std::string& config_text) {
  using detail::json;
  json root;
  try {
    root = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed config: ") + e.what());
  }
  if (!root.is_object()) throw ParseError("config root must be an object");

  if (root.contains("portfolio")) {
    detail::check_keys(root, "", {"grid", "portfolio", "notes"});
    GridSpec grid = detail::parse_grid(root);
    return portfolio_problem(detail::parse_portfolio(root.at("portfolio"), grid.T), grid.K);
  }

  detail::check_keys(root, "",
                     {"dims", "grid", "dynamics", "observation", "common_observation", "cost", "meanfield",
                      "initial_state", "application", "notes"});
  if (!root.contains("dims")) throw ParseError("missing key 'dims'");
  const json& jd = root.at("dims");
  detail::check_keys(jd, "dims", {"n", "m", "d"});
  Dimensions dims;
  for (auto [name, dst] : {std::pair{"n", &dims.n}, std::pair{"m", &dims.m}, std::pair{"d", &dims.d}}) {
    if (!jd.contains(name)) throw ParseError(std::string("missing key 'dims.") + name + "'");
    if (!jd.at(name).is_number_integer() || jd.at(name).get<int>() < 1) {
      throw ParseError(std::string("key 'dims.") + name + "': expected a positive integer");
    }
    *dst = jd.at(name).get<int>();
  }
  GridSpec grid = detail::parse_grid(root);
  const int n = dims.n, m = dims.m, d = dims.d, K = grid.K;
  ProblemSpec p = ProblemSpec::zero(dims, grid);

  const json empty = json::object();
  const json& dyn = root.contains("dynamics") ? root.at("dynamics") : empty;
  detail::check_keys(dyn, "dynamics",
                     {"A", "A_bar", "B", "B_bar", "D", "D_bar", "F", "F_bar", "b", "b_bar", "sigma", "sigma_bar"});
  p.A = detail::optional_path(dyn, "A", "dynamics", n, n, K);
  p.A_bar = detail::optional_path(dyn, "A_bar", "dynamics", n, n, K);
  p.B = detail::optional_path(dyn, "B", "dynamics", n, m, K);
  p.B_bar = detail::optional_path(dyn, "B_bar", "dynamics", n, m, K);
  p.D = detail::optional_path(dyn, "D", "dynamics", n, n, K);
  p.D_bar = detail::optional_path(dyn, "D_bar", "dynamics", n, n, K);
  p.F = detail::optional_path(dyn, "F", "dynamics", n, m, K);
  p.F_bar = detail::optional_path(dyn, "F_bar", "dynamics", n, m, K);
  p.b = detail::optional_path(dyn, "b", "dynamics", n, 1, K);
  p.b_bar = detail::optional_path(dyn, "b_bar", "dynamics", n, 1, K);
  p.sigma = detail::optional_path(dyn, "sigma", "dynamics", n, d, K);
  p.sigma_bar = detail::optional_path(dyn, "sigma_bar", "dynamics", n, d, K);

  const json& obs = root.contains("observation") ? root.at("observation") : empty;
  detail::check_keys(obs, "observation", {"G", "G_bar", "H", "H_bar", "b_tilde", "sigma_tilde"});
  p.G = detail::optional_path(obs, "G", "observation", n, n, K);
  p.G_bar = detail::optional_path(obs, "G_bar", "observation", n, n, K);
  p.H = detail::optional_path(obs, "H", "observation", n, m, K);
  p.H_bar = detail::optional_path(obs, "H_bar", "observation", n, m, K);
  p.b_tilde = detail::optional_path(obs, "b_tilde", "observation", n, 1, K);
  p.sigma_tilde = detail::optional_path(obs, "sigma_tilde", "observation", n, d, K);

  if (!root.contains("common_observation")) throw ParseError("missing key 'common_observation'");
  const json& com = root.at("common_observation");
  detail::check_keys(com, "common_observation", {"I", "b_check", "sigma_check", "sigma_check_floor"});
  if (!com.contains("sigma_check")) throw ParseError("missing key 'common_observation.sigma_check'");
  p.I = detail::optional_path(com, "I", "common_observation", 1, 1, K);
  p.b_check = detail::optional_path(com, "b_check", "common_observation", 1, 1, K);
  p.sigma_check = detail::parse_path(com.at("sigma_check"), 1, 1, K, "common_observation.sigma_check");
  if (com.contains("sigma_check_floor")) {
    p.sigma_check_floor = detail::as_real(com.at("sigma_check_floor"), "common_observation.sigma_check_floor");
  }

  const json& cost = root.contains("cost") ? root.at("cost") : empty;
  detail::check_keys(cost, "cost", {"Q", "R", "S", "q", "r", "L_T", "l_T"});
  p.Q = detail::optional_path(cost, "Q", "cost", n, n, K);
  p.R = detail::optional_path(cost, "R", "cost", m, m, K);
  p.S = detail::optional_path(cost, "S", "cost", n, m, K);
  p.q = detail::optional_path(cost, "q", "cost", n, 1, K);
  p.r = detail::optional_path(cost, "r", "cost", m, 1, K);
  if (cost.contains("L_T")) p.L_T = detail::parse_sample(cost.at("L_T"), n, n, "cost.L_T");
  if (cost.contains("l_T")) p.l_T = detail::parse_sample(cost.at("l_T"), n, 1, "cost.l_T");

  const json& mf = root.contains("meanfield") ? root.at("meanfield") : empty;
  detail::check_keys(mf, "meanfield", {"alpha1", "alpha2", "alpha3", "beta1", "beta2"});
  auto weight = [&](const char* name, double& dst) {
    if (mf.contains(name)) dst = detail::as_real(mf.at(name), std::string("meanfield.") + name);
  };
  weight("alpha1", p.weights.alpha1);
  weight("alpha2", p.weights.alpha2);
  weight("alpha3", p.weights.alpha3);
  weight("beta1", p.weights.beta1);
  weight("beta2", p.weights.beta2);

  if (root.contains("initial_state")) {
    p.initial_state = detail::parse_sample(root.at("initial_state"), n, 1, "initial_state");
  }

  if (root.contains("application")) {
    const json& app = root.at("application");
    detail::check_keys(app, "application", {"portfolio"});
    if (app.contains("portfolio")) p.portfolio = detail::parse_portfolio(app.at("portfolio"), grid.T);
  }
  return p;
}

/// Generic-layout JSON. Doubles are written with round-trip precision.
inline nlohmann::json to_json(const ProblemSpec& p) {
  using detail::json;
  using detail::path_to_json;
  json j;
  j["dims"] = {{"n", p.dims.n}, {"m", p.dims.m}, {"d", p.dims.d}};
  j["grid"] = {{"T", p.grid.T}, {"K", p.grid.K}};
  j["dynamics"] = {{"A", path_to_json(p.A)},         {"A_bar", path_to_json(p.A_bar)},
                   {"B", path_to_json(p.B)},         {"B_bar", path_to_json(p.B_bar)},
                   {"D", path_to_json(p.D)},         {"D_bar", path_to_json(p.D_bar)},
                   {"F", path_to_json(p.F)},         {"F_bar", path_to_json(p.F_bar)},
                   {"b", path_to_json(p.b)},         {"b_bar", path_to_json(p.b_bar)},
                   {"sigma", path_to_json(p.sigma)}, {"sigma_bar", path_to_json(p.sigma_bar)}};
  j["observation"] = {{"G", path_to_json(p.G)},
                      {"G_bar", path_to_json(p.G_bar)},
                      {"H", path_to_json(p.H)},
                      {"H_bar", path_to_json(p.H_bar)},
                      {"b_tilde", path_to_json(p.b_tilde)},
                      {"sigma_tilde", path_to_json(p.sigma_tilde)}};
  j["common_observation"] = {{"I", path_to_json(p.I)},
                             {"b_check", path_to_json(p.b_check)},
                             {"sigma_check", path_to_json(p.sigma_check)},
                             {"sigma_check_floor", p.sigma_check_floor}};
  j["cost"] = {{"Q", path_to_json(p.Q)}, {"R", path_to_json(p.R)},
               {"S", path_to_json(p.S)}, {"q", path_to_json(p.q)},
               {"r", path_to_json(p.r)}, {"L_T", detail::sample_to_json(p.L_T)},
               {"l_T", detail::sample_to_json(p.l_T)}};
  j["meanfield"] = {{"alpha1", p.weights.alpha1},
                    {"alpha2", p.weights.alpha2},
                    {"alpha3", p.weights.alpha3},
                    {"beta1", p.weights.beta1},
                    {"beta2", p.weights.beta2}};
  j["initial_state"] = detail::sample_to_json(p.initial_state);
  if (p.portfolio) j["application"] = {{"portfolio", detail::portfolio_to_json(*p.portfolio)}};
  return j;
}

inline std::string serialize(const ProblemSpec& p) { return to_json(p).dump(2) + "\n"; }

/// Same problem on a grid with K_new steps. Time-varying paths are resampled through coeff_at.
inline ProblemSpec with_grid(const ProblemSpec& p, int K_new) {
  ProblemSpec out = p;
  out.grid.K = K_new;
  auto resample = [&](const CoefficientPath& path) {
    if (path.is_constant()) return path;
    std::vector<Mat> s;
    s.reserve(static_cast<std::size_t>(K_new) + 1);
    for (int k = 0; k <= K_new; ++k) s.push_back(coeff_at(path, p.grid, out.grid.node(k)));
    return CoefficientPath(std::move(s));
  };
  for (CoefficientPath* c : {&out.A, &out.A_bar, &out.B, &out.B_bar, &out.D, &out.D_bar, &out.F, &out.F_bar,
                             &out.b, &out.b_bar, &out.sigma, &out.sigma_bar, &out.G, &out.G_bar, &out.H,
                             &out.H_bar, &out.b_tilde, &out.sigma_tilde, &out.I, &out.b_check, &out.sigma_check,
                             &out.Q, &out.R, &out.S, &out.q, &out.r}) {
    *c = resample(*c);
  }
  return out;
}

struct ValidationCheck {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;
  std::vector<std::string> flags;  // informational, never failures

  [[nodiscard]] bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream os;
    for (const auto& c : checks) {
      os << (c.passed ? "pass  " : "FAIL  ") << c.name;
      if (!c.detail.empty()) os << ": " << c.detail;
      os << '\n';
    }
    for (const auto& f : flags) os << "flag  " << f << '\n';
    return os.str();
  }
};

inline ValidationReport validate(const ProblemSpec& p) {
  ValidationReport rep;
  const int K = p.grid.K;

  auto shape_ok = [&](const CoefficientPath& c, Eigen::Index rows, Eigen::Index cols) {
    return c.rows() == rows && c.cols() == cols && (c.size() == 1 || c.size() == static_cast<std::size_t>(K) + 1);
  };
  {
    const int n = p.dims.n, m = p.dims.m, d = p.dims.d;
    std::string bad;
    const std::pair<const char*, std::tuple<const CoefficientPath*, int, int>> shapes[] = {
        {"A", {&p.A, n, n}},          {"A_bar", {&p.A_bar, n, n}}, {"B", {&p.B, n, m}},
        {"B_bar", {&p.B_bar, n, m}},  {"D", {&p.D, n, n}},         {"D_bar", {&p.D_bar, n, n}},
        {"F", {&p.F, n, m}},          {"F_bar", {&p.F_bar, n, m}}, {"b", {&p.b, n, 1}},
        {"b_bar", {&p.b_bar, n, 1}},  {"sigma", {&p.sigma, n, d}}, {"sigma_bar", {&p.sigma_bar, n, d}},
        {"G", {&p.G, n, n}},          {"G_bar", {&p.G_bar, n, n}}, {"H", {&p.H, n, m}},
        {"H_bar", {&p.H_bar, n, m}},  {"b_tilde", {&p.b_tilde, n, 1}},
        {"sigma_tilde", {&p.sigma_tilde, n, d}},
        {"I", {&p.I, 1, 1}},          {"b_check", {&p.b_check, 1, 1}},
        {"sigma_check", {&p.sigma_check, 1, 1}},
        {"Q", {&p.Q, n, n}},          {"R", {&p.R, m, m}},         {"S", {&p.S, n, m}},
        {"q", {&p.q, n, 1}},          {"r", {&p.r, m, 1}}};
    for (const auto& [name, spec] : shapes) {
      auto [path, rows, cols] = spec;
      if (!shape_ok(*path, rows, cols)) bad += std::string(bad.empty() ? "" : ", ") + name;
    }
    if (p.L_T.rows() != n || p.L_T.cols() != n) bad += std::string(bad.empty() ? "" : ", ") + "L_T";
    if (p.l_T.size() != n) bad += std::string(bad.empty() ? "" : ", ") + "l_T";
    if (p.initial_state.size() != n) bad += std::string(bad.empty() ? "" : ", ") + "initial_state";
    rep.checks.push_back({"shapes", bad.empty(), bad.empty() ? "" : "wrong shape: " + bad});
    if (!bad.empty()) return rep;
  }

  auto symmetric_path = [&](const CoefficientPath& c, const char* name) {
    for (std::size_t k = 0; k < c.size(); ++k) {
      const Mat& M = c.samples()[k];
      if (M != M.transpose()) {
        rep.checks.push_back({std::string(name) + " symmetric", false,
                              std::string(name) + " not symmetric at sample " + std::to_string(k)});
        return;
      }
    }
    rep.checks.push_back({std::string(name) + " symmetric", true, ""});
  };
  symmetric_path(p.Q, "Q");
  symmetric_path(p.R, "R");
  rep.checks.push_back({"L_T symmetric", p.L_T == p.L_T.transpose(), p.L_T == p.L_T.transpose() ? "" : "L_T not symmetric"});

  {
    double worst = INFINITY;
    std::size_t at = 0;
    for (std::size_t k = 0; k < p.sigma_check.size(); ++k) {
      const double v = std::abs(p.sigma_check.samples()[k](0, 0));
      if (!(v >= worst)) {
        worst = v;
        at = k;
      }
    }
    const bool ok = worst >= p.sigma_check_floor;
    rep.checks.push_back({"sigma_check nondegenerate", ok,
                          ok ? "" : "sigma_check degenerate (|sigma_check| = " + std::to_string(worst) +
                                        " at sample " + std::to_string(at) + ")"});
  }

  {
    std::string bad;
    auto finite = [&](const CoefficientPath& c, const char* name) {
      for (const auto& s : c.samples()) {
        if (!s.allFinite()) {
          bad += std::string(bad.empty() ? "" : ", ") + name;
          return;
        }
      }
    };
    finite(p.A, "A"); finite(p.A_bar, "A_bar"); finite(p.B, "B"); finite(p.B_bar, "B_bar");
    finite(p.D, "D"); finite(p.D_bar, "D_bar"); finite(p.F, "F"); finite(p.F_bar, "F_bar");
    finite(p.b, "b"); finite(p.b_bar, "b_bar"); finite(p.sigma, "sigma"); finite(p.sigma_bar, "sigma_bar");
    finite(p.G, "G"); finite(p.G_bar, "G_bar"); finite(p.H, "H"); finite(p.H_bar, "H_bar");
    finite(p.b_tilde, "b_tilde"); finite(p.sigma_tilde, "sigma_tilde");
    finite(p.I, "I"); finite(p.b_check, "b_check"); finite(p.sigma_check, "sigma_check");
    finite(p.Q, "Q"); finite(p.R, "R"); finite(p.S, "S"); finite(p.q, "q"); finite(p.r, "r");
    if (!p.L_T.allFinite()) bad += std::string(bad.empty() ? "" : ", ") + "L_T";
    if (!p.l_T.allFinite()) bad += std::string(bad.empty() ? "" : ", ") + "l_T";
    if (!p.initial_state.allFinite()) bad += std::string(bad.empty() ? "" : ", ") + "initial_state";
    for (double w : {p.weights.alpha1, p.weights.alpha2, p.weights.alpha3, p.weights.beta1, p.weights.beta2}) {
      if (!std::isfinite(w)) {
        bad += std::string(bad.empty() ? "" : ", ") + "meanfield";
        break;
      }
    }
    rep.checks.push_back({"finite", bad.empty(), bad.empty() ? "" : "non-finite entries in " + bad});
  }

  auto definiteness_flag = [&](const std::vector<Mat>& samples, const char* name, bool need_uniform) {
    double worst = INFINITY;
    bool all_zero = true;
    for (const auto& M : samples) {
      worst = std::min(worst, linalg::min_eig_sym(M));
      all_zero = all_zero && M.isZero(0.0);
    }
    if (all_zero && need_uniform) {
      rep.flags.push_back(std::string(name) + " = 0 (indefinite)");
    } else if (worst < 0.0) {
      rep.flags.push_back(std::string(name) + " indefinite (min eigenvalue " + std::to_string(worst) + ")");
    } else if (need_uniform && worst <= 0.0) {
      rep.flags.push_back(std::string(name) + " singular (not uniformly positive)");
    }
  };
  definiteness_flag(p.Q.samples(), "Q", false);
  definiteness_flag(p.R.samples(), "R", true);
  definiteness_flag({p.L_T}, "L_T", false);

  for (std::size_t k = 0; k < p.sigma_tilde.size(); ++k) {
    const Mat& st = p.sigma_tilde.samples()[k];
    const Mat V = st * st.transpose();
    if (V.fullPivLu().rank() < V.rows()) {
      rep.flags.push_back("sigma_tilde sigma_tilde^T singular (filter unavailable)");
      break;
    }
  }
  return rep;
}

}  // namespace lqmfg
