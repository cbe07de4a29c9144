#pragma once

// Post-hoc calibration: temperature scaling, beta' tuning (ECE grid search or
// NLL descent), norm statistics and the nonlinear map constant.

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/data.hpp"
#include "gsd/error.hpp"
#include "gsd/geometry.hpp"
#include "gsd/io.hpp"
#include "gsd/metrics.hpp"
#include "gsd/model.hpp"
#include "gsd/rng.hpp"
#include "gsd/softmax.hpp"
#include "gsd/train.hpp"

namespace gsd {

// ---------------------------------------------------------------------------
// Temperature scaling

struct TemperatureOptions {
  std::size_t iterations = 50;
  double learning_rate = 0.01;
  double initial = 1.0;
  double min_t = 1e-3;
  double max_t = 1e3;
};

inline Matrix scale_logits(const Matrix& logits, double t) {
  if (!(t > 0.0)) throw InvalidParameterError("temperature must be positive");
  Matrix out = logits;
  for (double& v : out.data()) v /= t;
  return out;
}

/// Mean NLL of softmax(logits / t) and its derivative in t.
inline std::pair<double, double> temperature_nll_and_grad(const Matrix& logits, std::span<const Label> labels, double t) {
  double loss = 0.0, grad = 0.0;
  Vector z(logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] = row[j] / t;
    const double lse = logsumexp(z);
    const Vector p = softmax(z);
    loss += lse - z[labels[i]];
    // d/dt [lse(z/t) - z_y/t] = (z_y - sum_j p_j z_j) / t^2 with z the raw logits
    grad += (row[labels[i]] - dot(p, row)) / (t * t);
  }
  const double n = static_cast<double>(logits.rows());
  return {loss / n, grad / n};
}

/// Plain gradient descent on T; T stays within [min_t, max_t].
inline double fit_temperature(const Matrix& logits, std::span<const Label> labels, const TemperatureOptions& opt = {}) {
  if (logits.rows() == 0 || logits.rows() != labels.size())
    throw DomainError("fit_temperature: logits rows must match a nonempty label vector");
  for (Label y : labels)
    if (y >= logits.cols()) throw DomainError("fit_temperature: label out of range");
  double t = std::clamp(opt.initial, opt.min_t, opt.max_t);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    const auto [loss, grad] = temperature_nll_and_grad(logits, labels, t);
    if (!std::isfinite(loss) || !std::isfinite(grad))
      throw DivergenceError("fit_temperature: non-finite NLL at iteration " + std::to_string(it) + " (T = " +
                            io::format_double(t) + ")");
    t = std::clamp(t - opt.learning_rate * grad, opt.min_t, opt.max_t);
  }
  return t;
}

// ---------------------------------------------------------------------------
// beta' tuning

/// Encoded validation set in the factored form logits_j = a_ij (n_i + b) / alpha,
/// with a_ij = |w_j| cos(dphi_ij). Lets calibration sweep b without re-encoding.
struct FactoredLogits {
  Matrix scaled_cos;  // a_ij
  Vector norms;       // n_i
  std::vector<Label> labels;
  double alpha = 1.0;
  double min_norm = 0.0;

  Matrix logits_affine(double beta_prime) const {
    Matrix out(scaled_cos.rows(), scaled_cos.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
      const double big_n = effective_norm_affine(norms[i], {alpha, beta_prime});
      for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) = scaled_cos(i, j) * big_n;
    }
    return out;
  }
};

inline FactoredLogits factor_logits(const Model& m, const EmbeddingBatch& batch) {
  if (batch.empty()) throw DomainError("calibration: empty validation set");
  m.head.validate();
  const Matrix enc = encode_batch(m, batch);
  FactoredLogits f{Matrix(enc.rows(), m.head.num_classes()), Vector(enc.rows()), batch.labels, m.head.alpha, 0.0};
  f.min_norm = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    for (std::size_t j = 0; j < m.head.num_classes(); ++j) {
      const auto g = geometric_logit(m.head.weights.row(j), enc.row(i));
      f.scaled_cos(i, j) = g.w_norm * g.cos_phi;
      f.norms[i] = g.x_norm;
    }
    f.min_norm = std::min(f.min_norm, f.norms[i]);
  }
  return f;
}

/// 201 points spanning [beta - 10, beta + 10] in steps of 0.1; beta itself is the middle point.
inline Vector default_beta_grid(double beta) {
  Vector g(201);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = beta + (static_cast<double>(i) - 100.0) * 0.1;
  return g;
}

struct GridSearchResult {
  double beta_prime = 0.0;
  double ece = 0.0;
  std::size_t excluded = 0;  // candidates with a nonpositive effective norm on some sample
  Vector candidates;
  Vector eces;  // NaN for excluded candidates
};

/// ECE-minimising beta' over `grid`; ties go to the smallest beta'.
inline GridSearchResult grid_search_beta(const Model& m, const EmbeddingBatch& val_set, std::span<const double> grid,
                                         const BinningSpec& bins = {}) {
  if (grid.empty()) throw InvalidParameterError("grid_search_beta: empty grid");
  const auto f = factor_logits(m, val_set);
  GridSearchResult r;
  r.candidates.assign(grid.begin(), grid.end());
  r.eces.assign(grid.size(), std::nan(""));
  bool found = false;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (!(f.min_norm + grid[g] > 0.0)) {
      ++r.excluded;
      continue;
    }
    const double e = ece(softmax_rows(f.logits_affine(grid[g])), f.labels, bins);
    r.eces[g] = e;
    if (!found || e < r.ece || (e == r.ece && grid[g] < r.beta_prime)) {
      r.ece = e;
      r.beta_prime = grid[g];
      found = true;
    }
  }
  if (!found) throw InvalidParameterError("grid_search_beta: every candidate gives a nonpositive effective norm");
  return r;
}

struct NllDescentOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

struct NllDescentResult {
  double beta_prime = 0.0;
  double initial_nll = 0.0;
  double final_nll = 0.0;
};

/// Mini-batch gradient descent on beta alone. The returned value is the best
/// end-of-epoch iterate on the full set (the start point included), so the
/// NLL never exceeds its initial value. beta is kept above -min |dx| so the
/// effective norm stays positive on every sample.
inline NllDescentResult optimize_beta_nll(const Model& m, const EmbeddingBatch& val_set, const NllDescentOptions& opt = {}) {
  if (opt.batch_size == 0) throw InvalidParameterError("optimize_beta_nll: batch_size must be positive");
  const auto f = factor_logits(m, val_set);
  const std::size_t n = f.norms.size();
  const double floor_beta = -f.min_norm + 1e-6 * std::max(1.0, f.min_norm);
  auto full_nll = [&](double b) { return nll(softmax_rows(f.logits_affine(b)), f.labels); };

  double beta = std::max(m.head.beta, floor_beta);
  NllDescentResult r;
  r.beta_prime = m.head.beta;
  r.initial_nll = full_nll(m.head.beta);
  r.final_nll = r.initial_nll;
  std::vector<std::size_t> order(n);
  Vector z(f.scaled_cos.cols());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(opt.seed, 0xca1 + epoch));
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < n; start += opt.batch_size) {
      const std::size_t stop = std::min(n, start + opt.batch_size);
      double grad = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const auto a = f.scaled_cos.row(i);
        const double big_n = (f.norms[i] + beta) / f.alpha;
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = a[j] * big_n;
        const Vector p = softmax(z);
        grad += (dot(p, a) - a[f.labels[i]]) / f.alpha;
      }
      grad /= static_cast<double>(stop - start);
      if (!std::isfinite(grad))
        throw DivergenceError("optimize_beta_nll: non-finite gradient in epoch " + std::to_string(epoch + 1));
      beta = std::max(floor_beta, beta - opt.learning_rate * grad);
    }
    const double v = full_nll(beta);
    if (!std::isfinite(v)) throw DivergenceError("optimize_beta_nll: non-finite NLL after epoch " + std::to_string(epoch + 1));
    if (v < r.final_nll) {
      r.final_nll = v;
      r.beta_prime = beta;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Norm statistics and the two-step procedure

struct NormStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
};

inline NormStats norm_stats_of(std::span<const double> norms) {
  if (norms.empty()) throw DegenerateStatisticsError("norm_stats: empty set");
  double s = 0.0;
  for (double v : norms) s += v;
  const double n = static_cast<double>(norms.size());
  const double mu = s / n;
  double ss = 0.0;
  for (double v : norms) ss += (v - mu) * (v - mu);
  return {mu, std::sqrt(ss / n)};
}

inline NormStats norm_stats(const Model& m, const EmbeddingBatch& val_set) {
  if (val_set.empty()) throw DegenerateStatisticsError("norm_stats: empty validation set");
  return norm_stats_of(row_norms(encode_batch(m, val_set)));
}

enum class CalibrationMode { temperature, affine_beta, nonlinear };
enum class Provenance { grid_searched, optimized };
enum class CalibrationMethod { grid, optimize };

inline std::string to_string(CalibrationMode m) {
  switch (m) {
    case CalibrationMode::temperature: return "temperature";
    case CalibrationMode::affine_beta: return "affine";
    case CalibrationMode::nonlinear: return "nonlinear";
  }
  return "?";
}
inline std::string to_string(Provenance p) { return p == Provenance::grid_searched ? "grid_searched" : "optimized"; }
inline std::string to_string(CalibrationMethod m) { return m == CalibrationMethod::grid ? "grid" : "optimize"; }

inline CalibrationMethod parse_calibration_method(std::string_view s) {
  if (s == "grid") return CalibrationMethod::grid;
  if (s == "optimize") return CalibrationMethod::optimize;
  throw InvalidParameterError("unknown calibration method: " + std::string(s));
}

struct CalibrationConfig {
  CalibrationMode mode = CalibrationMode::affine_beta;
  double temperature = 1.0;
  double beta_prime = 0.0;
  double c = 0.0;
  double mu_x = 0.0;
  double sigma_x = 0.0;
  double error = 0.1;
  Provenance provenance = Provenance::grid_searched;

  void validate() const {
    if (mode == CalibrationMode::temperature && !(temperature > 0.0))
      throw InvalidParameterError("calibration config: T must be positive");
    if (mode == CalibrationMode::nonlinear) {
      if (!(c > 0.0)) throw InvalidParameterError("calibration config: c must be positive");
      if (!(mu_x - sigma_x > 0.0)) throw DegenerateStatisticsError("calibration config: mu_x - sigma_x must be positive");
    }
    if (!(error > 0.0 && error < 1.0)) throw InvalidParameterError("calibration config: error must lie in (0, 1)");
  }

  NormMode norm_mode() const {
    switch (mode) {
      case CalibrationMode::temperature: return NormMode::trained();
      case CalibrationMode::affine_beta: return NormMode::affine(beta_prime);
      case CalibrationMode::nonlinear: return NormMode::nonlinear(beta_prime, c);
    }
    return {};
  }

  friend bool operator==(const CalibrationConfig&, const CalibrationConfig&) = default;
};

/// Calibrated logits. Temperature mode divides the model's own logits by T;
/// the other modes require the disentangled head.
inline Matrix calibrated_logits(const Model& m, const Matrix& encoded, const CalibrationConfig& cfg) {
  cfg.validate();
  if (cfg.mode == CalibrationMode::temperature) return scale_logits(logits_matrix(m, encoded), cfg.temperature);
  if (m.head_kind != HeadKind::gsd) throw InvalidParameterError("norm calibration requires a model with the disentangled head");
  return logits_matrix(m, encoded, cfg.norm_mode());
}

inline Matrix calibrated_probabilities(const Model& m, const EmbeddingBatch& batch, const CalibrationConfig& cfg) {
  return softmax_rows(calibrated_logits(m, encode_batch(m, batch), cfg));
}

struct TwoStepResult {
  CalibrationConfig affine;     // after step 1
  CalibrationConfig nonlinear;  // after step 2
  std::size_t excluded_candidates = 0;
};

struct TwoStepOptions {
  CalibrationMethod method = CalibrationMethod::grid;
  double error = 0.1;
  BinningSpec bins{};
  NllDescentOptions descent{};
};

/// Step 1 tunes beta' on IND validation data; step 2 fits (mu_x, sigma_x) on
/// the same data and sets c so that e^{-c (mu_x - sigma_x)} = 1 - error.
inline TwoStepResult calibrate_two_step(const Model& m, const EmbeddingBatch& val_set, const TwoStepOptions& opt = {}) {
  if (m.head_kind != HeadKind::gsd) throw InvalidParameterError("calibrate_two_step: model has no disentangled head");
  TwoStepResult r;
  r.affine.mode = CalibrationMode::affine_beta;
  r.affine.error = opt.error;
  if (opt.method == CalibrationMethod::grid) {
    const auto grid = default_beta_grid(m.head.beta);
    const auto g = grid_search_beta(m, val_set, grid, opt.bins);
    r.affine.beta_prime = g.beta_prime;
    r.affine.provenance = Provenance::grid_searched;
    r.excluded_candidates = g.excluded;
  } else {
    r.affine.beta_prime = optimize_beta_nll(m, val_set, opt.descent).beta_prime;
    r.affine.provenance = Provenance::optimized;
  }
  const auto st = norm_stats(m, val_set);
  r.affine.mu_x = st.mu;
  r.affine.sigma_x = st.sigma;
  r.nonlinear = r.affine;
  r.nonlinear.mode = CalibrationMode::nonlinear;
  r.nonlinear.c = compute_c(st.mu, st.sigma, opt.error);
  return r;
}

/// Temperature config fitted on the model's own validation logits.
inline CalibrationConfig calibrate_temperature(const Model& m, const EmbeddingBatch& val_set, const TemperatureOptions& opt = {}) {
  CalibrationConfig c;
  c.mode = CalibrationMode::temperature;
  c.provenance = Provenance::optimized;
  c.temperature = fit_temperature(logits_matrix(m, encode_batch(m, val_set)), val_set.labels, opt);
  const auto st = norm_stats(m, val_set);
  c.mu_x = st.mu;
  c.sigma_x = st.sigma;
  return c;
}

// ---------------------------------------------------------------------------
// key=value text form

inline std::string to_text(const CalibrationConfig& c) {
  using io::format_double;
  std::ostringstream os;
  os << "mode=" << to_string(c.mode) << '\n'
     << "T=" << format_double(c.temperature) << '\n'
     << "beta_prime=" << format_double(c.beta_prime) << '\n'
     << "c=" << format_double(c.c) << '\n'
     << "mu_x=" << format_double(c.mu_x) << '\n'
     << "sigma_x=" << format_double(c.sigma_x) << '\n'
     << "error=" << format_double(c.error) << '\n'
     << "provenance=" << to_string(c.provenance) << '\n';
  return os.str();
}

/// Every key must appear exactly once; blank lines and '#' comments are ignored.
inline CalibrationConfig parse_calibration_config(const std::string& text) {
  CalibrationConfig c;
  static constexpr const char* kKeys[] = {"mode", "T", "beta_prime", "c", "mu_x", "sigma_x", "error", "provenance"};
  std::vector<bool> seen(std::size(kKeys), false);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = io::trim(std::string_view(text).substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("calibration config: expected key=value", line_start);
    const auto key = io::trim(line.substr(0, eq));
    const auto val = io::trim(line.substr(eq + 1));
    std::size_t k = 0;
    while (k < std::size(kKeys) && key != kKeys[k]) ++k;
    if (k == std::size(kKeys)) throw ParseError("calibration config: unknown key \"" + std::string(key) + "\"", line_start);
    if (seen[k]) throw ParseError("calibration config: duplicate key \"" + std::string(key) + "\"", line_start);
    seen[k] = true;
    try {
      switch (k) {
        case 0:
          if (val == "temperature") c.mode = CalibrationMode::temperature;
          else if (val == "affine") c.mode = CalibrationMode::affine_beta;
          else if (val == "nonlinear") c.mode = CalibrationMode::nonlinear;
          else throw Error("unknown mode \"" + std::string(val) + "\"");
          break;
        case 1: c.temperature = io::parse_double(val); break;
        case 2: c.beta_prime = io::parse_double(val); break;
        case 3: c.c = io::parse_double(val); break;
        case 4: c.mu_x = io::parse_double(val); break;
        case 5: c.sigma_x = io::parse_double(val); break;
        case 6: c.error = io::parse_double(val); break;
        case 7:
          if (val == "grid_searched") c.provenance = Provenance::grid_searched;
          else if (val == "optimized") c.provenance = Provenance::optimized;
          else throw Error("unknown provenance \"" + std::string(val) + "\"");
          break;
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(std::string("calibration config: ") + e.what(), line_start);
    }
  }
  for (std::size_t k = 0; k < seen.size(); ++k)
    if (!seen[k]) throw ParseError(std::string("calibration config: missing key \"") + kKeys[k] + "\"", text.size());
  return c;
}

inline void write_calibration_config(const CalibrationConfig& c, const std::string& path) { io::write_text(path, to_text(c)); }
inline CalibrationConfig read_calibration_config(const std::string& path) {
  return parse_calibration_config(io::read_text(path));
}

}  // namespace gsd
