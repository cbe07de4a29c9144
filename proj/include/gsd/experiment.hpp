#pragma once

// End-to-end synthetic experiment: data generation, vanilla + disentangled
// training, calibration, evaluation across shift severities, norm-based
// detection, and the alpha/beta sweep. Also the key=value experiment config.

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/calibration.hpp"
#include "gsd/data.hpp"
#include "gsd/error.hpp"
#include "gsd/io.hpp"
#include "gsd/metrics.hpp"
#include "gsd/model.hpp"
#include "gsd/train.hpp"

namespace gsd {

struct SweepSpec {
  bool enabled = true;
  Vector alphas{1.0, 1.5, 2.0, 2.5};
  Vector betas{0.0, 1.0, 2.0, 3.0};
  std::size_t epochs = 40;
  std::size_t train_per_class = 500;
};

struct ExperimentSpec {
  std::uint64_t seed = 0;
  std::size_t num_classes = 4;
  std::size_t dim = 16;
  double separation = 3.0;
  double within_class_sigma = 1.0;
  std::size_t train_per_class = 2000;
  std::size_t val_per_class = 250;
  std::size_t test_per_class = 500;
  ShiftFamily shift_family = ShiftFamily::gaussian_noise;
  Vector severities;  // empty: (0.5, 1, 1.5, 2, 2.5) * within_class_sigma
  ModelShape shape{EncoderKind::mlp1, HeadKind::gsd, 16, 64, 16, 4};
  TrainConfig train{};
  CalibrationMethod method = CalibrationMethod::grid;
  double error = 0.1;
  BinningSpec bins{};
  NllDescentOptions descent{};
  TemperatureOptions temperature{};
  bool track_statistics = true;
  SweepSpec sweep{};

  Vector resolved_severities() const {
    if (!severities.empty()) return severities;
    return default_noise_shift(within_class_sigma, 0).severity_levels;
  }

  ShiftSpec shift_spec(std::uint64_t trial_seed) const {
    ShiftSpec s{shift_family, resolved_severities(), derive_seed(trial_seed, 4)};
    s.validate();
    return s;
  }

  ClusterSpec cluster_spec(std::size_t per_class, std::uint64_t stream, std::uint64_t trial_seed) const {
    ClusterSpec c;
    c.num_classes = num_classes;
    c.dim = dim;
    c.class_means = axis_means(num_classes, dim, separation);
    c.within_class_sigma = within_class_sigma;
    c.samples_per_class = per_class;
    c.seed = derive_seed(trial_seed, stream);
    return c;
  }

  ModelShape model_shape(HeadKind head) const {
    ModelShape s = shape;
    s.head = head;
    s.input_dim = dim;
    s.num_classes = num_classes;
    return s;
  }

  TrainConfig train_config(std::uint64_t trial_seed) const {
    TrainConfig t = train;
    t.seed = trial_seed;
    return t;
  }

  void validate() const {
    if (num_classes < 2) throw InvalidParameterError("experiment: num_classes must be at least 2");
    if (dim < num_classes) throw InvalidParameterError("experiment: dim must be >= num_classes");
    if (!(separation > 0.0)) throw InvalidParameterError("experiment: separation must be positive");
    if (!(within_class_sigma > 0.0)) throw InvalidParameterError("experiment: within_class_sigma must be positive");
    if (train_per_class == 0 || val_per_class == 0 || test_per_class == 0)
      throw InvalidParameterError("experiment: per-class sample counts must be positive");
    if (shape.encoder != EncoderKind::identity && shape.feature_dim == 0)
      throw InvalidParameterError("experiment: feature_dim must be positive");
    if (shape.encoder == EncoderKind::mlp1 && shape.hidden_dim == 0)
      throw InvalidParameterError("experiment: hidden_dim must be positive");
    if (bins.num_bins == 0) throw InvalidParameterError("experiment: bins must be positive");
    if (!(error > 0.0 && error < 1.0)) throw InvalidParameterError("experiment: error must lie in (0, 1)");
    train.validate();
    ShiftSpec{shift_family, resolved_severities(), 0}.validate();
    if (sweep.enabled && (sweep.alphas.empty() || sweep.betas.empty() || sweep.train_per_class == 0))
      throw InvalidParameterError("experiment: sweep grid and sample count must be nonempty");
    for (double a : sweep.alphas)
      if (!(a >= 1.0)) throw InvalidParameterError("experiment: sweep alphas must be >= 1 (arccos(1/alpha) is undefined below 1)");
  }
};

// ---------------------------------------------------------------------------
// key=value config

namespace detail {

inline Vector parse_list(std::string_view v) {
  Vector out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto end = v.find(',', pos);
    if (end == std::string_view::npos) end = v.size();
    const auto item = io::trim(v.substr(pos, end - pos));
    if (!item.empty()) out.push_back(io::parse_double(item));
    pos = end + 1;
  }
  return out;
}

inline std::string format_list(const Vector& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += io::format_double(v[i]);
  }
  return s;
}

inline bool parse_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error("not a boolean: \"" + std::string(v) + "\"");
}

}  // namespace detail

/// Applies one key=value pair. Throws Error for unknown keys or bad values.
inline void set_experiment_key(ExperimentSpec& s, std::string_view key, std::string_view v) {
  using io::parse_double;
  auto uint = [&] { return io::parse_integer<std::size_t>(v); };
  if (key == "seed") s.seed = io::parse_integer<std::uint64_t>(v);
  else if (key == "num_classes") s.num_classes = uint();
  else if (key == "dim") s.dim = uint();
  else if (key == "separation") s.separation = parse_double(v);
  else if (key == "within_class_sigma") s.within_class_sigma = parse_double(v);
  else if (key == "train_per_class") s.train_per_class = uint();
  else if (key == "val_per_class") s.val_per_class = uint();
  else if (key == "test_per_class") s.test_per_class = uint();
  else if (key == "shift_family") s.shift_family = parse_shift_family(v);
  else if (key == "severities") s.severities = detail::parse_list(v);
  else if (key == "encoder") s.shape.encoder = parse_encoder_kind(v);
  else if (key == "hidden_dim") s.shape.hidden_dim = uint();
  else if (key == "feature_dim") s.shape.feature_dim = uint();
  else if (key == "learning_rate") s.train.learning_rate = parse_double(v);
  else if (key == "weight_decay") s.train.weight_decay = parse_double(v);
  else if (key == "epochs") s.train.epochs = uint();
  else if (key == "batch_size") s.train.batch_size = uint();
  else if (key == "lambda_alpha") s.train.lambda_alpha = parse_double(v);
  else if (key == "schedule") s.train.schedule = parse_schedule(v);
  else if (key == "method") s.method = parse_calibration_method(v);
  else if (key == "error") s.error = parse_double(v);
  else if (key == "bins") s.bins.num_bins = uint();
  else if (key == "beta_epochs") s.descent.epochs = uint();
  else if (key == "beta_learning_rate") s.descent.learning_rate = parse_double(v);
  else if (key == "beta_batch_size") s.descent.batch_size = uint();
  else if (key == "temperature_iterations") s.temperature.iterations = uint();
  else if (key == "temperature_learning_rate") s.temperature.learning_rate = parse_double(v);
  else if (key == "track_statistics") s.track_statistics = detail::parse_bool(v);
  else if (key == "sweep") s.sweep.enabled = detail::parse_bool(v);
  else if (key == "sweep_alphas") s.sweep.alphas = detail::parse_list(v);
  else if (key == "sweep_betas") s.sweep.betas = detail::parse_list(v);
  else if (key == "sweep_epochs") s.sweep.epochs = uint();
  else if (key == "sweep_train_per_class") s.sweep.train_per_class = uint();
  else throw Error("unknown key \"" + std::string(key) + "\"");
}

/// Blank lines and lines starting with '#' are ignored. Later keys override earlier ones.
inline ExperimentSpec parse_experiment_spec(const std::string& text, ExperimentSpec base = {}) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t line_start = pos;
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const auto line = io::trim(std::string_view(text).substr(pos, end - pos));
    pos = end + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("config: expected key=value", line_start);
    try {
      set_experiment_key(base, io::trim(line.substr(0, eq)), io::trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw ParseError(std::string("config: ") + e.what(), line_start);
    }
  }
  return base;
}

inline std::string to_text(const ExperimentSpec& s) {
  using io::format_double;
  std::ostringstream os;
  os << "seed=" << s.seed << '\n'
     << "num_classes=" << s.num_classes << '\n'
     << "dim=" << s.dim << '\n'
     << "separation=" << format_double(s.separation) << '\n'
     << "within_class_sigma=" << format_double(s.within_class_sigma) << '\n'
     << "train_per_class=" << s.train_per_class << '\n'
     << "val_per_class=" << s.val_per_class << '\n'
     << "test_per_class=" << s.test_per_class << '\n'
     << "shift_family=" << to_string(s.shift_family) << '\n'
     << "severities=" << detail::format_list(s.resolved_severities()) << '\n'
     << "encoder=" << to_string(s.shape.encoder) << '\n'
     << "hidden_dim=" << s.shape.hidden_dim << '\n'
     << "feature_dim=" << s.shape.feature_dim << '\n'
     << "learning_rate=" << format_double(s.train.learning_rate) << '\n'
     << "weight_decay=" << format_double(s.train.weight_decay) << '\n'
     << "epochs=" << s.train.epochs << '\n'
     << "batch_size=" << s.train.batch_size << '\n'
     << "lambda_alpha=" << format_double(s.train.lambda_alpha) << '\n'
     << "schedule=" << to_string(s.train.schedule) << '\n'
     << "method=" << to_string(s.method) << '\n'
     << "error=" << format_double(s.error) << '\n'
     << "bins=" << s.bins.num_bins << '\n'
     << "beta_epochs=" << s.descent.epochs << '\n'
     << "beta_learning_rate=" << format_double(s.descent.learning_rate) << '\n'
     << "beta_batch_size=" << s.descent.batch_size << '\n'
     << "temperature_iterations=" << s.temperature.iterations << '\n'
     << "temperature_learning_rate=" << format_double(s.temperature.learning_rate) << '\n'
     << "track_statistics=" << (s.track_statistics ? "true" : "false") << '\n'
     << "sweep=" << (s.sweep.enabled ? "true" : "false") << '\n'
     << "sweep_alphas=" << detail::format_list(s.sweep.alphas) << '\n'
     << "sweep_betas=" << detail::format_list(s.sweep.betas) << '\n'
     << "sweep_epochs=" << s.sweep.epochs << '\n'
     << "sweep_train_per_class=" << s.sweep.train_per_class << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Data

struct ExperimentData {
  EmbeddingBatch train;
  EmbeddingBatch val;
  EmbeddingBatch test;                  // clean
  std::vector<EmbeddingBatch> shifted;  // one per severity
  std::vector<std::string> names;       // "clean" then one per severity
};

inline std::string severity_name(ShiftFamily f, double severity) { return to_string(f) + "_" + io::format_double(severity); }

/// Streams: 1 train, 2 val, 3 test, 4 shift noise, 0x1417 model init (see init_model).
inline ExperimentData make_experiment_data(const ExperimentSpec& s, std::uint64_t trial_seed) {
  ExperimentData d;
  d.train = gen_clusters(s.cluster_spec(s.train_per_class, 1, trial_seed));
  d.val = gen_clusters(s.cluster_spec(s.val_per_class, 2, trial_seed));
  d.test = gen_clusters(s.cluster_spec(s.test_per_class, 3, trial_seed));
  const auto shift = s.shift_spec(trial_seed);
  d.names.push_back("clean");
  for (std::size_t l = 0; l < shift.severity_levels.size(); ++l) {
    d.shifted.push_back(apply_shift(d.test, shift, l));
    d.names.push_back(severity_name(shift.family, shift.severity_levels[l]));
  }
  return d;
}

// ---------------------------------------------------------------------------
// One trial

inline constexpr const char* kMethodNames[] = {"vanilla", "temperature", "gsd_affine", "gsd_nonlinear"};
inline constexpr std::size_t kNumMethods = 4;

struct PreservationCheck {
  std::size_t compared = 0;    // samples with a positive effective norm
  std::size_t mismatches = 0;  // argmax changed among the compared samples
  std::size_t skipped = 0;     // effective norm <= 0
};

struct TrialResult {
  std::uint64_t seed = 0;
  TrainResult vanilla;
  TrainResult gsd;
  CalibrationConfig temperature;
  CalibrationConfig affine;
  CalibrationConfig nonlinear;
  std::size_t excluded_candidates = 0;
  std::vector<std::string> dataset_names;
  std::vector<std::vector<MetricsReport>> reports;  // [method][dataset]
  std::vector<MetricsReport> gsd_uncalibrated;       // [dataset]
  std::vector<double> auroc_norm_vanilla;            // [severity]
  std::vector<double> auroc_norm_gsd;                // [severity]
  std::vector<double> mean_norm_vanilla;             // [dataset]
  std::vector<double> mean_norm_gsd;                 // [dataset]
  std::vector<double> gsd_clean_norms;
  std::vector<double> gsd_worst_norms;
  PreservationCheck preservation[kNumMethods - 1];  // temperature, affine, nonlinear
};

namespace detail {

inline void compare_argmax(const Matrix& before, const Matrix& after, std::span<const double> norms, double offset,
                           bool check_norm, PreservationCheck& pc) {
  for (std::size_t i = 0; i < before.rows(); ++i) {
    if (check_norm && !(norms[i] + offset > 0.0)) {
      ++pc.skipped;
      continue;
    }
    ++pc.compared;
    if (argmax(before.row(i)) != argmax(after.row(i))) ++pc.mismatches;
  }
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace detail

/// Trains both heads from one shared initialisation, calibrates on the
/// validation set only, and evaluates on clean and shifted test sets.
inline TrialResult run_trial(const ExperimentSpec& s, std::uint64_t trial_seed) {
  s.validate();
  const auto data = make_experiment_data(s, trial_seed);
  TrialResult r;
  r.seed = trial_seed;
  r.dataset_names = data.names;
  const auto cfg = s.train_config(trial_seed);

  std::vector<EmbeddingBatch> tracked;
  if (s.track_statistics) {
    tracked.push_back(data.test);
    if (!data.shifted.empty()) tracked.push_back(data.shifted.back());
  }
  r.vanilla = train(init_model(s.model_shape(HeadKind::vanilla), trial_seed), data.train, cfg, tracked, s.bins);
  r.gsd = train(init_model(s.model_shape(HeadKind::gsd), trial_seed), data.train, cfg, tracked, s.bins);
  const Model& van = r.vanilla.model;
  const Model& gsd = r.gsd.model;

  r.temperature = calibrate_temperature(van, data.val, s.temperature);
  r.temperature.error = s.error;
  TwoStepOptions opt;
  opt.method = s.method;
  opt.error = s.error;
  opt.bins = s.bins;
  opt.descent = s.descent;
  opt.descent.seed = trial_seed;
  const auto two = calibrate_two_step(gsd, data.val, opt);
  r.affine = two.affine;
  r.nonlinear = two.nonlinear;
  r.excluded_candidates = two.excluded_candidates;

  r.reports.assign(kNumMethods, {});
  std::vector<const EmbeddingBatch*> sets{&data.test};
  for (const auto& b : data.shifted) sets.push_back(&b);
  std::vector<double> clean_norm_van, clean_norm_gsd;
  for (std::size_t d = 0; d < sets.size(); ++d) {
    const auto& b = *sets[d];
    const Matrix enc_v = encode_batch(van, b);
    const Matrix enc_g = encode_batch(gsd, b);
    const Matrix lv = logits_matrix(van, enc_v);
    const Matrix lt = scale_logits(lv, r.temperature.temperature);
    const Matrix lg = logits_matrix(gsd, enc_g);
    const Matrix la = logits_matrix(gsd, enc_g, r.affine.norm_mode());
    const Matrix ln = logits_matrix(gsd, enc_g, r.nonlinear.norm_mode());
    r.reports[0].push_back(evaluate_probabilities(softmax_rows(lv), b.labels, s.bins));
    r.reports[1].push_back(evaluate_probabilities(softmax_rows(lt), b.labels, s.bins));
    r.reports[2].push_back(evaluate_probabilities(softmax_rows(la), b.labels, s.bins));
    r.reports[3].push_back(evaluate_probabilities(softmax_rows(ln), b.labels, s.bins));
    r.gsd_uncalibrated.push_back(evaluate_probabilities(softmax_rows(lg), b.labels, s.bins));

    const Vector nv = row_norms(enc_v);
    const Vector ng = row_norms(enc_g);
    detail::compare_argmax(lv, lt, nv, 0.0, false, r.preservation[0]);
    detail::compare_argmax(lg, la, ng, r.affine.beta_prime, true, r.preservation[1]);
    // the nonlinear map is positive for every |dx| > 0 once beta' >= 0; for
    // beta' < 0 test the sign of the effective norm directly
    for (std::size_t i = 0; i < lg.rows(); ++i) {
      const double big_n = effective_norm(gsd.head, ng[i], r.nonlinear.norm_mode());
      auto& pc = r.preservation[2];
      if (!(big_n > 0.0)) {
        ++pc.skipped;
        continue;
      }
      ++pc.compared;
      if (argmax(lg.row(i)) != argmax(ln.row(i))) ++pc.mismatches;
    }

    r.mean_norm_vanilla.push_back(detail::mean_of(nv));
    r.mean_norm_gsd.push_back(detail::mean_of(ng));
    if (d == 0) {
      clean_norm_van = nv;
      clean_norm_gsd = ng;
      r.gsd_clean_norms = ng;
    } else {
      r.auroc_norm_vanilla.push_back(auroc(clean_norm_van, nv));
      r.auroc_norm_gsd.push_back(auroc(clean_norm_gsd, ng));
      if (d + 1 == sets.size()) r.gsd_worst_norms = ng;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// alpha/beta sweep

struct SweepPoint {
  double alpha = 1.0;
  double beta = 0.0;
  double relaxation = 0.0;  // arccos(1 / alpha)
  double mean_norm = 0.0;   // mean |dx| on the clean test set
  double mean_angle = 0.0;  // mean angle (radians) between dx and the true class weight
};

struct SweepFit {
  bool fixed_alpha = true;  // true: norm vs beta at fixed alpha; false: angle vs arccos(1/alpha) at fixed beta
  double fixed = 0.0;
  LinearFit fit;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<SweepFit> fits;
};

/// Trains the disentangled head with alpha and beta frozen at every grid
/// point, from the same initial weights and data.
inline SweepResult run_sweep(const ExperimentSpec& s, std::uint64_t trial_seed) {
  const auto train_set = gen_clusters(s.cluster_spec(s.sweep.train_per_class, 1, trial_seed));
  const auto test_set = gen_clusters(s.cluster_spec(s.test_per_class, 3, trial_seed));
  auto cfg = s.train_config(trial_seed);
  cfg.epochs = s.sweep.epochs;
  cfg.train_alpha = false;
  cfg.train_beta = false;
  const Model base = init_model(s.model_shape(HeadKind::gsd), trial_seed);
  SweepResult r;
  for (double a : s.sweep.alphas) {
    for (double b : s.sweep.betas) {
      Model m = base;
      m.head.alpha = a;
      m.head.beta = b;
      const auto trained = train(m, train_set, cfg).model;
      const Matrix enc = encode_batch(trained, test_set);
      double nsum = 0.0, asum = 0.0;
      for (std::size_t i = 0; i < enc.rows(); ++i) {
        const auto g = geometric_logit(trained.head.weights.row(test_set.labels[i]), enc.row(i));
        nsum += g.x_norm;
        asum += std::acos(g.cos_phi);
      }
      const double n = static_cast<double>(enc.rows());
      r.points.push_back({a, b, std::acos(1.0 / a), nsum / n, asum / n});
    }
  }
  for (double a : s.sweep.alphas) {
    Vector xs, ys;
    for (const auto& p : r.points)
      if (p.alpha == a) {
        xs.push_back(p.beta);
        ys.push_back(p.mean_norm);
      }
    if (xs.size() >= 2) r.fits.push_back({true, a, least_squares(xs, ys)});
  }
  for (double b : s.sweep.betas) {
    Vector xs, ys;
    for (const auto& p : r.points)
      if (p.beta == b) {
        xs.push_back(p.relaxation);
        ys.push_back(p.mean_angle);
      }
    if (xs.size() >= 2) r.fits.push_back({false, b, least_squares(xs, ys)});
  }
  return r;
}

// ---------------------------------------------------------------------------
// Report tables

inline constexpr const char* kSummaryMetrics[] = {"accuracy", "ece", "nll", "brier", "mean_entropy"};

inline double report_value(const MetricsReport& r, std::string_view metric) {
  if (metric == "accuracy") return r.accuracy;
  if (metric == "ece") return r.ece;
  if (metric == "nll") return r.nll;
  if (metric == "brier") return r.brier;
  if (metric == "mean_entropy") return r.mean_entropy;
  throw DomainError("unknown metric " + std::string(metric));
}

/// Header: metric, method, then one column per dataset. One row per
/// (metric, method): 4 method rows per metric.
inline std::string summary_to_tsv(const TrialResult& r) {
  std::ostringstream os;
  os << "metric\tmethod";
  for (const auto& n : r.dataset_names) os << '\t' << n;
  os << '\n';
  for (const char* metric : kSummaryMetrics) {
    for (std::size_t m = 0; m < kNumMethods; ++m) {
      os << metric << '\t' << kMethodNames[m];
      for (const auto& rep : r.reports[m]) os << '\t' << io::format_double(report_value(rep, metric));
      os << '\n';
    }
  }
  return os.str();
}

/// Header: dataset, severity, auroc_norm_vanilla, auroc_norm_gsd, mean_norm_vanilla, mean_norm_gsd.
inline std::string detection_to_tsv(const TrialResult& r, std::span<const double> severities) {
  std::ostringstream os;
  os << "dataset\tseverity\tauroc_norm_vanilla\tauroc_norm_gsd\tmean_norm_vanilla\tmean_norm_gsd\n";
  for (std::size_t d = 0; d < r.dataset_names.size(); ++d) {
    os << r.dataset_names[d] << '\t' << (d == 0 ? "0" : io::format_double(severities[d - 1])) << '\t';
    if (d == 0) os << "0.5\t0.5";
    else os << io::format_double(r.auroc_norm_vanilla[d - 1]) << '\t' << io::format_double(r.auroc_norm_gsd[d - 1]);
    os << '\t' << io::format_double(r.mean_norm_vanilla[d]) << '\t' << io::format_double(r.mean_norm_gsd[d]) << '\n';
  }
  return os.str();
}

/// Header: method, compared, mismatches, skipped_nonpositive_norm.
inline std::string preservation_to_tsv(const TrialResult& r) {
  std::ostringstream os;
  os << "method\tcompared\tmismatches\tskipped_nonpositive_norm\n";
  for (std::size_t m = 1; m < kNumMethods; ++m) {
    const auto& p = r.preservation[m - 1];
    os << kMethodNames[m] << '\t' << p.compared << '\t' << p.mismatches << '\t' << p.skipped << '\n';
  }
  return os.str();
}

/// Equal-width histogram over the pooled range of both samples.
/// Header: bin, lower, upper, ind_count, shifted_count.
inline std::string norm_histogram_tsv(std::span<const double> ind, std::span<const double> shifted, std::size_t num_bins = 20) {
  if (ind.empty() || shifted.empty() || num_bins == 0) throw DomainError("norm_histogram: empty input");
  double lo = ind[0], hi = ind[0];
  for (auto v : {ind, shifted})
    for (double x : v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(num_bins);
  std::vector<std::size_t> ci(num_bins, 0), cs(num_bins, 0);
  auto bin = [&](double x) { return std::min(num_bins - 1, static_cast<std::size_t>((x - lo) / width)); };
  for (double x : ind) ++ci[bin(x)];
  for (double x : shifted) ++cs[bin(x)];
  std::ostringstream os;
  os << "bin\tlower\tupper\tind_count\tshifted_count\n";
  for (std::size_t b = 0; b < num_bins; ++b)
    os << b << '\t' << io::format_double(lo + width * static_cast<double>(b)) << '\t'
       << io::format_double(b + 1 == num_bins ? hi : lo + width * static_cast<double>(b + 1)) << '\t' << ci[b] << '\t'
       << cs[b] << '\n';
  return os.str();
}

/// Header: alpha, beta, arccos_inv_alpha, mean_norm, mean_angle.
inline std::string sweep_points_to_tsv(const SweepResult& r) {
  std::ostringstream os;
  os << "alpha\tbeta\tarccos_inv_alpha\tmean_norm\tmean_angle\n";
  for (const auto& p : r.points)
    os << io::format_double(p.alpha) << '\t' << io::format_double(p.beta) << '\t' << io::format_double(p.relaxation) << '\t'
       << io::format_double(p.mean_norm) << '\t' << io::format_double(p.mean_angle) << '\n';
  return os.str();
}

/// Header: fixed, value, x, y, slope, intercept, r_squared.
inline std::string sweep_fits_to_tsv(const SweepResult& r) {
  std::ostringstream os;
  os << "fixed\tvalue\tx\ty\tslope\tintercept\tr_squared\n";
  for (const auto& f : r.fits)
    os << (f.fixed_alpha ? "alpha" : "beta") << '\t' << io::format_double(f.fixed) << '\t'
       << (f.fixed_alpha ? "beta\tmean_norm" : "arccos_inv_alpha\tmean_angle") << '\t' << io::format_double(f.fit.slope) << '\t'
       << io::format_double(f.fit.intercept) << '\t' << io::format_double(f.fit.r_squared) << '\n';
  return os.str();
}

/// Mean ECE of a method over the severity levels with 1-based index >= first_level.
inline double mean_ece_from_level(const TrialResult& r, std::size_t method, std::size_t first_level) {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t d = first_level; d < r.reports[method].size(); ++d) {
    s += r.reports[method][d].ece;
    ++c;
  }
  if (c == 0) throw DomainError("mean_ece_from_level: no severity levels at or above the requested index");
  return s / static_cast<double>(c);
}

}  // namespace gsd
