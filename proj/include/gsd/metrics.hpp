#pragma once

// Calibration and detection metrics over row-stochastic probability matrices.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/error.hpp"
#include "gsd/io.hpp"
#include "gsd/linalg.hpp"
#include "gsd/softmax.hpp"

namespace gsd {

using Label = std::uint32_t;

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr double kRowSumTolerance = 1e-6;

/// Equal-width bins over max-class confidence. Bin m covers (m/M, (m+1)/M];
/// bin 0 is closed on the left so a confidence of exactly 0 has a home.
struct BinningSpec {
  std::size_t num_bins = 15;

  double edge(std::size_t m) const noexcept { return static_cast<double>(m) / static_cast<double>(num_bins); }

  std::size_t bin_of(double confidence) const noexcept {
    const auto m = num_bins;
    auto b = static_cast<std::size_t>(std::max(0.0, std::ceil(confidence * static_cast<double>(m)) - 1.0));
    b = std::min(b, m - 1);
    // Align with the explicit edges in case confidence * M rounded across one.
    while (b + 1 < m && confidence > edge(b + 1)) ++b;
    while (b > 0 && confidence <= edge(b)) --b;
    return b;
  }
};

struct BinRecord {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

struct MetricsReport {
  std::size_t n = 0;
  double accuracy = 0.0;
  double ece = 0.0;
  double nll = 0.0;
  double brier = 0.0;
  double mean_entropy = 0.0;
  std::size_t nll_floored = 0;  // samples whose true-class probability hit the floor
  std::vector<BinRecord> bins;
};

namespace detail {

inline void check_probabilities(const Matrix& probs, std::span<const Label> labels) {
  if (probs.rows() != labels.size()) throw DomainError("metrics: probability rows and labels differ in length");
  if (probs.cols() == 0) throw DomainError("metrics: probability matrix has no classes");
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double s = 0.0;
    for (double p : probs.row(r)) {
      if (!std::isfinite(p) || p < 0.0 || p > 1.0) throw DomainError("metrics: malformed probability row " + std::to_string(r));
      s += p;
    }
    if (std::abs(s - 1.0) > kRowSumTolerance) throw DomainError("metrics: row " + std::to_string(r) + " does not sum to 1");
    if (labels[r] >= probs.cols()) throw DomainError("metrics: label out of range at row " + std::to_string(r));
  }
}

}  // namespace detail

/// Per-bin reliability data; ECE is recomputable from it.
inline std::vector<BinRecord> reliability_bins(const Matrix& probs, std::span<const Label> labels, const BinningSpec& spec = {}) {
  detail::check_probabilities(probs, labels);
  if (spec.num_bins == 0) throw InvalidParameterError("binning: num_bins must be positive");
  std::vector<BinRecord> bins(spec.num_bins);
  std::vector<double> conf_sum(spec.num_bins, 0.0), correct(spec.num_bins, 0.0);
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    const std::size_t pred = argmax(row);
    const double conf = row[pred];
    const std::size_t b = spec.bin_of(conf);
    bins[b].count += 1;
    conf_sum[b] += conf;
    correct[b] += (pred == labels[r]) ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < spec.num_bins; ++m) {
    bins[m].lower = spec.edge(m);
    bins[m].upper = spec.edge(m + 1);
    if (bins[m].count > 0) {
      bins[m].mean_confidence = conf_sum[m] / static_cast<double>(bins[m].count);
      bins[m].accuracy = correct[m] / static_cast<double>(bins[m].count);
    }
  }
  return bins;
}

inline double ece_from_bins(std::span<const BinRecord> bins) {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  if (n == 0) return 0.0;
  double e = 0.0;
  for (const auto& b : bins)
    if (b.count > 0)
      e += (static_cast<double>(b.count) / static_cast<double>(n)) * std::abs(b.accuracy - b.mean_confidence);
  return e;
}

/// Expected calibration error over max-class confidence.
inline double ece(const Matrix& probs, std::span<const Label> labels, const BinningSpec& spec = {}) {
  return ece_from_bins(reliability_bins(probs, labels, spec));
}

struct NllResult {
  double value = 0.0;
  std::size_t floored = 0;
};

inline NllResult nll_detail(const Matrix& probs, std::span<const Label> labels) {
  detail::check_probabilities(probs, labels);
  if (probs.rows() == 0) throw DomainError("nll: empty set");
  NllResult out;
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double p = probs(r, labels[r]);
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      ++out.floored;
    }
    s += -std::log(p);
  }
  out.value = s / static_cast<double>(probs.rows());
  return out;
}

/// Mean negative log-probability of the true class (floored at 1e-12).
inline double nll(const Matrix& probs, std::span<const Label> labels) { return nll_detail(probs, labels).value; }

/// (1/N) sum_t sum_i (f_ti - o_ti)^2 with o one-hot.
inline double brier(const Matrix& probs, std::span<const Label> labels, std::size_t num_classes) {
  detail::check_probabilities(probs, labels);
  if (probs.cols() != num_classes) throw DomainError("brier: num_classes does not match probability columns");
  if (probs.rows() == 0) throw DomainError("brier: empty set");
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    for (std::size_t i = 0; i < num_classes; ++i) {
      const double d = row[i] - (i == labels[r] ? 1.0 : 0.0);
      s += d * d;
    }
  }
  return s / static_cast<double>(probs.rows());
}

/// Mean Shannon entropy of the rows, in nats.
inline double entropy(const Matrix& probs) {
  if (probs.rows() == 0) throw DomainError("entropy: empty set");
  double s = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double h = 0.0;
    for (double p : probs.row(r))
      if (p > 0.0) h -= p * std::log(p);
    s += h;
  }
  return s / static_cast<double>(probs.rows());
}

/// Probability that a random positive scores above a random negative, ties
/// counted one half. Exact, via midranks of the pooled scores.
inline double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw DomainError("auroc: both score sets must be nonempty");
  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(positives.size() + negatives.size());
  for (double s : positives) all.push_back({s, true});
  for (double s : negatives) all.push_back({s, false});
  for (const auto& e : all)
    if (std::isnan(e.score)) throw DomainError("auroc: NaN score");
  std::stable_sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  double rank_sum = 0.0;  // sum of positive midranks (1-based)
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      pos_in_group += all[j].positive ? 1 : 0;
      ++j;
    }
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    rank_sum += midrank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * nn);
}

/// Pearson correlation coefficient. Throws DomainError when either input is constant.
inline double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw DomainError("pearson: need two equal-length inputs of size >= 2");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw DomainError("pearson: correlation undefined for constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

/// Ordinary least squares y = slope x + intercept, with coefficient of determination.
inline LinearFit least_squares(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw DomainError("least_squares: need two equal-length inputs of size >= 2");
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0) throw DomainError("least_squares: constant regressor");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy == 0.0 ? 1.0 : std::min(1.0, (sxy * sxy) / (sxx * syy));
  return f;
}

inline double accuracy(const Matrix& probs, std::span<const Label> labels) {
  if (probs.rows() != labels.size()) throw DomainError("accuracy: size mismatch");
  if (probs.rows() == 0) throw DomainError("accuracy: empty set");
  std::size_t hit = 0;
  for (std::size_t r = 0; r < probs.rows(); ++r) hit += argmax(probs.row(r)) == labels[r] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(probs.rows());
}

inline MetricsReport evaluate_probabilities(const Matrix& probs, std::span<const Label> labels, const BinningSpec& spec = {}) {
  MetricsReport rep;
  rep.n = probs.rows();
  rep.bins = reliability_bins(probs, labels, spec);
  rep.ece = ece_from_bins(rep.bins);
  rep.accuracy = accuracy(probs, labels);
  const auto nl = nll_detail(probs, labels);
  rep.nll = nl.value;
  rep.nll_floored = nl.floored;
  rep.brier = brier(probs, labels, probs.cols());
  rep.mean_entropy = entropy(probs);
  return rep;
}

// TSV layout (fixed):
//   metric<TAB>value           header
//   n, accuracy, ece, nll, brier, mean_entropy, nll_floored   one row each
//   <blank line>
//   bin<TAB>lower<TAB>upper<TAB>count<TAB>mean_confidence<TAB>accuracy
//   one row per bin
inline constexpr const char* kMetricRowOrder[] = {"n", "accuracy", "ece", "nll", "brier", "mean_entropy", "nll_floored"};
inline constexpr const char* kBinHeader = "bin\tlower\tupper\tcount\tmean_confidence\taccuracy";

inline std::string to_tsv(const MetricsReport& r) {
  using io::format_double;
  std::ostringstream os;
  os << "metric\tvalue\n";
  os << "n\t" << r.n << "\n";
  os << "accuracy\t" << format_double(r.accuracy) << "\n";
  os << "ece\t" << format_double(r.ece) << "\n";
  os << "nll\t" << format_double(r.nll) << "\n";
  os << "brier\t" << format_double(r.brier) << "\n";
  os << "mean_entropy\t" << format_double(r.mean_entropy) << "\n";
  os << "nll_floored\t" << r.nll_floored << "\n";
  os << "\n" << kBinHeader << "\n";
  for (std::size_t m = 0; m < r.bins.size(); ++m) {
    const auto& b = r.bins[m];
    os << m << "\t" << format_double(b.lower) << "\t" << format_double(b.upper) << "\t" << b.count << "\t"
       << format_double(b.mean_confidence) << "\t" << format_double(b.accuracy) << "\n";
  }
  return os.str();
}

inline MetricsReport parse_metrics_tsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) { throw ParseError("metrics TSV: " + why + " on line " + std::to_string(lineno), lineno); };
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::size_t b = 0;
    for (;;) {
      const auto e = s.find('\t', b);
      out.push_back(s.substr(b, e - b));
      if (e == std::string::npos) break;
      b = e + 1;
    }
    return out;
  };
  MetricsReport r;
  ++lineno;
  if (!std::getline(is, line) || line != "metric\tvalue") fail("bad header");
  for (const char* key : kMetricRowOrder) {
    ++lineno;
    if (!std::getline(is, line)) fail("missing row");
    const auto f = split(line);
    if (f.size() != 2 || f[0] != key) fail(std::string("expected row ") + key);
    const std::string& v = f[1];
    const std::string_view k = key;
    if (k == "n") r.n = io::parse_integer<std::size_t>(v);
    else if (k == "accuracy") r.accuracy = io::parse_double(v);
    else if (k == "ece") r.ece = io::parse_double(v);
    else if (k == "nll") r.nll = io::parse_double(v);
    else if (k == "brier") r.brier = io::parse_double(v);
    else if (k == "mean_entropy") r.mean_entropy = io::parse_double(v);
    else r.nll_floored = io::parse_integer<std::size_t>(v);
  }
  ++lineno;
  if (!std::getline(is, line) || !line.empty()) fail("expected blank separator");
  ++lineno;
  if (!std::getline(is, line) || line != kBinHeader) fail("bad bin header");
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) break;
    const auto f = split(line);
    if (f.size() != 6) fail("bin row must have 6 fields");
    BinRecord b;
    b.lower = io::parse_double(f[1]);
    b.upper = io::parse_double(f[2]);
    b.count = io::parse_integer<std::size_t>(f[3]);
    b.mean_confidence = io::parse_double(f[4]);
    b.accuracy = io::parse_double(f[5]);
    r.bins.push_back(b);
  }
  return r;
}

}  // namespace gsd
