#pragma once

// Mini-batch SGD for encoder + head, per-epoch history, and the training
// statistics table used for the norm/cosine vs ECE correlation analysis.

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/data.hpp"
#include "gsd/error.hpp"
#include "gsd/io.hpp"
#include "gsd/metrics.hpp"
#include "gsd/model.hpp"
#include "gsd/rng.hpp"

namespace gsd {

/// alpha is kept at or above this after every step.
inline constexpr double kAlphaFloor = 1e-3;

/// Learning rate for a 0-based epoch. step decays x0.2 at 30%, 60%, 80% of the run.
inline double learning_rate_at(const TrainConfig& cfg, std::size_t epoch) {
  const double e = static_cast<double>(epoch);
  const double total = static_cast<double>(cfg.epochs);
  switch (cfg.schedule) {
    case Schedule::constant: return cfg.learning_rate;
    case Schedule::cosine: return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * e / total));
    case Schedule::step: {
      double lr = cfg.learning_rate;
      for (double frac : {0.3, 0.6, 0.8})
        if (e >= frac * total) lr *= 0.2;
      return lr;
    }
  }
  return cfg.learning_rate;
}

/// Class probabilities for every sample of a batch.
inline Matrix predict_probabilities(const Model& m, const EmbeddingBatch& batch, const NormMode& mode = {}) {
  return softmax_rows(logits_matrix(m, encode_batch(m, batch), mode));
}

struct EvalStats {
  double accuracy = 0.0;
  double ece = 0.0;
  double mean_norm = 0.0;
  double mean_cosine = 0.0;  // cosine between dx and the true class weight
};

inline EvalStats evaluate_stats(const Model& m, const EmbeddingBatch& batch, const BinningSpec& bins = {}) {
  if (batch.empty()) throw DomainError("evaluate_stats: empty batch");
  const Matrix enc = encode_batch(m, batch);
  const Matrix probs = softmax_rows(logits_matrix(m, enc));
  EvalStats s;
  s.accuracy = accuracy(probs, batch.labels);
  s.ece = ece(probs, batch.labels, bins);
  double nsum = 0.0, csum = 0.0;
  for (std::size_t i = 0; i < enc.rows(); ++i) {
    const auto g = geometric_logit(m.head.weights.row(batch.labels[i]), enc.row(i));
    nsum += g.x_norm;
    csum += g.cos_phi;
  }
  s.mean_norm = nsum / static_cast<double>(enc.rows());
  s.mean_cosine = csum / static_cast<double>(enc.rows());
  return s;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double loss = 0.0;      // mean over samples of the batch objective
  double accuracy = 0.0;  // running training accuracy during the epoch
  double mean_norm = 0.0;
  double mean_cosine = 0.0;
  double alpha = 1.0;
  double beta = 0.0;
  std::vector<EvalStats> eval;  // end-of-epoch stats, one per evaluation set
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  bool beta_went_negative = false;
};

/// Deterministic SGD. Each epoch draws a fresh permutation from
/// Rng(derive_seed(cfg.seed, epoch)); the last batch may be short.
inline TrainResult train(const Model& init, const EmbeddingBatch& train_set, const TrainConfig& cfg,
                         std::span<const EmbeddingBatch> eval_sets = {}, const BinningSpec& bins = {}) {
  cfg.validate();
  if (train_set.empty()) throw DomainError("train: empty training set");
  train_set.validate();
  if (train_set.num_classes != init.head.num_classes()) throw DomainError("train: class count does not match the head");
  TrainResult r{init, {}, false};
  Model& m = r.model;
  const bool gsd_head = m.head_kind == HeadKind::gsd;
  const std::size_t n = train_set.size();
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate_at(cfg, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(cfg.seed, epoch));
    rng.shuffle(std::span<std::size_t>(order));

    ForwardStats stats;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      const auto lg = loss_and_grads(m, train_set, idx, cfg, &stats);
      if (!std::isfinite(lg.loss)) {
        std::ostringstream os;
        os << "training diverged: non-finite loss at epoch " << epoch + 1 << ", batch starting at " << start
           << " (learning rate " << lr << ")";
        throw DivergenceError(os.str());
      }
      loss_sum += lg.loss * static_cast<double>(idx.size());

      std::vector<std::vector<double>*> ps, gs;
      m.for_each_tensor([&](auto& t) { ps.push_back(&t); });
      const_cast<Model&>(lg.grads).for_each_tensor([&](auto& t) { gs.push_back(&t); });
      for (std::size_t t = 0; t < ps.size(); ++t) axpy(-lr, *gs[t], *ps[t]);
      if (gsd_head) {
        if (cfg.train_alpha) m.head.alpha = std::max(kAlphaFloor, m.head.alpha - lr * lg.grads.head.alpha);
        if (cfg.train_beta) m.head.beta -= lr * lg.grads.head.beta;
        if (m.head.beta < 0.0) r.beta_went_negative = true;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = lr;
    const double dn = static_cast<double>(n);
    rec.loss = loss_sum / dn;
    rec.accuracy = static_cast<double>(stats.correct) / dn;
    rec.mean_norm = stats.norm_sum / dn;
    rec.mean_cosine = stats.cos_sum / dn;
    rec.alpha = m.head.alpha;
    rec.beta = m.head.beta;
    for (const auto& es : eval_sets) rec.eval.push_back(evaluate_stats(m, es, bins));
    r.history.push_back(std::move(rec));
  }
  return r;
}

/// Per-epoch (accuracy, ECE, mean norm, mean cosine) for each evaluation set,
/// with Pearson correlations of ECE against norm and against cosine.
struct TrainingTable {
  std::vector<std::string> set_names;
  std::vector<EpochRecord> rows;
  std::vector<double> ece_norm_correlation;    // NaN when a series is constant
  std::vector<double> ece_cosine_correlation;  // NaN when a series is constant
};

inline TrainingTable track_training_statistics(const std::vector<EpochRecord>& history, std::vector<std::string> set_names) {
  if (history.empty()) throw DomainError("track_training_statistics: empty history");
  for (const auto& r : history)
    if (r.eval.size() != set_names.size())
      throw DomainError("track_training_statistics: history was recorded without the named evaluation sets");
  TrainingTable t{std::move(set_names), history, {}, {}};
  auto corr = [](const Vector& a, const Vector& b) {
    if (a.size() < 2) return std::nan("");
    try {
      return pearson(a, b);
    } catch (const DomainError&) {
      return std::nan("");
    }
  };
  for (std::size_t s = 0; s < t.set_names.size(); ++s) {
    Vector e, nm, cs;
    for (const auto& r : history) {
      e.push_back(r.eval[s].ece);
      nm.push_back(r.eval[s].mean_norm);
      cs.push_back(r.eval[s].mean_cosine);
    }
    t.ece_norm_correlation.push_back(corr(e, nm));
    t.ece_cosine_correlation.push_back(corr(e, cs));
  }
  return t;
}

/// Header: epoch, lr, train_loss, train_accuracy, train_norm, train_cosine,
/// alpha, beta, then <set>_accuracy, <set>_ece, <set>_norm, <set>_cosine per set.
inline std::string history_to_tsv(const TrainingTable& t) {
  std::ostringstream os;
  os << "epoch\tlr\ttrain_loss\ttrain_accuracy\ttrain_norm\ttrain_cosine\talpha\tbeta";
  for (const auto& s : t.set_names) os << '\t' << s << "_accuracy\t" << s << "_ece\t" << s << "_norm\t" << s << "_cosine";
  os << '\n';
  using io::format_double;
  for (const auto& r : t.rows) {
    os << r.epoch << '\t' << format_double(r.learning_rate) << '\t' << format_double(r.loss) << '\t'
       << format_double(r.accuracy) << '\t' << format_double(r.mean_norm) << '\t' << format_double(r.mean_cosine) << '\t'
       << format_double(r.alpha) << '\t' << format_double(r.beta);
    for (const auto& e : r.eval)
      os << '\t' << format_double(e.accuracy) << '\t' << format_double(e.ece) << '\t' << format_double(e.mean_norm) << '\t'
         << format_double(e.mean_cosine);
    os << '\n';
  }
  return os.str();
}

inline constexpr const char* kCorrelationHeader = "model\tset\tpearson_ece_norm\tpearson_ece_cosine\n";

/// Rows of the correlation table (no header): model, set, pearson_ece_norm, pearson_ece_cosine.
inline std::string correlations_to_tsv(const TrainingTable& t, std::string_view model_name) {
  std::ostringstream os;
  for (std::size_t s = 0; s < t.set_names.size(); ++s)
    os << model_name << '\t' << t.set_names[s] << '\t' << io::format_double(t.ece_norm_correlation[s]) << '\t'
       << io::format_double(t.ece_cosine_correlation[s]) << '\n';
  return os.str();
}

}  // namespace gsd
