#pragma once

// Encoders and output heads: the vanilla dot-product head, the disentangled
// (GSD) head whose logits are |w_j| N(|dx|) cos(dphi_j), and the ablation
// variants that divide out one or both norms. Gradients are hand-derived.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gsd/data.hpp"
#include "gsd/error.hpp"
#include "gsd/geometry.hpp"
#include "gsd/linalg.hpp"
#include "gsd/rng.hpp"
#include "gsd/softmax.hpp"

namespace gsd {

enum class EncoderKind : std::uint32_t { identity = 0, linear = 1, mlp1 = 2 };
enum class HeadKind : std::uint32_t { vanilla = 0, gsd = 1 };

inline std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::identity: return "identity";
    case EncoderKind::linear: return "linear";
    case EncoderKind::mlp1: return "mlp1";
  }
  return "?";
}

inline EncoderKind parse_encoder_kind(std::string_view s) {
  if (s == "identity") return EncoderKind::identity;
  if (s == "linear") return EncoderKind::linear;
  if (s == "mlp1") return EncoderKind::mlp1;
  throw InvalidParameterError("unknown encoder kind: " + std::string(s));
}

inline std::string to_string(HeadKind k) { return k == HeadKind::vanilla ? "vanilla" : "gsd"; }

/// Feature extractor producing dx. identity passes the input through; linear
/// is W1 x + b1; mlp1 is W2 relu(W1 x + b1) + b2.
struct Encoder {
  EncoderKind kind = EncoderKind::identity;
  std::size_t input_dim = 0;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  std::size_t output_dim() const noexcept {
    switch (kind) {
      case EncoderKind::identity: return input_dim;
      case EncoderKind::linear: return w1.rows();
      case EncoderKind::mlp1: return w2.rows();
    }
    return 0;
  }

  Vector forward(std::span<const double> x) const {
    if (x.size() != input_dim) throw DomainError("encoder: input dimension mismatch");
    switch (kind) {
      case EncoderKind::identity: return Vector(x.begin(), x.end());
      case EncoderKind::linear: {
        Vector y = matvec(w1, x);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b1[i];
        return y;
      }
      case EncoderKind::mlp1: {
        Vector h = matvec(w1, x);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] = std::max(0.0, h[i] + b1[i]);
        Vector y = matvec(w2, h);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += b2[i];
        return y;
      }
    }
    return {};
  }

  friend bool operator==(const Encoder&, const Encoder&) = default;
};

namespace detail {
inline void fill_uniform(std::span<double> v, double bound, Rng& rng) {
  for (double& x : v) x = rng.uniform(-bound, bound);
}
}  // namespace detail

inline Encoder make_identity_encoder(std::size_t dim) { return Encoder{EncoderKind::identity, dim, {}, {}, {}, {}}; }

/// Weights and biases uniform in +-1/sqrt(fan_in).
inline Encoder make_linear_encoder(std::size_t input_dim, std::size_t output_dim, Rng& rng) {
  Encoder e{EncoderKind::linear, input_dim, Matrix(output_dim, input_dim), Vector(output_dim), {}, {}};
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
  detail::fill_uniform(e.w1.data(), bound, rng);
  detail::fill_uniform(e.b1, bound, rng);
  return e;
}

inline Encoder make_mlp1_encoder(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim, Rng& rng) {
  Encoder e{EncoderKind::mlp1, input_dim, Matrix(hidden_dim, input_dim), Vector(hidden_dim), Matrix(output_dim, hidden_dim),
            Vector(output_dim)};
  const double b_in = 1.0 / std::sqrt(static_cast<double>(input_dim));
  const double b_hid = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  detail::fill_uniform(e.w1.data(), b_in, rng);
  detail::fill_uniform(e.b1, b_in, rng);
  detail::fill_uniform(e.w2.data(), b_hid, rng);
  detail::fill_uniform(e.b2, b_hid, rng);
  return e;
}

/// Class weight rows w_j plus the trainable scalars of the disentangled head.
/// alpha = 1, beta = 0 reproduces the vanilla head exactly.
struct GeometricHead {
  Matrix weights;  // num_classes x feature_dim
  double alpha = 1.0;
  double beta = 0.0;

  std::size_t num_classes() const noexcept { return weights.rows(); }
  std::size_t feature_dim() const noexcept { return weights.cols(); }

  void validate() const {
    if (weights.rows() == 0 || weights.cols() == 0) throw InvalidParameterError("head: empty weight matrix");
    for (std::size_t j = 0; j < weights.rows(); ++j)
      if (!(norm(weights.row(j)) > 0.0)) throw InvalidParameterError("head: weight row " + std::to_string(j) + " has zero norm");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidParameterError("head: alpha must be positive");
    if (!std::isfinite(beta)) throw InvalidParameterError("head: beta must be finite");
  }

  friend bool operator==(const GeometricHead&, const GeometricHead&) = default;
};

inline GeometricHead make_head(std::size_t num_classes, std::size_t feature_dim, Rng& rng) {
  GeometricHead h{Matrix(num_classes, feature_dim), 1.0, 0.0};
  const double sd = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  for (double& w : h.weights.data()) w = rng.normal(0.0, sd);
  return h;
}

struct Model {
  Encoder encoder;
  GeometricHead head;
  HeadKind head_kind = HeadKind::vanilla;

  friend bool operator==(const Model&, const Model&) = default;

  /// Visits every trainable tensor in checkpoint order: encoder tensors, then
  /// the head weights. alpha and beta are handled separately.
  template <class F>
  void for_each_tensor(F&& f) {
    switch (encoder.kind) {
      case EncoderKind::identity: break;
      case EncoderKind::linear:
        f(encoder.w1.data());
        f(encoder.b1);
        break;
      case EncoderKind::mlp1:
        f(encoder.w1.data());
        f(encoder.b1);
        f(encoder.w2.data());
        f(encoder.b2);
        break;
    }
    f(head.weights.data());
  }
};

struct ModelShape {
  EncoderKind encoder = EncoderKind::linear;
  HeadKind head = HeadKind::gsd;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 32;
  std::size_t feature_dim = 16;  // ignored for identity (equals input_dim)
  std::size_t num_classes = 0;
};

/// Deterministic initialisation from a seed. Two models built from the same
/// shape (up to head kind) and seed share every initial weight.
inline Model init_model(const ModelShape& s, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x1417));
  Model m;
  m.head_kind = s.head;
  switch (s.encoder) {
    case EncoderKind::identity: m.encoder = make_identity_encoder(s.input_dim); break;
    case EncoderKind::linear: m.encoder = make_linear_encoder(s.input_dim, s.feature_dim, rng); break;
    case EncoderKind::mlp1: m.encoder = make_mlp1_encoder(s.input_dim, s.hidden_dim, s.feature_dim, rng); break;
  }
  m.head = make_head(s.num_classes, m.encoder.output_dim(), rng);
  return m;
}

/// logits_j = <w_j, x> = |w_j| |x| cos(phi_j). Throws DomainError for |x| = 0.
inline Vector forward_vanilla(const Matrix& weights, std::span<const double> x) {
  if (weights.cols() != x.size()) throw DomainError("forward_vanilla: dimension mismatch");
  if (!(norm(x) > 0.0)) throw DomainError("forward_vanilla: zero-norm feature vector");
  return matvec(weights, x);
}

/// How the disentangled head maps |dx| to the effective norm at inference.
struct NormMode {
  enum class Kind { affine_trained, affine, nonlinear };
  Kind kind = Kind::affine_trained;
  double beta_prime = 0.0;  // used by affine and nonlinear
  double c = 0.0;           // used by nonlinear

  static NormMode trained() { return {}; }
  static NormMode affine(double beta_prime) { return {Kind::affine, beta_prime, 0.0}; }
  static NormMode nonlinear(double beta_prime, double c) { return {Kind::nonlinear, beta_prime, c}; }
};

inline double effective_norm(const GeometricHead& head, double delta_norm, const NormMode& mode) {
  switch (mode.kind) {
    case NormMode::Kind::affine_trained: return effective_norm_affine(delta_norm, {head.alpha, head.beta});
    case NormMode::Kind::affine: return effective_norm_affine(delta_norm, {head.alpha, mode.beta_prime});
    case NormMode::Kind::nonlinear: return effective_norm_nonlinear(delta_norm, {head.alpha, mode.beta_prime, mode.c});
  }
  return 0.0;
}

struct GsdOutput {
  Vector logits;
  double delta_norm = 0.0;
  double effective_norm = 0.0;
  /// Set when the effective norm is not strictly positive; the argmax is then
  /// no longer guaranteed to match the cosine ranking.
  bool nonpositive_norm = false;
};

/// logits_j = |w_j| N(|dx|) cos(dphi_j) with N selected by `mode`.
inline GsdOutput forward_gsd(const GeometricHead& head, std::span<const double> delta_x, const NormMode& mode = {}) {
  if (head.feature_dim() != delta_x.size()) throw DomainError("forward_gsd: dimension mismatch");
  if (!(head.alpha > 0.0)) throw InvalidParameterError("forward_gsd: alpha must be positive");
  GsdOutput out;
  out.delta_norm = norm(delta_x);
  if (!(out.delta_norm > 0.0)) throw DomainError("forward_gsd: zero-norm feature vector");
  out.effective_norm = effective_norm(head, out.delta_norm, mode);
  out.nonpositive_norm = !(out.effective_norm > 0.0);
  out.logits.resize(head.num_classes());
  for (std::size_t j = 0; j < head.num_classes(); ++j) {
    const auto w = head.weights.row(j);
    const double wn = norm(w);
    if (!(wn > 0.0)) throw InvalidParameterError("forward_gsd: zero-norm weight row");
    const double cos_phi = std::clamp(dot(w, delta_x) / (wn * out.delta_norm), -1.0, 1.0);
    out.logits[j] = wn * out.effective_norm * cos_phi;
  }
  return out;
}

enum class AblationVariant { vanilla, no_weight_norm, no_x_norm, only_cosine };

inline std::string to_string(AblationVariant v) {
  switch (v) {
    case AblationVariant::vanilla: return "vanilla";
    case AblationVariant::no_weight_norm: return "no_weight_norm";
    case AblationVariant::no_x_norm: return "no_x_norm";
    case AblationVariant::only_cosine: return "only_cosine";
  }
  return "?";
}

/// Logits with |w_j| and/or |x| divided out of |w_j| |x| cos(phi_j).
inline Vector forward_ablation(const Matrix& weights, std::span<const double> x, AblationVariant variant) {
  if (weights.cols() != x.size()) throw DomainError("forward_ablation: dimension mismatch");
  const double xn = norm(x);
  if (!(xn > 0.0)) throw DomainError("forward_ablation: zero-norm feature vector");
  Vector out(weights.rows());
  for (std::size_t j = 0; j < weights.rows(); ++j) {
    const auto g = geometric_logit(weights.row(j), x);
    switch (variant) {
      case AblationVariant::vanilla: out[j] = g.w_norm * g.x_norm * g.cos_phi; break;
      case AblationVariant::no_weight_norm: out[j] = g.x_norm * g.cos_phi; break;
      case AblationVariant::no_x_norm: out[j] = g.w_norm * g.cos_phi; break;
      case AblationVariant::only_cosine: out[j] = g.cos_phi; break;
    }
  }
  return out;
}

/// Inference-time logits of a model on one encoded feature vector.
inline Vector model_logits(const Model& m, std::span<const double> delta_x, const NormMode& mode = {}) {
  if (m.head_kind == HeadKind::vanilla) return forward_vanilla(m.head.weights, delta_x);
  return forward_gsd(m.head, delta_x, mode).logits;
}

/// Encodes every row of a batch.
inline Matrix encode_batch(const Model& m, const EmbeddingBatch& batch) {
  if (batch.dim != m.encoder.input_dim) throw DomainError("encode_batch: batch dimension does not match the encoder");
  Matrix out(batch.size(), m.encoder.output_dim());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto y = m.encoder.forward(batch.row_as_double(i));
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

/// Logit matrix for a whole batch of encoded features.
inline Matrix logits_matrix(const Model& m, const Matrix& encoded, const NormMode& mode = {}) {
  Matrix out(encoded.rows(), m.head.num_classes());
  for (std::size_t i = 0; i < encoded.rows(); ++i) {
    const auto l = model_logits(m, encoded.row(i), mode);
    std::copy(l.begin(), l.end(), out.row(i).begin());
  }
  return out;
}

inline Vector row_norms(const Matrix& m) {
  Vector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = norm(m.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Training objective and its gradient.

enum class Schedule { cosine, step, constant };

inline std::string to_string(Schedule s) {
  switch (s) {
    case Schedule::cosine: return "cosine";
    case Schedule::step: return "step";
    case Schedule::constant: return "constant";
  }
  return "?";
}

inline Schedule parse_schedule(std::string_view s) {
  if (s == "cosine") return Schedule::cosine;
  if (s == "step") return Schedule::step;
  if (s == "constant") return Schedule::constant;
  throw InvalidParameterError("unknown schedule: " + std::string(s));
}

struct TrainConfig {
  double learning_rate = 0.1;
  double weight_decay = 5.0e-4;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double lambda_alpha = 1.0;
  Schedule schedule = Schedule::cosine;
  std::uint64_t seed = 0;
  bool train_alpha = true;  // false holds alpha at its initial value
  bool train_beta = true;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidParameterError("train config: learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw InvalidParameterError("train config: weight_decay must be nonnegative");
    if (batch_size == 0) throw InvalidParameterError("train config: batch_size must be positive");
    if (!(lambda_alpha >= 0.0)) throw InvalidParameterError("train config: lambda_alpha must be nonnegative");
  }
};

/// Norm guard inside gradients: |dx| is evaluated as sqrt(sum dx^2 + eps).
inline constexpr double kNormEpsilon = 1e-12;

struct LossAndGrads {
  double loss = 0.0;
  double cross_entropy = 0.0;  // mean over the batch
  Model grads;                 // same shapes as the model; head.alpha/beta hold d/dalpha, d/dbeta
};

inline Model zeros_like(const Model& m) {
  Model z = m;
  z.for_each_tensor([](auto& t) { std::fill(t.begin(), t.end(), 0.0); });
  z.head.alpha = 0.0;
  z.head.beta = 0.0;
  return z;
}

namespace detail {

struct SampleTrace {
  Vector x;
  Vector hidden_pre;  // mlp1 only
  Vector hidden;      // mlp1 only
  Vector delta_x;
};

inline SampleTrace encoder_forward_traced(const Encoder& e, std::span<const float> row) {
  SampleTrace t;
  t.x.assign(row.begin(), row.end());
  switch (e.kind) {
    case EncoderKind::identity: t.delta_x = t.x; break;
    case EncoderKind::linear:
      t.delta_x = matvec(e.w1, t.x);
      for (std::size_t i = 0; i < t.delta_x.size(); ++i) t.delta_x[i] += e.b1[i];
      break;
    case EncoderKind::mlp1:
      t.hidden_pre = matvec(e.w1, t.x);
      t.hidden.resize(t.hidden_pre.size());
      for (std::size_t i = 0; i < t.hidden_pre.size(); ++i) {
        t.hidden_pre[i] += e.b1[i];
        t.hidden[i] = std::max(0.0, t.hidden_pre[i]);
      }
      t.delta_x = matvec(e.w2, t.hidden);
      for (std::size_t i = 0; i < t.delta_x.size(); ++i) t.delta_x[i] += e.b2[i];
      break;
  }
  return t;
}

inline void encoder_backward(const Encoder& e, const SampleTrace& t, std::span<const double> g_dx, Encoder& g) {
  switch (e.kind) {
    case EncoderKind::identity: break;
    case EncoderKind::linear:
      add_outer(g.w1, 1.0, g_dx, t.x);
      axpy(1.0, g_dx, g.b1);
      break;
    case EncoderKind::mlp1: {
      add_outer(g.w2, 1.0, g_dx, t.hidden);
      axpy(1.0, g_dx, g.b2);
      Vector g_h = matvec_transposed(e.w2, g_dx);
      for (std::size_t i = 0; i < g_h.size(); ++i)
        if (!(t.hidden_pre[i] > 0.0)) g_h[i] = 0.0;
      add_outer(g.w1, 1.0, g_h, t.x);
      axpy(1.0, g_h, g.b1);
      break;
    }
  }
}

}  // namespace detail

/// Per-sample statistics gathered during a forward pass.
struct ForwardStats {
  std::size_t correct = 0;
  double norm_sum = 0.0;
  double cos_sum = 0.0;  // cosine to the ground-truth class weight
};

/// Mean cross-entropy on the model's training logits, plus
/// lambda_alpha (alpha - 1)^2 for the disentangled head, plus
/// (weight_decay / 2) * sum of squared encoder and head-weight entries,
/// together with the exact gradient of that loss.
///
/// For the disentangled head, with n = |dx|, u = dx / n and N = (n + beta) / alpha:
///   logits_j  = N <w_j, u>
///   dL/dw_j   = N g_j u
///   dL/dN     = sum_j g_j <w_j, u>
///   dL/dalpha = -dL/dN (n + beta) / alpha^2,   dL/dbeta = dL/dN / alpha
///   dL/ddx    = (dL/dN / alpha) u + (I - u u^T) (N W^T g) / n
/// where g = softmax - onehot, averaged over the batch.
inline LossAndGrads loss_and_grads(const Model& m, const EmbeddingBatch& data, std::span<const std::size_t> indices,
                                   const TrainConfig& cfg, ForwardStats* stats = nullptr) {
  if (indices.empty()) throw DomainError("loss_and_grads: empty batch");
  if (data.dim != m.encoder.input_dim) throw DomainError("loss_and_grads: data dimension does not match the encoder");
  const bool gsd_head = m.head_kind == HeadKind::gsd;
  const auto& head = m.head;
  const std::size_t k = head.num_classes();
  const double inv_b = 1.0 / static_cast<double>(indices.size());

  LossAndGrads out;
  out.grads = zeros_like(m);
  auto& g = out.grads;
  double ce_sum = 0.0;

  for (std::size_t idx : indices) {
    if (idx >= data.size()) throw DomainError("loss_and_grads: sample index out of range");
    const Label y = data.labels[idx];
    if (y >= k) throw DomainError("loss_and_grads: label out of range");
    const auto trace = detail::encoder_forward_traced(m.encoder, data.row(idx));
    const auto& dx = trace.delta_x;

    Vector logits(k);
    Vector proj;  // <w_j, u> for the GSD head
    double n = 0.0, big_n = 0.0;
    Vector u;
    if (gsd_head) {
      n = std::sqrt(squared_norm(dx) + kNormEpsilon);
      u = dx;
      for (double& v : u) v /= n;
      big_n = (n + head.beta) / head.alpha;
      proj = matvec(head.weights, u);
      for (std::size_t j = 0; j < k; ++j) logits[j] = big_n * proj[j];
    } else {
      logits = matvec(head.weights, dx);
    }

    const double lse = logsumexp(logits);
    ce_sum += lse - logits[y];
    Vector gl = softmax(logits);
    if (stats) {
      stats->correct += argmax(logits) == y ? 1 : 0;
      const double true_norm = norm(dx);
      stats->norm_sum += true_norm;
      const double wn = norm(head.weights.row(y));
      if (true_norm > 0.0 && wn > 0.0) stats->cos_sum += dot(head.weights.row(y), dx) / (wn * true_norm);
    }
    gl[y] -= 1.0;
    for (double& v : gl) v *= inv_b;

    Vector g_dx;
    if (gsd_head) {
      add_outer(g.head.weights, big_n, gl, u);
      const double g_big_n = dot(gl, proj);
      g.head.alpha += -g_big_n * (n + head.beta) / (head.alpha * head.alpha);
      g.head.beta += g_big_n / head.alpha;
      Vector g_u = matvec_transposed(head.weights, gl);
      for (double& v : g_u) v *= big_n;
      const double radial = dot(g_u, u);
      const double g_n = g_big_n / head.alpha;
      g_dx.resize(dx.size());
      for (std::size_t i = 0; i < dx.size(); ++i) g_dx[i] = g_n * u[i] + (g_u[i] - radial * u[i]) / n;
    } else {
      add_outer(g.head.weights, 1.0, gl, dx);
      g_dx = matvec_transposed(head.weights, gl);
    }
    detail::encoder_backward(m.encoder, trace, g_dx, g.encoder);
  }

  out.cross_entropy = ce_sum * inv_b;
  out.loss = out.cross_entropy;
  if (gsd_head) {
    const double d = head.alpha - 1.0;
    out.loss += cfg.lambda_alpha * d * d;
    g.head.alpha += 2.0 * cfg.lambda_alpha * d;
  }
  if (cfg.weight_decay > 0.0) {
    double sq = 0.0;
    Model& mm = const_cast<Model&>(m);  // read-only traversal
    std::vector<std::vector<double>*> params, grads;
    mm.for_each_tensor([&](auto& t) { params.push_back(&t); });
    g.for_each_tensor([&](auto& t) { grads.push_back(&t); });
    for (std::size_t t = 0; t < params.size(); ++t) {
      const auto& p = *params[t];
      auto& gt = *grads[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        sq += p[i] * p[i];
        gt[i] += cfg.weight_decay * p[i];
      }
    }
    out.loss += 0.5 * cfg.weight_decay * sq;
  }
  return out;
}

/// Flattened view of all parameters (tensors in checkpoint order, then alpha,
/// beta for the disentangled head). Used by gradient checks.
inline std::vector<double*> parameter_pointers(Model& m) {
  std::vector<double*> out;
  m.for_each_tensor([&](auto& t) {
    for (double& v : t) out.push_back(&v);
  });
  if (m.head_kind == HeadKind::gsd) {
    out.push_back(&m.head.alpha);
    out.push_back(&m.head.beta);
  }
  return out;
}

}  // namespace gsd
