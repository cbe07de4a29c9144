#pragma once

// Closed-form norm/angle decomposition of a softmax-linear output layer.
//
// A logit <w, x> factors as |w| |x| cos(phi). Splitting the feature norm into
// an instance-dependent part and a constant offset, |x| = |dx| + C_x, and the
// angle into phi = dphi - C_phi, gives an exact expansion whose small-angle
// approximation is the affine effective norm (|dx| + beta) / alpha with
// alpha = cos(C_phi) and beta = C_x.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "gsd/error.hpp"
#include "gsd/linalg.hpp"

namespace gsd {

struct GeometricLogit {
  double w_norm;
  double x_norm;
  double cos_phi;
  double logit;
};

/// Factor <w, x> into norms and cosine. Throws DomainError for zero-norm or
/// mismatched inputs.
inline GeometricLogit geometric_logit(std::span<const double> w, std::span<const double> x) {
  if (w.size() != x.size() || w.empty()) throw DomainError("geometric_logit: dimensions must agree and be >= 1");
  const double wn = norm(w);
  const double xn = norm(x);
  if (!(wn > 0.0) || !(xn > 0.0)) throw DomainError("geometric_logit: cosine undefined for a zero-norm vector");
  const double scale = wn * xn;
  const double cos_phi = std::clamp(dot(w, x) / scale, -1.0, 1.0);
  return {wn, xn, cos_phi, scale * cos_phi};
}

/// Inputs of the decomposition. Angles are magnitudes in radians; use
/// `from_signed` to fold signed angles (cosine is even).
struct DecompositionInputs {
  double delta_norm = 0.0;  // |dx|
  double c_x = 0.0;         // instance-independent norm offset
  double delta_phi = 0.0;   // |dphi|, in [0, pi]
  double c_phi = 0.0;       // |C_phi|, in [0, pi/2)

  static DecompositionInputs from_signed(double delta_norm, double c_x, double delta_phi, double c_phi) {
    return {delta_norm, c_x, std::abs(delta_phi), std::abs(c_phi)};
  }

  void validate() const {
    if (!(delta_norm >= 0.0) || !(c_x >= 0.0)) throw DomainError("decomposition: norms must be nonnegative");
    if (!(delta_phi >= 0.0) || !(delta_phi <= std::numbers::pi))
      throw DomainError("decomposition: delta_phi must lie in [0, pi]");
    if (!(c_phi >= 0.0) || !(c_phi < std::numbers::pi / 2))
      throw DomainError("decomposition: c_phi must lie in [0, pi/2)");
  }
};

struct AffineNormParams {
  double alpha = 1.0;
  double beta = 0.0;
};

struct NonlinearMapParams {
  double alpha = 1.0;
  double beta_prime = 0.0;
  double c = 1.0;
};

enum class ExpansionForm {
  automatic,  // ratio form when c_phi > 0, pre-ratio form otherwise
  ratio,      // the rearrangement containing cos(C) sin(dphi) / (sin(C) cos(dphi))
  pre_ratio,  // cos(dphi) cos(C) + sin(dphi) sin(C)
};

struct Expansion {
  double lhs;
  double rhs;
};

/// Evaluates (|dx| + C_x) cos(dphi - C_phi) directly (lhs) and through the
/// expanded product (rhs). The two agree to rounding; the expansion is exact.
inline Expansion exact_expansion(const DecompositionInputs& d, ExpansionForm form = ExpansionForm::automatic) {
  d.validate();
  const double n = d.delta_norm + d.c_x;
  const double lhs = n * std::cos(d.delta_phi - d.c_phi);

  if (form == ExpansionForm::automatic) form = d.c_phi > 0.0 ? ExpansionForm::ratio : ExpansionForm::pre_ratio;

  const double cd = std::cos(d.delta_phi), sd = std::sin(d.delta_phi);
  const double cc = std::cos(d.c_phi), sc = std::sin(d.c_phi);
  if (form == ExpansionForm::pre_ratio) return {lhs, n * (cd * cc + sd * sc)};

  if (d.c_phi == 0.0) throw DegenerateAngleError("exact_expansion: ratio form divides by sin(c_phi) = 0");
  const double ratio = (cc * sd) / (sc * cd);
  // 1 - sin^2 C (1 - ratio), with 1 - sin^2 C taken as cos^2 C: the literal
  // form cancels badly as C -> pi/2
  const double rhs = n / cc * cd * (cc * cc + sc * sc * ratio);
  return {lhs, rhs};
}

/// cos(C) sin(dphi) / (sin(C) cos(dphi)); requires 0 < c_phi < delta_phi < pi/2.
inline double small_angle_ratio(double delta_phi, double c_phi) {
  if (c_phi == 0.0) throw DegenerateAngleError("small_angle_ratio: c_phi = 0");
  if (!(c_phi > 0.0) || !(c_phi < delta_phi) || !(delta_phi < std::numbers::pi / 2))
    throw DomainError("small_angle_ratio: requires 0 < c_phi < delta_phi < pi/2");
  return (std::cos(c_phi) * std::sin(delta_phi)) / (std::sin(c_phi) * std::cos(delta_phi));
}

/// The same ratio written with sums of sines of (dphi + C) and phi = dphi - C.
inline double small_angle_ratio_sum_form(double delta_phi, double c_phi) {
  if (c_phi == 0.0) throw DegenerateAngleError("small_angle_ratio: c_phi = 0");
  if (!(c_phi > 0.0) || !(c_phi < delta_phi) || !(delta_phi < std::numbers::pi / 2))
    throw DomainError("small_angle_ratio: requires 0 < c_phi < delta_phi < pi/2");
  const double s = std::sin(delta_phi + c_phi);
  const double sp = std::sin(delta_phi - c_phi);
  return (s + sp) / (s - sp);
}

/// Small-angle approximation (|dx| + C_x) cos(dphi) / cos(C_phi). Relative
/// error against the exact value is tan(C_phi) tan(phi).
inline double approx_logit(const DecompositionInputs& d) {
  d.validate();
  return (d.delta_norm + d.c_x) * std::cos(d.delta_phi) / std::cos(d.c_phi);
}

inline void validate(const AffineNormParams& p) {
  if (!(p.alpha > 0.0) || !std::isfinite(p.alpha)) throw InvalidParameterError("alpha must be positive");
  if (!std::isfinite(p.beta)) throw InvalidParameterError("beta must be finite");
}

inline void validate(const NonlinearMapParams& p) {
  if (!(p.alpha > 0.0) || !std::isfinite(p.alpha)) throw InvalidParameterError("alpha must be positive");
  if (!(p.c > 0.0) || !std::isfinite(p.c)) throw InvalidParameterError("c must be positive");
  if (!std::isfinite(p.beta_prime)) throw InvalidParameterError("beta' must be finite");
}

/// |dx| / alpha + beta / alpha
inline double effective_norm_affine(double delta_norm, const AffineNormParams& p) {
  validate(p);
  if (!(delta_norm >= 0.0)) throw DomainError("effective norm: delta_norm must be nonnegative");
  return delta_norm / p.alpha + p.beta / p.alpha;
}

/// |dx| / alpha + (beta' / alpha) (1 - exp(-c |dx|))
inline double effective_norm_nonlinear(double delta_norm, const NonlinearMapParams& p) {
  validate(p);
  if (!(delta_norm >= 0.0)) throw DomainError("effective norm: delta_norm must be nonnegative");
  return delta_norm / p.alpha + (p.beta_prime / p.alpha) * -std::expm1(-p.c * delta_norm);
}

/// Decay constant such that exp(-c (mu - sigma)) = 1 - error.
inline double compute_c(double mu, double sigma, double error) {
  if (!(error > 0.0) || !(error < 1.0)) throw InvalidParameterError("compute_c: error must lie in (0, 1)");
  const double spread = mu - sigma;
  if (!(spread > 0.0) || !std::isfinite(spread))
    throw DegenerateStatisticsError("compute_c: mu - sigma must be positive (norm distribution too wide or empty)");
  return -std::log1p(-error) / spread;
}

}  // namespace gsd
