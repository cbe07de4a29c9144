#pragma once

// Synthetic Gaussian-cluster data, feature-space distribution shifts, and the
// GSDE embedding file format.
//
// GSDE layout (all little-endian):
//   "GSDE" | u32 version = 1 | u32 n | u32 d | u32 num_classes
//   | n*d f32 features, row-major | n u32 labels

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gsd/error.hpp"
#include "gsd/io.hpp"
#include "gsd/linalg.hpp"
#include "gsd/metrics.hpp"
#include "gsd/rng.hpp"

namespace gsd {

/// n feature vectors (stored as f32, the on-disk precision) with class labels.
struct EmbeddingBatch {
  std::size_t dim = 0;
  std::size_t num_classes = 0;
  std::vector<float> features;  // size() * dim, row-major
  std::vector<Label> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const float> row(std::size_t i) const noexcept { return {features.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) noexcept { return {features.data() + i * dim, dim}; }

  Vector row_as_double(std::size_t i) const {
    const auto r = row(i);
    return Vector(r.begin(), r.end());
  }

  void validate() const {
    if (features.size() != labels.size() * dim) throw DomainError("embedding batch: feature count does not match n * d");
    for (float f : features)
      if (!std::isfinite(f)) throw DomainError("embedding batch: non-finite feature value");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= num_classes) throw DomainError("embedding batch: label out of range at row " + std::to_string(i));
  }

  /// Rows selected by index, in the given order.
  EmbeddingBatch subset(std::span<const std::size_t> idx) const {
    EmbeddingBatch out{dim, num_classes, {}, {}};
    out.features.reserve(idx.size() * dim);
    out.labels.reserve(idx.size());
    for (std::size_t i : idx) {
      const auto r = row(i);
      out.features.insert(out.features.end(), r.begin(), r.end());
      out.labels.push_back(labels[i]);
    }
    return out;
  }

  friend bool operator==(const EmbeddingBatch&, const EmbeddingBatch&) = default;
};

/// Bitwise equality, distinguishing -0.0f from 0.0f and comparing NaN payloads.
inline bool bitwise_equal(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  if (a.dim != b.dim || a.num_classes != b.num_classes || a.labels != b.labels) return false;
  if (a.features.size() != b.features.size()) return false;
  return std::memcmp(a.features.data(), b.features.data(), a.features.size() * sizeof(float)) == 0;
}

struct ClusterSpec {
  std::size_t num_classes = 4;
  std::size_t dim = 16;
  Matrix class_means;  // num_classes x dim
  double within_class_sigma = 1.0;
  std::size_t samples_per_class = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_classes == 0 || dim == 0 || samples_per_class == 0) throw InvalidParameterError("cluster spec: sizes must be positive");
    if (class_means.rows() != num_classes || class_means.cols() != dim)
      throw InvalidParameterError("cluster spec: class_means must be num_classes x dim");
    if (!(within_class_sigma >= 0.0)) throw InvalidParameterError("cluster spec: sigma must be nonnegative");
    for (std::size_t a = 0; a < num_classes; ++a)
      for (std::size_t b = a + 1; b < num_classes; ++b)
        if (std::equal(class_means.row(a).begin(), class_means.row(a).end(), class_means.row(b).begin()))
          throw InvalidParameterError("cluster spec: class means must be distinct");
  }
};

/// Class k centred at separation * e_k (requires dim >= num_classes).
inline Matrix axis_means(std::size_t num_classes, std::size_t dim, double separation) {
  if (dim < num_classes) throw InvalidParameterError("axis_means: dim must be >= num_classes");
  Matrix m(num_classes, dim, 0.0);
  for (std::size_t k = 0; k < num_classes; ++k) m(k, k) = separation;
  return m;
}

/// Draws samples_per_class isotropic Gaussian samples around each class mean,
/// class by class, coordinate by coordinate, from one Rng(seed) stream.
inline EmbeddingBatch gen_clusters(const ClusterSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  EmbeddingBatch b{spec.dim, spec.num_classes, {}, {}};
  b.features.reserve(spec.num_classes * spec.samples_per_class * spec.dim);
  b.labels.reserve(spec.num_classes * spec.samples_per_class);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const auto mean = spec.class_means.row(k);
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      for (std::size_t j = 0; j < spec.dim; ++j)
        b.features.push_back(static_cast<float>(mean[j] + spec.within_class_sigma * rng.normal()));
      b.labels.push_back(static_cast<Label>(k));
    }
  }
  return b;
}

enum class ShiftFamily { gaussian_noise, feature_scale, rotation_2d };

inline std::string to_string(ShiftFamily f) {
  switch (f) {
    case ShiftFamily::gaussian_noise: return "gaussian_noise";
    case ShiftFamily::feature_scale: return "feature_scale";
    case ShiftFamily::rotation_2d: return "rotation_2d";
  }
  return "?";
}

inline ShiftFamily parse_shift_family(std::string_view s) {
  if (s == "gaussian_noise") return ShiftFamily::gaussian_noise;
  if (s == "feature_scale") return ShiftFamily::feature_scale;
  if (s == "rotation_2d") return ShiftFamily::rotation_2d;
  throw InvalidParameterError("unknown shift family: " + std::string(s));
}

struct ShiftSpec {
  ShiftFamily family = ShiftFamily::gaussian_noise;
  std::vector<double> severity_levels;
  std::uint64_t seed = 0;

  void validate() const {
    for (std::size_t i = 0; i < severity_levels.size(); ++i) {
      if (!(severity_levels[i] >= 0.0) || !std::isfinite(severity_levels[i]))
        throw InvalidParameterError("shift spec: severities must be finite and nonnegative");
      if (i > 0 && !(severity_levels[i] > severity_levels[i - 1]))
        throw InvalidParameterError("shift spec: severities must be strictly increasing");
    }
  }
};

/// Gaussian noise at (0.5, 1, 1.5, 2, 2.5) times the within-class sigma.
inline ShiftSpec default_noise_shift(double within_class_sigma, std::uint64_t seed) {
  ShiftSpec s;
  s.family = ShiftFamily::gaussian_noise;
  for (double f : {0.5, 1.0, 1.5, 2.0, 2.5}) s.severity_levels.push_back(f * within_class_sigma);
  s.seed = seed;
  return s;
}

/// Applies severity level `level_index` of the shift. Noise for each level is
/// drawn from its own stream derive_seed(spec.seed, level_index).
inline EmbeddingBatch apply_shift(const EmbeddingBatch& batch, const ShiftSpec& spec, std::size_t level_index) {
  spec.validate();
  if (level_index >= spec.severity_levels.size()) throw DomainError("apply_shift: level index out of range");
  const double sev = spec.severity_levels[level_index];
  EmbeddingBatch out = batch;
  switch (spec.family) {
    case ShiftFamily::gaussian_noise: {
      if (sev == 0.0) break;
      Rng rng(derive_seed(spec.seed, level_index));
      for (float& f : out.features) f = static_cast<float>(static_cast<double>(f) + sev * rng.normal());
      break;
    }
    case ShiftFamily::feature_scale:
      for (float& f : out.features) f = static_cast<float>(static_cast<double>(f) * sev);
      break;
    case ShiftFamily::rotation_2d: {
      if (batch.dim < 2) throw DomainError("apply_shift: rotation_2d needs dim >= 2");
      const double c = std::cos(sev), s = std::sin(sev);
      for (std::size_t i = 0; i < out.size(); ++i) {
        auto r = out.row(i);
        const double x = r[0], y = r[1];
        r[0] = static_cast<float>(c * x - s * y);
        r[1] = static_cast<float>(s * x + c * y);
      }
      break;
    }
  }
  return out;
}

inline constexpr std::uint32_t kGsdeVersion = 1;

inline std::vector<char> encode_embeddings(const EmbeddingBatch& b) {
  b.validate();
  io::ByteWriter w;
  w.raw("GSDE");
  w.u32(kGsdeVersion);
  w.u32(static_cast<std::uint32_t>(b.size()));
  w.u32(static_cast<std::uint32_t>(b.dim));
  w.u32(static_cast<std::uint32_t>(b.num_classes));
  for (float f : b.features) w.f32(f);
  for (Label l : b.labels) w.u32(l);
  return w.bytes();
}

inline EmbeddingBatch decode_embeddings(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("GSDE");
  const auto version_at = r.offset();
  const auto version = r.u32("version");
  if (version != kGsdeVersion) throw ParseError("unsupported GSDE version " + std::to_string(version), version_at);
  EmbeddingBatch b;
  const std::size_t n = r.u32("n");
  b.dim = r.u32("d");
  const auto classes_at = r.offset();
  b.num_classes = r.u32("num_classes");
  if (b.num_classes == 0 && n > 0) throw ParseError("num_classes must be positive", classes_at);
  if (r.remaining() < n * b.dim * 4 + n * 4) throw ParseError("truncated payload: file shorter than header declares", r.offset());
  b.features.resize(n * b.dim);
  for (auto& f : b.features) {
    const auto at = r.offset();
    f = r.f32("feature");
    if (!std::isfinite(f)) throw ParseError("non-finite feature value", at);
  }
  b.labels.resize(n);
  for (auto& l : b.labels) {
    const auto at = r.offset();
    l = r.u32("label");
    if (l >= b.num_classes) throw ParseError("label " + std::to_string(l) + " out of range", at);
  }
  r.expect_end();
  return b;
}

inline void write_embeddings(const EmbeddingBatch& b, const std::string& path) { io::write_file(path, encode_embeddings(b)); }

inline EmbeddingBatch read_embeddings(const std::string& path) { return decode_embeddings(io::read_file(path)); }

/// CSV with header f0,...,f{d-1},label. num_classes = 0 infers max label + 1.
inline EmbeddingBatch parse_embeddings_csv(const std::string& text, std::size_t num_classes = 0) {
  std::istringstream is(text);
  std::string line;
  auto split = [](std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t b = 0;
    for (;;) {
      const auto e = s.find(',', b);
      out.push_back(io::trim(s.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b)));
      if (e == std::string_view::npos) break;
      b = e + 1;
    }
    return out;
  };
  std::size_t offset = 0;
  if (!std::getline(is, line)) throw ParseError("CSV: missing header", 0);
  const auto header = split(line);
  if (header.empty() || header.back() != "label") throw ParseError("CSV: last header column must be 'label'", 0);
  EmbeddingBatch b;
  b.dim = header.size() - 1;
  for (std::size_t j = 0; j < b.dim; ++j)
    if (header[j] != "f" + std::to_string(j)) throw ParseError("CSV: header column " + std::to_string(j) + " must be f" + std::to_string(j), 0);
  offset += line.size() + 1;
  Label max_label = 0;
  while (std::getline(is, line)) {
    if (io::trim(line).empty()) {
      offset += line.size() + 1;
      continue;
    }
    const auto f = split(line);
    if (f.size() != b.dim + 1) throw ParseError("CSV: wrong field count", offset);
    try {
      for (std::size_t j = 0; j < b.dim; ++j) b.features.push_back(static_cast<float>(io::parse_double(f[j])));
      const auto l = io::parse_integer<Label>(f[b.dim]);
      max_label = std::max(max_label, l);
      b.labels.push_back(l);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(std::string("CSV: ") + e.what(), offset);
    }
    offset += line.size() + 1;
  }
  b.num_classes = num_classes != 0 ? num_classes : (b.labels.empty() ? 0 : max_label + 1);
  for (std::size_t i = 0; i < b.labels.size(); ++i)
    if (b.labels[i] >= b.num_classes) throw ParseError("CSV: label out of range", 0);
  b.validate();
  return b;
}

/// Reads GSDE, or CSV when the path ends in ".csv".
inline EmbeddingBatch load_embeddings(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return parse_embeddings_csv(io::read_text(path));
  return read_embeddings(path);
}

}  // namespace gsd
