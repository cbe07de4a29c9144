#pragma once

// GSDM checkpoint: "GSDM", u32 version, u32 encoder tag, u32 head tag,
// u32 tensor count, then per tensor u32 rows, u32 cols and rows*cols f64,
// then f64 alpha, f64 beta. Little-endian throughout.
//
// Tensor order: W1, b1 (linear, mlp1), W2, b2 (mlp1), head W. Bias vectors
// are stored as rows x 1.

#include <string>
#include <vector>

#include "gsd/error.hpp"
#include "gsd/io.hpp"
#include "gsd/model.hpp"

namespace gsd {

inline constexpr std::uint32_t kGsdmVersion = 1;

namespace detail {

inline void put_tensor(io::ByteWriter& w, std::size_t rows, std::size_t cols, std::span<const double> data) {
  w.u32(static_cast<std::uint32_t>(rows));
  w.u32(static_cast<std::uint32_t>(cols));
  for (double v : data) w.f64(v);
}

inline Matrix get_tensor(io::ByteReader& r, const char* name) {
  const auto off = r.offset();
  const std::size_t rows = r.u32(name);
  const std::size_t cols = r.u32(name);
  if (rows * cols > r.remaining() / 8) throw ParseError(std::string("truncated payload while reading ") + name, off);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = r.f64(name);
  return m;
}

inline Vector as_column(const Matrix& m, const char* name, std::size_t off) {
  if (m.cols() != 1) throw ParseError(std::string(name) + " must have a single column", off);
  return Vector(m.data().begin(), m.data().end());
}

}  // namespace detail

inline std::vector<char> encode_model(const Model& m) {
  io::ByteWriter w;
  w.raw("GSDM");
  w.u32(kGsdmVersion);
  w.u32(static_cast<std::uint32_t>(m.encoder.kind));
  w.u32(static_cast<std::uint32_t>(m.head_kind));
  const auto& e = m.encoder;
  switch (e.kind) {
    case EncoderKind::identity:
      w.u32(1);
      break;
    case EncoderKind::linear:
      w.u32(3);
      detail::put_tensor(w, e.w1.rows(), e.w1.cols(), e.w1.data());
      detail::put_tensor(w, e.b1.size(), 1, e.b1);
      break;
    case EncoderKind::mlp1:
      w.u32(5);
      detail::put_tensor(w, e.w1.rows(), e.w1.cols(), e.w1.data());
      detail::put_tensor(w, e.b1.size(), 1, e.b1);
      detail::put_tensor(w, e.w2.rows(), e.w2.cols(), e.w2.data());
      detail::put_tensor(w, e.b2.size(), 1, e.b2);
      break;
  }
  detail::put_tensor(w, m.head.weights.rows(), m.head.weights.cols(), m.head.weights.data());
  w.f64(m.head.alpha);
  w.f64(m.head.beta);
  return w.bytes();
}

inline Model decode_model(std::vector<char> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("GSDM");
  auto off = r.offset();
  if (r.u32("version") != kGsdmVersion) throw ParseError("unsupported checkpoint version", off);
  off = r.offset();
  const auto enc_tag = r.u32("encoder kind");
  if (enc_tag > 2) throw ParseError("unknown encoder kind tag " + std::to_string(enc_tag), off);
  off = r.offset();
  const auto head_tag = r.u32("head kind");
  if (head_tag > 1) throw ParseError("unknown head kind tag " + std::to_string(head_tag), off);
  Model m;
  m.encoder.kind = static_cast<EncoderKind>(enc_tag);
  m.head_kind = static_cast<HeadKind>(head_tag);
  off = r.offset();
  const auto count = r.u32("tensor count");
  const std::uint32_t expected = m.encoder.kind == EncoderKind::identity ? 1 : m.encoder.kind == EncoderKind::linear ? 3 : 5;
  if (count != expected) throw ParseError("tensor count does not match the encoder kind", off);

  auto& e = m.encoder;
  if (e.kind != EncoderKind::identity) {
    e.w1 = detail::get_tensor(r, "encoder W1");
    off = r.offset();
    e.b1 = detail::as_column(detail::get_tensor(r, "encoder b1"), "encoder b1", off);
    if (e.b1.size() != e.w1.rows()) throw ParseError("encoder b1 does not match W1", off);
    e.input_dim = e.w1.cols();
  }
  if (e.kind == EncoderKind::mlp1) {
    off = r.offset();
    e.w2 = detail::get_tensor(r, "encoder W2");
    if (e.w2.cols() != e.w1.rows()) throw ParseError("encoder W2 does not match the hidden width", off);
    off = r.offset();
    e.b2 = detail::as_column(detail::get_tensor(r, "encoder b2"), "encoder b2", off);
    if (e.b2.size() != e.w2.rows()) throw ParseError("encoder b2 does not match W2", off);
  }
  off = r.offset();
  m.head.weights = detail::get_tensor(r, "head weights");
  if (e.kind == EncoderKind::identity) e.input_dim = m.head.weights.cols();
  if (m.head.weights.cols() != e.output_dim()) throw ParseError("head weights do not match the encoder output", off);
  m.head.alpha = r.f64("alpha");
  m.head.beta = r.f64("beta");
  r.expect_end();
  return m;
}

inline void write_model(const Model& m, const std::string& path) { io::write_file(path, encode_model(m)); }
inline Model read_model(const std::string& path) { return decode_model(io::read_file(path)); }

}  // namespace gsd
