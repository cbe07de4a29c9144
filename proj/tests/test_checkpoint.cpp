#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <vector>

#include "gsd/checkpoint.hpp"

using namespace gsd;

namespace {

std::size_t parse_error_offset(const std::vector<char>& bytes) {
  try {
    decode_model(bytes);
  } catch (const ParseError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "no ParseError";
  return 0;
}

void put_u32(std::vector<char>& b, std::size_t at, std::uint32_t v) { std::memcpy(b.data() + at, &v, 4); }

}  // namespace

TEST(Checkpoint, RoundTripEveryKind) {
  for (auto enc : {EncoderKind::identity, EncoderKind::linear, EncoderKind::mlp1})
    for (auto head : {HeadKind::vanilla, HeadKind::gsd}) {
      Model m = init_model({enc, head, 5, 7, 3, 4}, 11);
      m.head.alpha = 1.2345678901234567;
      m.head.beta = -0.1;
      const auto bytes = encode_model(m);
      EXPECT_EQ(decode_model(bytes), m) << to_string(enc) << ' ' << to_string(head);
      EXPECT_EQ(encode_model(decode_model(bytes)), bytes);
    }
}

TEST(Checkpoint, LayoutOfIdentityModel) {
  Model m = init_model({EncoderKind::identity, HeadKind::gsd, 2, 0, 0, 3}, 1);
  const auto b = encode_model(m);
  // magic, version, encoder, head, count, rows, cols, 6 weights, alpha, beta
  EXPECT_EQ(b.size(), 4u + 4 * 6 + 8 * 6 + 16);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "GSDM");
  std::uint32_t v = 0;
  std::memcpy(&v, b.data() + 12, 4);
  EXPECT_EQ(v, 1u);  // head tag
  std::memcpy(&v, b.data() + 16, 4);
  EXPECT_EQ(v, 1u);  // tensor count
}

TEST(Checkpoint, MalformedInputs) {
  const Model m = init_model({EncoderKind::linear, HeadKind::gsd, 3, 0, 2, 2}, 1);
  const auto good = encode_model(m);

  auto bad = good;
  bad[1] = 'X';
  EXPECT_EQ(parse_error_offset(bad), 0u);

  bad = good;
  put_u32(bad, 4, 2);
  EXPECT_EQ(parse_error_offset(bad), 4u);

  bad = good;
  put_u32(bad, 8, 7);
  EXPECT_EQ(parse_error_offset(bad), 8u);

  bad = good;
  put_u32(bad, 12, 3);
  EXPECT_EQ(parse_error_offset(bad), 12u);

  bad = good;
  put_u32(bad, 16, 5);
  EXPECT_EQ(parse_error_offset(bad), 16u);

  bad = good;
  put_u32(bad, 20, 1000);  // W1 rows far beyond the payload
  EXPECT_EQ(parse_error_offset(bad), 20u);

  bad = good;
  bad.resize(good.size() - 1);
  EXPECT_EQ(parse_error_offset(bad), good.size() - 8);

  bad = good;
  bad.push_back(1);
  EXPECT_EQ(parse_error_offset(bad), good.size());

  // b1 with two columns
  bad = good;
  const std::size_t b1_at = 20 + 8 + 2 * 3 * 8;
  put_u32(bad, b1_at, 1);
  put_u32(bad, b1_at + 4, 2);
  EXPECT_THROW(decode_model(bad), ParseError);
}

TEST(Checkpoint, Files) {
  const Model m = init_model({EncoderKind::mlp1, HeadKind::vanilla, 4, 3, 2, 2}, 3);
  const auto path = (std::filesystem::temp_directory_path() / "gsd_test_model.gsdm").string();
  write_model(m, path);
  EXPECT_EQ(read_model(path), m);
  std::filesystem::remove(path);
  EXPECT_THROW(read_model(path), Error);
}
