#include <gtest/gtest.h>

#include "sbdiag/tensor_file.hpp"
#include "test_util.hpp"

namespace sbdiag {
namespace {

TEST(TensorFile, F32RoundTripThroughBytes) {
  const std::vector<double> v{1.5, -2.25, 0.0, 3.0, 1e-3, 7.0};
  const auto t = TensorFile::from_f32({2, 3}, v);
  const auto bytes = t.serialize();
  const auto back = TensorFile::parse(bytes, "mem");
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.serialize(), bytes);
  const auto d = back.to_doubles();
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(d[i], static_cast<double>(static_cast<float>(v[i])));
}

TEST(TensorFile, HeaderLayout) {
  const std::vector<std::int64_t> v{7, -1};
  const auto bytes = TensorFile::from_i64({2}, v).serialize();
  ASSERT_EQ(bytes.size(), 4u + 2u + 8u + 16u);
  EXPECT_EQ(bytes[0], 'S');
  EXPECT_EQ(bytes[3], '1');
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 2);
  EXPECT_EQ(bytes[14], 7);
  EXPECT_EQ(bytes[22], 0xFF);
}

TEST(TensorFile, RandomRoundTripIsByteIdentical) {
  Rng rng(17);
  testing::TempDir dir("tensor");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rank = 1 + rng.below(5);
    std::vector<std::uint64_t> dims;
    std::size_t n = 1;
    for (std::size_t r = 0; r < rank; ++r) {
      dims.push_back(1 + rng.below(4));
      n *= dims.back();
    }
    TensorFile t;
    switch (rng.below(3)) {
      case 0: {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal();
        t = TensorFile::from_f32(dims, v);
        break;
      }
      case 1: {
        std::vector<std::int64_t> v(n);
        for (auto& x : v) x = static_cast<std::int64_t>(rng.next());
        t = TensorFile::from_i64(dims, v);
        break;
      }
      default: {
        std::vector<std::uint8_t> v(n);
        for (auto& x : v) x = static_cast<std::uint8_t>(rng.below(256));
        t = TensorFile::from_u8(dims, v);
      }
    }
    const auto p = dir / "t.spt";
    write_tensor(p, t);
    const auto loaded = read_tensor(p);
    EXPECT_EQ(loaded, t);
    write_tensor(dir / "u.spt", loaded);
    EXPECT_EQ(read_tensor(dir / "u.spt").serialize(), t.serialize());
  }
}

TEST(TensorFile, RejectsBadMagic) {
  auto bytes = TensorFile::from_f32({1}, std::vector<double>{1.0}).serialize();
  bytes[0] = 'X';
  EXPECT_EQ(testing::error_kind_of([&] { TensorFile::parse(bytes, "x"); }), ErrorKind::kParse);
}

TEST(TensorFile, RejectsPayloadLengthMismatch) {
  auto bytes = TensorFile::from_f32({2}, std::vector<double>{1.0, 2.0}).serialize();
  bytes.pop_back();
  EXPECT_EQ(testing::error_kind_of([&] { TensorFile::parse(bytes, "x"); }), ErrorKind::kDimMismatch);
}

TEST(TensorFile, RejectsRankAboveFive) {
  EXPECT_EQ(testing::error_kind_of([] {
              TensorFile::from_u8({1, 1, 1, 1, 1, 1}, std::vector<std::uint8_t>{1});
            }),
            ErrorKind::kParse);
}

TEST(TensorFile, RejectsZeroDimension) {
  EXPECT_EQ(testing::error_kind_of([] { TensorFile::from_u8({0}, std::vector<std::uint8_t>{}); }),
            ErrorKind::kDimMismatch);
}

TEST(TensorFile, MatrixRoundTrip) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(TensorFile::from_matrix(m).to_matrix(), m);
}

TEST(TensorFile, DetectsNonFinite) {
  const auto t = TensorFile::from_f32({2}, std::vector<double>{1.0, std::nan("")});
  EXPECT_FALSE(t.all_finite());
}

TEST(TensorFile, MissingFileKind) {
  EXPECT_EQ(testing::error_kind_of([] { read_tensor("/nonexistent/x.spt"); }), ErrorKind::kMissingFile);
}

}  // namespace
}  // namespace sbdiag
