#ifndef SBDIAG_TENSOR_FILE_HPP
#define SBDIAG_TENSOR_FILE_HPP

// SPT1 tensor container:
//   magic "SPT1" | dtype u8 | rank u8 | rank x u64 LE dims | row-major LE payload

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sbdiag/common.hpp"

namespace sbdiag {

enum class DType : std::uint8_t { kF32 = 0, kI64 = 1, kU8 = 2 };

inline std::size_t element_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kI64: return 8;
    case DType::kU8: return 1;
  }
  return 0;
}

inline constexpr std::size_t kMaxRank = 5;
inline constexpr std::array<char, 4> kTensorMagic{'S', 'P', 'T', '1'};

class TensorFile {
 public:
  TensorFile() = default;

  TensorFile(DType dtype, std::vector<std::uint64_t> dims, std::vector<std::uint8_t> payload)
      : dtype_(dtype), dims_(std::move(dims)), payload_(std::move(payload)) {
    validate("<memory>");
  }

  static TensorFile from_f32(std::vector<std::uint64_t> dims, std::span<const double> values) {
    std::vector<std::uint8_t> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float f = static_cast<float>(values[i]);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
    }
    return TensorFile(DType::kF32, std::move(dims), std::move(bytes));
  }

  static TensorFile from_i64(std::vector<std::uint64_t> dims, std::span<const std::int64_t> values) {
    std::vector<std::uint8_t> bytes(values.size() * 8);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto u = static_cast<std::uint64_t>(values[i]);
      for (int b = 0; b < 8; ++b) bytes[8 * i + b] = static_cast<std::uint8_t>(u >> (8 * b));
    }
    return TensorFile(DType::kI64, std::move(dims), std::move(bytes));
  }

  static TensorFile from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values) {
    return TensorFile(DType::kU8, std::move(dims), std::vector<std::uint8_t>(values.begin(), values.end()));
  }

  static TensorFile from_matrix(const Matrix& m) {
    std::vector<double> flat(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) flat[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return from_f32({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, flat);
  }

  DType dtype() const { return dtype_; }
  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::uint64_t>& dims() const { return dims_; }
  std::uint64_t dim(std::size_t i) const { return dims_.at(i); }
  const std::vector<std::uint8_t>& payload() const { return payload_; }

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims_) n *= static_cast<std::size_t>(d);
    return n;
  }

  // Values widened to double regardless of storage type.
  std::vector<double> to_doubles() const {
    const std::size_t n = element_count();
    std::vector<double> out(n);
    switch (dtype_) {
      case DType::kF32:
        for (std::size_t i = 0; i < n; ++i) {
          std::uint32_t u = 0;
          for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(payload_[4 * i + b]) << (8 * b);
          float f;
          std::memcpy(&f, &u, 4);
          out[i] = f;
        }
        break;
      case DType::kI64: {
        const auto ints = to_i64();
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(ints[i]);
        break;
      }
      case DType::kU8:
        for (std::size_t i = 0; i < n; ++i) out[i] = payload_[i];
        break;
    }
    return out;
  }

  std::vector<std::int64_t> to_i64() const {
    const std::size_t n = element_count();
    std::vector<std::int64_t> out(n);
    if (dtype_ == DType::kI64) {
      for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t u = 0;
        for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(payload_[8 * i + b]) << (8 * b);
        out[i] = static_cast<std::int64_t>(u);
      }
    } else if (dtype_ == DType::kU8) {
      for (std::size_t i = 0; i < n; ++i) out[i] = payload_[i];
    } else {
      fail(ErrorKind::kInvalidArgument, "tensor: f32 payload requested as integers");
    }
    return out;
  }

  // Rank-2 tensor as an N x M matrix.
  Matrix to_matrix() const {
    require(rank() == 2, ErrorKind::kDimMismatch, "tensor: expected rank 2");
    const auto v = to_doubles();
    const auto rows = static_cast<Eigen::Index>(dims_[0]);
    const auto cols = static_cast<Eigen::Index>(dims_[1]);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
    return m;
  }

  bool all_finite() const {
    if (dtype_ != DType::kF32) return true;
    for (double v : to_doubles())
      if (!std::isfinite(v)) return false;
    return true;
  }

  void validate(const std::string& origin) const {
    require(element_size(dtype_) != 0, ErrorKind::kParse, origin + ": unknown dtype");
    require(dims_.size() <= kMaxRank, ErrorKind::kParse, origin + ": rank exceeds 5");
    for (auto d : dims_) require(d >= 1, ErrorKind::kDimMismatch, origin + ": zero-length dimension");
    require(payload_.size() == element_count() * element_size(dtype_), ErrorKind::kDimMismatch,
            origin + ": payload length does not match dims");
  }

  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    out.reserve(6 + 8 * dims_.size() + payload_.size());
    out.insert(out.end(), kTensorMagic.begin(), kTensorMagic.end());
    out.push_back(static_cast<std::uint8_t>(dtype_));
    out.push_back(static_cast<std::uint8_t>(dims_.size()));
    for (auto d : dims_)
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(d >> (8 * b)));
    out.insert(out.end(), payload_.begin(), payload_.end());
    return out;
  }

  static TensorFile parse(std::span<const std::uint8_t> bytes, const std::string& origin) {
    require(bytes.size() >= 6, ErrorKind::kParse, origin + ": truncated header");
    require(std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin()), ErrorKind::kParse,
            origin + ": bad magic");
    TensorFile t;
    require(bytes[4] <= 2, ErrorKind::kParse, origin + ": unknown dtype code " + std::to_string(bytes[4]));
    t.dtype_ = static_cast<DType>(bytes[4]);
    const std::size_t rank = bytes[5];
    require(rank <= kMaxRank, ErrorKind::kParse, origin + ": rank exceeds 5");
    require(bytes.size() >= 6 + 8 * rank, ErrorKind::kParse, origin + ": truncated dims");
    t.dims_.resize(rank);
    for (std::size_t i = 0; i < rank; ++i) {
      std::uint64_t d = 0;
      for (int b = 0; b < 8; ++b) d |= static_cast<std::uint64_t>(bytes[6 + 8 * i + b]) << (8 * b);
      t.dims_[i] = d;
    }
    t.payload_.assign(bytes.begin() + static_cast<std::ptrdiff_t>(6 + 8 * rank), bytes.end());
    t.validate(origin);
    return t;
  }

  friend bool operator==(const TensorFile&, const TensorFile&) = default;

 private:
  DType dtype_ = DType::kF32;
  std::vector<std::uint64_t> dims_;
  std::vector<std::uint8_t> payload_;
};

inline TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "file not found: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return TensorFile::parse(bytes, path.string());
}

inline void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
  const auto bytes = t.serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace sbdiag

#endif  // SBDIAG_TENSOR_FILE_HPP
