#ifndef SBDIAG_TEST_UTIL_HPP
#define SBDIAG_TEST_UTIL_HPP

#include <filesystem>
#include <optional>
#include <string>

#include <gtest/gtest.h>

#include "sbdiag/common.hpp"

namespace sbdiag::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = "sbdiag_" + tag;
    if (info) name += std::string("_") + info->test_suite_name() + "_" + info->name();
    path_ = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * rng.normal();
  return m;
}

/// Haar-random orthogonal matrix.
inline Matrix random_rotation(Eigen::Index n, Rng& rng) {
  const Matrix g = random_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ();
}

/// Kind of the sbdiag::Error thrown by fn, or nullopt when nothing is thrown.
template <typename Fn>
std::optional<ErrorKind> error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace sbdiag::testing

#endif  // SBDIAG_TEST_UTIL_HPP
