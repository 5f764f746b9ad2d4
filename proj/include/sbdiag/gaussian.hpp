#ifndef SBDIAG_GAUSSIAN_HPP
#define SBDIAG_GAUSSIAN_HPP

#include <optional>
#include <vector>

#include "sbdiag/common.hpp"

namespace sbdiag {

struct Shrinkage {
  double lambda = 0.05;
  double ridge = 1e-6;
};

/// (1 - lambda) S + lambda diag(S) + ridge I
inline Matrix shrink_covariance(const Matrix& cov, const Shrinkage& s = {}) {
  Matrix out = (1.0 - s.lambda) * cov;
  out.diagonal() += s.lambda * cov.diagonal();
  out.diagonal().array() += s.ridge;
  return out;
}

struct CholeskyFactor {
  Eigen::LLT<Matrix> llt;
  double log_det = 0.0;

  explicit CholeskyFactor(const Matrix& m) : llt(m) {
    require(llt.info() == Eigen::Success, ErrorKind::kDegenerate, "covariance is singular despite shrinkage");
    const Matrix& l = llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
  }

  // x^T M^{-1} x
  double quad(const Vector& x) const {
    const Vector z = llt.matrixL().solve(x);
    return z.squaredNorm();
  }
};

/// Class-conditional Gaussians fitted on a subset of rows: class means, a
/// pooled within-class covariance and per-class covariances, each shrunk.
class ClassGaussians {
 public:
  ClassGaussians(const Matrix& features, std::span<const std::int64_t> labels, std::size_t num_classes,
                 const std::vector<bool>* rows = nullptr, bool per_class = false, Shrinkage shrink = {}) {
    const auto n = features.rows(), d = features.cols();
    require(static_cast<std::size_t>(n) == labels.size(), ErrorKind::kDimMismatch, "class gaussians: label count");
    std::vector<Vector> sums(num_classes, Vector::Zero(d));
    std::vector<std::size_t> counts(num_classes, 0);
    std::size_t total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rows && !(*rows)[static_cast<std::size_t>(i)]) continue;
      const auto y = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
      sums[y] += features.row(i).transpose();
      ++counts[y];
      ++total;
    }
    require(total >= 1, ErrorKind::kInsufficientData, "class gaussians: no fitting rows");
    means_.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c)
      if (counts[c] > 0) means_[c] = sums[c] / static_cast<double>(counts[c]);

    Matrix pooled = Matrix::Zero(d, d);
    std::vector<Matrix> per(per_class ? num_classes : 0, Matrix::Zero(d, d));
    for (Eigen::Index i = 0; i < n; ++i) {
      if (rows && !(*rows)[static_cast<std::size_t>(i)]) continue;
      const auto y = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
      const Vector r = features.row(i).transpose() - *means_[y];
      pooled.noalias() += r * r.transpose();
      if (per_class) per[y].noalias() += r * r.transpose();
    }
    pooled /= static_cast<double>(total);
    shared_.emplace(shrink_covariance(pooled, shrink));
    if (per_class) {
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (counts[c] == 0) {
          class_.emplace_back(std::nullopt);
          continue;
        }
        class_.emplace_back(CholeskyFactor(shrink_covariance(per[c] / static_cast<double>(counts[c]), shrink)));
      }
    }
  }

  std::size_t num_classes() const { return means_.size(); }
  const std::optional<Vector>& mean(std::size_t c) const { return means_[c]; }

  double shared_mahalanobis(const Vector& x, std::size_t c) const {
    return std::sqrt(shared_->quad(x - *means_[c]));
  }

  /// Minimum over present classes of the shared-covariance distance.
  double nearest_mahalanobis(const Vector& x) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < means_.size(); ++c)
      if (means_[c]) best = std::min(best, shared_mahalanobis(x, c));
    return best;
  }

  double class_log_likelihood(const Vector& x, std::size_t c) const {
    require(c < class_.size() && class_[c].has_value(), ErrorKind::kInvalidArgument,
            "class gaussians: per-class covariance not fitted");
    const auto& f = *class_[c];
    const double d = static_cast<double>(x.size());
    return -0.5 * (f.quad(x - *means_[c]) + f.log_det + d * std::log(2.0 * M_PI));
  }

  double max_log_likelihood(const Vector& x) const {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < class_.size(); ++c)
      if (class_[c]) best = std::max(best, class_log_likelihood(x, c));
    return best;
  }

 private:
  std::vector<std::optional<Vector>> means_;
  std::optional<CholeskyFactor> shared_;
  std::vector<std::optional<CholeskyFactor>> class_;
};

}  // namespace sbdiag

#endif  // SBDIAG_GAUSSIAN_HPP
