#ifndef SBDIAG_GEOMETRY_HPP
#define SBDIAG_GEOMETRY_HPP

// Intrinsic-dimension estimators (local PCA, TwoNN, Levina-Bickel MLE) and
// per-pixel PCA channel reduction.

#include <map>
#include <string>
#include <vector>

#include "sbdiag/common.hpp"
#include "sbdiag/neighbors.hpp"

namespace sbdiag::geometry {

struct IDEstimate {
  std::string estimator;
  double value = 0.0;
  std::map<std::string, double> params;
  std::size_t excluded = 0;  // samples dropped for zero neighbour distances
  bool degenerate = false;
};

// ---------------------------------------------------------------------------
// Local PCA
// ---------------------------------------------------------------------------

/// Number of leading eigenvalues whose cumulative share reaches `threshold`;
/// 0 when the total variance is zero.
inline std::size_t components_for_variance(std::vector<double> eig, double threshold) {
  std::sort(eig.begin(), eig.end(), std::greater<>());
  double total = 0.0;
  for (double& e : eig) {
    e = std::max(e, 0.0);
    total += e;
  }
  if (!(total > 0.0)) return 0;
  double cum = 0.0;
  for (std::size_t i = 0; i < eig.size(); ++i) {
    cum += eig[i];
    if (cum >= threshold * total * (1.0 - 1e-12)) return i + 1;
  }
  return eig.size();
}

/// Covariance eigenvalues of a small point set, via its k x k centered Gram.
inline std::vector<double> local_spectrum(const RowMatrix& points, const std::vector<std::size_t>& ids) {
  const auto k = static_cast<Eigen::Index>(ids.size());
  const auto d = points.cols();
  Matrix x(k, d);
  for (Eigen::Index i = 0; i < k; ++i) x.row(i) = points.row(static_cast<Eigen::Index>(ids[static_cast<std::size_t>(i)]));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  const Matrix gram = x * x.transpose() / static_cast<double>(k);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const Vector ev = es.eigenvalues();
  return std::vector<double>(ev.data(), ev.data() + ev.size());
}

inline IDEstimate id_lpca(const Matrix& features, std::size_t k = 20, double var_threshold = 0.95) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(n >= 2, ErrorKind::kInsufficientData, "id_lpca: need at least 2 samples");
  require(var_threshold > 0.0 && var_threshold <= 1.0, ErrorKind::kInvalidArgument, "id_lpca: threshold in (0,1]");
  const NeighborIndex index(features);
  const std::size_t kk = std::min(k, n - 1);
  std::vector<double> per(n);
  parallel_for(n, [&](std::size_t i) {
    const auto nb = index.query(i, kk);
    per[i] = static_cast<double>(components_for_variance(local_spectrum(index.points(), nb.ids), var_threshold));
  });
  IDEstimate est{"lpca", mean(per), {{"k", static_cast<double>(k)}, {"var_threshold", var_threshold}}, 0, false};
  est.degenerate = est.value == 0.0;
  return est;
}

// ---------------------------------------------------------------------------
// TwoNN
// ---------------------------------------------------------------------------

/// Least-squares slope through the origin of -log(1 - F(mu)) against log mu
/// after discarding the largest `discard_fraction` of ratios; F(mu_(i)) = i/N.
inline double two_nn_fit(std::vector<double> mu, double discard_fraction = 0.10) {
  require(discard_fraction >= 0.0 && discard_fraction < 1.0, ErrorKind::kInvalidArgument,
          "id_2nn: discard fraction in [0,1)");
  std::sort(mu.begin(), mu.end());
  const std::size_t n = mu.size();
  auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - discard_fraction)));
  keep = std::min(keep, n - 1);  // F = 1 has no finite log
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < keep; ++i) {
    const double x = std::log(mu[i]);
    const double y = -std::log(1.0 - static_cast<double>(i + 1) / static_cast<double>(n));
    sxy += x * y;
    sxx += x * x;
  }
  require(sxx > 0.0, ErrorKind::kDegenerate, "id_2nn: all distance ratios equal 1");
  return sxy / sxx;
}

inline IDEstimate id_2nn(const Matrix& features, double discard_fraction = 0.10) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(n >= 10, ErrorKind::kInsufficientData, "id_2nn: need at least 10 samples");
  const NeighborIndex index(features);
  const auto nbs = index.query_all(2);
  std::vector<double> mu;
  std::size_t excluded = 0;
  for (const auto& nb : nbs) {
    if (nb.distances[0] <= 0.0) {
      ++excluded;
      continue;
    }
    mu.push_back(nb.distances[1] / nb.distances[0]);
  }
  require(mu.size() >= 10, ErrorKind::kInsufficientData, "id_2nn: fewer than 10 non-duplicate samples");
  IDEstimate est{"2nn", two_nn_fit(std::move(mu), discard_fraction), {{"discard_fraction", discard_fraction}},
                 excluded, false};
  est.value = std::min(est.value, static_cast<double>(features.cols()));
  return est;
}

// ---------------------------------------------------------------------------
// MLE
// ---------------------------------------------------------------------------

/// [ (1/(k-1)) sum_{j<k} log(T_k / T_j) ]^{-1} for ascending distances T_1..T_k.
/// Returns 0 when the sample must be excluded (zero distance or no spread).
inline double mle_local(std::span<const double> t) {
  const std::size_t k = t.size();
  if (k < 2 || t[0] <= 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < k; ++j) s += std::log(t[k - 1] / t[j]);
  if (!(s > 0.0)) return 0.0;
  return static_cast<double>(k - 1) / s;
}

inline IDEstimate id_mle(const Matrix& features, std::size_t k = 6) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(k >= 2, ErrorKind::kInvalidArgument, "id_mle: k must be >= 2");
  require(n > k, ErrorKind::kInsufficientData, "id_mle: need more than k samples");
  const NeighborIndex index(features);
  const auto nbs = index.query_all(k);
  double sum = 0.0;
  std::size_t used = 0, excluded = 0;
  for (const auto& nb : nbs) {
    const double m = mle_local(nb.distances);
    if (m <= 0.0) {
      ++excluded;
      continue;
    }
    sum += m;
    ++used;
  }
  require(used >= 1, ErrorKind::kInsufficientData, "id_mle: every sample has duplicate neighbours");
  IDEstimate est{"mle", std::min(sum / static_cast<double>(used), static_cast<double>(features.cols())),
                 {{"k", static_cast<double>(k)}}, excluded, false};
  return est;
}

// ---------------------------------------------------------------------------
// Per-pixel PCA channel reduction
// ---------------------------------------------------------------------------

struct PcaModel {
  Vector mean;            // C
  Matrix components;      // C x m, orthonormal columns, descending variance
  Vector variances;       // m component variances
  Vector score_stddev;    // m; 0 for components with no variance
  double explained = 0.0; // share of total variance in the m components
  std::size_t fitted_rows = 0;
};

/// Fits on rows whose L2 magnitude exceeds `background_threshold`.
inline PcaModel fit_pca(const Matrix& pixels, std::size_t components = 3, double background_threshold = 0.0) {
  const auto c = pixels.cols();
  require(components >= 1 && static_cast<Eigen::Index>(components) <= c, ErrorKind::kInvalidArgument,
          "pca: component count must be in 1..channels");
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < pixels.rows(); ++i)
    if (pixels.row(i).norm() > background_threshold) rows.push_back(i);
  require(static_cast<Eigen::Index>(rows.size()) > c, ErrorKind::kInsufficientData,
          "pca: need more foreground pixels than channels");
  PcaModel m;
  m.fitted_rows = rows.size();
  m.mean = Vector::Zero(c);
  for (auto i : rows) m.mean += pixels.row(i).transpose();
  m.mean /= static_cast<double>(rows.size());
  Matrix cov = Matrix::Zero(c, c);
  for (auto i : rows) {
    const Vector r = pixels.row(i).transpose() - m.mean;
    cov.noalias() += r * r.transpose();
  }
  cov /= static_cast<double>(rows.size());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const auto mc = static_cast<Eigen::Index>(components);
  m.components.resize(c, mc);
  m.variances.resize(mc);
  m.score_stddev.resize(mc);
  double total = 0.0;
  for (Eigen::Index j = 0; j < c; ++j) total += std::max(0.0, es.eigenvalues()(j));
  double kept = 0.0;
  for (Eigen::Index j = 0; j < mc; ++j) {
    const Eigen::Index src = c - 1 - j;  // eigenvalues ascending
    m.components.col(j) = es.eigenvectors().col(src);
    m.variances(j) = std::max(0.0, es.eigenvalues()(src));
    kept += m.variances(j);
    const double sd = std::sqrt(m.variances(j));
    m.score_stddev(j) = sd > 1e-12 * std::sqrt(std::max(total, 1e-300)) ? sd : 0.0;
  }
  m.explained = total > 0.0 ? kept / total : 0.0;
  return m;
}

/// Raw component scores (centered projection).
inline Matrix pca_project(const PcaModel& m, const Matrix& pixels) {
  return (pixels.rowwise() - m.mean.transpose()) * m.components;
}

inline Matrix pca_reconstruct(const PcaModel& m, const Matrix& scores) {
  return (scores * m.components.transpose()).rowwise() + m.mean.transpose();
}

struct ChannelReduction {
  Matrix reduced;  // M x m, each column standardized over the fitted rows
  PcaModel model;
};

/// PCA projection followed by Gaussian re-standardization of each component.
/// Zero-variance components are left at 0.
inline ChannelReduction pca_channel_reduce(const Matrix& pixels, std::size_t components = 3,
                                           double background_threshold = 0.0) {
  ChannelReduction out{Matrix(), fit_pca(pixels, components, background_threshold)};
  out.reduced = pca_project(out.model, pixels);
  for (Eigen::Index j = 0; j < out.reduced.cols(); ++j) {
    const double sd = out.model.score_stddev(j);
    if (sd > 0.0)
      out.reduced.col(j) /= sd;
    else
      out.reduced.col(j).setZero();
  }
  return out;
}

}  // namespace sbdiag::geometry

#endif  // SBDIAG_GEOMETRY_HPP
