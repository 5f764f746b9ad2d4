#ifndef SBDIAG_SIMILARITY_HPP
#define SBDIAG_SIMILARITY_HPP

// Representation and prediction similarity (linear CKA, Cohen's kappa) and
// weight-dynamics statistics (first-layer kernel TV, weight displacement).

#include <vector>

#include "sbdiag/common.hpp"
#include "sbdiag/tensor_file.hpp"

namespace sbdiag::similarity {

// ---------------------------------------------------------------------------
// CKA
// ---------------------------------------------------------------------------

/// Unbiased HSIC estimator on n x n Gram matrices (n >= 4):
///   [tr(K~L~) + 1'K~1 1'L~1 / ((n-1)(n-2)) - 2/(n-2) 1'K~L~1] / (n(n-3))
/// where K~, L~ are K, L with zeroed diagonals.
inline double hsic_unbiased(const Matrix& k, const Matrix& l) {
  const auto n = k.rows();
  require(n >= 4 && k.cols() == n && l.rows() == n && l.cols() == n, ErrorKind::kInvalidArgument,
          "hsic: need square Gram matrices with n >= 4");
  Matrix kt = k, lt = l;
  kt.diagonal().setZero();
  lt.diagonal().setZero();
  const double nn = static_cast<double>(n);
  const double trace_kl = (kt.array() * lt.array()).sum();  // tr(K~ L~) for symmetric inputs
  const double sum_k = kt.sum(), sum_l = lt.sum();
  const Vector k1 = kt.rowwise().sum(), l1 = lt.rowwise().sum();
  const double cross = k1.dot(l1);  // 1' K~ L~ 1
  return (trace_kl + sum_k * sum_l / ((nn - 1.0) * (nn - 2.0)) - 2.0 / (nn - 2.0) * cross) / (nn * (nn - 3.0));
}

/// Seeded shuffle of [0, n) cut into consecutive blocks of `batch`; a final
/// block smaller than 4 is dropped.
inline std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch, std::uint64_t seed) {
  require(batch >= 4, ErrorKind::kInvalidArgument, "cka: minibatch must be >= 4");
  Rng rng(derive_seed(seed, 0x636b61ull, n));
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    if (e - s < 4) break;
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(s), perm.begin() + static_cast<std::ptrdiff_t>(e));
  }
  require(!out.empty(), ErrorKind::kInsufficientData, "cka: need at least 4 samples");
  return out;
}

inline Matrix gram_of(const Matrix& z, const std::vector<std::size_t>& rows) {
  Matrix sub(static_cast<Eigen::Index>(rows.size()), z.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(rows[i]));
  return sub * sub.transpose();
}

struct CkaResult {
  double value = 0.0;
  bool degenerate = false;
};

/// HSIC terms averaged over the batches, then normalized; clamped to [0, 1].
inline CkaResult cka_from_hsic(double hij, double hii, double hjj) {
  if (!(hii > 0.0) || !(hjj > 0.0)) return {0.0, true};
  return {std::clamp(hij / std::sqrt(hii * hjj), 0.0, 1.0), false};
}

inline CkaResult cka(const Matrix& zi, const Matrix& zj, std::size_t minibatch = 256, std::uint64_t seed = 0) {
  require(zi.rows() == zj.rows(), ErrorKind::kDimMismatch, "cka: sample counts differ");
  const auto batches = minibatches(static_cast<std::size_t>(zi.rows()), minibatch, seed);
  double hij = 0.0, hii = 0.0, hjj = 0.0;
  for (const auto& b : batches) {
    const Matrix ki = gram_of(zi, b), kj = gram_of(zj, b);
    hij += hsic_unbiased(ki, kj);
    hii += hsic_unbiased(ki, ki);
    hjj += hsic_unbiased(kj, kj);
  }
  const double nb = static_cast<double>(batches.size());
  return cka_from_hsic(hij / nb, hii / nb, hjj / nb);
}

struct CkaMatrix {
  Matrix values;  // L x L, symmetric
  bool degenerate = false;
};

/// Pairwise CKA over layers with one shared batch partition.
inline CkaMatrix intra_cka(const std::vector<Matrix>& layers, std::size_t minibatch = 256, std::uint64_t seed = 0) {
  require(!layers.empty(), ErrorKind::kInvalidArgument, "intra_cka: no layers");
  const auto n = static_cast<std::size_t>(layers.front().rows());
  for (const auto& l : layers)
    require(static_cast<std::size_t>(l.rows()) == n, ErrorKind::kDimMismatch, "intra_cka: sample counts differ");
  const auto batches = minibatches(n, minibatch, seed);
  const std::size_t L = layers.size();
  std::vector<std::vector<Matrix>> grams(L);
  parallel_for(L, [&](std::size_t l) {
    for (const auto& b : batches) grams[l].push_back(gram_of(layers[l], b));
  });
  Matrix hsic = Matrix::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L));
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = i; j < L; ++j) pairs.emplace_back(i, j);
  std::vector<double> vals(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t p) {
    double s = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) s += hsic_unbiased(grams[pairs[p].first][b], grams[pairs[p].second][b]);
    vals[p] = s / static_cast<double>(batches.size());
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(pairs[p].first), j = static_cast<Eigen::Index>(pairs[p].second);
    hsic(i, j) = hsic(j, i) = vals[p];
  }
  CkaMatrix out{Matrix::Zero(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(L)), false};
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(L); ++i)
    for (Eigen::Index j = i; j < static_cast<Eigen::Index>(L); ++j) {
      const auto r = cka_from_hsic(hsic(i, j), hsic(i, i), hsic(j, j));
      out.values(i, j) = out.values(j, i) = r.value;
      out.degenerate = out.degenerate || r.degenerate;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Cohen's kappa
// ---------------------------------------------------------------------------

struct KappaResult {
  double value = 0.0;
  double observed = 0.0;  // P_o
  double expected = 0.0;  // P_e
  bool degenerate = false;
};

/// kappa = (P_o - P_e) / (1 - P_e) with P_e = P_i P_j + (1-P_i)(1-P_j).
inline KappaResult cohens_kappa(const std::vector<bool>& ci, const std::vector<bool>& cj) {
  require(ci.size() == cj.size() && !ci.empty(), ErrorKind::kDimMismatch, "cohens_kappa: length mismatch");
  const double n = static_cast<double>(ci.size());
  double agree = 0, acc_i = 0, acc_j = 0;
  for (std::size_t k = 0; k < ci.size(); ++k) {
    agree += ci[k] == cj[k];
    acc_i += ci[k];
    acc_j += cj[k];
  }
  KappaResult r;
  const double pi = acc_i / n, pj = acc_j / n;
  r.observed = agree / n;
  r.expected = pi * pj + (1.0 - pi) * (1.0 - pj);
  if (r.expected >= 1.0) {
    r.degenerate = true;
    return r;
  }
  r.value = (r.observed - r.expected) / (1.0 - r.expected);
  return r;
}

// ---------------------------------------------------------------------------
// Weight statistics
// ---------------------------------------------------------------------------

/// Convolution kernels laid out K_out x k x k x C_in.
struct KernelBank {
  std::size_t out_channels = 0, size = 0, in_channels = 0;
  std::vector<double> values;

  double at(std::size_t o, std::size_t y, std::size_t x, std::size_t c) const {
    return values[((o * size + y) * size + x) * in_channels + c];
  }

  static KernelBank from_tensor(const TensorFile& t) {
    require(t.rank() == 4 && t.dim(1) == t.dim(2), ErrorKind::kDimMismatch, "kernels: expected (K_out, k, k, C_in)");
    return {t.dim(0), t.dim(1), t.dim(3), t.to_doubles()};
  }
};

/// Anisotropic TV per output kernel: sum over channels and positions of the
/// absolute horizontal and vertical neighbour differences.
inline std::vector<double> kernel_total_variation(const KernelBank& k) {
  require(k.values.size() == k.out_channels * k.size * k.size * k.in_channels, ErrorKind::kDimMismatch,
          "kernel_total_variation: value count");
  std::vector<double> tv(k.out_channels, 0.0);
  for (std::size_t o = 0; o < k.out_channels; ++o)
    for (std::size_t c = 0; c < k.in_channels; ++c)
      for (std::size_t y = 0; y < k.size; ++y)
        for (std::size_t x = 0; x < k.size; ++x) {
          if (x + 1 < k.size) tv[o] += std::abs(k.at(o, y, x + 1, c) - k.at(o, y, x, c));
          if (y + 1 < k.size) tv[o] += std::abs(k.at(o, y + 1, x, c) - k.at(o, y, x, c));
        }
  return tv;
}

/// ||W_t - W_{t-1}||_F for consecutive snapshots.
inline std::vector<double> weight_displacement(const std::vector<Vector>& snapshots) {
  std::vector<double> out;
  for (std::size_t t = 1; t < snapshots.size(); ++t) {
    require(snapshots[t].size() == snapshots[t - 1].size(), ErrorKind::kDimMismatch,
            "weight_displacement: snapshot lengths differ");
    out.push_back((snapshots[t] - snapshots[t - 1]).norm());
  }
  return out;
}

}  // namespace sbdiag::similarity

#endif  // SBDIAG_SIMILARITY_HPP
