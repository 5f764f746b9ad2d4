#ifndef SBDIAG_UNCERTAINTY_HPP
#define SBDIAG_UNCERTAINTY_HPP

// Calibration (SmoothECE), classification metrics, single-pass epistemic
// uncertainty estimators and the abstention Alignment Score.

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "sbdiag/common.hpp"
#include "sbdiag/gaussian.hpp"
#include "sbdiag/neighbors.hpp"
#include "sbdiag/telemetry.hpp"

namespace sbdiag::uncertainty {

using telemetry::Head;
using telemetry::Labels;

struct CalibrationInput {
  std::vector<double> confidence;  // max softmax, in [0, 1]
  std::vector<bool> correct;

  std::size_t size() const { return confidence.size(); }

  void validate() const {
    require(confidence.size() == correct.size(), ErrorKind::kDimMismatch, "calibration: length mismatch");
    for (double p : confidence)
      require(std::isfinite(p) && p >= 0.0 && p <= 1.0, ErrorKind::kInvalidArgument,
              "calibration: confidence outside [0, 1]");
  }

  CalibrationInput subset(const std::vector<std::size_t>& ids) const {
    CalibrationInput out;
    out.confidence.reserve(ids.size());
    out.correct.reserve(ids.size());
    for (auto i : ids) {
      out.confidence.push_back(confidence[i]);
      out.correct.push_back(correct[i]);
    }
    return out;
  }
};

/// Max-softmax confidence and argmax correctness for each row of `logits`.
inline CalibrationInput calibration_from_logits(const Matrix& logits, const Labels& labels) {
  require(static_cast<std::size_t>(logits.rows()) == labels.size(), ErrorKind::kDimMismatch,
          "calibration: label count");
  CalibrationInput in;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto p = softmax(row_copy(logits, i));
    const auto k = argmax(p);
    in.confidence.push_back(p[k]);
    in.correct.push_back(static_cast<std::int64_t>(k) == labels[static_cast<std::size_t>(i)]);
  }
  return in;
}

// ---------------------------------------------------------------------------
// SmoothECE
// ---------------------------------------------------------------------------

struct SmoothEceOptions {
  std::optional<double> bandwidth;  // fixed sigma; auto when empty
  std::size_t grid = 1025;  // 1024 intervals; the mirror period is then a power of two
  double sigma_lo = 1e-4;
  double sigma_hi = 0.5;
  double fallback_sigma = 0.05;
  int bisection_steps = 50;
  double bisection_tolerance = 1e-7;
};

struct SmoothEceResult {
  double value = 0.0;
  double bandwidth = 0.0;
  bool fallback = false;  // auto bandwidth found no fixed point
};

namespace detail {

/// Residual mass (correct - confidence) / N spread linearly onto a uniform
/// grid over [0, 1].
inline std::vector<double> residual_mass(const CalibrationInput& in, std::size_t g) {
  std::vector<double> m(g, 0.0);
  const double n = static_cast<double>(in.size());
  const double scale = static_cast<double>(g - 1);
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double r = ((in.correct[i] ? 1.0 : 0.0) - in.confidence[i]) / n;
    const double pos = in.confidence[i] * scale;
    auto lo = static_cast<std::size_t>(std::floor(pos));
    if (lo >= g - 1) lo = g - 2;
    const double frac = pos - static_cast<double>(lo);
    m[lo] += (1.0 - frac) * r;
    m[lo + 1] += frac * r;
  }
  return m;
}

/// sum_a | sum_c w(a, c) m_c | where column c of w is a Gaussian of width
/// sigma centred on node c, reflected at both ends of [0, 1] and normalized to
/// unit mass on the grid. Reflection at both ends makes the kernel periodic
/// with period 2 (g - 1), so the sum is a circular convolution of the mirrored
/// mass with the periodized Gaussian.
inline double smoothed_abs_residual(const std::vector<double>& m, double sigma) {
  const auto g = static_cast<long>(m.size());
  const long last = g - 1, period = 2 * last;
  const double s = sigma * static_cast<double>(last);  // in grid units
  const double reach = 8.0 * s;
  const auto wraps = static_cast<long>(std::ceil(reach / static_cast<double>(period))) + 1;
  std::vector<double> kernel(static_cast<std::size_t>(period), 0.0);
  for (long x = 0; x < period; ++x)
    for (long j = -wraps; j <= wraps; ++j) {
      const double d = static_cast<double>(x + j * period);
      if (std::abs(d) <= reach) kernel[static_cast<std::size_t>(x)] += std::exp(-0.5 * (d / s) * (d / s));
    }
  // prefix[k] = sum of kernel over [0, k) on the twice-unrolled period.
  std::vector<double> prefix(static_cast<std::size_t>(2 * period) + 1, 0.0);
  for (long k = 0; k < 2 * period; ++k)
    prefix[static_cast<std::size_t>(k + 1)] = prefix[static_cast<std::size_t>(k)] + kernel[static_cast<std::size_t>(k % period)];
  auto window = [&](long start) {  // sum of kernel[(start + a) mod period], a = 0..last
    const long st = ((start % period) + period) % period;
    return prefix[static_cast<std::size_t>(st + g)] - prefix[static_cast<std::size_t>(st)];
  };

  // Both images of node c; at c = 0 and c = last they coincide, which the
  // normalization absorbs.
  std::vector<double> mirrored(static_cast<std::size_t>(period), 0.0);
  for (long c = 0; c < g; ++c) {
    const double mc = m[static_cast<std::size_t>(c)];
    if (mc == 0.0) continue;
    const double total = window(-c) + window(c);
    if (!(total > 0.0)) continue;
    mirrored[static_cast<std::size_t>(c)] += mc / total;
    mirrored[static_cast<std::size_t>((period - c) % period)] += mc / total;
  }

  thread_local Eigen::FFT<double> fft;
  std::vector<std::complex<double>> fm, fk;
  fft.fwd(fm, mirrored);
  fft.fwd(fk, kernel);
  for (std::size_t i = 0; i < fm.size(); ++i) fm[i] *= fk[i];
  std::vector<double> conv;
  fft.inv(conv, fm);
  double out = 0.0;
  for (long a = 0; a < g; ++a) out += std::abs(conv[static_cast<std::size_t>(a)]);
  return out;
}

}  // namespace detail

inline SmoothEceResult smooth_ece(const CalibrationInput& in, const SmoothEceOptions& opt = {}) {
  in.validate();
  require(in.size() >= 10, ErrorKind::kInsufficientData, "smooth_ece: need at least 10 samples");
  require(opt.grid >= 16, ErrorKind::kInvalidArgument, "smooth_ece: grid too small");
  const auto m = detail::residual_mass(in, opt.grid);
  auto at = [&](double sigma) { return std::clamp(detail::smoothed_abs_residual(m, sigma), 0.0, 1.0); };
  if (opt.bandwidth) {
    require(*opt.bandwidth > 0.0, ErrorKind::kInvalidArgument, "smooth_ece: bandwidth must be positive");
    return {at(*opt.bandwidth), *opt.bandwidth, false};
  }
  double lo = opt.sigma_lo, hi = opt.sigma_hi;
  const double f_lo = at(lo) - lo, f_hi = at(hi) - hi;
  if (!(f_lo >= 0.0 && f_hi <= 0.0)) return {at(opt.fallback_sigma), opt.fallback_sigma, true};
  for (int it = 0; it < opt.bisection_steps && hi - lo > opt.bisection_tolerance; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (at(mid) - mid > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  const double sigma = 0.5 * (lo + hi);
  return {at(sigma), sigma, false};
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

/// P(score of a random positive > score of a random negative), ties count 1/2.
/// NaN when either class is absent.
inline double auroc(std::span<const double> scores, const std::vector<bool>& positive) {
  require(scores.size() == positive.size(), ErrorKind::kDimMismatch, "auroc: length mismatch");
  const auto ranks = average_ranks(scores);
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (positive[i]) {
      pos += 1.0;
      rank_sum += ranks[i];
    }
  const double neg = static_cast<double>(scores.size()) - pos;
  if (pos == 0.0 || neg == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Average precision: sum over distinct thresholds of recall increment times
/// precision, with tied scores entering together. NaN without positives.
inline double auprc(std::span<const double> scores, const std::vector<bool>& positive) {
  require(scores.size() == positive.size(), ErrorKind::kDimMismatch, "auprc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double total_pos = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  if (total_pos == 0.0) return std::numeric_limits<double>::quiet_NaN();
  double tp = 0.0, seen = 0.0, ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    double new_tp = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      new_tp += positive[order[j]] ? 1.0 : 0.0;
      ++j;
    }
    seen += static_cast<double>(j - i);
    tp += new_tp;
    ap += (new_tp / total_pos) * (tp / seen);
    i = j;
  }
  return ap;
}

struct ClassificationMetrics {
  double accuracy = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  bool degenerate = false;  // positive class absent or universal
};

/// Accuracy by argmax; AUROC / AUPRC of the positive-class softmax score.
inline ClassificationMetrics classification_metrics(const Matrix& logits, const Labels& labels,
                                                    std::size_t positive_class = 1) {
  require(static_cast<std::size_t>(logits.rows()) == labels.size() && logits.rows() > 0, ErrorKind::kDimMismatch,
          "classification_metrics: label count");
  require(positive_class < static_cast<std::size_t>(logits.cols()), ErrorKind::kInvalidArgument,
          "classification_metrics: positive class out of range");
  std::vector<double> score(labels.size());
  std::vector<bool> pos(labels.size());
  double correct = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto p = softmax(row_copy(logits, static_cast<Eigen::Index>(i)));
    correct += static_cast<std::int64_t>(argmax(p)) == labels[i] ? 1.0 : 0.0;
    score[i] = p[positive_class];
    pos[i] = labels[i] == static_cast<std::int64_t>(positive_class);
  }
  ClassificationMetrics m;
  m.accuracy = correct / static_cast<double>(labels.size());
  m.auroc = auroc(score, pos);
  m.auprc = auprc(score, pos);
  m.degenerate = std::isnan(m.auroc);
  return m;
}

// ---------------------------------------------------------------------------
// Epistemic uncertainty estimators
// ---------------------------------------------------------------------------

struct EUScore {
  std::string name;
  Direction direction = Direction::kUp;  // direction of increasing uncertainty
  std::vector<double> scores;

  /// Scores flipped where needed so that larger always means more uncertain.
  std::vector<double> oriented() const {
    std::vector<double> out = scores;
    if (direction == Direction::kDown)
      for (auto& v : out) v = -v;
    return out;
  }
};

struct EuOptions {
  double ash_keep = 0.35;
  std::size_t k = 10;
  double principal_variance = 0.95;
  Shrinkage shrink{};
};

inline double energy(std::span<const double> z) { return -log_sum_exp(z); }

/// ASH-B: the top `keep` share of activations by magnitude (ties to lower
/// index) become sum/m, the rest are zeroed.
inline Vector ash_binarize(const Vector& f, double keep) {
  const auto n = static_cast<std::size_t>(f.size());
  require(n >= 1, ErrorKind::kInvalidArgument, "ash: empty feature");
  const std::size_t m = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(keep * static_cast<double>(n))),
                                                1, n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(f(static_cast<Eigen::Index>(a))) > std::abs(f(static_cast<Eigen::Index>(b)));
  });
  const double fill = f.sum() / static_cast<double>(m);
  Vector out = Vector::Zero(f.size());
  for (std::size_t i = 0; i < m; ++i) out(static_cast<Eigen::Index>(idx[i])) = fill;
  return out;
}

/// ||softmax(z) - prior||_1 * ||f||_1
inline double gradnorm(std::span<const double> z, std::span<const double> prior, const Vector& f) {
  const auto p = softmax(z);
  double l1 = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) l1 += std::abs(p[c] - prior[c]);
  return l1 * f.lpNorm<1>();
}

inline Vector unit(const Vector& v) {
  const double n = v.norm();
  return n > 0.0 ? Vector(v / n) : Vector(Vector::Zero(v.size()));
}

/// Statistics fitted once on the training fold.
struct TrainStats {
  std::size_t num_classes = 0;
  std::vector<double> prior;
  std::optional<ClassGaussians> gaussians;  // shared and per-class covariances
  std::optional<Head> head;
  Vector center;          // training mean
  Matrix principal;       // n x p, orthonormal columns
  double vim_alpha = 0.0;
  std::optional<NeighborIndex> normalized;  // unit-norm training features
  EuOptions options;
};

inline Vector logits_of(const Head& h, const Vector& f) { return h.weight * f + h.bias; }

inline TrainStats fit_train_stats(const Matrix& features, const Labels& labels, std::size_t num_classes,
                                  std::optional<Head> head = std::nullopt,
                                  std::optional<std::vector<double>> prior = std::nullopt, const EuOptions& opt = {}) {
  const auto n = features.rows(), d = features.cols();
  require(static_cast<std::size_t>(n) == labels.size(), ErrorKind::kDimMismatch, "train stats: label count");
  require(n > d, ErrorKind::kInsufficientData, "train stats: need more training samples than feature dimensions");
  require(static_cast<std::size_t>(n) > opt.k, ErrorKind::kInsufficientData, "train stats: fewer samples than k");
  for (std::size_t i = 0; i < labels.size(); ++i)
    require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < num_classes, ErrorKind::kInvalidArgument,
            "train stats: label out of range");
  if (head)
    require(head->weight.rows() == static_cast<Eigen::Index>(num_classes) && head->weight.cols() == d &&
                head->bias.size() == head->weight.rows(),
            ErrorKind::kDimMismatch, "train stats: head shape does not match features");

  TrainStats s;
  s.num_classes = num_classes;
  s.options = opt;
  s.head = std::move(head);
  if (prior) {
    require(prior->size() == num_classes, ErrorKind::kDimMismatch, "train stats: prior length");
    s.prior = *prior;
  } else {
    s.prior.assign(num_classes, 0.0);
    for (auto y : labels) s.prior[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(n);
  }
  s.gaussians.emplace(features, labels, num_classes, nullptr, true, opt.shrink);

  s.center = features.colwise().mean().transpose();
  const Matrix centered = features.rowwise() - s.center.transpose();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Vector ev = es.eigenvalues();
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) total += std::max(0.0, ev(j));
  Eigen::Index p = 0;
  double cum = 0.0;
  while (p < d && cum < opt.principal_variance * total * (1.0 - 1e-12)) {
    cum += std::max(0.0, ev(d - 1 - p));
    ++p;
  }
  s.principal.resize(d, p);
  for (Eigen::Index j = 0; j < p; ++j) s.principal.col(j) = es.eigenvectors().col(d - 1 - j);

  Matrix unit_rows(n, d);
  for (Eigen::Index i = 0; i < n; ++i) unit_rows.row(i) = unit(features.row(i).transpose()).transpose();
  s.normalized.emplace(unit_rows);

  if (s.head) {
    double max_logit = 0.0, residual = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector f = features.row(i).transpose();
      max_logit += logits_of(*s.head, f).maxCoeff();
      const Vector c = f - s.center;
      residual += (c - s.principal * (s.principal.transpose() * c)).norm();
    }
    s.vim_alpha = residual > 0.0 ? max_logit / residual : 0.0;
  }
  return s;
}

struct EuReport {
  std::vector<EUScore> scores;
  std::vector<std::string> skipped;  // "<estimator>: <reason>"
};

/// The nine estimators, in a fixed order. Those needing the classifier head
/// are skipped with a report entry when it is missing.
inline EuReport eu_scores(const Matrix& features, const Matrix& logits, const TrainStats& s) {
  const auto n = static_cast<std::size_t>(features.rows());
  require(logits.rows() == features.rows(), ErrorKind::kDimMismatch, "eu_scores: features and logits differ in N");
  require(static_cast<std::size_t>(logits.cols()) == s.num_classes, ErrorKind::kDimMismatch,
          "eu_scores: logit width differs from class count");
  require(features.cols() == s.center.size(), ErrorKind::kDimMismatch, "eu_scores: feature width differs from fit");
  const bool head = s.head.has_value();
  const std::size_t k = s.options.k;

  std::vector<double> ash(n), dml(n), gn(n), maha(n), gda(n), knn(n), cosine(n), nnguide(n), vim(n);
  parallel_for(n, [&](std::size_t i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector f = features.row(r).transpose();
    const auto z = row_copy(logits, r);
    const double lse = log_sum_exp(z);

    maha[i] = s.gaussians->nearest_mahalanobis(f);
    gda[i] = s.gaussians->max_log_likelihood(f);

    const Vector u = unit(f);
    const auto nb = s.normalized->query_point(u, k);
    double dist = 0.0, cos = 0.0;
    for (std::size_t j = 0; j < nb.ids.size(); ++j) {
      dist += nb.distances[j];
      cos += u.dot(s.normalized->points().row(static_cast<Eigen::Index>(nb.ids[j])).transpose());
    }
    knn[i] = dist / static_cast<double>(nb.ids.size());
    cosine[i] = cos / static_cast<double>(nb.ids.size());
    nnguide[i] = -lse * cosine[i];

    if (head) {
      const Vector za = logits_of(*s.head, ash_binarize(f, s.options.ash_keep));
      ash[i] = energy(std::span<const double>(za.data(), static_cast<std::size_t>(za.size())));
      double best = -std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < s.head->weight.rows(); ++c)
        best = std::max(best, u.dot(unit(s.head->weight.row(c).transpose())));
      dml[i] = best;
      gn[i] = gradnorm(z, s.prior, f);
      const Vector c = f - s.center;
      vim[i] = s.vim_alpha * (c - s.principal * (s.principal.transpose() * c)).norm() - lse;
    }
  });

  EuReport rep;
  const char* no_head = "classifier head weights not supplied";
  if (head) {
    rep.scores.push_back({"energy_ash", Direction::kUp, std::move(ash)});
    rep.scores.push_back({"dml", Direction::kDown, std::move(dml)});
    rep.scores.push_back({"gradnorm", Direction::kDown, std::move(gn)});
  } else {
    for (const char* e : {"energy_ash", "dml", "gradnorm"}) rep.skipped.push_back(std::string(e) + ": " + no_head);
  }
  rep.scores.push_back({"mahalanobis", Direction::kUp, std::move(maha)});
  rep.scores.push_back({"gda", Direction::kDown, std::move(gda)});
  rep.scores.push_back({"knn", Direction::kUp, std::move(knn)});
  rep.scores.push_back({"cosine", Direction::kDown, std::move(cosine)});
  rep.scores.push_back({"nnguide", Direction::kUp, std::move(nnguide)});
  if (head)
    rep.scores.push_back({"vim", Direction::kUp, std::move(vim)});
  else
    rep.skipped.push_back(std::string("vim: ") + no_head);
  return rep;
}

// ---------------------------------------------------------------------------
// Alignment Score
// ---------------------------------------------------------------------------

struct AlignmentResult {
  double value = 0.0;
  std::vector<int> q;
  std::vector<double> ratio;  // ECE_q / ECE_0
  double ece0 = 0.0;
  bool degenerate = false;  // ECE_0 below 1e-6
};

/// For each q in [q_min, q_max], drops the floor(q N / 100) most uncertain
/// samples (ties: lower index first) and recomputes SmoothECE. The result is
/// the trapezoidal mean of ECE_q / ECE_0 over the grid.
inline AlignmentResult alignment_score(const EUScore& eu, const CalibrationInput& in, int q_min = 0, int q_max = 90,
                                       const SmoothEceOptions& ece = {}) {
  in.validate();
  require(eu.scores.size() == in.size(), ErrorKind::kDimMismatch, "alignment_score: score count differs");
  require(q_min >= 0 && q_max > q_min && q_max < 100, ErrorKind::kInvalidArgument,
          "alignment_score: need 0 <= q_min < q_max < 100");
  const std::size_t n = in.size();
  const auto key = eu.oriented();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });

  AlignmentResult r;
  for (int q = q_min; q <= q_max; ++q) r.q.push_back(q);
  std::vector<double> values(r.q.size());
  parallel_for(r.q.size(), [&](std::size_t j) {
    const auto drop = static_cast<std::size_t>(static_cast<double>(r.q[j]) * static_cast<double>(n) / 100.0);
    std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
    std::sort(keep.begin(), keep.end());
    values[j] = keep.size() >= 10 ? smooth_ece(in.subset(keep), ece).value : std::numeric_limits<double>::quiet_NaN();
  });
  r.ece0 = q_min == 0 ? values[0] : smooth_ece(in, ece).value;
  if (!(r.ece0 >= 1e-6)) {
    r.degenerate = true;
    return r;
  }
  for (double v : values) {
    require(!std::isnan(v), ErrorKind::kInsufficientData, "alignment_score: fewer than 10 samples retained");
    r.ratio.push_back(v / r.ece0);
  }
  double area = 0.0;
  for (std::size_t j = 1; j < r.ratio.size(); ++j)
    area += 0.5 * (r.ratio[j] + r.ratio[j - 1]) * static_cast<double>(r.q[j] - r.q[j - 1]);
  r.value = area / static_cast<double>(q_max - q_min);
  return r;
}

}  // namespace sbdiag::uncertainty

#endif  // SBDIAG_UNCERTAINTY_HPP
