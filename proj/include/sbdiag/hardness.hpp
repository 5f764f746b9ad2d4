#ifndef SBDIAG_HARDNESS_HPP
#define SBDIAG_HARDNESS_HPP

// Per-sample hardness estimators from training dynamics and representation
// geometry, and their normalized composite. Every score is oriented by a
// direction flag: kUp means larger raw values are harder.

#include <optional>
#include <string>
#include <vector>

#include "sbdiag/common.hpp"
#include "sbdiag/gaussian.hpp"
#include "sbdiag/neighbors.hpp"
#include "sbdiag/telemetry.hpp"

namespace sbdiag::hardness {

using telemetry::Labels;
using telemetry::PredictionTrace;

/// Mean correctness over checkpoints. Direction: down.
inline std::vector<double> learning_speed(const BoolMatrix& correct) {
  require(correct.cols() >= 1, ErrorKind::kInvalidArgument, "learning_speed: need at least one checkpoint");
  std::vector<double> out(static_cast<std::size_t>(correct.rows()));
  for (Eigen::Index i = 0; i < correct.rows(); ++i)
    out[static_cast<std::size_t>(i)] = correct.row(i).cast<double>().mean();
  return out;
}

/// Number of correct -> incorrect transitions between consecutive checkpoints.
/// Direction: up.
inline std::vector<int> forgetting_score(const BoolMatrix& correct) {
  std::vector<int> out(static_cast<std::size_t>(correct.rows()), 0);
  for (Eigen::Index i = 0; i < correct.rows(); ++i)
    for (Eigen::Index t = 0; t + 1 < correct.cols(); ++t)
      if (correct(i, t) && !correct(i, t + 1)) ++out[static_cast<std::size_t>(i)];
  return out;
}

/// Mean over checkpoints of z_y - max_{c != y} z_c. Direction: down.
inline std::vector<double> aum(const PredictionTrace& trace, const Labels& labels) {
  const std::size_t n = trace.samples();
  require(labels.size() == n, ErrorKind::kDimMismatch, "aum: label count");
  require(trace.checkpoints() >= 1, ErrorKind::kInvalidArgument, "aum: no checkpoints");
  std::vector<double> out(n, 0.0);
  for (const auto& z : trace.logits)
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto y = static_cast<Eigen::Index>(labels[i]);
      double other = -std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < z.cols(); ++c)
        if (c != y) other = std::max(other, z(r, c));
      out[i] += z(r, y) - other;
    }
  for (auto& v : out) v /= static_cast<double>(trace.checkpoints());
  return out;
}

/// Mean over checkpoints of ||softmax(z_t) - onehot(y)||_2. Direction: up.
inline std::vector<double> el2n(const PredictionTrace& trace, const Labels& labels) {
  const std::size_t n = trace.samples();
  require(labels.size() == n, ErrorKind::kDimMismatch, "el2n: label count");
  require(trace.checkpoints() >= 1, ErrorKind::kInvalidArgument, "el2n: no checkpoints");
  std::vector<double> out(n, 0.0);
  for (const auto& z : trace.logits)
    for (std::size_t i = 0; i < n; ++i) {
      auto p = softmax(row_copy(z, static_cast<Eigen::Index>(i)));
      p[static_cast<std::size_t>(labels[i])] -= 1.0;
      double s = 0.0;
      for (double v : p) s += v * v;
      out[i] += std::sqrt(s);
    }
  for (auto& v : out) v /= static_cast<double>(trace.checkpoints());
  return out;
}

/// Majority label among neighbours; ties go to the lowest class.
inline std::int64_t knn_vote(const std::vector<std::size_t>& ids, const Labels& labels, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (auto j : ids) ++counts[static_cast<std::size_t>(labels[j])];
  std::size_t best = 0;
  for (std::size_t c = 1; c < num_classes; ++c)
    if (counts[c] > counts[best]) best = c;
  return static_cast<std::int64_t>(best);
}

/// Smallest 1-based probe position whose leave-self-out k-NN vote matches the
/// label, or layers.size() + 1 if none does. Direction: up.
inline std::vector<int> prediction_depth(const std::vector<Matrix>& layers, const Labels& labels,
                                         std::size_t num_classes, std::size_t k = 25) {
  require(!layers.empty(), ErrorKind::kInvalidArgument, "prediction_depth: no probe layers");
  const std::size_t n = labels.size();
  const int sentinel = static_cast<int>(layers.size()) + 1;
  std::vector<int> depth(n, sentinel);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(static_cast<std::size_t>(layers[l].rows()) == n, ErrorKind::kDimMismatch,
            "prediction_depth: layer row count differs from labels");
    const NeighborIndex index(layers[l]);
    parallel_for(n, [&](std::size_t i) {
      if (depth[i] != sentinel) return;
      const auto nb = index.query(i, k);
      if (knn_vote(nb.ids, labels, num_classes) == labels[i]) depth[i] = static_cast<int>(l) + 1;
    });
  }
  return depth;
}

/// Population variance of each row. Direction: up.
inline std::vector<double> vog(const Matrix& grad_magnitudes) {
  std::vector<double> out(static_cast<std::size_t>(grad_magnitudes.rows()));
  for (Eigen::Index i = 0; i < grad_magnitudes.rows(); ++i) {
    const double m = grad_magnitudes.row(i).mean();
    out[static_cast<std::size_t>(i)] = (grad_magnitudes.row(i).array() - m).square().mean();
  }
  return out;
}

/// Shared-covariance Mahalanobis distance to the nearest class mean, with the
/// Gaussians fitted on `train_rows` (all rows when null). Direction: up.
inline std::vector<double> prototypicality(const Matrix& features, const Labels& labels, std::size_t num_classes,
                                           const std::vector<bool>* train_rows = nullptr, Shrinkage shrink = {}) {
  const ClassGaussians g(features, labels, num_classes, train_rows, false, shrink);
  std::vector<double> out(static_cast<std::size_t>(features.rows()));
  parallel_for(out.size(), [&](std::size_t i) {
    out[i] = g.nearest_mahalanobis(features.row(static_cast<Eigen::Index>(i)).transpose());
  });
  return out;
}

// ---------------------------------------------------------------------------
// Composite
// ---------------------------------------------------------------------------

struct MetricScores {
  std::string name;
  Direction direction = Direction::kUp;
  std::vector<double> raw;
};

struct HardnessProfile {
  std::vector<MetricScores> metrics;
  std::vector<std::vector<double>> normalized;  // per metric, hardness-oriented, in [0, 1]
  std::vector<bool> metric_degenerate;
  std::vector<double> composite;
  bool degenerate = false;  // every metric constant
};

/// Min-max normalizes each metric (inverting down-metrics) and averages.
inline HardnessProfile composite(std::vector<MetricScores> metrics) {
  require(!metrics.empty(), ErrorKind::kInvalidArgument, "composite: no metrics");
  const std::size_t n = metrics.front().raw.size();
  require(n >= 1, ErrorKind::kInvalidArgument, "composite: no samples");
  HardnessProfile prof;
  prof.composite.assign(n, 0.0);
  bool all_flat = true;
  for (const auto& m : metrics) {
    require(m.raw.size() == n, ErrorKind::kDimMismatch, "composite: metric '" + m.name + "' has wrong length");
    const auto [lo_it, hi_it] = std::minmax_element(m.raw.begin(), m.raw.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> v(n);
    const bool flat = !(hi > lo);
    for (std::size_t i = 0; i < n; ++i) {
      if (flat) {
        v[i] = 0.5;
        continue;
      }
      const double x = (m.raw[i] - lo) / (hi - lo);
      v[i] = m.direction == Direction::kUp ? x : 1.0 - x;
    }
    all_flat = all_flat && flat;
    for (std::size_t i = 0; i < n; ++i) prof.composite[i] += v[i];
    prof.normalized.push_back(std::move(v));
    prof.metric_degenerate.push_back(flat);
  }
  for (auto& c : prof.composite) c /= static_cast<double>(metrics.size());
  prof.degenerate = all_flat;
  prof.metrics = std::move(metrics);
  return prof;
}

template <typename T>
std::vector<double> as_doubles(const std::vector<T>& v) {
  return std::vector<double>(v.begin(), v.end());
}

struct Options {
  std::size_t depth_k = 25;
  Shrinkage shrink{};
};

/// Every estimator the run's telemetry supports, in a fixed order. Metrics
/// whose inputs are missing are skipped.
inline std::vector<MetricScores> metrics_for_run(const telemetry::Run& run, const Options& opt = {}) {
  std::vector<MetricScores> out;
  const auto correct = telemetry::correctness_matrix(run.trace, run.labels);
  out.push_back({"learning_speed", Direction::kDown, learning_speed(correct)});
  out.push_back({"forgetting", Direction::kUp, as_doubles(forgetting_score(correct))});
  out.push_back({"aum", Direction::kDown, aum(run.trace, run.labels)});
  out.push_back({"el2n", Direction::kUp, el2n(run.trace, run.labels)});
  if (!run.features.empty()) {
    std::vector<Matrix> layers;
    for (const auto& f : run.features) layers.push_back(f.values);
    out.push_back({"prediction_depth", Direction::kUp,
                   as_doubles(prediction_depth(layers, run.labels, run.num_classes(), opt.depth_k))});
  }
  if (run.grad_magnitudes) out.push_back({"vog", Direction::kUp, vog(*run.grad_magnitudes)});
  if (!run.features.empty()) {
    const std::vector<bool>* rows = run.train_split ? &*run.train_split : nullptr;
    out.push_back({"prototypicality", Direction::kUp,
                   prototypicality(run.features.back().values, run.labels, run.num_classes(), rows, opt.shrink)});
  }
  return out;
}

}  // namespace sbdiag::hardness

#endif  // SBDIAG_HARDNESS_HPP
