#ifndef SBDIAG_NEIGHBORS_HPP
#define SBDIAG_NEIGHBORS_HPP

#include <utility>
#include <vector>

#include "sbdiag/common.hpp"

namespace sbdiag {

/// Exact Euclidean k-nearest-neighbour search. Results are ordered by
/// (distance, id), so ties resolve toward the lower id.
class NeighborIndex {
 public:
  struct Neighbors {
    std::vector<std::size_t> ids;
    std::vector<double> distances;
  };

  explicit NeighborIndex(const Matrix& points) : points_(points) {}

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points_.cols()); }
  const RowMatrix& points() const { return points_; }

  /// k nearest neighbours of stored point i, never including i itself.
  Neighbors query(std::size_t i, std::size_t k) const {
    require(i < size(), ErrorKind::kInvalidArgument, "NeighborIndex: query id out of range");
    return search(points_.row(static_cast<Eigen::Index>(i)), k, i);
  }

  /// k nearest stored points to an external point.
  Neighbors query_point(const Vector& x, std::size_t k) const {
    require(static_cast<std::size_t>(x.size()) == dim(), ErrorKind::kDimMismatch, "NeighborIndex: query width");
    return search(x.transpose(), k, size());
  }

  std::vector<Neighbors> query_all(std::size_t k) const {
    std::vector<Neighbors> out(size());
    parallel_for(size(), [&](std::size_t i) { out[i] = query(i, k); });
    return out;
  }

 private:
  template <typename Row>
  Neighbors search(const Row& x, std::size_t k, std::size_t exclude) const {
    const std::size_t n = size();
    std::vector<std::pair<double, std::size_t>> cand;
    cand.reserve(n);
    const auto d = points_.cols();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == exclude) continue;
      const double* p = points_.data() + static_cast<Eigen::Index>(j) * d;
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const double diff = p[c] - x(c);
        s += diff * diff;
      }
      cand.emplace_back(s, j);
    }
    k = std::min(k, cand.size());
    if (k < cand.size())
      std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    std::sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k));
    Neighbors out;
    out.ids.reserve(k);
    out.distances.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
      out.ids.push_back(cand[j].second);
      out.distances.push_back(std::sqrt(cand[j].first));
    }
    return out;
  }

  RowMatrix points_;
};

}  // namespace sbdiag

#endif  // SBDIAG_NEIGHBORS_HPP
