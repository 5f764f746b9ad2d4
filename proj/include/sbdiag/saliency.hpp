#ifndef SBDIAG_SALIENCY_HPP
#define SBDIAG_SALIENCY_HPP

// Grad-CAM++ maps from activations and first-order class-score gradients, and
// the concordance of their top-percentile regions with a reference mask.

#include <vector>

#include "sbdiag/common.hpp"

namespace sbdiag::saliency {

/// K maps of h x w, row-major per map.
struct ActivationGrad {
  std::size_t maps = 0, height = 0, width = 0;
  std::vector<double> activations;
  std::vector<double> gradients;

  std::size_t plane() const { return height * width; }

  void validate() const {
    const std::size_t n = maps * plane();
    require(maps >= 1 && height >= 1 && width >= 1, ErrorKind::kInvalidArgument, "gradcam: empty maps");
    require(activations.size() == n && gradients.size() == n, ErrorKind::kDimMismatch,
            "gradcam: activation/gradient shapes differ");
    for (std::size_t i = 0; i < n; ++i)
      require(std::isfinite(activations[i]) && std::isfinite(gradients[i]), ErrorKind::kNonFinite,
              "gradcam: non-finite activation or gradient");
  }
};

struct SaliencyMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;  // in [0, 1]
  bool flat = false;           // no spatial variation; treated as no attention
};

/// Per-map weights w_k = sum_ij alpha_k(i,j) ReLU(G_k(i,j)) with
/// alpha = G^2 / (2 G^2 + (sum_ab A_k) G^3), and alpha = 0 where the
/// denominator vanishes.
inline std::vector<double> gradcam_pp_weights(const ActivationGrad& ag) {
  std::vector<double> w(ag.maps, 0.0);
  const std::size_t p = ag.plane();
  for (std::size_t k = 0; k < ag.maps; ++k) {
    const double* a = ag.activations.data() + k * p;
    const double* g = ag.gradients.data() + k * p;
    double sum_a = 0.0;
    for (std::size_t i = 0; i < p; ++i) sum_a += a[i];
    for (std::size_t i = 0; i < p; ++i) {
      const double g2 = g[i] * g[i];
      const double denom = 2.0 * g2 + sum_a * g2 * g[i];
      const double alpha = denom != 0.0 ? g2 / denom : 0.0;
      w[k] += alpha * std::max(g[i], 0.0);
    }
  }
  return w;
}

/// ReLU(sum_k w_k A_k) at the feature-map resolution.
inline std::vector<double> gradcam_pp_raw(const ActivationGrad& ag) {
  ag.validate();
  const auto w = gradcam_pp_weights(ag);
  const std::size_t p = ag.plane();
  std::vector<double> cam(p, 0.0);
  for (std::size_t k = 0; k < ag.maps; ++k)
    for (std::size_t i = 0; i < p; ++i) cam[i] += w[k] * ag.activations[k * p + i];
  for (auto& v : cam) v = std::max(v, 0.0);
  return cam;
}

/// Bilinear resize with half-pixel centres and edge clamping.
inline std::vector<double> bilinear_resize(const std::vector<double>& src, std::size_t h, std::size_t w,
                                           std::size_t out_h, std::size_t out_w) {
  require(src.size() == h * w && h >= 1 && w >= 1 && out_h >= 1 && out_w >= 1, ErrorKind::kDimMismatch,
          "bilinear_resize: shape");
  auto coord = [](std::size_t dst, std::size_t in, std::size_t out, std::size_t& i0, std::size_t& i1, double& t) {
    double x = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(x));
    i1 = std::min(i0 + 1, in - 1);
    t = x - static_cast<double>(i0);
  };
  std::vector<double> out(out_h * out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, h, out_h, y0, y1, ty);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, w, out_w, x0, x1, tx);
      const double top = (1.0 - tx) * src[y0 * w + x0] + tx * src[y0 * w + x1];
      const double bot = (1.0 - tx) * src[y1 * w + x0] + tx * src[y1 * w + x1];
      out[y * out_w + x] = (1.0 - ty) * top + ty * bot;
    }
  }
  return out;
}

/// Min-max normalizes in place; returns false (and zeroes the map) when flat.
inline bool min_max_normalize(std::vector<double>& v) {
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(v.begin(), v.end(), 0.0);
    return false;
  }
  for (auto& x : v) x = (x - lo) / (hi - lo);
  return true;
}

inline SaliencyMap gradcam_pp(const ActivationGrad& ag, std::size_t out_h, std::size_t out_w) {
  SaliencyMap m{out_h, out_w, bilinear_resize(gradcam_pp_raw(ag), ag.height, ag.width, out_h, out_w), false};
  m.flat = !min_max_normalize(m.values);
  return m;
}

// ---------------------------------------------------------------------------
// Concordance
// ---------------------------------------------------------------------------

struct ConcordanceResult {
  double value = 0.0;
  std::vector<int> q;
  std::vector<bool> overlap;
};

/// Value at the nearest-rank q-th percentile: sorted[ceil(q M / 100) - 1].
inline double percentile_threshold(const std::vector<double>& sorted, int q) {
  const std::size_t m = sorted.size();
  auto idx = static_cast<std::size_t>(std::ceil(static_cast<double>(q) * static_cast<double>(m) / 100.0 - 1e-9));
  idx = std::clamp<std::size_t>(idx, 1, m) - 1;
  return sorted[idx];
}

/// Fraction of q in [q_min, q_max] for which the pixels strictly above the
/// q-th percentile (the argmax set at q = 100) touch the mask. Flat maps score 0.
inline ConcordanceResult concordance_score(const SaliencyMap& l, const std::vector<std::uint8_t>& mask, int q_min = 90,
                                           int q_max = 100) {
  require(mask.size() == l.values.size() && mask.size() == l.height * l.width, ErrorKind::kDimMismatch,
          "concordance: map and mask shapes differ");
  require(std::any_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; }), ErrorKind::kInvalidArgument,
          "concordance: empty mask");
  require(q_min >= 0 && q_min <= q_max && q_max <= 100, ErrorKind::kInvalidArgument, "concordance: q range");
  ConcordanceResult r;
  std::vector<double> sorted = l.values;
  std::sort(sorted.begin(), sorted.end());
  const double top = sorted.back();
  int hits = 0;
  for (int q = q_min; q <= q_max; ++q) {
    bool hit = false;
    if (!l.flat) {
      const double t = percentile_threshold(sorted, q);
      for (std::size_t i = 0; i < mask.size() && !hit; ++i)
        hit = mask[i] != 0 && (q == 100 ? l.values[i] == top : l.values[i] > t);
    }
    r.q.push_back(q);
    r.overlap.push_back(hit);
    hits += hit ? 1 : 0;
  }
  r.value = static_cast<double>(hits) / static_cast<double>(r.q.size());
  return r;
}

}  // namespace sbdiag::saliency

#endif  // SBDIAG_SALIENCY_HPP
