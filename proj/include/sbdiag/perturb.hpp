#ifndef SBDIAG_PERTURB_HPP
#define SBDIAG_PERTURB_HPP

// Cue manipulations (octave-band suppression, grid shuffle, blur, channel
// jitter) and Jensen-Shannon sensitivity profiles over softmax outputs.

#include <complex>
#include <map>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "sbdiag/common.hpp"
#include "sbdiag/image.hpp"
#include "sbdiag/telemetry.hpp"

namespace sbdiag::perturb {

// ---------------------------------------------------------------------------
// Spatial-frequency bands
// ---------------------------------------------------------------------------

/// Octave band [center/sqrt2, center*sqrt2) in cycles per image.
struct FrequencyBand {
  double center = 0.0;

  double lo() const { return center / std::sqrt(2.0); }
  double hi() const { return center * std::sqrt(2.0); }
  bool contains(double r) const { return r > 0.0 && r >= lo() && r < hi(); }
};

inline const std::vector<double>& band_centers() {
  static const std::vector<double> c{1.75, 3.5, 7.0, 14.0, 28.0, 56.0, 112.0};
  return c;
}

inline std::vector<FrequencyBand> octave_bands() {
  std::vector<FrequencyBand> out;
  for (double c : band_centers()) out.push_back({c});
  return out;
}

/// Signed frequency (cycles/image) of DFT bin k for a length-n transform.
inline double signed_frequency(std::size_t k, std::size_t n) {
  return k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
}

inline double radial_frequency(std::size_t ky, std::size_t kx, std::size_t n) {
  const double fy = signed_frequency(ky, n), fx = signed_frequency(kx, n);
  return std::sqrt(fx * fx + fy * fy);
}

namespace detail {

using Spectrum = std::vector<std::complex<double>>;

// 2-D transform of one n x n plane by rows then columns.
inline Spectrum fft2(const Spectrum& in, std::size_t n, bool inverse) {
  Eigen::FFT<double> fft;
  Spectrum tmp(n * n), out(n * n);
  std::vector<std::complex<double>> line(n), res(n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) line[x] = in[y * n + x];
    if (inverse)
      fft.inv(res, line);
    else
      fft.fwd(res, line);
    for (std::size_t x = 0; x < n; ++x) tmp[y * n + x] = res[x];
  }
  for (std::size_t x = 0; x < n; ++x) {
    for (std::size_t y = 0; y < n; ++y) line[y] = tmp[y * n + x];
    if (inverse)
      fft.inv(res, line);
    else
      fft.fwd(res, line);
    for (std::size_t y = 0; y < n; ++y) out[y * n + x] = res[y];
  }
  return out;
}

}  // namespace detail

/// Zeroes every Fourier coefficient with radial frequency in the band (DC is
/// never touched) and returns the real part of the inverse transform.
inline Image suppress_band(const Image& image, const FrequencyBand& band) {
  require(image.square(), ErrorKind::kDimMismatch, "suppress_band: image must be square");
  const std::size_t n = image.height;
  Image out = image;
  detail::Spectrum plane(n * n);
  for (std::size_t c = 0; c < image.channels; ++c) {
    for (std::size_t p = 0; p < n * n; ++p) plane[p] = image.data[p * image.channels + c];
    auto spec = detail::fft2(plane, n, false);
    for (std::size_t ky = 0; ky < n; ++ky)
      for (std::size_t kx = 0; kx < n; ++kx)
        if (band.contains(radial_frequency(ky, kx, n))) spec[ky * n + kx] = 0.0;
    const auto back = detail::fft2(spec, n, true);
    for (std::size_t p = 0; p < n * n; ++p) out.data[p * image.channels + c] = back[p].real();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape: grid shuffle
// ---------------------------------------------------------------------------

struct GridCell {
  std::size_t y0, x0, h, w;
};

/// Cells of side ceil(H / (alpha + 1)); the last row/column of cells may be
/// narrower.
inline std::vector<GridCell> grid_cells(std::size_t height, std::size_t width, int alpha) {
  require(alpha >= 1, ErrorKind::kInvalidArgument, "grid_shuffle: alpha must be >= 1");
  const std::size_t g = static_cast<std::size_t>(alpha) + 1;
  const std::size_t ch = (height + g - 1) / g, cw = (width + g - 1) / g;
  std::vector<GridCell> cells;
  for (std::size_t y0 = 0; y0 < height; y0 += ch)
    for (std::size_t x0 = 0; x0 < width; x0 += cw)
      cells.push_back({y0, x0, std::min(ch, height - y0), std::min(cw, width - x0)});
  return cells;
}

/// perm[d] is the source cell placed at destination cell d. Cells are only
/// exchanged with cells of identical shape; when the side divides evenly this
/// is a uniform permutation of all cells.
inline std::vector<std::size_t> grid_shuffle_permutation(std::size_t height, std::size_t width, int alpha,
                                                         std::uint64_t seed) {
  const auto cells = grid_cells(height, width, alpha);
  std::vector<std::size_t> perm(cells.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < cells.size(); ++i) groups[{cells[i].h, cells[i].w}].push_back(i);
  Rng rng(seed);
  for (auto& [shape, members] : groups) {
    const auto p = rng.permutation(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) perm[members[i]] = members[p[i]];
  }
  return perm;
}

inline Image apply_cell_permutation(const Image& image, const std::vector<GridCell>& cells,
                                    const std::vector<std::size_t>& perm) {
  Image out = image;
  for (std::size_t d = 0; d < cells.size(); ++d) {
    const auto& dst = cells[d];
    const auto& src = cells[perm[d]];
    for (std::size_t y = 0; y < dst.h; ++y)
      for (std::size_t x = 0; x < dst.w; ++x)
        for (std::size_t c = 0; c < image.channels; ++c)
          out.at(dst.y0 + y, dst.x0 + x, c) = image.at(src.y0 + y, src.x0 + x, c);
  }
  return out;
}

inline Image grid_shuffle(const Image& image, int alpha, std::uint64_t seed) {
  const auto cells = grid_cells(image.height, image.width, alpha);
  return apply_cell_permutation(image, cells, grid_shuffle_permutation(image.height, image.width, alpha, seed));
}

// ---------------------------------------------------------------------------
// Texture: Gaussian blur
// ---------------------------------------------------------------------------

/// Normalized 1-D kernel truncated at ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  require(sigma > 0.0, ErrorKind::kInvalidArgument, "gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& v : k) v /= s;
  return k;
}

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
inline std::size_t reflect_index(long i, std::size_t n) {
  const long period = 2 * static_cast<long>(n);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - 1 - m);
}

inline Image gaussian_blur_sigma(const Image& image, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  Image tmp = image, out = image;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        double s = 0.0;
        for (long d = -r; d <= r; ++d)
          s += k[static_cast<std::size_t>(d + r)] * image.at(y, reflect_index(static_cast<long>(x) + d, image.width), c);
        tmp.at(y, x, c) = s;
      }
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) {
        double s = 0.0;
        for (long d = -r; d <= r; ++d)
          s += k[static_cast<std::size_t>(d + r)] * tmp.at(reflect_index(static_cast<long>(y) + d, image.height), x, c);
        out.at(y, x, c) = s;
      }
  return out;
}

/// sigma ~ U(0.5 alpha, 0.5 (alpha + 1)), open interval.
inline double draw_blur_sigma(int alpha, std::uint64_t seed) {
  require(alpha >= 1 && alpha <= 5, ErrorKind::kInvalidArgument, "gaussian_blur: alpha must be in 1..5");
  Rng rng(seed);
  const double lo = 0.5 * alpha, hi = 0.5 * (alpha + 1);
  double s;
  do {
    s = lo + (hi - lo) * rng.uniform_open();
  } while (s <= lo || s >= hi);
  return s;
}

inline Image gaussian_blur(const Image& image, int alpha, std::uint64_t seed) {
  return gaussian_blur_sigma(image, draw_blur_sigma(alpha, seed));
}

// ---------------------------------------------------------------------------
// Color: per-channel jitter
// ---------------------------------------------------------------------------

inline std::vector<double> draw_channel_offsets(std::size_t channels, int alpha, std::uint64_t seed) {
  require(alpha >= 1 && alpha <= 5, ErrorKind::kInvalidArgument, "channel_jitter: alpha must be in 1..5");
  Rng rng(seed);
  const double a = 0.1 * alpha;
  std::vector<double> off(channels);
  for (auto& o : off) o = rng.uniform(-a, a);
  return off;
}

inline Image add_channel_offsets(const Image& image, std::span<const double> offsets) {
  require(offsets.size() == image.channels, ErrorKind::kDimMismatch, "channel_jitter: one offset per channel");
  Image out = image;
  for (std::size_t p = 0; p < image.height * image.width; ++p)
    for (std::size_t c = 0; c < image.channels; ++c) out.data[p * image.channels + c] += offsets[c];
  return out;
}

inline Image channel_jitter(const Image& image, int alpha, std::uint64_t seed) {
  return add_channel_offsets(image, draw_channel_offsets(image.channels, alpha, seed));
}

// ---------------------------------------------------------------------------
// Manipulation catalogue
// ---------------------------------------------------------------------------

enum class Cue { kFrequency, kShape, kTexture, kColor };

inline const char* cue_name(Cue c) {
  switch (c) {
    case Cue::kFrequency: return "frequency";
    case Cue::kShape: return "shape";
    case Cue::kTexture: return "texture";
    case Cue::kColor: return "color";
  }
  return "";
}

inline Cue parse_cue(const std::string& s) {
  if (s == "frequency") return Cue::kFrequency;
  if (s == "shape") return Cue::kShape;
  if (s == "texture") return Cue::kTexture;
  if (s == "color") return Cue::kColor;
  fail(ErrorKind::kInvalidArgument, "unknown cue axis '" + s + "'");
}

struct Manipulation {
  std::string name;
  Cue cue;
  int severity = 0;         // 1..5 for HVS cues, 0 for frequency bands
  FrequencyBand band{0.0};  // frequency cue only
};

/// The 7 octave-band suppressions followed by shape/texture/color at
/// severities 1..5 (22 total).
inline std::vector<Manipulation> standard_manipulations() {
  std::vector<Manipulation> out;
  for (const auto& b : octave_bands()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "freq_%g", b.center);
    out.push_back({buf, Cue::kFrequency, 0, b});
  }
  for (Cue c : {Cue::kShape, Cue::kTexture, Cue::kColor})
    for (int a = 1; a <= 5; ++a) out.push_back({std::string(cue_name(c)) + "_a" + std::to_string(a), c, a, {0.0}});
  return out;
}

/// Seed for one (sample, manipulation) pair, independent of processing order.
inline std::uint64_t manipulation_seed(std::uint64_t master, std::size_t sample, std::size_t manipulation) {
  return derive_seed(master, 0x7065727475726Bull, sample, manipulation);
}

inline Image apply(const Image& image, const Manipulation& m, std::uint64_t seed) {
  switch (m.cue) {
    case Cue::kFrequency: return suppress_band(image, m.band);
    case Cue::kShape: return grid_shuffle(image, m.severity, seed);
    case Cue::kTexture: return gaussian_blur(image, m.severity, seed);
    case Cue::kColor: return channel_jitter(image, m.severity, seed);
  }
  return image;
}

inline ImageStack apply(const ImageStack& stack, const Manipulation& m, std::size_t manipulation_index,
                        std::uint64_t master_seed) {
  ImageStack out;
  out.images.resize(stack.size());
  parallel_for(stack.size(), [&](std::size_t i) {
    out.images[i] = apply(stack.images[i], m, manipulation_seed(master_seed, i, manipulation_index));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon sensitivity
// ---------------------------------------------------------------------------

inline void check_distribution(std::span<const double> p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::kInvalidArgument,
            std::string("js_divergence: ") + what + " has a negative or non-finite entry");
    s += v;
  }
  require(std::abs(s - 1.0) <= 1e-6, ErrorKind::kInvalidArgument,
          std::string("js_divergence: ") + what + " does not sum to 1");
}

/// 0.5 KL(P||M) + 0.5 KL(Q||M), M = (P+Q)/2, natural log, 0 log 0 = 0.
inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size() && !p.empty(), ErrorKind::kDimMismatch, "js_divergence: length mismatch");
  check_distribution(p, "P");
  check_distribution(q, "Q");
  double d = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) d += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) d += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::clamp(d, 0.0, std::log(2.0));
}

struct ManipulationScore {
  std::string name;
  Cue cue;
  int severity = 0;
  double mean_djs = 0.0;
  double share = 0.0;  // within its axis (frequency or HVS)
};

struct CueScore {
  Cue cue;
  double total_djs = 0.0;  // summed over severities
  double share = 0.0;
};

struct SensitivityProfile {
  std::vector<ManipulationScore> manipulations;
  std::vector<CueScore> cues;  // shape, texture, color
  bool frequency_degenerate = false;
  bool hvs_degenerate = false;
};

struct PerturbedSoftmax {
  std::string name;
  Cue cue;
  int severity = 0;
  Matrix softmax;
};

inline std::vector<PerturbedSoftmax> from_telemetry(const telemetry::SensitivityTelemetry& s) {
  std::vector<PerturbedSoftmax> out;
  for (const auto& m : s.manipulations) out.push_back({m.name, parse_cue(m.axis), m.severity, m.softmax});
  return out;
}

inline SensitivityProfile sensitivity_profile(const Matrix& clean, const std::vector<PerturbedSoftmax>& perturbed) {
  const auto n = clean.rows();
  require(n >= 1, ErrorKind::kInvalidArgument, "sensitivity_profile: no samples");
  SensitivityProfile prof;
  for (const auto& m : perturbed) {
    require(m.softmax.rows() == n && m.softmax.cols() == clean.cols(), ErrorKind::kDimMismatch,
            "sensitivity_profile: shape mismatch for " + m.name);
    std::vector<double> d(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
      const auto r = static_cast<Eigen::Index>(i);
      d[i] = js_divergence(row_copy(clean, r), row_copy(m.softmax, r));
    });
    prof.manipulations.push_back({m.name, m.cue, m.severity, mean(d), 0.0});
  }

  double freq_total = 0.0, hvs_total = 0.0;
  std::size_t freq_count = 0, hvs_count = 0;
  for (const auto& s : prof.manipulations) {
    if (s.cue == Cue::kFrequency) {
      freq_total += s.mean_djs;
      ++freq_count;
    } else {
      hvs_total += s.mean_djs;
      ++hvs_count;
    }
  }
  prof.frequency_degenerate = freq_count > 0 && freq_total <= 0.0;
  prof.hvs_degenerate = hvs_count > 0 && hvs_total <= 0.0;
  for (auto& s : prof.manipulations) {
    if (s.cue == Cue::kFrequency)
      s.share = prof.frequency_degenerate ? 1.0 / static_cast<double>(freq_count) : s.mean_djs / freq_total;
    else
      s.share = prof.hvs_degenerate ? 1.0 / static_cast<double>(hvs_count) : s.mean_djs / hvs_total;
  }
  if (hvs_count > 0) {
    for (Cue c : {Cue::kShape, Cue::kTexture, Cue::kColor}) {
      CueScore cs{c, 0.0, 0.0};
      bool present = false;
      for (const auto& s : prof.manipulations)
        if (s.cue == c) {
          cs.total_djs += s.mean_djs;
          present = true;
        }
      if (present) prof.cues.push_back(cs);
    }
    for (auto& cs : prof.cues)
      cs.share = prof.hvs_degenerate ? 1.0 / static_cast<double>(prof.cues.size()) : cs.total_djs / hvs_total;
  }
  return prof;
}

}  // namespace sbdiag::perturb

#endif  // SBDIAG_PERTURB_HPP
