#include <complex>

#include <gtest/gtest.h>

#include "sbdiag/perturb.hpp"
#include "test_util.hpp"

namespace sbdiag::perturb {
namespace {

using sbdiag::testing::error_kind_of;

Image noise_image(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Image im(n, n, c);
  for (auto& v : im.data) v = rng.normal();
  return im;
}

Image cosine_image(std::size_t n, long fy, long fx, double phase) {
  Image im(n, n, 1);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      im.at(y, x, 0) = std::cos(2.0 * M_PI * static_cast<double>(fy * static_cast<long>(y) + fx * static_cast<long>(x)) /
                                    static_cast<double>(n) +
                                phase);
  return im;
}

double energy(const Image& im) {
  double s = 0.0;
  for (double v : im.data) s += v * v;
  return s;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

TEST(FrequencyBand, Edges) {
  const auto b = octave_bands();
  ASSERT_EQ(b.size(), 7u);
  EXPECT_NEAR(b[4].lo(), 28.0 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(b[4].hi(), 28.0 * std::sqrt(2.0), 1e-12);
  for (std::size_t i = 0; i + 1 < b.size(); ++i) EXPECT_NEAR(b[i].hi(), b[i + 1].lo(), 1e-12);
  EXPECT_FALSE(b[0].contains(0.0));
}

TEST(SuppressBand, RemovesToneInItsBand) {
  const auto im = cosine_image(64, 0, 28, 0.3);
  const auto out = suppress_band(im, {28.0});
  double m = 0.0;
  for (double v : out.data) m = std::max(m, std::abs(v));
  EXPECT_LT(m, 1e-6);
}

TEST(SuppressBand, DiagonalToneRemoved) {
  const auto im = cosine_image(64, 20, -20, 1.1);  // r = 28.28
  const auto out = suppress_band(im, {28.0});
  double m = 0.0;
  for (double v : out.data) m = std::max(m, std::abs(v));
  EXPECT_LT(m, 1e-6);
}

TEST(SuppressBand, ToneOutsideBandUntouched) {
  const auto im = cosine_image(64, 0, 28, 0.3);
  EXPECT_LT(max_abs_diff(suppress_band(im, {112.0}), im), 1e-6);
}

TEST(SuppressBand, DcNeverMasked) {
  Image im(32, 32, 2, 3.5);
  for (const auto& b : octave_bands()) EXPECT_LT(max_abs_diff(suppress_band(im, b), im), 1e-9);
}

TEST(SuppressBand, Idempotent) {
  const auto im = noise_image(32, 3, 5);
  for (const auto& b : octave_bands()) {
    const auto once = suppress_band(im, b);
    EXPECT_LT(max_abs_diff(suppress_band(once, b), once), 1e-6);
  }
}

// Naive 2-D DFT energy (Parseval-normalized) of coefficients with radial
// frequency in [lo, hi).
double naive_band_energy(const Image& im, double lo, double hi) {
  const std::size_t n = im.height;
  double e = 0.0;
  for (std::size_t ky = 0; ky < n; ++ky)
    for (std::size_t kx = 0; kx < n; ++kx) {
      const double fy = ky <= n / 2 ? static_cast<double>(ky) : static_cast<double>(ky) - static_cast<double>(n);
      const double fx = kx <= n / 2 ? static_cast<double>(kx) : static_cast<double>(kx) - static_cast<double>(n);
      const double r = std::hypot(fy, fx);
      if (!(r >= lo && r < hi) || r == 0.0) continue;
      std::complex<double> s = 0.0;
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x)
          s += im.at(y, x, 0) * std::polar(1.0, -2.0 * M_PI * static_cast<double>(ky * y + kx * x) / static_cast<double>(n));
      e += std::norm(s);
    }
  return e / static_cast<double>(n * n);
}

TEST(SuppressBand, WhiteNoiseEnergyTilesBands) {
  const auto im = noise_image(32, 1, 21);
  const auto bands = octave_bands();
  double removed = 0.0;
  for (const auto& b : bands) {
    const double r = energy(im) - energy(suppress_band(im, b));
    EXPECT_NEAR(r, naive_band_energy(im, b.lo(), b.hi()), 1e-6 * energy(im));
    removed += r;
  }
  const double tiled = naive_band_energy(im, bands.front().lo(), bands.back().hi());
  EXPECT_NEAR(removed, tiled, 1e-6 * energy(im));
}

TEST(SuppressBand, NonSquareRejected) {
  Image im(4, 8, 1);
  EXPECT_EQ(error_kind_of([&] { suppress_band(im, {7.0}); }), ErrorKind::kDimMismatch);
}

TEST(GridShuffle, PreservesPixelMultiset) {
  for (int alpha = 1; alpha <= 5; ++alpha) {
    const auto im = noise_image(30, 2, static_cast<std::uint64_t>(alpha));
    auto a = im.data, b = grid_shuffle(im, alpha, 99).data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(GridShuffle, ConstantImageUnchanged) {
  Image im(16, 16, 3, 0.7);
  for (int alpha = 1; alpha <= 5; ++alpha) EXPECT_EQ(grid_shuffle(im, alpha, 4).data, im.data);
}

TEST(GridShuffle, FourByFourMatchesHandAppliedPermutation) {
  Image im(4, 4, 1);
  for (std::size_t i = 0; i < 16; ++i) im.data[i] = static_cast<double>(i);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto perm = grid_shuffle_permutation(4, 4, 1, seed);
    ASSERT_EQ(perm.size(), 4u);
    const auto out = grid_shuffle(im, 1, seed);
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const std::size_t dst = (y / 2) * 2 + x / 2;
        const std::size_t src = perm[dst];
        const std::size_t sy = (src / 2) * 2 + y % 2, sx = (src % 2) * 2 + x % 2;
        EXPECT_EQ(out.at(y, x, 0), im.at(sy, sx, 0));
      }
  }
}

TEST(GridShuffle, RaggedCellsOnlySwapWithSameShape) {
  const auto cells = grid_cells(10, 10, 2);  // side 4: 4, 4, 2
  ASSERT_EQ(cells.size(), 9u);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto perm = grid_shuffle_permutation(10, 10, 2, seed);
    for (std::size_t d = 0; d < perm.size(); ++d) {
      EXPECT_EQ(cells[d].h, cells[perm[d]].h);
      EXPECT_EQ(cells[d].w, cells[perm[d]].w);
    }
  }
}

TEST(GridShuffle, DeterministicGivenSeed) {
  const auto im = noise_image(20, 1, 3);
  EXPECT_EQ(grid_shuffle(im, 3, 17).data, grid_shuffle(im, 3, 17).data);
}

TEST(GaussianBlur, ImpulseMatchesAnalyticKernel) {
  const std::size_t n = 21, mid = 10;
  Image im(n, n, 1);
  im.at(mid, mid, 0) = 1.0;
  const auto out = gaussian_blur_sigma(im, 1.0);
  double norm = 0.0;
  for (int i = -3; i <= 3; ++i) norm += std::exp(-0.5 * i * i);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const long dy = static_cast<long>(y) - static_cast<long>(mid), dx = static_cast<long>(x) - static_cast<long>(mid);
      const double expect = (std::labs(dy) <= 3 && std::labs(dx) <= 3)
                                ? std::exp(-0.5 * static_cast<double>(dy * dy + dx * dx)) / (norm * norm)
                                : 0.0;
      EXPECT_NEAR(out.at(y, x, 0), expect, 1e-6);
    }
}

TEST(GaussianBlur, ConstantImageUnchanged) {
  Image im(12, 12, 2, -1.25);
  EXPECT_LT(max_abs_diff(gaussian_blur(im, 5, 3), im), 1e-12);
}

TEST(GaussianBlur, PreservesChannelMeans) {
  for (int alpha = 1; alpha <= 5; ++alpha) {
    const auto im = noise_image(64, 3, 40 + static_cast<std::uint64_t>(alpha));
    const auto out = gaussian_blur(im, alpha, 8);
    for (std::size_t c = 0; c < 3; ++c) {
      double a = 0.0, b = 0.0;
      for (std::size_t p = 0; p < 64 * 64; ++p) {
        a += im.data[p * 3 + c];
        b += out.data[p * 3 + c];
      }
      EXPECT_NEAR(a / 4096.0, b / 4096.0, 1e-3);
    }
  }
}

TEST(GaussianBlur, SigmaInOpenInterval) {
  for (int alpha = 1; alpha <= 5; ++alpha)
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const double s = draw_blur_sigma(alpha, seed);
      EXPECT_GT(s, 0.5 * alpha);
      EXPECT_LT(s, 0.5 * (alpha + 1));
    }
  EXPECT_EQ(error_kind_of([] { draw_blur_sigma(6, 0); }), ErrorKind::kInvalidArgument);
}

TEST(ChannelJitter, ForcedOffsets) {
  const auto im = noise_image(8, 1, 2);
  const std::vector<double> zero{0.0}, shift{0.3};
  EXPECT_EQ(add_channel_offsets(im, zero).data, im.data);
  const auto out = add_channel_offsets(im, shift);
  for (std::size_t i = 0; i < im.data.size(); ++i) EXPECT_NEAR(out.data[i], im.data[i] + 0.3, 1e-15);
}

TEST(ChannelJitter, OffsetsWithinRangeAndGradientsPreserved) {
  const auto im = noise_image(8, 3, 6);
  for (int alpha = 1; alpha <= 5; ++alpha)
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (double o : draw_channel_offsets(3, alpha, seed)) {
        EXPECT_GE(o, -0.1 * alpha);
        EXPECT_LE(o, 0.1 * alpha);
      }
      const auto out = channel_jitter(im, alpha, seed);
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x + 1 < 8; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            EXPECT_NEAR(out.at(y, x + 1, c) - out.at(y, x, c), im.at(y, x + 1, c) - im.at(y, x, c), 1e-12);
    }
}

TEST(Catalogue, TwentyTwoManipulations) {
  const auto m = standard_manipulations();
  ASSERT_EQ(m.size(), 22u);
  EXPECT_EQ(m[0].name, "freq_1.75");
  EXPECT_EQ(m[6].name, "freq_112");
  EXPECT_EQ(m[7].name, "shape_a1");
  EXPECT_EQ(m[21].name, "color_a5");
}

TEST(Catalogue, ApplyIsDeterministicAndOrderIndependent) {
  ImageStack s;
  for (int i = 0; i < 5; ++i) s.images.push_back(noise_image(16, 3, 100 + static_cast<std::uint64_t>(i)));
  const auto m = standard_manipulations();
  set_num_threads(1);
  const auto a = apply(s, m[12], 12, 77);
  set_num_threads(4);
  const auto b = apply(s, m[12], 12, 77);
  set_num_threads(1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(a.images[i].data, b.images[i].data);
    EXPECT_EQ(a.images[i].data, apply(s.images[i], m[12], manipulation_seed(77, i, 12)).data);
  }
}

double js_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    if (p[i] != 0.0) kl_p += p[i] * (std::log(p[i]) - std::log(m));
    if (q[i] != 0.0) kl_q += q[i] * (std::log(q[i]) - std::log(m));
  }
  return (kl_p + kl_q) / 2.0;
}

TEST(JsDivergence, HandCases) {
  const std::vector<double> a{0.5, 0.5}, b{0.9, 0.1}, e0{1.0, 0.0}, e1{0.0, 1.0};
  EXPECT_EQ(js_divergence(a, a), 0.0);
  EXPECT_NEAR(js_divergence(e0, e1), std::log(2.0), 1e-15);
  EXPECT_NEAR(js_divergence(a, b), js_oracle(a, b), 1e-15);
}

TEST(JsDivergence, SymmetricBoundedNonnegative) {
  Rng rng(31);
  for (int t = 0; t < 500; ++t) {
    const std::size_t c = 2 + rng.below(6);
    std::vector<double> p(c), q(c);
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      p[i] = rng.bernoulli(0.2) ? 0.0 : rng.uniform();
      q[i] = rng.uniform();
      sp += p[i];
      sq += q[i];
    }
    if (sp == 0.0) continue;
    for (auto& v : p) v /= sp;
    for (auto& v : q) v /= sq;
    const double d = js_divergence(p, q);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, std::log(2.0));
    EXPECT_NEAR(d, js_divergence(q, p), 1e-15);
    EXPECT_NEAR(d, js_oracle(p, q), 1e-12);
  }
}

TEST(JsDivergence, RejectsNonDistribution) {
  const std::vector<double> p{0.5, 0.6}, q{0.5, 0.5};
  EXPECT_EQ(error_kind_of([&] { js_divergence(p, q); }), ErrorKind::kInvalidArgument);
}

PerturbedSoftmax make(const std::string& name, Cue cue, int sev, const Matrix& s) { return {name, cue, sev, s}; }

TEST(SensitivityProfile, UnchangedPredictionsAreDegenerateUniform) {
  Matrix clean(3, 2);
  clean << 0.2, 0.8, 0.5, 0.5, 0.9, 0.1;
  std::vector<PerturbedSoftmax> p;
  for (const auto& m : standard_manipulations()) p.push_back(make(m.name, m.cue, m.severity, clean));
  const auto prof = sensitivity_profile(clean, p);
  EXPECT_TRUE(prof.frequency_degenerate);
  EXPECT_TRUE(prof.hvs_degenerate);
  for (const auto& m : prof.manipulations) {
    EXPECT_EQ(m.mean_djs, 0.0);
    EXPECT_NEAR(m.share, m.cue == Cue::kFrequency ? 1.0 / 7.0 : 1.0 / 15.0, 1e-12);
  }
  for (const auto& c : prof.cues) EXPECT_NEAR(c.share, 1.0 / 3.0, 1e-12);
}

TEST(SensitivityProfile, SingleChangedManipulationTakesFullShare) {
  Matrix clean(2, 2), moved(2, 2);
  clean << 0.5, 0.5, 0.7, 0.3;
  moved << 0.1, 0.9, 0.7, 0.3;
  std::vector<PerturbedSoftmax> p{make("texture_a1", Cue::kTexture, 1, clean), make("texture_a2", Cue::kTexture, 2, moved),
                                  make("color_a1", Cue::kColor, 1, clean)};
  const auto prof = sensitivity_profile(clean, p);
  EXPECT_FALSE(prof.hvs_degenerate);
  EXPECT_DOUBLE_EQ(prof.manipulations[1].share, 1.0);
  EXPECT_DOUBLE_EQ(prof.manipulations[0].share, 0.0);
}

TEST(SensitivityProfile, HandBuiltFixture) {
  // Row divergences by construction: each perturbed row is either the clean
  // row or the swapped one-hot, whose divergence is ln 2.
  Matrix clean(4, 2);
  clean << 1, 0, 1, 0, 0, 1, 0, 1;
  auto flip = [&](std::vector<int> rows) {
    Matrix m = clean;
    for (int r : rows) m.row(r) = clean.row(r).reverse();
    return m;
  };
  std::vector<PerturbedSoftmax> p{make("freq_7", Cue::kFrequency, 0, flip({0})),
                                  make("shape_a1", Cue::kShape, 1, flip({0, 1})),
                                  make("shape_a2", Cue::kShape, 2, flip({0, 1, 2})),
                                  make("color_a1", Cue::kColor, 1, flip({3}))};
  const auto prof = sensitivity_profile(clean, p);
  const double l2 = std::log(2.0);
  EXPECT_NEAR(prof.manipulations[0].mean_djs, l2 / 4.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[1].mean_djs, l2 / 2.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[2].mean_djs, 3.0 * l2 / 4.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[3].mean_djs, l2 / 4.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[0].share, 1.0, 1e-12);
  // HVS total 6/4 ln2: shares 2/6, 3/6, 1/6.
  EXPECT_NEAR(prof.manipulations[1].share, 2.0 / 6.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[2].share, 3.0 / 6.0, 1e-12);
  EXPECT_NEAR(prof.manipulations[3].share, 1.0 / 6.0, 1e-12);
  ASSERT_EQ(prof.cues.size(), 2u);
  EXPECT_EQ(prof.cues[0].cue, Cue::kShape);
  EXPECT_NEAR(prof.cues[0].share, 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(prof.cues[1].share, 1.0 / 6.0, 1e-12);
}

TEST(SensitivityProfile, SharesSumToOnePerAxis) {
  Rng rng(8);
  Matrix clean(20, 3);
  auto random_softmax = [&] {
    Matrix m(20, 3);
    for (Eigen::Index i = 0; i < 20; ++i) {
      std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
      const auto p = softmax(z);
      for (int c = 0; c < 3; ++c) m(i, c) = p[static_cast<std::size_t>(c)];
    }
    return m;
  };
  clean = random_softmax();
  std::vector<PerturbedSoftmax> p;
  for (const auto& m : standard_manipulations()) p.push_back(make(m.name, m.cue, m.severity, random_softmax()));
  const auto prof = sensitivity_profile(clean, p);
  double f = 0.0, h = 0.0, c = 0.0;
  for (const auto& m : prof.manipulations) {
    EXPECT_GE(m.mean_djs, 0.0);
    EXPECT_LE(m.mean_djs, std::log(2.0));
    (m.cue == Cue::kFrequency ? f : h) += m.share;
  }
  for (const auto& cs : prof.cues) c += cs.share;
  EXPECT_NEAR(f, 1.0, 1e-9);
  EXPECT_NEAR(h, 1.0, 1e-9);
  EXPECT_NEAR(c, 1.0, 1e-9);
}

TEST(SensitivityProfile, ShapeMismatch) {
  Matrix clean = Matrix::Constant(2, 2, 0.5);
  std::vector<PerturbedSoftmax> p{make("x", Cue::kShape, 1, Matrix::Constant(3, 2, 0.5))};
  EXPECT_EQ(error_kind_of([&] { sensitivity_profile(clean, p); }), ErrorKind::kDimMismatch);
}

}  // namespace
}  // namespace sbdiag::perturb
