#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "sbdiag/hardness.hpp"
#include "sbdiag/synth.hpp"
#include "test_util.hpp"

namespace sbdiag::synth {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Manifold, DeterministicAndOfExactRank) {
  const Matrix a = gen_manifold(3, 12, 500, 0.0, 7), b = gen_manifold(3, 12, 500, 0.0, 7);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, gen_manifold(3, 12, 500, 0.0, 8));
  const Matrix c = a.rowwise() - a.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(c);
  const Vector s = svd.singularValues();
  EXPECT_GT(s(2), 1.0);
  EXPECT_LT(s(3), 1e-9 * s(0));
}

TEST(Manifold, OrthonormalMapPreservesDistances) {
  Rng rng(1);
  const Matrix q = orthonormal_map(9, 4, rng);
  EXPECT_LT((q.transpose() * q - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ParetoRatios, AtLeastOneAndTailMatchesShape) {
  const auto mu = gen_pareto_ratios(2.0, 100000, 3);
  double above = 0.0;
  for (double m : mu) {
    ASSERT_GE(m, 1.0);
    above += m > 2.0 ? 1.0 : 0.0;
  }
  EXPECT_NEAR(above / 1e5, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / 1e5));
}

TEST(TrainingDynamics, NoFlipsFollowsPlan) {
  Rng rng(4);
  const std::size_t n = 300, t = 10;
  std::vector<std::size_t> learn(n);
  for (auto& l : learn) l = rng.below(t + 1);
  const auto d = gen_training_dynamics(n, t, learn, 0.0, 3, 5);
  const auto correct = telemetry::correctness_matrix(d.trace, d.labels);
  EXPECT_EQ(correct, d.planned_correct);
  for (int f : hardness::forgetting_score(correct)) EXPECT_EQ(f, 0);
  for (auto y : d.labels) {
    EXPECT_GE(y, 0);
    EXPECT_LT(y, 3);
  }
}

TEST(TrainingDynamics, LearnedFromStartHasUnitSpeed) {
  const auto d = gen_training_dynamics(50, 6, std::vector<std::size_t>(50, 0), 0.0, 2, 6);
  for (double s : hardness::learning_speed(telemetry::correctness_matrix(d.trace, d.labels))) EXPECT_EQ(s, 1.0);
}

TEST(TrainingDynamics, FlipRateMatches) {
  const std::size_t n = 2000, t = 10;
  const auto d = gen_training_dynamics(n, t, std::vector<std::size_t>(n, 5), 0.1, 2, 7);
  const auto correct = telemetry::correctness_matrix(d.trace, d.labels);
  const double flipped = static_cast<double>((correct.array() != d.planned_correct.array()).count());
  const double total = static_cast<double>(n * t);
  EXPECT_NEAR(flipped / total, 0.1, 4.0 * std::sqrt(0.09 / total));
}

TEST(CalibratedPredictor, RangeAndReliability) {
  const auto in = gen_calibrated_predictor(100000, [](double p) { return p; }, 8, 0.6, 0.9);
  double conf = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    ASSERT_GE(in.confidence[i], 0.6);
    ASSERT_LE(in.confidence[i], 0.9);
    conf += in.confidence[i];
    acc += in.correct[i] ? 1.0 : 0.0;
  }
  EXPECT_NEAR(acc / 1e5, conf / 1e5, 4.0 * std::sqrt(0.25 / 1e5));
}

TEST(SpectralImage, MeanSquareEqualsSumOfBandEnergies) {
  const std::vector<double> energies{0.3, 0.0, 1.2, 0.05, 0.7, 0.2, 0.0};
  const auto s = gen_spectral_image(128, 2, energies, 9);
  double total = 0.0;
  for (double e : energies) total += e;
  for (std::size_t c = 0; c < 2; ++c) {
    double ms = 0.0;
    for (std::size_t y = 0; y < 128; ++y)
      for (std::size_t x = 0; x < 128; ++x) ms += s.image.at(y, x, c) * s.image.at(y, x, c);
    EXPECT_NEAR(ms / (128.0 * 128.0), total, 1e-9);
  }
  ASSERT_EQ(s.tones.size(), 10u);
  const auto bands = perturb::octave_bands();
  for (const auto& tone : s.tones) {
    const double r = std::hypot(static_cast<double>(tone.fy), static_cast<double>(tone.fx));
    EXPECT_TRUE(bands[tone.band].contains(r));
    EXPECT_LT(std::labs(tone.fy), 64);
    EXPECT_LT(std::labs(tone.fx), 64);
  }
}

TEST(SpectralImage, BandAboveNyquistRejected) {
  std::vector<double> energies(7, 0.0);
  energies[6] = 1.0;
  EXPECT_EQ(testing::error_kind_of([&] { gen_spectral_image(32, 1, energies, 1); }), ErrorKind::kInvalidArgument);
}

TEST(GaussianClasses, MeansAndFarCluster) {
  GaussianClassesSpec spec;
  spec.train = 4000;
  spec.seed = 10;
  const auto g = gen_gaussian_classes(spec);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Vector sum = Vector::Zero(static_cast<Eigen::Index>(spec.dims));
    double count = 0.0;
    for (Eigen::Index i = 0; i < g.train.rows(); ++i)
      if (g.train_labels[static_cast<std::size_t>(i)] == static_cast<std::int64_t>(c)) {
        sum += g.train.row(i).transpose();
        count += 1.0;
      }
    EXPECT_LT((sum / count - g.means[c]).cwiseAbs().maxCoeff(), 4.0 / std::sqrt(count));
  }
  const Vector ood_mean = g.ood.colwise().mean().transpose();
  for (const auto& m : g.means) EXPECT_NEAR((ood_mean - m).norm(), std::hypot(50.0, 10.0), 1.0);
}

TEST(SmokeRun, LoadsAndIsByteDeterministic) {
  testing::TempDir a("smoke_a"), b("smoke_b");
  SmokeSpec spec;
  spec.samples = 60;
  spec.seed = 11;
  const auto pa = write_smoke_run(a.path(), spec);
  const auto pb = write_smoke_run(b.path(), spec);
  for (const auto& e : std::filesystem::directory_iterator(a.path()))
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / e.path().filename())) << e.path().filename();
  const auto run = telemetry::load_run(pa);
  EXPECT_EQ(run.num_samples(), 60u);
  EXPECT_EQ(run.trace.checkpoints(), spec.checkpoints);
  EXPECT_EQ(run.features.size(), spec.layers);
  EXPECT_TRUE(run.head.has_value());
  EXPECT_TRUE(run.sensitivity.has_value());
  EXPECT_EQ(run.sensitivity->manipulations.size(), perturb::standard_manipulations().size());
  EXPECT_TRUE(run.masks.has_value());
  EXPECT_TRUE(run.folds_index.has_value());
}

}  // namespace
}  // namespace sbdiag::synth
