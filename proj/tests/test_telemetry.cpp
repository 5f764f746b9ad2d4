#include <fstream>

#include <gtest/gtest.h>

#include "sbdiag/telemetry.hpp"
#include "test_util.hpp"

namespace sbdiag::telemetry {
namespace {

using sbdiag::testing::error_kind_of;
using sbdiag::testing::TempDir;

// Minimal run: N samples, C = 2, T logit files.
json write_minimal_run(const fs::path& dir, std::size_t n, std::size_t t, std::size_t listed) {
  Rng rng(5);
  std::vector<std::int64_t> labels(n);
  for (auto& y : labels) y = static_cast<std::int64_t>(rng.below(2));
  write_tensor(dir / "labels.spt", TensorFile::from_i64({n}, labels));
  json logits = json::array();
  for (std::size_t c = 0; c < t; ++c) {
    std::vector<double> v(n * 2);
    for (auto& x : v) x = rng.normal();
    const std::string f = "z" + std::to_string(c) + ".spt";
    write_tensor(dir / f, TensorFile::from_f32({n, 2}, v));
    if (c < listed) logits.push_back(f);
  }
  return {{"run_id", "r"},      {"num_samples", n}, {"num_classes", 2},        {"checkpoints", t},
          {"checkpoint_stride", 100}, {"labels", "labels.spt"}, {"logits", logits}, {"class_prior", {0.5, 0.5}}};
}

fs::path save(const fs::path& dir, const json& j) {
  const auto p = dir / "manifest.json";
  std::ofstream(p) << j.dump();
  return p;
}

TEST(LoadRun, ConsistentManifestLoads) {
  TempDir dir("load");
  const auto run = load_run(save(dir.path(), write_minimal_run(dir.path(), 100, 10, 10)));
  EXPECT_EQ(run.trace.checkpoints(), 10u);
  EXPECT_EQ(run.trace.samples(), 100u);
  EXPECT_EQ(run.trace.classes(), 2u);
  EXPECT_EQ(run.labels.size(), 100u);
}

TEST(LoadRun, CheckpointCountMismatchIsDimError) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 100, 10, 9);
  EXPECT_EQ(error_kind_of([&] { load_run(save(dir.path(), j)); }), ErrorKind::kDimMismatch);
}

TEST(LoadRun, NanPayloadIsNonFiniteError) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  std::vector<double> v(20, 0.0);
  v[7] = std::nan("");
  write_tensor(dir / "z1.spt", TensorFile::from_f32({10, 2}, v));
  try {
    load_run(save(dir.path(), j));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("z1.spt"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("logits"), std::string::npos);
  }
}

TEST(LoadRun, MissingManifestMessage) {
  try {
    load_run("/nonexistent/manifest.json");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingFile);
    EXPECT_EQ(std::string(e.what()), "manifest not found: /nonexistent/manifest.json");
  }
}

TEST(LoadRun, MissingReferencedFileNamesIt) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  j["labels"] = "absent.spt";
  try {
    load_run(save(dir.path(), j));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingFile);
    EXPECT_NE(std::string(e.what()).find("absent.spt"), std::string::npos);
  }
}

TEST(LoadRun, LabelOutOfRange) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  write_tensor(dir / "labels.spt", TensorFile::from_i64({10}, std::vector<std::int64_t>(10, 2)));
  EXPECT_EQ(error_kind_of([&] { load_run(save(dir.path(), j)); }), ErrorKind::kDimMismatch);
}

TEST(LoadRun, PriorMustSumToOne) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  j["class_prior"] = {0.5, 0.6};
  EXPECT_EQ(error_kind_of([&] { load_run(save(dir.path(), j)); }), ErrorKind::kDimMismatch);
}

TEST(LoadRun, FeaturesSortedByLayer) {
  TempDir dir("load");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  write_tensor(dir / "f3.spt", TensorFile::from_matrix(Matrix::Constant(10, 2, 3.0)));
  write_tensor(dir / "f1.spt", TensorFile::from_matrix(Matrix::Constant(10, 4, 1.0)));
  j["features"] = {{{"layer", 3}, {"file", "f3.spt"}}, {{"layer", 1}, {"file", "f1.spt"}}};
  const auto run = load_run(save(dir.path(), j));
  ASSERT_EQ(run.features.size(), 2u);
  EXPECT_EQ(run.features[0].layer, 1);
  EXPECT_EQ(run.features[0].values.cols(), 4);
  EXPECT_EQ(run.features[1].layer, 3);
}

TEST(ParseManifest, RejectsUnknownKey) {
  json j = {{"run_id", "r"}, {"num_samples", 1}, {"num_classes", 2}, {"checkpoints", 1}, {"checkpoint_stride", 1},
            {"labels", "l"}, {"logits", {"z"}},  {"class_prior", {0.5, 0.5}}, {"colour", 1}};
  EXPECT_EQ(error_kind_of([&] { parse_manifest(j); }), ErrorKind::kParse);
}

TEST(ParseManifest, RoundTripsThroughJson) {
  TempDir dir("manifest");
  auto j = write_minimal_run(dir.path(), 10, 2, 2);
  j["images"] = "im.spt";
  j["head"] = {{"weight", "w.spt"}, {"bias", "b.spt"}};
  const auto m = parse_manifest(j);
  EXPECT_EQ(manifest_to_json(parse_manifest(manifest_to_json(m))), manifest_to_json(m));
  EXPECT_EQ(*m.images, "im.spt");
  EXPECT_EQ(m.head->bias, "b.spt");
}

ImageStack random_stack(Rng& rng, std::size_t n, std::size_t h, std::vector<double> means, double sd) {
  ImageStack s;
  for (std::size_t i = 0; i < n; ++i) {
    Image im(h, h, means.size());
    for (std::size_t p = 0; p < h * h; ++p)
      for (std::size_t c = 0; c < means.size(); ++c) im.data[p * means.size() + c] = means[c] + sd * rng.normal();
    s.images.push_back(im);
  }
  return s;
}

// Independent two-pass moments of one channel.
std::pair<double, double> channel_moments(const ImageStack& s, std::size_t c) {
  double sum = 0.0, count = 0.0;
  for (const auto& im : s.images)
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) {
        sum += im.at(y, x, c);
        count += 1.0;
      }
  const double m = sum / count;
  double ss = 0.0;
  for (const auto& im : s.images)
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) ss += std::pow(im.at(y, x, c) - m, 2);
  return {m, ss / count};
}

TEST(Standardize, ChannelMeansFiveAndMinusThreeGoToZero) {
  Rng rng(3);
  const auto s = standardize(random_stack(rng, 6, 8, {5.0, -3.0}, 2.0));
  for (std::size_t c = 0; c < 2; ++c) {
    const auto [m, v] = channel_moments(s, c);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(Standardize, AlreadyStandardizedUnchanged) {
  Rng rng(4);
  const auto once = standardize(random_stack(rng, 4, 8, {1.0, 2.0, 3.0}, 0.5));
  const auto twice = standardize(once);
  for (std::size_t i = 0; i < once.size(); ++i)
    for (std::size_t p = 0; p < once.images[i].data.size(); ++p)
      EXPECT_NEAR(twice.images[i].data[p], once.images[i].data[p], 1e-6);
}

TEST(Standardize, InvariantToPositiveAffineRescaling) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_stack(rng, 3, 6, {rng.normal(), rng.normal()}, 1.0 + rng.uniform());
    ImageStack y = x;
    const double a[2] = {0.01 + 10.0 * rng.uniform(), 0.01 + 10.0 * rng.uniform()};
    const double b[2] = {10.0 * rng.normal(), 10.0 * rng.normal()};
    for (auto& im : y.images)
      for (std::size_t p = 0; p < im.height * im.width; ++p)
        for (std::size_t c = 0; c < 2; ++c) im.data[p * 2 + c] = a[c] * im.data[p * 2 + c] + b[c];
    const auto sx = standardize(x), sy = standardize(y);
    for (std::size_t i = 0; i < sx.size(); ++i)
      for (std::size_t p = 0; p < sx.images[i].data.size(); ++p)
        ASSERT_NEAR(sx.images[i].data[p], sy.images[i].data[p], 1e-5);
  }
}

TEST(Standardize, ZeroVarianceChannelIsDegenerate) {
  ImageStack s;
  s.images.push_back(Image(4, 4, 1, 2.0));
  EXPECT_EQ(error_kind_of([&] { standardize(s); }), ErrorKind::kDegenerate);
}

TEST(Correctness, HandCases) {
  PredictionTrace tr;
  Matrix z(2, 2);
  z << 2.0, 1.0, 1.0, 1.0;
  tr.logits.push_back(z);
  const auto c = correctness_matrix(tr, Labels{0, 1});
  EXPECT_TRUE(c(0, 0));
  EXPECT_FALSE(c(1, 0));
}

TEST(Correctness, MatchesNaiveOracleOnRandomInstances) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(12), classes = 2 + rng.below(4), t = 1 + rng.below(4);
    PredictionTrace tr;
    for (std::size_t k = 0; k < t; ++k) {
      Matrix z(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(classes));
      // Coarse integers so ties occur.
      for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<double>(rng.below(3));
      tr.logits.push_back(z);
    }
    Labels y(n);
    for (auto& v : y) v = static_cast<std::int64_t>(rng.below(classes));
    const auto got = correctness_matrix(tr, y);
    for (std::size_t k = 0; k < t; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bv = tr.logits[k](static_cast<Eigen::Index>(i), 0);
        for (std::size_t c = 0; c < classes; ++c) {
          const double v = tr.logits[k](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
          if (v > bv) {
            bv = v;
            best = c;
          }
        }
        ASSERT_EQ(got(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)),
                  static_cast<std::int64_t>(best) == y[i]);
      }
  }
}

TEST(ImageStackTensor, RoundTrip) {
  Rng rng(9);
  const auto s = random_stack(rng, 3, 4, {0.0, 1.0}, 1.0);
  const auto back = image_stack_from_tensor(image_stack_to_tensor(s));
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t p = 0; p < s.images[i].data.size(); ++p)
      EXPECT_FLOAT_EQ(back.images[i].data[p], s.images[i].data[p]);
}

}  // namespace
}  // namespace sbdiag::telemetry
