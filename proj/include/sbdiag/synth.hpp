#ifndef SBDIAG_SYNTH_HPP
#define SBDIAG_SYNTH_HPP

// Seeded synthetic fixtures with known ground truth, and a writer for a small
// but complete run directory.

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbdiag/common.hpp"
#include "sbdiag/image.hpp"
#include "sbdiag/perturb.hpp"
#include "sbdiag/telemetry.hpp"
#include "sbdiag/tensor_file.hpp"
#include "sbdiag/uncertainty.hpp"

namespace sbdiag::synth {

// Stream tags, one per generator, so adding a generator never shifts another.
inline constexpr std::uint64_t kManifoldStream = 1;
inline constexpr std::uint64_t kDynamicsStream = 2;
inline constexpr std::uint64_t kCalibrationStream = 3;
inline constexpr std::uint64_t kSpectralStream = 4;
inline constexpr std::uint64_t kGaussianStream = 5;
inline constexpr std::uint64_t kParetoStream = 6;
inline constexpr std::uint64_t kSmokeStream = 7;

/// Random D x d matrix with orthonormal columns.
inline Matrix orthonormal_map(std::size_t ambient, std::size_t intrinsic, Rng& rng) {
  Matrix g(static_cast<Eigen::Index>(ambient), static_cast<Eigen::Index>(intrinsic));
  for (Eigen::Index j = 0; j < g.cols(); ++j)
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
}

/// N points uniform on [0,1]^d, mapped into D dimensions by a seeded
/// orthonormal map, plus isotropic Gaussian noise of standard deviation `noise`.
inline Matrix gen_manifold(std::size_t d, std::size_t D, std::size_t n, double noise, std::uint64_t seed) {
  require(d >= 1 && d <= D, ErrorKind::kInvalidArgument, "gen_manifold: need 1 <= d <= D");
  Rng rng(derive_seed(seed, kManifoldStream, d, D, n));
  const Matrix q = orthonormal_map(D, d, rng);
  Matrix u(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j) u(i, j) = rng.uniform();
  Matrix x = u * q.transpose();
  if (noise > 0.0)
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) += noise * rng.normal();
  return x;
}

/// Ratios mu = r2 / r1 drawn from the Pareto law with shape d, the exact
/// distribution that TwoNN inverts.
inline std::vector<double> gen_pareto_ratios(double d, std::size_t n, std::uint64_t seed) {
  require(d > 0.0, ErrorKind::kInvalidArgument, "gen_pareto_ratios: shape must be positive");
  Rng rng(derive_seed(seed, kParetoStream, n));
  std::vector<double> mu(n);
  for (auto& m : mu) m = std::pow(rng.uniform_open(), -1.0 / d);
  return mu;
}

// ---------------------------------------------------------------------------
// Training dynamics
// ---------------------------------------------------------------------------

struct TrainingDynamics {
  telemetry::Labels labels;
  telemetry::PredictionTrace trace;
  Matrix grad_magnitudes;             // N x T
  std::vector<std::size_t> learn_times;  // checkpoint index where learning starts; T = never
  BoolMatrix planned_correct;         // before flips
};

/// Sample i is predicted correctly from checkpoint learn_times[i] onward, and
/// each checkpoint's outcome is flipped with probability flip_rate. The
/// predicted class carries margin 1 + 2t/T over the others. Gradient
/// magnitudes alternate around a level that grows with the learn time.
inline TrainingDynamics gen_training_dynamics(std::size_t n, std::size_t t, const std::vector<std::size_t>& learn_times,
                                              double flip_rate, std::size_t classes, std::uint64_t seed) {
  require(learn_times.size() == n, ErrorKind::kDimMismatch, "gen_training_dynamics: learn_times length");
  require(t >= 1 && classes >= 2, ErrorKind::kInvalidArgument, "gen_training_dynamics: need T >= 1, C >= 2");
  require(flip_rate >= 0.0 && flip_rate <= 1.0, ErrorKind::kInvalidArgument, "gen_training_dynamics: flip rate");
  Rng rng(derive_seed(seed, kDynamicsStream, n, t));
  TrainingDynamics out;
  out.learn_times = learn_times;
  out.labels.resize(n);
  for (auto& y : out.labels) y = static_cast<std::int64_t>(rng.below(classes));
  const auto rows = static_cast<Eigen::Index>(n), cols = static_cast<Eigen::Index>(classes);
  out.planned_correct.resize(rows, static_cast<Eigen::Index>(t));
  out.grad_magnitudes.resize(rows, static_cast<Eigen::Index>(t));
  for (std::size_t c = 0; c < t; ++c) out.trace.logits.emplace_back(Matrix::Zero(rows, cols));
  for (std::size_t i = 0; i < n; ++i) {
    require(learn_times[i] <= t, ErrorKind::kInvalidArgument, "gen_training_dynamics: learn time beyond T");
    const auto r = static_cast<Eigen::Index>(i);
    const auto y = static_cast<std::size_t>(out.labels[i]);
    const std::size_t wrong = (y + 1 + rng.below(classes - 1)) % classes;
    const double level = 0.1 + static_cast<double>(learn_times[i]) / static_cast<double>(t);
    for (std::size_t c = 0; c < t; ++c) {
      const bool planned = c >= learn_times[i];
      const bool correct = rng.bernoulli(flip_rate) ? !planned : planned;
      out.planned_correct(r, static_cast<Eigen::Index>(c)) = planned;
      const double margin = 1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(t);
      out.trace.logits[c](r, static_cast<Eigen::Index>(correct ? y : wrong)) = margin;
      out.grad_magnitudes(r, static_cast<Eigen::Index>(c)) =
          level * (c % 2 == 0 ? 1.5 : 0.5) + 0.01 * rng.normal();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Confidence uniform on [lo, hi], correct with probability reliability(p).
inline uncertainty::CalibrationInput gen_calibrated_predictor(std::size_t n,
                                                              const std::function<double(double)>& reliability,
                                                              std::uint64_t seed, double lo = 0.5, double hi = 1.0) {
  Rng rng(derive_seed(seed, kCalibrationStream, n));
  uncertainty::CalibrationInput in;
  in.confidence.resize(n);
  in.correct.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = rng.uniform(lo, hi);
    in.confidence[i] = p;
    in.correct[i] = rng.bernoulli(std::clamp(reliability(p), 0.0, 1.0));
  }
  return in;
}

// ---------------------------------------------------------------------------
// Spectral images
// ---------------------------------------------------------------------------

struct Tone {
  std::size_t band = 0;
  long fy = 0, fx = 0;  // integer cycles per image
  double amplitude = 0.0;
  double phase = 0.0;
};

struct SpectralImage {
  Image image;
  std::vector<Tone> tones;  // per channel, in channel-major order
};

/// Integer frequency inside `band` strictly below the Nyquist limit, with a
/// seeded orientation.
inline std::pair<long, long> pick_frequency(const perturb::FrequencyBand& band, std::size_t n, Rng& rng) {
  const long nyq = static_cast<long>(n / 2);
  auto ok = [&](long fy, long fx) {
    const double r = std::sqrt(static_cast<double>(fy * fy + fx * fx));
    return band.contains(r) && std::labs(fy) < nyq && std::labs(fx) < nyq;
  };
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double theta = rng.uniform(0.0, M_PI);
    const long fy = std::lround(band.center * std::sin(theta)), fx = std::lround(band.center * std::cos(theta));
    if (ok(fy, fx)) return {fy, fx};
  }
  for (long fy = 0; fy < nyq; ++fy)
    for (long fx = -nyq + 1; fx < nyq; ++fx)
      if (ok(fy, fx)) return {fy, fx};
  fail(ErrorKind::kInvalidArgument, "gen_spectral_image: band centred at " + std::to_string(band.center) +
                                        " has no frequency below Nyquist for H = " + std::to_string(n));
}

/// Sum over the octave bands of one random-phase cosine per band and channel
/// with mean-square energy band_energies[b]; zero-energy bands are omitted.
inline SpectralImage gen_spectral_image(std::size_t h, std::size_t channels, const std::vector<double>& band_energies,
                                        std::uint64_t seed) {
  const auto bands = perturb::octave_bands();
  require(band_energies.size() == bands.size(), ErrorKind::kDimMismatch, "gen_spectral_image: one energy per band");
  require(h >= 2 && channels >= 1, ErrorKind::kInvalidArgument, "gen_spectral_image: empty image");
  Rng rng(derive_seed(seed, kSpectralStream, h, channels));
  SpectralImage out{Image(h, h, channels), {}};
  const double two_pi = 2.0 * M_PI;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t b = 0; b < bands.size(); ++b) {
      require(band_energies[b] >= 0.0, ErrorKind::kInvalidArgument, "gen_spectral_image: negative energy");
      if (band_energies[b] == 0.0) continue;
      const auto [fy, fx] = pick_frequency(bands[b], h, rng);
      const Tone tone{b, fy, fx, std::sqrt(2.0 * band_energies[b]), rng.uniform(0.0, two_pi)};
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < h; ++x) {
          const double arg = two_pi * static_cast<double>(static_cast<long>(y) * fy + static_cast<long>(x) * fx) /
                             static_cast<double>(h);
          out.image.at(y, x, c) += tone.amplitude * std::cos(arg + tone.phase);
        }
      out.tones.push_back(tone);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian classes with a far cluster
// ---------------------------------------------------------------------------

struct GaussianClassesSpec {
  std::size_t classes = 2;
  std::size_t dims = 16;
  double separation = 10.0;    // class c has mean separation * e_c
  std::size_t train = 1000;
  std::size_t test = 500;
  std::size_t ood = 500;
  double ood_distance = 50.0;  // along a zero-sum direction outside the class span
  double head_scale = 0.1;     // W_c = head_scale * e_c
  std::uint64_t seed = 0;
};

struct GaussianClasses {
  Matrix train, test, ood;
  telemetry::Labels train_labels, test_labels;
  std::vector<Vector> means;
  telemetry::Head head;
};

inline GaussianClasses gen_gaussian_classes(const GaussianClassesSpec& s) {
  require(s.classes >= 2 && s.dims >= s.classes + 2, ErrorKind::kInvalidArgument,
          "gen_gaussian_classes: need dims >= classes + 2");
  Rng rng(derive_seed(s.seed, kGaussianStream, s.classes, s.dims));
  const auto d = static_cast<Eigen::Index>(s.dims);
  GaussianClasses out;
  for (std::size_t c = 0; c < s.classes; ++c) {
    Vector m = Vector::Zero(d);
    m(static_cast<Eigen::Index>(c)) = s.separation;
    out.means.push_back(m);
  }
  Vector far = Vector::Zero(d);
  far(static_cast<Eigen::Index>(s.classes)) = s.ood_distance / std::sqrt(2.0);
  far(static_cast<Eigen::Index>(s.classes + 1)) = -s.ood_distance / std::sqrt(2.0);

  auto draw = [&](std::size_t count, telemetry::Labels* labels, const Vector* centre) {
    Matrix x(static_cast<Eigen::Index>(count), d);
    for (std::size_t i = 0; i < count; ++i) {
      Vector mu;
      if (labels) {
        const auto y = static_cast<std::int64_t>(i % s.classes);
        labels->push_back(y);
        mu = out.means[static_cast<std::size_t>(y)];
      } else {
        mu = *centre;
      }
      for (Eigen::Index j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), j) = mu(j) + rng.normal();
    }
    return x;
  };
  out.train = draw(s.train, &out.train_labels, nullptr);
  out.test = draw(s.test, &out.test_labels, nullptr);
  out.ood = draw(s.ood, nullptr, &far);
  out.head.weight = Matrix::Zero(static_cast<Eigen::Index>(s.classes), d);
  for (std::size_t c = 0; c < s.classes; ++c)
    out.head.weight(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)) = s.head_scale;
  out.head.bias = Vector::Zero(static_cast<Eigen::Index>(s.classes));
  return out;
}

// ---------------------------------------------------------------------------
// Smoke run
// ---------------------------------------------------------------------------

struct SmokeSpec {
  std::size_t samples = 400;
  std::size_t checkpoints = 8;
  std::size_t tile = 32;
  std::size_t feature_dims = 16;
  std::size_t layers = 3;
  std::uint64_t seed = 0;
};

namespace detail {

/// Two-class readout used to produce clean and perturbed softmax outputs:
/// the logit gap grows with the red-minus-green mean and the mean absolute
/// horizontal gradient.
inline std::vector<double> toy_softmax(const Image& im) {
  double m0 = 0.0, m1 = 0.0, grad = 0.0;
  const std::size_t h = im.height, w = im.width;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      m0 += im.at(y, x, 0);
      m1 += im.at(y, x, std::min<std::size_t>(1, im.channels - 1));
      if (x + 1 < w) grad += std::abs(im.at(y, x + 1, 0) - im.at(y, x, 0));
    }
  const double px = static_cast<double>(h * w);
  const double gap = 4.0 * (m0 - m1) / px + 1.5 * grad / px - 1.0;
  return softmax(std::vector<double>{0.0, gap});
}

inline void write_json(const std::filesystem::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write " + p.string());
  out << j.dump(2) << '\n';
}

}  // namespace detail

/// Writes manifest.json plus every optional telemetry file into `dir` and
/// returns the manifest path.
inline std::filesystem::path write_smoke_run(const std::filesystem::path& dir, const SmokeSpec& spec) {
  namespace fs = std::filesystem;
  require(spec.samples >= 40 && spec.checkpoints >= 2 && spec.layers >= 1 && spec.tile >= 16, ErrorKind::kInvalidArgument,
          "smoke: spec too small");
  fs::create_directories(dir);
  const std::size_t n = spec.samples, t = spec.checkpoints, classes = 2, nd = spec.feature_dims;
  const std::uint64_t base = derive_seed(spec.seed, kSmokeStream);
  Rng rng(derive_seed(base, 0));

  telemetry::RunManifest m;
  m.run_id = "smoke-" + std::to_string(spec.seed);
  m.num_samples = n;
  m.num_classes = classes;
  m.checkpoints = t;
  m.checkpoint_stride = 100;
  m.positive_class = 1;

  // Dynamics and labels.
  std::vector<std::size_t> learn(n);
  for (auto& l : learn) l = rng.below(t + 1);
  const auto dyn = gen_training_dynamics(n, t, learn, 0.05, classes, derive_seed(base, 1));
  m.labels = "labels.spt";
  write_tensor(dir / m.labels, TensorFile::from_i64({n}, dyn.labels));
  for (std::size_t c = 0; c < t; ++c) {
    const std::string f = "logits_t" + std::to_string(c) + ".spt";
    write_tensor(dir / f, TensorFile::from_matrix(dyn.trace.logits[c]));
    m.logits.push_back(f);
  }
  std::vector<double> prior(classes, 0.0);
  for (auto y : dyn.labels) prior[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(n);
  m.class_prior = prior;
  m.grad_magnitudes = "grad_magnitudes.spt";
  write_tensor(dir / *m.grad_magnitudes, TensorFile::from_matrix(dyn.grad_magnitudes));

  // Features: class signal grows with depth.
  for (std::size_t l = 1; l <= spec.layers; ++l) {
    const double scale = 6.0 * static_cast<double>(l) / static_cast<double>(spec.layers);
    Matrix f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(nd));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < nd; ++j)
        f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            rng.normal() + (static_cast<std::int64_t>(j) == dyn.labels[i] ? scale : 0.0);
    const std::string file = "features_l" + std::to_string(l) + ".spt";
    write_tensor(dir / file, TensorFile::from_matrix(f));
    m.features.push_back({static_cast<int>(l), file});
  }
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(nd));
  for (Eigen::Index c = 0; c < w.rows(); ++c) w(c, c) = 0.5;
  m.head = telemetry::HeadRef{"head_weight.spt", "head_bias.spt"};
  write_tensor(dir / m.head->weight, TensorFile::from_matrix(w));
  write_tensor(dir / m.head->bias, TensorFile::from_f32({classes}, std::vector<double>(classes, 0.0)));

  std::vector<std::uint8_t> split(n);
  for (auto& s : split) s = rng.bernoulli(0.7) ? 1 : 0;
  m.train_split = "train_split.spt";
  write_tensor(dir / *m.train_split, TensorFile::from_u8({n}, split));

  // Images and sensitivity outputs of the toy readout.
  ImageStack images;
  std::vector<double> energies(perturb::band_centers().size());
  const double tile_nyq = static_cast<double>(spec.tile) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t b = 0; b < energies.size(); ++b)
      energies[b] = perturb::band_centers()[b] * std::sqrt(2.0) < tile_nyq ? rng.uniform(0.0, 0.2) : 0.0;
    auto im = gen_spectral_image(spec.tile, 3, energies, derive_seed(base, 2, i)).image;
    if (dyn.labels[i] == 1)
      for (std::size_t p = 0; p < spec.tile * spec.tile; ++p) im.data[p * 3] += 0.4;
    images.images.push_back(std::move(im));
  }
  m.images = "images.spt";
  write_tensor(dir / *m.images, telemetry::image_stack_to_tensor(images));

  auto softmax_matrix = [&](const ImageStack& s) {
    Matrix out(static_cast<Eigen::Index>(s.size()), static_cast<Eigen::Index>(classes));
    for (std::size_t i = 0; i < s.size(); ++i) {
      const auto p = detail::toy_softmax(s.images[i]);
      for (std::size_t c = 0; c < classes; ++c) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = p[c];
    }
    return out;
  };
  telemetry::SensitivityRef sens{"softmax_clean.spt", {}};
  write_tensor(dir / sens.clean, TensorFile::from_matrix(softmax_matrix(images)));
  const auto manips = perturb::standard_manipulations();
  for (std::size_t k = 0; k < manips.size(); ++k) {
    const auto perturbed = perturb::apply(images, manips[k], k, derive_seed(base, 3));
    const std::string f = "softmax_" + manips[k].name + ".spt";
    write_tensor(dir / f, TensorFile::from_matrix(softmax_matrix(perturbed)));
    sens.manipulations.push_back({manips[k].name, perturb::cue_name(manips[k].cue), manips[k].severity, f});
  }
  m.sensitivity = sens;

  // Weight snapshots and first-layer kernels.
  Vector wv(64);
  for (Eigen::Index j = 0; j < wv.size(); ++j) wv(j) = rng.normal();
  for (std::size_t c = 0; c < t; ++c) {
    const double step = 0.5 / static_cast<double>(c + 1);
    for (Eigen::Index j = 0; j < wv.size(); ++j) wv(j) += step * rng.normal();
    const std::string f = "weights_t" + std::to_string(c) + ".spt";
    write_tensor(dir / f, TensorFile::from_f32({64}, std::vector<double>(wv.data(), wv.data() + wv.size())));
    m.weights.push_back(f);
  }
  std::vector<double> kernels(8 * 3 * 3 * 3);
  for (auto& v : kernels) v = rng.normal();
  m.first_layer_kernels = "first_layer_kernels.spt";
  write_tensor(dir / *m.first_layer_kernels, TensorFile::from_f32({8, 3, 3, 3}, kernels));

  // Activation maps peaked near the mask on most positive samples.
  const std::size_t maps = 4, fh = 8, box = spec.tile / 4;
  std::vector<double> acts(n * maps * fh * fh), grads(acts.size());
  std::vector<std::uint8_t> masks(n * spec.tile * spec.tile, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t y0 = rng.below(spec.tile - box), x0 = rng.below(spec.tile - box);
    if (dyn.labels[i] == 1)
      for (std::size_t y = y0; y < y0 + box; ++y)
        for (std::size_t x = x0; x < x0 + box; ++x) masks[(i * spec.tile + y) * spec.tile + x] = 1;
    const bool aligned = dyn.labels[i] == 1 && rng.bernoulli(0.8);
    const double scale = static_cast<double>(fh) / static_cast<double>(spec.tile);
    const double cy = aligned ? (static_cast<double>(y0) + box / 2.0) * scale : rng.uniform(0.0, static_cast<double>(fh));
    const double cx = aligned ? (static_cast<double>(x0) + box / 2.0) * scale : rng.uniform(0.0, static_cast<double>(fh));
    for (std::size_t k = 0; k < maps; ++k)
      for (std::size_t y = 0; y < fh; ++y)
        for (std::size_t x = 0; x < fh; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy, dx = static_cast<double>(x) + 0.5 - cx;
          const std::size_t idx = ((i * maps + k) * fh + y) * fh + x;
          acts[idx] = std::exp(-(dy * dy + dx * dx) / 4.0) + 0.05 * std::abs(rng.normal());
          grads[idx] = 0.5 + 0.1 * rng.normal();
        }
  }
  m.activations = "activations.spt";
  m.gradients = "gradients.spt";
  m.masks = "masks.spt";
  write_tensor(dir / *m.activations, TensorFile::from_f32({n, maps, fh, fh}, acts));
  write_tensor(dir / *m.gradients, TensorFile::from_f32({n, maps, fh, fh}, grads));
  write_tensor(dir / *m.masks, TensorFile::from_u8({n, spec.tile, spec.tile}, masks));

  // Fold index with in/out correctness on small hard subsets.
  nlohmann::json folds = nlohmann::json::array();
  const std::size_t hard = std::max<std::size_t>(1, n / 20);
  for (int k = 0; k < 3; ++k) {
    auto ids = rng.permutation(n);
    ids.resize(hard);
    std::sort(ids.begin(), ids.end());
    std::vector<std::int64_t> hs(ids.begin(), ids.end());
    std::vector<std::uint8_t> cin(3 * hard), cout(3 * hard);
    for (auto& v : cin) v = rng.bernoulli(0.85) ? 1 : 0;
    for (auto& v : cout) v = rng.bernoulli(0.5) ? 1 : 0;
    const std::string s = std::to_string(k);
    write_tensor(dir / ("hard_" + s + ".spt"), TensorFile::from_i64({hard}, hs));
    write_tensor(dir / ("correct_in_" + s + ".spt"), TensorFile::from_u8({3, hard}, cin));
    write_tensor(dir / ("correct_out_" + s + ".spt"), TensorFile::from_u8({3, hard}, cout));
    folds.push_back({{"fold", k},
                     {"hard_subset", "hard_" + s + ".spt"},
                     {"correct_in", "correct_in_" + s + ".spt"},
                     {"correct_out", "correct_out_" + s + ".spt"},
                     {"test_accuracy_full", 0.9},
                     {"test_accuracy_pruned", 0.89}});
  }
  m.folds = "folds.json";
  detail::write_json(dir / *m.folds, {{"folds", folds}});

  const auto path = dir / "manifest.json";
  detail::write_json(path, telemetry::manifest_to_json(m));
  return path;
}

}  // namespace sbdiag::synth

#endif  // SBDIAG_SYNTH_HPP
