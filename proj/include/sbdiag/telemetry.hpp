#ifndef SBDIAG_TELEMETRY_HPP
#define SBDIAG_TELEMETRY_HPP

// Telemetry data model: run manifests, validated loading, input
// standardization and per-checkpoint correctness.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbdiag/common.hpp"
#include "sbdiag/image.hpp"
#include "sbdiag/tensor_file.hpp"

namespace sbdiag::telemetry {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct FeatureRef {
  int layer = 0;
  std::string file;
};

struct ManipulationRef {
  std::string name;
  std::string axis;  // frequency | shape | texture | color
  int severity = 0;
  std::string file;
};

struct SensitivityRef {
  std::string clean;
  std::vector<ManipulationRef> manipulations;
};

struct HeadRef {
  std::string weight;
  std::string bias;
};

struct RunManifest {
  std::string run_id;
  std::size_t num_samples = 0;
  std::size_t num_classes = 0;
  std::size_t checkpoints = 0;
  std::size_t checkpoint_stride = 0;
  std::string labels;
  std::vector<std::string> logits;
  std::vector<FeatureRef> features;
  std::vector<double> class_prior;
  int positive_class = 1;
  std::optional<std::string> images;
  std::vector<std::string> weights;
  std::optional<std::string> activations;
  std::optional<std::string> gradients;
  std::optional<std::string> masks;
  std::optional<std::string> grad_magnitudes;
  std::optional<std::string> train_split;
  std::optional<HeadRef> head;
  std::optional<std::string> first_layer_kernels;
  std::optional<SensitivityRef> sensitivity;
  std::optional<std::string> folds;
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  require(obj.is_object(), ErrorKind::kParse, where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    require(allowed.count(it.key()) != 0, ErrorKind::kParse, where + ": unknown key '" + it.key() + "'");
}

template <typename T>
T get_required(const json& obj, const char* key, const std::string& where) {
  require(obj.contains(key), ErrorKind::kParse, where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, where + ": field '" + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> get_optional(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) return std::nullopt;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline RunManifest parse_manifest(const json& j) {
  using detail::get_optional;
  using detail::get_required;
  const std::string where = "manifest";
  detail::reject_unknown(j,
                         {"run_id", "num_samples", "num_classes", "checkpoints", "checkpoint_stride", "labels",
                          "logits", "features", "class_prior", "positive_class", "images", "weights",
                          "activations", "gradients", "masks", "grad_magnitudes", "train_split", "head",
                          "first_layer_kernels", "sensitivity", "folds"},
                         where);
  RunManifest m;
  m.run_id = get_required<std::string>(j, "run_id", where);
  m.num_samples = get_required<std::size_t>(j, "num_samples", where);
  m.num_classes = get_required<std::size_t>(j, "num_classes", where);
  m.checkpoints = get_required<std::size_t>(j, "checkpoints", where);
  m.checkpoint_stride = get_required<std::size_t>(j, "checkpoint_stride", where);
  m.labels = get_required<std::string>(j, "labels", where);
  m.logits = get_required<std::vector<std::string>>(j, "logits", where);
  m.class_prior = get_required<std::vector<double>>(j, "class_prior", where);
  m.positive_class = get_optional<int>(j, "positive_class", where).value_or(1);
  if (j.contains("features")) {
    require(j["features"].is_array(), ErrorKind::kParse, "manifest: 'features' must be an array");
    for (const auto& f : j["features"]) {
      detail::reject_unknown(f, {"layer", "file"}, "manifest.features[]");
      m.features.push_back({get_required<int>(f, "layer", "manifest.features[]"),
                            get_required<std::string>(f, "file", "manifest.features[]")});
    }
  }
  m.images = get_optional<std::string>(j, "images", where);
  m.weights = get_optional<std::vector<std::string>>(j, "weights", where).value_or(std::vector<std::string>{});
  m.activations = get_optional<std::string>(j, "activations", where);
  m.gradients = get_optional<std::string>(j, "gradients", where);
  m.masks = get_optional<std::string>(j, "masks", where);
  m.grad_magnitudes = get_optional<std::string>(j, "grad_magnitudes", where);
  m.train_split = get_optional<std::string>(j, "train_split", where);
  m.first_layer_kernels = get_optional<std::string>(j, "first_layer_kernels", where);
  m.folds = get_optional<std::string>(j, "folds", where);
  if (j.contains("head")) {
    detail::reject_unknown(j["head"], {"weight", "bias"}, "manifest.head");
    m.head = HeadRef{get_required<std::string>(j["head"], "weight", "manifest.head"),
                     get_required<std::string>(j["head"], "bias", "manifest.head")};
  }
  if (j.contains("sensitivity")) {
    const auto& s = j["sensitivity"];
    detail::reject_unknown(s, {"clean", "manipulations"}, "manifest.sensitivity");
    SensitivityRef ref;
    ref.clean = get_required<std::string>(s, "clean", "manifest.sensitivity");
    require(s.contains("manipulations") && s["manipulations"].is_array(), ErrorKind::kParse,
            "manifest.sensitivity: missing field 'manipulations'");
    for (const auto& e : s["manipulations"]) {
      const std::string w = "manifest.sensitivity.manipulations[]";
      detail::reject_unknown(e, {"name", "axis", "severity", "file"}, w);
      ManipulationRef r{get_required<std::string>(e, "name", w), get_required<std::string>(e, "axis", w),
                        get_optional<int>(e, "severity", w).value_or(0), get_required<std::string>(e, "file", w)};
      require(r.axis == "frequency" || r.axis == "shape" || r.axis == "texture" || r.axis == "color",
              ErrorKind::kParse, w + ": unknown axis '" + r.axis + "'");
      ref.manipulations.push_back(std::move(r));
    }
    m.sensitivity = std::move(ref);
  }
  return m;
}

inline json manifest_to_json(const RunManifest& m) {
  json j;
  j["run_id"] = m.run_id;
  j["num_samples"] = m.num_samples;
  j["num_classes"] = m.num_classes;
  j["checkpoints"] = m.checkpoints;
  j["checkpoint_stride"] = m.checkpoint_stride;
  j["labels"] = m.labels;
  j["logits"] = m.logits;
  j["class_prior"] = m.class_prior;
  j["positive_class"] = m.positive_class;
  json feats = json::array();
  for (const auto& f : m.features) feats.push_back({{"layer", f.layer}, {"file", f.file}});
  j["features"] = feats;
  if (m.images) j["images"] = *m.images;
  if (!m.weights.empty()) j["weights"] = m.weights;
  if (m.activations) j["activations"] = *m.activations;
  if (m.gradients) j["gradients"] = *m.gradients;
  if (m.masks) j["masks"] = *m.masks;
  if (m.grad_magnitudes) j["grad_magnitudes"] = *m.grad_magnitudes;
  if (m.train_split) j["train_split"] = *m.train_split;
  if (m.first_layer_kernels) j["first_layer_kernels"] = *m.first_layer_kernels;
  if (m.folds) j["folds"] = *m.folds;
  if (m.head) j["head"] = {{"weight", m.head->weight}, {"bias", m.head->bias}};
  if (m.sensitivity) {
    json manips = json::array();
    for (const auto& r : m.sensitivity->manipulations)
      manips.push_back({{"name", r.name}, {"axis", r.axis}, {"severity", r.severity}, {"file", r.file}});
    j["sensitivity"] = {{"clean", m.sensitivity->clean}, {"manipulations", manips}};
  }
  return j;
}

using Labels = std::vector<std::int64_t>;

/// Logits for each of the T checkpoints, each N x C.
struct PredictionTrace {
  std::vector<Matrix> logits;

  std::size_t checkpoints() const { return logits.size(); }
  std::size_t samples() const { return logits.empty() ? 0 : static_cast<std::size_t>(logits.front().rows()); }
  std::size_t classes() const { return logits.empty() ? 0 : static_cast<std::size_t>(logits.front().cols()); }
};

struct LayerFeatures {
  int layer = 0;
  Matrix values;  // N x n_l
};

struct Head {
  Matrix weight;  // C x n
  Vector bias;    // C
};

struct ManipulationOutput {
  std::string name;
  std::string axis;
  int severity = 0;
  Matrix softmax;
};

struct SensitivityTelemetry {
  Matrix clean;
  std::vector<ManipulationOutput> manipulations;
};

/// Activation maps and class-score gradients, stored N x K x h x w.
struct FeatureMapTelemetry {
  std::size_t maps = 0, height = 0, width = 0;
  std::vector<double> activations;
  std::vector<double> gradients;
};

struct MaskTelemetry {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> values;  // N x H x W
};

/// Immutable, validated view of one training run.
struct Run {
  RunManifest manifest;
  fs::path root;
  Labels labels;
  PredictionTrace trace;
  std::vector<LayerFeatures> features;  // ascending layer index
  std::optional<ImageStack> images;
  std::vector<Vector> weights;
  std::optional<FeatureMapTelemetry> feature_maps;
  std::optional<MaskTelemetry> masks;
  std::optional<Matrix> grad_magnitudes;  // N x T
  std::optional<std::vector<bool>> train_split;
  std::optional<Head> head;
  std::optional<TensorFile> first_layer_kernels;
  std::optional<SensitivityTelemetry> sensitivity;
  std::optional<fs::path> folds_index;

  std::size_t num_samples() const { return manifest.num_samples; }
  std::size_t num_classes() const { return manifest.num_classes; }
  bool is_train(std::size_t i) const { return !train_split || (*train_split)[i]; }
  bool is_test(std::size_t i) const { return !train_split || !(*train_split)[i]; }
};

namespace detail {

inline TensorFile load_checked(const fs::path& root, const std::string& rel, const std::string& field) {
  const fs::path p = root / rel;
  require(fs::exists(p), ErrorKind::kMissingFile, field + ": file not found: " + p.string());
  TensorFile t = read_tensor(p);
  require(t.all_finite(), ErrorKind::kNonFinite, field + ": non-finite payload in " + p.string());
  return t;
}

inline void expect_dims(const TensorFile& t, const std::vector<std::uint64_t>& dims, const std::string& field,
                        const std::string& file) {
  auto fmt = [](const std::vector<std::uint64_t>& d) {
    std::string s = "(";
    for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + std::to_string(d[i]);
    return s + ")";
  };
  require(t.dims() == dims, ErrorKind::kDimMismatch,
          field + ": dims " + fmt(t.dims()) + " in " + file + ", expected " + fmt(dims));
}

}  // namespace detail

inline ImageStack image_stack_from_tensor(const TensorFile& t) {
  require(t.rank() == 4, ErrorKind::kDimMismatch, "images: expected rank 4 (N,H,W,C)");
  const auto v = t.to_doubles();
  const std::size_t n = t.dim(0), h = t.dim(1), w = t.dim(2), c = t.dim(3);
  ImageStack stack;
  stack.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Image im(h, w, c);
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(i * h * w * c),
              v.begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w * c), im.data.begin());
    stack.images.push_back(std::move(im));
  }
  return stack;
}

inline TensorFile image_stack_to_tensor(const ImageStack& s) {
  s.check_consistent();
  const auto& f = s.images.front();
  std::vector<double> flat;
  flat.reserve(s.size() * f.data.size());
  for (const auto& im : s.images) flat.insert(flat.end(), im.data.begin(), im.data.end());
  return TensorFile::from_f32({s.size(), f.height, f.width, f.channels}, flat);
}

inline Run load_run(const fs::path& manifest_path) {
  require(fs::exists(manifest_path), ErrorKind::kMissingFile, "manifest not found: " + manifest_path.string());
  std::ifstream in(manifest_path);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "manifest not found: " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kParse, "manifest: invalid JSON in " + manifest_path.string());
  }

  Run run;
  run.manifest = parse_manifest(j);
  run.root = manifest_path.parent_path();
  const auto& m = run.manifest;
  const std::uint64_t n = m.num_samples, c = m.num_classes;
  require(n >= 1 && c >= 2, ErrorKind::kDimMismatch, "manifest: num_samples must be >= 1 and num_classes >= 2");
  require(m.checkpoints >= 1, ErrorKind::kDimMismatch, "manifest: checkpoints must be >= 1");
  require(m.logits.size() == m.checkpoints, ErrorKind::kDimMismatch,
          "logits: " + std::to_string(m.logits.size()) + " files listed but checkpoints = " +
              std::to_string(m.checkpoints));
  require(m.class_prior.size() == c, ErrorKind::kDimMismatch, "class_prior: length differs from num_classes");
  double prior_sum = 0.0;
  for (double p : m.class_prior) {
    require(std::isfinite(p) && p >= 0.0, ErrorKind::kNonFinite, "class_prior: invalid entry");
    prior_sum += p;
  }
  require(std::abs(prior_sum - 1.0) <= 1e-6, ErrorKind::kDimMismatch, "class_prior: does not sum to 1");
  require(m.positive_class >= 0 && static_cast<std::uint64_t>(m.positive_class) < c, ErrorKind::kDimMismatch,
          "positive_class: out of range");

  {
    const auto t = detail::load_checked(run.root, m.labels, "labels");
    detail::expect_dims(t, {n}, "labels", m.labels);
    require(t.dtype() != DType::kF32, ErrorKind::kDimMismatch, "labels: expected integer dtype in " + m.labels);
    run.labels = t.to_i64();
    for (auto y : run.labels)
      require(y >= 0 && static_cast<std::uint64_t>(y) < c, ErrorKind::kDimMismatch,
              "labels: class index out of range in " + m.labels);
  }
  for (const auto& f : m.logits) {
    const auto t = detail::load_checked(run.root, f, "logits");
    detail::expect_dims(t, {n, c}, "logits", f);
    run.trace.logits.push_back(t.to_matrix());
  }
  std::set<int> seen_layers;
  for (const auto& f : m.features) {
    require(seen_layers.insert(f.layer).second, ErrorKind::kDimMismatch,
            "features: duplicate layer index " + std::to_string(f.layer));
    const auto t = detail::load_checked(run.root, f.file, "features");
    require(t.rank() == 2 && t.dim(0) == n, ErrorKind::kDimMismatch, "features: expected (N, n) in " + f.file);
    run.features.push_back({f.layer, t.to_matrix()});
  }
  std::sort(run.features.begin(), run.features.end(),
            [](const LayerFeatures& a, const LayerFeatures& b) { return a.layer < b.layer; });

  if (m.images) {
    const auto t = detail::load_checked(run.root, *m.images, "images");
    require(t.rank() == 4 && t.dim(0) == n && t.dim(1) == t.dim(2), ErrorKind::kDimMismatch,
            "images: expected (N, H, H, C) in " + *m.images);
    run.images = image_stack_from_tensor(t);
  }
  std::optional<std::size_t> weight_len;
  for (const auto& f : m.weights) {
    const auto t = detail::load_checked(run.root, f, "weights");
    if (weight_len)
      require(t.element_count() == *weight_len, ErrorKind::kDimMismatch,
              "weights: snapshot length differs in " + f);
    weight_len = t.element_count();
    const auto v = t.to_doubles();
    run.weights.push_back(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  require(m.activations.has_value() == m.gradients.has_value(), ErrorKind::kDimMismatch,
          "activations/gradients: both or neither must be given");
  if (m.activations) {
    const auto a = detail::load_checked(run.root, *m.activations, "activations");
    const auto g = detail::load_checked(run.root, *m.gradients, "gradients");
    require(a.rank() == 4 && a.dim(0) == n, ErrorKind::kDimMismatch,
            "activations: expected (N, K, h, w) in " + *m.activations);
    detail::expect_dims(g, a.dims(), "gradients", *m.gradients);
    FeatureMapTelemetry fm;
    fm.maps = a.dim(1);
    fm.height = a.dim(2);
    fm.width = a.dim(3);
    fm.activations = a.to_doubles();
    fm.gradients = g.to_doubles();
    run.feature_maps = std::move(fm);
  }
  if (m.masks) {
    const auto t = detail::load_checked(run.root, *m.masks, "masks");
    require(t.rank() == 3 && t.dim(0) == n && t.dtype() == DType::kU8, ErrorKind::kDimMismatch,
            "masks: expected u8 (N, H, W) in " + *m.masks);
    if (run.images)
      require(t.dim(1) == run.images->images.front().height && t.dim(2) == run.images->images.front().width,
              ErrorKind::kDimMismatch, "masks: tile size differs from images in " + *m.masks);
    run.masks = MaskTelemetry{t.dim(1), t.dim(2), t.payload()};
  }
  if (m.grad_magnitudes) {
    const auto t = detail::load_checked(run.root, *m.grad_magnitudes, "grad_magnitudes");
    detail::expect_dims(t, {n, m.checkpoints}, "grad_magnitudes", *m.grad_magnitudes);
    run.grad_magnitudes = t.to_matrix();
  }
  if (m.train_split) {
    const auto t = detail::load_checked(run.root, *m.train_split, "train_split");
    detail::expect_dims(t, {n}, "train_split", *m.train_split);
    const auto v = t.to_i64();
    std::vector<bool> split(n);
    for (std::size_t i = 0; i < n; ++i) split[i] = v[i] != 0;
    run.train_split = std::move(split);
  }
  if (m.head) {
    const auto w = detail::load_checked(run.root, m.head->weight, "head.weight");
    const auto b = detail::load_checked(run.root, m.head->bias, "head.bias");
    require(w.rank() == 2 && w.dim(0) == c, ErrorKind::kDimMismatch, "head.weight: expected (C, n) in " + m.head->weight);
    detail::expect_dims(b, {c}, "head.bias", m.head->bias);
    if (!run.features.empty())
      require(w.dim(1) == static_cast<std::uint64_t>(run.features.back().values.cols()), ErrorKind::kDimMismatch,
              "head.weight: width differs from last feature layer in " + m.head->weight);
    const auto bv = b.to_doubles();
    run.head = Head{w.to_matrix(), Eigen::Map<const Vector>(bv.data(), static_cast<Eigen::Index>(c))};
  }
  if (m.first_layer_kernels) {
    auto t = detail::load_checked(run.root, *m.first_layer_kernels, "first_layer_kernels");
    require(t.rank() == 4 && t.dim(1) == t.dim(2), ErrorKind::kDimMismatch,
            "first_layer_kernels: expected (K_out, k, k, C_in) in " + *m.first_layer_kernels);
    run.first_layer_kernels = std::move(t);
  }
  if (m.sensitivity) {
    SensitivityTelemetry s;
    const auto t = detail::load_checked(run.root, m.sensitivity->clean, "sensitivity.clean");
    require(t.rank() == 2 && t.dim(1) == c, ErrorKind::kDimMismatch,
            "sensitivity.clean: expected (M, C) in " + m.sensitivity->clean);
    s.clean = t.to_matrix();
    for (const auto& r : m.sensitivity->manipulations) {
      const auto p = detail::load_checked(run.root, r.file, "sensitivity.manipulations");
      detail::expect_dims(p, t.dims(), "sensitivity.manipulations", r.file);
      s.manipulations.push_back({r.name, r.axis, r.severity, p.to_matrix()});
    }
    run.sensitivity = std::move(s);
  }
  if (m.folds) {
    const fs::path p = run.root / *m.folds;
    require(fs::exists(p), ErrorKind::kMissingFile, "folds: file not found: " + p.string());
    run.folds_index = p;
  }
  return run;
}

// ---------------------------------------------------------------------------
// Standardization
// ---------------------------------------------------------------------------

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-channel moments over every pixel of every tile (population variance).
inline ChannelStats fit_channel_stats(const ImageStack& stack) {
  stack.check_consistent();
  const std::size_t c = stack.channels();
  std::vector<double> sum(c, 0.0);
  std::size_t count = 0;
  for (const auto& im : stack.images) {
    for (std::size_t p = 0; p < im.height * im.width; ++p)
      for (std::size_t k = 0; k < c; ++k) sum[k] += im.data[p * c + k];
    count += im.height * im.width;
  }
  ChannelStats s{std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t k = 0; k < c; ++k) s.mean[k] = sum[k] / static_cast<double>(count);
  std::vector<double> ss(c, 0.0);
  for (const auto& im : stack.images)
    for (std::size_t p = 0; p < im.height * im.width; ++p)
      for (std::size_t k = 0; k < c; ++k) {
        const double d = im.data[p * c + k] - s.mean[k];
        ss[k] += d * d;
      }
  for (std::size_t k = 0; k < c; ++k) {
    const double var = ss[k] / static_cast<double>(count);
    require(var > 1e-20 * std::max(1.0, s.mean[k] * s.mean[k]), ErrorKind::kDegenerate,
            "standardize: channel " + std::to_string(k) + " has zero variance");
    s.stddev[k] = std::sqrt(var);
  }
  return s;
}

inline ImageStack apply_channel_stats(const ImageStack& stack, const ChannelStats& s) {
  ImageStack out = stack;
  const std::size_t c = stack.channels();
  for (auto& im : out.images)
    for (std::size_t p = 0; p < im.height * im.width; ++p)
      for (std::size_t k = 0; k < c; ++k) im.data[p * c + k] = (im.data[p * c + k] - s.mean[k]) / s.stddev[k];
  return out;
}

/// Gaussian standardization of each channel over the whole stack.
inline ImageStack standardize(const ImageStack& stack) { return apply_channel_stats(stack, fit_channel_stats(stack)); }

// ---------------------------------------------------------------------------
// Correctness
// ---------------------------------------------------------------------------

/// N x T matrix; entry (i, t) is argmax(logits_t[i]) == y_i with ties going to
/// the lowest class index.
inline BoolMatrix correctness_matrix(const PredictionTrace& trace, const Labels& labels) {
  const std::size_t n = trace.samples();
  require(labels.size() == n, ErrorKind::kDimMismatch, "correctness: labels length differs from logits rows");
  BoolMatrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(trace.checkpoints()));
  for (std::size_t t = 0; t < trace.checkpoints(); ++t) {
    const Matrix& z = trace.logits[t];
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      Eigen::Index best = 0;
      for (Eigen::Index k = 1; k < z.cols(); ++k)
        if (z(i, k) > z(i, best)) best = k;
      out(i, static_cast<Eigen::Index>(t)) = best == labels[static_cast<std::size_t>(i)];
    }
  }
  return out;
}

}  // namespace sbdiag::telemetry

#endif  // SBDIAG_TELEMETRY_HPP
