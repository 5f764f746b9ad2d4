// sbdiag: command-line driver for the diagnostics engine.
//
// Exit codes: 0 success, 2 usage or validation error (one-line reason on
// stderr), 3 outputs written but the primary result is degenerate.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sbdiag/common.hpp"
#include "sbdiag/geometry.hpp"
#include "sbdiag/hardness.hpp"
#include "sbdiag/memorization.hpp"
#include "sbdiag/perturb.hpp"
#include "sbdiag/saliency.hpp"
#include "sbdiag/similarity.hpp"
#include "sbdiag/synth.hpp"
#include "sbdiag/telemetry.hpp"
#include "sbdiag/tensor_file.hpp"
#include "sbdiag/uncertainty.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sbdiag;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDegenerate = 3;

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

json jnum(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "file not found: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}
  void row(std::vector<std::string> cells) {
    require(cells.size() == header_.size(), ErrorKind::kInvalidArgument, "csv: row width differs from header");
    rows_.push_back(std::move(cells));
  }
  std::string str() const {
    std::string s;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i];
      s += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return s;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// Collects every file written by a subcommand and finishes with a
/// provenance record naming each one with its content hash.
class OutputDir {
 public:
  OutputDir(fs::path dir, json config) : dir_(std::move(dir)), config_(std::move(config)) {
    fs::create_directories(dir_);
    text("config.json", config_.dump(2) + "\n");
  }

  const fs::path& path() const { return dir_; }

  void text(const std::string& name, const std::string& content) {
    std::ofstream out(dir_ / name, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::kMissingFile, "cannot write " + (dir_ / name).string());
    out << content;
    files_[name] = hex64(fnv1a(content));
  }
  void csv(const std::string& name, const CsvTable& t) { text(name, t.str()); }
  void json_file(const std::string& name, const json& j) { text(name, j.dump(2) + "\n"); }
  void tensor(const std::string& name, const TensorFile& t) {
    const auto bytes = t.serialize();
    text(name, std::string(bytes.begin(), bytes.end()));
  }

  void finish() {
    json p;
    p["engine_version"] = kEngineVersion;
    p["config_hash"] = hex64(fnv1a(config_.dump()));
    json files = json::object();
    for (const auto& [k, v] : files_) files[k] = {{"fnv1a64", v}};
    p["files"] = files;
    std::ofstream out(dir_ / "provenance.json", std::ios::binary);
    out << p.dump(2) << "\n";
  }

 private:
  fs::path dir_;
  json config_;
  std::map<std::string, std::string> files_;
};

TensorFile vector_tensor(const std::vector<double>& v) { return TensorFile::from_f32({v.size()}, v); }

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Common {
  std::string manifest;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_common(CLI::App* sub, Common& c, bool needs_manifest) {
  if (needs_manifest) sub->add_option("--manifest", c.manifest, "Run manifest (JSON)")->required();
  sub->add_option("--out", c.out, "Output directory")->required();
  sub->add_option("--seed", c.seed, "Master seed")->capture_default_str();
  sub->add_option("--threads", c.threads, "Worker threads (default from SBDIAG_THREADS, else 1)")
      ->check(CLI::PositiveNumber);
}

/// Config echo. The thread count is excluded because it never changes results.
json base_config(const std::string& sub, const Common& c) {
  json j;
  j["subcommand"] = sub;
  if (!c.manifest.empty()) j["manifest"] = c.manifest;
  j["output_directory"] = c.out;
  j["seed"] = c.seed;
  j["engine_version"] = kEngineVersion;
  return j;
}

std::string cue_label(perturb::Cue c) { return perturb::cue_name(c); }

// ---------------------------------------------------------------------------
// sensitivity
// ---------------------------------------------------------------------------

struct SensitivityOpts {
  std::string emit_dir;
};

int run_sensitivity(const Common& c, const SensitivityOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  require(run.sensitivity.has_value() || !o.emit_dir.empty(), ErrorKind::kInvalidArgument,
          "sensitivity: manifest lists no sensitivity outputs");
  json cfg = base_config("sensitivity", c);
  cfg["emit_perturbations"] = !o.emit_dir.empty();
  OutputDir out(c.out, cfg);

  if (!o.emit_dir.empty()) {
    require(run.images.has_value(), ErrorKind::kInvalidArgument, "sensitivity: --emit-perturbations needs images");
    fs::create_directories(o.emit_dir);
    const auto manips = perturb::standard_manipulations();
    json index = json::array();
    for (std::size_t k = 0; k < manips.size(); ++k) {
      const auto stack = perturb::apply(*run.images, manips[k], k, c.seed);
      const std::string file = "perturbed_" + manips[k].name + ".spt";
      write_tensor(fs::path(o.emit_dir) / file, telemetry::image_stack_to_tensor(stack));
      index.push_back({{"name", manips[k].name},
                       {"axis", cue_label(manips[k].cue)},
                       {"severity", manips[k].severity},
                       {"file", file}});
    }
    std::ofstream idx(fs::path(o.emit_dir) / "perturbations.json");
    idx << json{{"seed", c.seed}, {"manipulations", index}}.dump(2) << "\n";
    out.json_file("perturbations.json", {{"seed", c.seed}, {"manipulations", index}});
  }

  bool degenerate = false;
  if (run.sensitivity) {
    const auto prof = perturb::sensitivity_profile(run.sensitivity->clean, perturb::from_telemetry(*run.sensitivity));
    CsvTable t({"manipulation", "cue", "severity", "mean_djs", "share"});
    json manip = json::array();
    for (const auto& m : prof.manipulations) {
      t.row({m.name, cue_label(m.cue), std::to_string(m.severity), num(m.mean_djs), num(m.share)});
      manip.push_back({{"name", m.name},
                       {"cue", cue_label(m.cue)},
                       {"severity", m.severity},
                       {"mean_djs", m.mean_djs},
                       {"share", m.share}});
    }
    out.csv("sensitivity.csv", t);
    CsvTable cues({"cue", "total_djs", "share"});
    json cj = json::array();
    for (const auto& cs : prof.cues) {
      cues.row({cue_label(cs.cue), num(cs.total_djs), num(cs.share)});
      cj.push_back({{"cue", cue_label(cs.cue)}, {"total_djs", cs.total_djs}, {"share", cs.share}});
    }
    out.csv("cues.csv", cues);
    out.json_file("sensitivity.json", {{"samples", run.sensitivity->clean.rows()},
                                       {"manipulations", manip},
                                       {"cues", cj},
                                       {"frequency_degenerate", prof.frequency_degenerate},
                                       {"hvs_degenerate", prof.hvs_degenerate}});
    degenerate = prof.frequency_degenerate || prof.hvs_degenerate;
  }
  out.finish();
  return degenerate ? kExitDegenerate : kExitOk;
}

// ---------------------------------------------------------------------------
// hardness
// ---------------------------------------------------------------------------

struct HardnessOpts {
  std::size_t depth_k = 25;
  double shrinkage = 0.05;
  double hard_fraction = 0.05;
};

int run_hardness(const Common& c, const HardnessOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  json cfg = base_config("hardness", c);
  cfg["depth_k"] = o.depth_k;
  cfg["shrinkage"] = o.shrinkage;
  cfg["hard_fraction"] = o.hard_fraction;
  OutputDir out(c.out, cfg);

  hardness::Options opt;
  opt.depth_k = o.depth_k;
  opt.shrink.lambda = o.shrinkage;
  const auto prof = hardness::composite(hardness::metrics_for_run(run, opt));

  std::vector<std::string> header{"sample_id"};
  for (const auto& m : prof.metrics) header.push_back(m.name);
  for (const auto& m : prof.metrics) header.push_back(m.name + "_norm");
  header.push_back("composite");
  CsvTable t(header);
  for (std::size_t i = 0; i < prof.composite.size(); ++i) {
    std::vector<std::string> r{std::to_string(i)};
    for (const auto& m : prof.metrics) r.push_back(num(m.raw[i]));
    for (const auto& v : prof.normalized) r.push_back(num(v[i]));
    r.push_back(num(prof.composite[i]));
    t.row(std::move(r));
  }
  out.csv("hardness.csv", t);

  const auto hard = memorization::select_hard_subset(prof.composite, o.hard_fraction);
  const std::vector<std::int64_t> hard_ids(hard.begin(), hard.end());
  out.tensor("hard_subset.spt", TensorFile::from_i64({hard_ids.size()}, hard_ids));

  json metrics = json::array();
  for (std::size_t k = 0; k < prof.metrics.size(); ++k)
    metrics.push_back({{"name", prof.metrics[k].name},
                       {"direction", direction_symbol(prof.metrics[k].direction)},
                       {"degenerate", static_cast<bool>(prof.metric_degenerate[k])}});
  out.json_file("hardness.json", {{"samples", prof.composite.size()},
                                  {"metrics", metrics},
                                  {"composite_degenerate", prof.degenerate},
                                  {"hard_subset_size", hard_ids.size()},
                                  {"hard_subset", hard_ids}});
  out.finish();
  return prof.degenerate ? kExitDegenerate : kExitOk;
}

// ---------------------------------------------------------------------------
// memorize
// ---------------------------------------------------------------------------

int run_memorize(const Common& c) {
  const auto run = telemetry::load_run(c.manifest);
  require(run.folds_index.has_value(), ErrorKind::kInvalidArgument, "memorize: manifest lists no fold index");
  OutputDir out(c.out, base_config("memorize", c));
  const auto folds = memorization::load_fold_index(*run.folds_index);
  for (const auto& f : folds)
    for (auto id : f.hard_subset)
      require(id >= 0 && static_cast<std::size_t>(id) < run.num_samples(), ErrorKind::kDimMismatch,
              "memorize: hard-subset id out of range in fold " + std::to_string(f.fold));

  CsvTable per_fold({"fold", "hard_size", "acc_in", "acc_out", "gap", "test_accuracy_full", "test_accuracy_pruned"});
  CsvTable per_sample({"fold", "sample_id", "mem"});
  json fj = json::array();
  for (const auto& f : folds) {
    const double in = memorization::mean_of(f.correct_in), outp = memorization::mean_of(f.correct_out);
    auto opt = [](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
    per_fold.row({std::to_string(f.fold), std::to_string(f.hard_subset.size()), num(in), num(outp), num(in - outp),
                  opt(f.test_accuracy_full), opt(f.test_accuracy_pruned)});
    const auto mem = memorization::mem_scores(f.correct_in, f.correct_out);
    for (std::size_t j = 0; j < mem.size(); ++j)
      per_sample.row({std::to_string(f.fold), std::to_string(f.hard_subset[j]), num(mem[j])});
    fj.push_back({{"fold", f.fold}, {"acc_in", in}, {"acc_out", outp}, {"gap", in - outp}});
  }
  out.csv("memorization.csv", per_fold);
  out.csv("mem_scores.csv", per_sample);
  out.json_file("memorization.json", {{"mt_hard", memorization::mt_hard(folds)}, {"folds", fj}});
  out.finish();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// dims
// ---------------------------------------------------------------------------

struct DimsOpts {
  std::size_t lpca_k = 20;
  double var_threshold = 0.95;
  std::size_t mle_k = 6;
  double discard = 0.10;
  std::size_t pca_components = 3;
  double background = 0.0;
};

int run_dims(const Common& c, const DimsOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  require(!run.features.empty() || run.images.has_value(), ErrorKind::kInvalidArgument,
          "dims: manifest lists neither features nor images");
  json cfg = base_config("dims", c);
  cfg["lpca_k"] = o.lpca_k;
  cfg["var_threshold"] = o.var_threshold;
  cfg["mle_k"] = o.mle_k;
  cfg["discard_fraction"] = o.discard;
  cfg["pca_components"] = o.pca_components;
  cfg["background_threshold"] = o.background;
  OutputDir out(c.out, cfg);

  CsvTable t({"layer", "estimator", "value", "excluded", "degenerate"});
  json layers = json::array();
  bool any_ok = run.features.empty();
  for (const auto& l : run.features) {
    std::vector<geometry::IDEstimate> est{geometry::id_lpca(l.values, o.lpca_k, o.var_threshold),
                                          geometry::id_mle(l.values, o.mle_k), geometry::id_2nn(l.values, o.discard)};
    json lj = {{"layer", l.layer}, {"ambient", l.values.cols()}};
    for (const auto& e : est) {
      t.row({std::to_string(l.layer), e.estimator, num(e.value), std::to_string(e.excluded), e.degenerate ? "1" : "0"});
      json params = json::object();
      for (const auto& [k, v] : e.params) params[k] = v;
      lj[e.estimator] = {{"value", e.value}, {"excluded", e.excluded}, {"degenerate", e.degenerate}, {"params", params}};
      any_ok = any_ok || !e.degenerate;
    }
    layers.push_back(lj);
  }
  out.csv("dims.csv", t);
  json summary = {{"layers", layers}};

  if (run.images && run.images->channels() > o.pca_components) {
    const auto& st = *run.images;
    const std::size_t hw = st.images.front().height * st.images.front().width, ch = st.channels();
    std::size_t train_tiles = 0;
    for (std::size_t i = 0; i < st.size(); ++i) train_tiles += run.is_train(i) ? 1 : 0;
    Matrix train(static_cast<Eigen::Index>(train_tiles * hw), static_cast<Eigen::Index>(ch));
    Matrix all(static_cast<Eigen::Index>(st.size() * hw), static_cast<Eigen::Index>(ch));
    Eigen::Index tr = 0;
    for (std::size_t i = 0; i < st.size(); ++i)
      for (std::size_t p = 0; p < hw; ++p) {
        const auto r = static_cast<Eigen::Index>(i * hw + p);
        for (std::size_t k = 0; k < ch; ++k) all(r, static_cast<Eigen::Index>(k)) = st.images[i].data[p * ch + k];
        if (run.is_train(i)) train.row(tr++) = all.row(r);
      }
    const auto model = geometry::fit_pca(train, o.pca_components, o.background);
    Matrix reduced = geometry::pca_project(model, all);
    for (Eigen::Index j = 0; j < reduced.cols(); ++j) {
      if (model.score_stddev(j) > 0.0)
        reduced.col(j) /= model.score_stddev(j);
      else
        reduced.col(j).setZero();
    }
    std::vector<double> flat(static_cast<std::size_t>(reduced.size()));
    for (Eigen::Index r = 0; r < reduced.rows(); ++r)
      for (Eigen::Index j = 0; j < reduced.cols(); ++j)
        flat[static_cast<std::size_t>(r * reduced.cols() + j)] = reduced(r, j);
    const auto& f = st.images.front();
    out.tensor("images_pca.spt", TensorFile::from_f32({st.size(), f.height, f.width, o.pca_components}, flat));
    summary["pca"] = {{"components", o.pca_components},
                      {"explained_variance", model.explained},
                      {"fitted_pixels", model.fitted_rows}};
  }
  out.json_file("dims.json", summary);
  out.finish();
  return any_ok ? kExitOk : kExitDegenerate;
}

// ---------------------------------------------------------------------------
// similarity
// ---------------------------------------------------------------------------

struct SimilarityOpts {
  std::size_t minibatch = 256;
};

int run_similarity(const Common& c, const SimilarityOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  json cfg = base_config("similarity", c);
  cfg["minibatch"] = o.minibatch;
  OutputDir out(c.out, cfg);
  json summary;
  bool degenerate = false;

  if (!run.features.empty()) {
    std::vector<Matrix> layers;
    for (const auto& l : run.features) layers.push_back(l.values);
    const auto m = similarity::intra_cka(layers, o.minibatch, c.seed);
    const auto l = static_cast<std::size_t>(m.values.rows());
    CsvTable t({"layer_i", "layer_j", "cka"});
    json mat = json::array();
    std::vector<double> flat, off;
    for (std::size_t i = 0; i < l; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < l; ++j) {
        const double v = m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        flat.push_back(v);
        row.push_back(v);
        if (j > i) {
          off.push_back(v);
          t.row({std::to_string(run.features[i].layer), std::to_string(run.features[j].layer), num(v)});
        }
      }
      mat.push_back(row);
    }
    out.csv("cka.csv", t);
    out.tensor("cka.spt", TensorFile::from_f32({l, l}, flat));
    double mu = off.empty() ? 1.0 : mean(off), var = 0.0;
    for (double v : off) var += (v - mu) * (v - mu);
    if (!off.empty()) var /= static_cast<double>(off.size());
    json layer_ids = json::array();
    for (const auto& f : run.features) layer_ids.push_back(f.layer);
    summary["cka"] = {{"layers", layer_ids},
                      {"matrix", mat},
                      {"mean_offdiagonal", mu},
                      {"dispersion", std::sqrt(var)},
                      {"degenerate", m.degenerate}};
    degenerate = degenerate || m.degenerate;
  }

  const auto correct = telemetry::correctness_matrix(run.trace, run.labels);
  CsvTable kt({"checkpoint_i", "checkpoint_j", "kappa", "p_observed", "p_expected", "degenerate"});
  auto column = [&](Eigen::Index t) {
    std::vector<bool> v(static_cast<std::size_t>(correct.rows()));
    for (Eigen::Index i = 0; i < correct.rows(); ++i) v[static_cast<std::size_t>(i)] = correct(i, t);
    return v;
  };
  json kj = json::array();
  for (Eigen::Index i = 0; i < correct.cols(); ++i)
    for (Eigen::Index j = i + 1; j < correct.cols(); ++j) {
      const auto k = similarity::cohens_kappa(column(i), column(j));
      kt.row({std::to_string(i), std::to_string(j), num(k.value), num(k.observed), num(k.expected),
              k.degenerate ? "1" : "0"});
      kj.push_back({{"i", i}, {"j", j}, {"kappa", k.value}, {"degenerate", k.degenerate}});
    }
  out.csv("kappa.csv", kt);
  summary["kappa"] = kj;

  if (run.first_layer_kernels) {
    const auto tv = similarity::kernel_total_variation(similarity::KernelBank::from_tensor(*run.first_layer_kernels));
    CsvTable t({"kernel", "total_variation"});
    for (std::size_t k = 0; k < tv.size(); ++k) t.row({std::to_string(k), num(tv[k])});
    out.csv("kernel_tv.csv", t);
    summary["kernel_tv_mean"] = mean(tv);
  }
  if (run.weights.size() >= 2) {
    const auto d = similarity::weight_displacement(run.weights);
    CsvTable t({"step", "displacement"});
    for (std::size_t k = 0; k < d.size(); ++k) t.row({std::to_string(k + 1), num(d[k])});
    out.csv("displacement.csv", t);
    summary["displacement"] = d;
  }
  out.json_file("similarity.json", summary);
  out.finish();
  return degenerate ? kExitDegenerate : kExitOk;
}

// ---------------------------------------------------------------------------
// uq
// ---------------------------------------------------------------------------

struct UqOpts {
  std::string bandwidth = "auto";
  std::size_t k = 10;
  double ash_keep = 0.35;
  int q_max = 90;
  double shrinkage = 0.05;
};

Matrix select_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

int run_uq(const Common& c, const UqOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  require(!run.features.empty(), ErrorKind::kInvalidArgument, "uq: manifest lists no features");
  uncertainty::SmoothEceOptions ece;
  if (o.bandwidth != "auto") {
    double bw = 0.0;
    const auto res = std::from_chars(o.bandwidth.data(), o.bandwidth.data() + o.bandwidth.size(), bw);
    require(res.ec == std::errc() && res.ptr == o.bandwidth.data() + o.bandwidth.size() && bw > 0.0,
            ErrorKind::kInvalidArgument, "uq: --bandwidth must be 'auto' or a positive number");
    ece.bandwidth = bw;
  }
  json cfg = base_config("uq", c);
  cfg["bandwidth"] = o.bandwidth;
  cfg["k"] = o.k;
  cfg["ash_keep"] = o.ash_keep;
  cfg["q_max"] = o.q_max;
  cfg["shrinkage"] = o.shrinkage;
  OutputDir out(c.out, cfg);

  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < run.num_samples(); ++i) {
    if (run.is_train(i)) train.push_back(i);
    if (run.is_test(i)) test.push_back(i);
  }
  require(!test.empty() && !train.empty(), ErrorKind::kInsufficientData, "uq: train or test split is empty");
  const Matrix& feats = run.features.back().values;
  const Matrix& logits = run.trace.logits.back();
  telemetry::Labels train_y, test_y;
  for (auto i : train) train_y.push_back(run.labels[i]);
  for (auto i : test) test_y.push_back(run.labels[i]);
  const Matrix test_logits = select_rows(logits, test);

  const auto cal = uncertainty::calibration_from_logits(test_logits, test_y);
  const auto sm = uncertainty::smooth_ece(cal, ece);
  const auto cm = uncertainty::classification_metrics(test_logits, test_y,
                                                      static_cast<std::size_t>(run.manifest.positive_class));

  uncertainty::EuOptions eo;
  eo.k = o.k;
  eo.ash_keep = o.ash_keep;
  eo.shrink.lambda = o.shrinkage;
  const auto stats = uncertainty::fit_train_stats(select_rows(feats, train), train_y, run.num_classes(), run.head,
                                                  run.manifest.class_prior, eo);
  const auto eu = uncertainty::eu_scores(select_rows(feats, test), test_logits, stats);

  std::vector<std::string> header{"q"};
  std::vector<uncertainty::AlignmentResult> as;
  json est = json::array();
  bool all_degenerate = !eu.scores.empty();
  as.resize(eu.scores.size());
  parallel_for(eu.scores.size(),
               [&](std::size_t k) { as[k] = uncertainty::alignment_score(eu.scores[k], cal, 0, o.q_max, ece); });
  for (std::size_t k = 0; k < eu.scores.size(); ++k) {
    const auto& s = eu.scores[k];
    out.tensor("eu_" + s.name + ".spt", vector_tensor(s.scores));
    header.push_back(s.name);
    est.push_back({{"name", s.name},
                   {"direction", direction_symbol(s.direction)},
                   {"alignment_score", jnum(as[k].value)},
                   {"degenerate", as[k].degenerate},
                   {"curve", as[k].ratio}});
    all_degenerate = all_degenerate && as[k].degenerate;
  }
  CsvTable curve(header);
  for (int q = 0; q <= o.q_max; ++q) {
    std::vector<std::string> r{std::to_string(q)};
    for (const auto& a : as) r.push_back(a.degenerate ? "nan" : num(a.ratio[static_cast<std::size_t>(q)]));
    curve.row(std::move(r));
  }
  out.csv("abstention.csv", curve);
  out.json_file("uq.json", {{"test_samples", test.size()},
                            {"train_samples", train.size()},
                            {"smooth_ece", sm.value},
                            {"bandwidth", sm.bandwidth},
                            {"bandwidth_fallback", sm.fallback},
                            {"accuracy", cm.accuracy},
                            {"auroc", jnum(cm.auroc)},
                            {"auprc", jnum(cm.auprc)},
                            {"estimators", est},
                            {"skipped", eu.skipped}});
  out.finish();
  return all_degenerate ? kExitDegenerate : kExitOk;
}

// ---------------------------------------------------------------------------
// saliency
// ---------------------------------------------------------------------------

struct SaliencyOpts {
  bool emit_maps = false;
  int q_min = 90;
};

int run_saliency(const Common& c, const SaliencyOpts& o) {
  const auto run = telemetry::load_run(c.manifest);
  require(run.feature_maps.has_value(), ErrorKind::kInvalidArgument, "saliency: manifest lists no activations");
  require(run.masks.has_value(), ErrorKind::kInvalidArgument, "saliency: manifest lists no masks");
  json cfg = base_config("saliency", c);
  cfg["emit_maps"] = o.emit_maps;
  cfg["q_min"] = o.q_min;
  OutputDir out(c.out, cfg);

  const auto& fm = *run.feature_maps;
  const auto& mk = *run.masks;
  const std::size_t n = run.num_samples(), per = fm.maps * fm.height * fm.width, px = mk.height * mk.width;
  const auto pos = static_cast<std::int64_t>(run.manifest.positive_class);
  std::vector<saliency::SaliencyMap> maps(n);
  std::vector<double> cs(n, std::numeric_limits<double>::quiet_NaN());
  parallel_for(n, [&](std::size_t i) {
    saliency::ActivationGrad ag;
    ag.maps = fm.maps;
    ag.height = fm.height;
    ag.width = fm.width;
    ag.activations.assign(fm.activations.begin() + static_cast<std::ptrdiff_t>(i * per),
                          fm.activations.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    ag.gradients.assign(fm.gradients.begin() + static_cast<std::ptrdiff_t>(i * per),
                        fm.gradients.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    maps[i] = saliency::gradcam_pp(ag, mk.height, mk.width);
    const std::vector<std::uint8_t> mask(mk.values.begin() + static_cast<std::ptrdiff_t>(i * px),
                                         mk.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
    const bool any = std::any_of(mask.begin(), mask.end(), [](std::uint8_t v) { return v != 0; });
    if (run.labels[i] == pos && any) cs[i] = saliency::concordance_score(maps[i], mask, o.q_min, 100).value;
  });

  CsvTable t({"sample_id", "label", "flat", "concordance"});
  std::vector<double> evaluated;
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    flat += maps[i].flat ? 1 : 0;
    if (!std::isnan(cs[i])) evaluated.push_back(cs[i]);
    t.row({std::to_string(i), std::to_string(run.labels[i]), maps[i].flat ? "1" : "0",
           std::isnan(cs[i]) ? std::string() : num(cs[i])});
  }
  out.csv("saliency.csv", t);
  if (o.emit_maps) {
    std::vector<double> all;
    all.reserve(n * px);
    for (const auto& m : maps) all.insert(all.end(), m.values.begin(), m.values.end());
    out.tensor("saliency_maps.spt", TensorFile::from_f32({n, mk.height, mk.width}, all));
  }
  const bool degenerate = evaluated.empty();
  out.json_file("saliency.json", {{"concordance", degenerate ? json(nullptr) : json(mean(evaluated))},
                                  {"evaluated", evaluated.size()},
                                  {"flat_maps", flat},
                                  {"q_min", o.q_min},
                                  {"q_max", 100}});
  out.finish();
  return degenerate ? kExitDegenerate : kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
  std::string preset = "smoke";
  std::size_t samples = 400;
};

int run_synth(const Common& c, const SynthOpts& o) {
  require(o.preset == "smoke", ErrorKind::kInvalidArgument, "synth: unknown preset '" + o.preset + "'");
  json cfg = base_config("synth", c);
  cfg["preset"] = o.preset;
  cfg["samples"] = o.samples;
  synth::SmokeSpec spec;
  spec.samples = o.samples;
  spec.seed = c.seed;
  const auto manifest = synth::write_smoke_run(c.out, spec);
  OutputDir out(c.out, cfg);
  out.text("manifest.json", read_file(manifest));
  out.finish();
  std::cout << manifest.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOpts {
  std::vector<std::string> inputs;
};

std::string svg_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else o += ch;
  }
  return o;
}

std::string svg_open(int w, int h, const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
         std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n<text x=\"10\" y=\"18\" font-size=\"14\">" +
         svg_escape(title) + "</text>\n";
}

std::string sensitivity_svg(const json& s) {
  const auto& m = s.at("manipulations");
  const int bar = 22, w = 80 + bar * static_cast<int>(m.size()), h = 260;
  std::string out = svg_open(w, h, "Sensitivity share by manipulation");
  const double base = 200.0, height = 160.0;
  int x = 50;
  for (const auto& e : m) {
    const double share = e.at("share").get<double>();
    const double bh = share * height;
    const std::string fill = e.at("cue") == "frequency" ? "#4477aa" : e.at("cue") == "shape" ? "#228833"
                             : e.at("cue") == "texture" ? "#ccbb44" : "#ee6677";
    out += "<rect x=\"" + std::to_string(x) + "\" y=\"" + num(base - bh) + "\" width=\"" + std::to_string(bar - 4) +
           "\" height=\"" + num(bh) + "\" fill=\"" + fill + "\"/>\n";
    out += "<text transform=\"translate(" + std::to_string(x + 8) + "," + num(base + 6) +
           ") rotate(60)\" font-size=\"8\">" + svg_escape(e.at("name").get<std::string>()) + "</text>\n";
    x += bar;
  }
  out += "<line x1=\"45\" y1=\"" + num(base) + "\" x2=\"" + std::to_string(x) + "\" y2=\"" + num(base) +
         "\" stroke=\"black\"/>\n</svg>\n";
  return out;
}

std::string abstention_svg(const json& uq) {
  const int w = 520, h = 340;
  const double x0 = 50, y0 = 300, pw = 360, ph = 260;
  std::string out = svg_open(w, h, "ECE_q / ECE_0 vs rejected share q (%)");
  double ymax = 1.0;
  for (const auto& e : uq.at("estimators"))
    for (const auto& v : e.at("curve")) ymax = std::max(ymax, v.get<double>());
  static const char* colors[] = {"#4477aa", "#66ccee", "#228833", "#ccbb44", "#ee6677",
                                 "#aa3377", "#bbbbbb", "#000000", "#994455"};
  std::size_t k = 0;
  for (const auto& e : uq.at("estimators")) {
    const auto& curve = e.at("curve");
    if (curve.empty()) continue;
    std::string pts;
    for (std::size_t q = 0; q < curve.size(); ++q) {
      const double px = x0 + pw * static_cast<double>(q) / static_cast<double>(curve.size() - 1);
      const double py = y0 - ph * curve[q].get<double>() / ymax;
      pts += num(px) + "," + num(py) + " ";
    }
    const char* col = colors[k % 9];
    out += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" points=\"" + pts + "\"/>\n";
    out += "<text x=\"" + num(x0 + pw + 10) + "\" y=\"" + num(50 + 14.0 * static_cast<double>(k)) + "\" fill=\"" + col +
           "\">" + svg_escape(e.at("name").get<std::string>()) + "</text>\n";
    ++k;
  }
  out += "<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0 + pw) + "\" y2=\"" + num(y0) +
         "\" stroke=\"black\"/>\n<line x1=\"" + num(x0) + "\" y1=\"" + num(y0) + "\" x2=\"" + num(x0) + "\" y2=\"" +
         num(y0 - ph) + "\" stroke=\"black\"/>\n</svg>\n";
  return out;
}

std::string cka_svg(const json& cka) {
  const auto& m = cka.at("matrix");
  const std::size_t l = m.size();
  const double cell = std::max(8.0, 240.0 / static_cast<double>(std::max<std::size_t>(l, 1)));
  const int size = static_cast<int>(cell * static_cast<double>(l)) + 80;
  std::string out = svg_open(size, size, "Intra-layer CKA");
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      const double v = std::clamp(m[i][j].get<double>(), 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - v)));
      out += "<rect x=\"" + num(40 + cell * static_cast<double>(j)) + "\" y=\"" + num(40 + cell * static_cast<double>(i)) +
             "\" width=\"" + num(cell) + "\" height=\"" + num(cell) + "\" fill=\"rgb(" + std::to_string(shade) + "," +
             std::to_string(shade) + ",255)\"/>\n";
    }
  out += "</svg>\n";
  return out;
}

int run_report(const Common& c, const ReportOpts& o) {
  require(!o.inputs.empty(), ErrorKind::kInvalidArgument, "report: no --inputs given");
  for (const auto& dir : o.inputs)
    require(fs::is_directory(dir), ErrorKind::kMissingFile, "report: input directory not found: " + dir);
  json cfg = base_config("report", c);
  cfg["inputs"] = o.inputs;
  OutputDir out(c.out, cfg);
  json summary = json::object();
  summary["engine_version"] = kEngineVersion;
  static const char* known[] = {"sensitivity", "hardness", "memorization", "dims", "similarity", "uq", "saliency"};
  for (const auto& dir : o.inputs) {
    for (const char* name : known) {
      const fs::path p = fs::path(dir) / (std::string(name) + ".json");
      if (!fs::exists(p)) continue;
      json j;
      try {
        j = json::parse(read_file(p));
      } catch (const json::parse_error&) {
        fail(ErrorKind::kParse, "report: invalid JSON in " + p.string());
      }
      require(!summary.contains(name), ErrorKind::kInvalidArgument,
              std::string("report: more than one input provides ") + name + ".json");
      summary[name] = j;
    }
  }
  out.json_file("summary.json", summary);
  if (summary.contains("sensitivity")) out.text("sensitivity.svg", sensitivity_svg(summary["sensitivity"]));
  if (summary.contains("uq")) out.text("abstention.svg", abstention_svg(summary["uq"]));
  if (summary.contains("similarity") && summary["similarity"].contains("cka"))
    out.text("cka.svg", cka_svg(summary["similarity"]["cka"]));
  out.finish();
  return kExitOk;
}

int default_threads() {
  if (const char* env = std::getenv("SBDIAG_THREADS")) {
    int v = 0;
    const auto res = std::from_chars(env, env + std::strlen(env), v);
    if (res.ec == std::errc() && v >= 1) return v;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-run diagnostics engine"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kEngineVersion);

  Common common;
  common.threads = default_threads();

  SensitivityOpts sens;
  auto* s_sens = app.add_subcommand("sensitivity", "Cue sensitivity profile from perturbed softmax outputs");
  add_common(s_sens, common, true);
  s_sens->add_option("--emit-perturbations", sens.emit_dir, "Write the 22 perturbed image stacks to this directory");

  HardnessOpts hard;
  auto* s_hard = app.add_subcommand("hardness", "Per-sample hardness estimators and composite");
  add_common(s_hard, common, true);
  s_hard->add_option("--depth-k", hard.depth_k, "k for prediction-depth probes")->capture_default_str();
  s_hard->add_option("--shrinkage", hard.shrinkage, "Covariance shrinkage")->capture_default_str();
  s_hard->add_option("--hard-fraction", hard.hard_fraction, "Share of samples in the hard subset")->capture_default_str();

  auto* s_mem = app.add_subcommand("memorize", "Hard-subset memorization tendency from fold pairs");
  add_common(s_mem, common, true);

  DimsOpts dims;
  auto* s_dims = app.add_subcommand("dims", "Intrinsic dimension per layer and image channel PCA");
  add_common(s_dims, common, true);
  s_dims->add_option("--lpca-k", dims.lpca_k)->capture_default_str();
  s_dims->add_option("--var-threshold", dims.var_threshold)->capture_default_str();
  s_dims->add_option("--mle-k", dims.mle_k)->capture_default_str();
  s_dims->add_option("--discard-fraction", dims.discard)->capture_default_str();
  s_dims->add_option("--pca-components", dims.pca_components)->capture_default_str();
  s_dims->add_option("--background-threshold", dims.background)->capture_default_str();

  SimilarityOpts sim;
  auto* s_sim = app.add_subcommand("similarity", "Intra-layer CKA, checkpoint kappa, kernel TV, weight displacement");
  add_common(s_sim, common, true);
  s_sim->add_option("--minibatch", sim.minibatch)->capture_default_str();

  UqOpts uq;
  auto* s_uq = app.add_subcommand("uq", "Calibration, epistemic uncertainty and alignment scores");
  add_common(s_uq, common, true);
  s_uq->add_option("--bandwidth", uq.bandwidth, "'auto' or a fixed kernel width")->capture_default_str();
  s_uq->add_option("--k", uq.k)->capture_default_str();
  s_uq->add_option("--ash-keep", uq.ash_keep)->capture_default_str();
  s_uq->add_option("--q-max", uq.q_max)->capture_default_str()->check(CLI::Range(1, 99));
  s_uq->add_option("--shrinkage", uq.shrinkage)->capture_default_str();

  SaliencyOpts sal;
  auto* s_sal = app.add_subcommand("saliency", "Grad-CAM++ maps and concordance with masks");
  add_common(s_sal, common, true);
  s_sal->add_flag("--emit-maps", sal.emit_maps, "Write the upsampled maps as a tensor file");
  s_sal->add_option("--q-min", sal.q_min)->capture_default_str()->check(CLI::Range(0, 100));

  SynthOpts syn;
  auto* s_syn = app.add_subcommand("synth", "Write a synthetic run directory");
  add_common(s_syn, common, false);
  s_syn->add_option("--preset", syn.preset)->capture_default_str();
  s_syn->add_option("--samples", syn.samples)->capture_default_str();

  ReportOpts rep;
  auto* s_rep = app.add_subcommand("report", "Merge prior outputs into summary.json and SVG plots");
  add_common(s_rep, common, false);
  s_rep->add_option("--inputs", rep.inputs, "Output directories of earlier subcommands")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "usage: " << msg << "\n";
    return kExitUsage;
  }

  try {
    set_num_threads(common.threads);
    if (s_sens->parsed()) return run_sensitivity(common, sens);
    if (s_hard->parsed()) return run_hardness(common, hard);
    if (s_mem->parsed()) return run_memorize(common);
    if (s_dims->parsed()) return run_dims(common, dims);
    if (s_sim->parsed()) return run_similarity(common, sim);
    if (s_uq->parsed()) return run_uq(common, uq);
    if (s_sal->parsed()) return run_saliency(common, sal);
    if (s_syn->parsed()) return run_synth(common, syn);
    if (s_rep->parsed()) return run_report(common, rep);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << msg << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
