#ifndef SBDIAG_MEMORIZATION_HPP
#define SBDIAG_MEMORIZATION_HPP

// Memorization scores and the hard-subset memorization tendency MT_H, from
// correctness vectors of models trained with and without each hard subset.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <vector>

#include <json.hpp>

#include "sbdiag/common.hpp"
#include "sbdiag/tensor_file.hpp"

namespace sbdiag::memorization {

/// ceil(fraction * N) ids with the largest composite; ties go to lower ids.
inline std::vector<std::size_t> select_hard_subset(std::span<const double> composite, double fraction = 0.05) {
  require(fraction > 0.0 && fraction < 1.0, ErrorKind::kInvalidArgument, "select_hard_subset: fraction in (0,1)");
  const std::size_t n = composite.size();
  const auto m = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return composite[a] > composite[b]; });
  ids.resize(std::min(m, n));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// One fold's correctness on its hard subset H_k. Rows are training seeds,
/// columns are the members of H_k.
struct FoldPair {
  int fold = 0;
  std::vector<std::int64_t> hard_subset;
  BoolMatrix correct_in;   // model trained on D_k
  BoolMatrix correct_out;  // model trained on D_k \ H_k
  std::optional<double> test_accuracy_full;
  std::optional<double> test_accuracy_pruned;
};

inline double mean_of(const BoolMatrix& m) { return m.cast<double>().mean(); }

/// mean over folds of [acc_in(H_k) - acc_out(H_k)], each accuracy pooled over
/// seeds and hard-subset members.
inline double mt_hard(const std::vector<FoldPair>& folds) {
  require(!folds.empty(), ErrorKind::kInvalidArgument, "mt_hard: no folds");
  double s = 0.0;
  for (const auto& f : folds) {
    require(f.correct_in.size() > 0 && f.correct_out.size() > 0, ErrorKind::kInvalidArgument,
            "mt_hard: empty hard subset in fold " + std::to_string(f.fold));
    require(f.correct_in.cols() == f.correct_out.cols(), ErrorKind::kDimMismatch,
            "mt_hard: in/out vectors cover different subsets in fold " + std::to_string(f.fold));
    s += mean_of(f.correct_in) - mean_of(f.correct_out);
  }
  return s / static_cast<double>(folds.size());
}

/// P(correct | trained with sample) - P(correct | trained without).
inline double mem_score(double in_correct_prob, double out_correct_prob) {
  require(in_correct_prob >= 0.0 && in_correct_prob <= 1.0 && out_correct_prob >= 0.0 && out_correct_prob <= 1.0,
          ErrorKind::kInvalidArgument, "mem_score: probabilities must lie in [0,1]");
  return in_correct_prob - out_correct_prob;
}

/// Per-sample memorization with probabilities estimated as empirical
/// frequencies over the seeds (rows) of each condition.
inline std::vector<double> mem_scores(const BoolMatrix& correct_in, const BoolMatrix& correct_out) {
  require(correct_in.cols() == correct_out.cols(), ErrorKind::kDimMismatch, "mem_scores: column mismatch");
  require(correct_in.rows() >= 1 && correct_out.rows() >= 1, ErrorKind::kInvalidArgument, "mem_scores: no seeds");
  std::vector<double> out(static_cast<std::size_t>(correct_in.cols()));
  for (Eigen::Index j = 0; j < correct_in.cols(); ++j)
    out[static_cast<std::size_t>(j)] =
        mem_score(correct_in.col(j).cast<double>().mean(), correct_out.col(j).cast<double>().mean());
  return out;
}

// ---------------------------------------------------------------------------
// Fold index
//
// {"folds": [{"fold": 0, "hard_subset": "h0.spt", "correct_in": "in0.spt",
//             "correct_out": "out0.spt", "test_accuracy_full": 0.91,
//             "test_accuracy_pruned": 0.90}, ...]}
//
// hard_subset is i64 (|H|); correct_in / correct_out are u8 (R, |H|) or (|H|).
// ---------------------------------------------------------------------------

namespace detail {
inline BoolMatrix correctness_from(const TensorFile& t, std::size_t h, const std::string& file) {
  require(t.dtype() != DType::kF32, ErrorKind::kDimMismatch, file + ": correctness must be an integer tensor");
  std::size_t rows = 1;
  if (t.rank() == 1) {
    require(t.dim(0) == h, ErrorKind::kDimMismatch, file + ": length differs from hard subset");
  } else {
    require(t.rank() == 2 && t.dim(1) == h, ErrorKind::kDimMismatch, file + ": expected (R, |H|)");
    rows = t.dim(0);
  }
  const auto v = t.to_i64();
  BoolMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(h));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < h; ++j) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[r * h + j] != 0;
  return m;
}
}  // namespace detail

inline std::vector<FoldPair> load_fold_index(const std::filesystem::path& path) {
  using json = nlohmann::json;
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kMissingFile, "fold index not found: " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error&) {
    fail(ErrorKind::kParse, "fold index: invalid JSON in " + path.string());
  }
  require(j.is_object() && j.size() == 1 && j.contains("folds") && j["folds"].is_array(), ErrorKind::kParse,
          "fold index: expected exactly {\"folds\": [...]}");
  const auto root = path.parent_path();
  static const std::set<std::string> allowed{"fold", "hard_subset", "correct_in", "correct_out",
                                             "test_accuracy_full", "test_accuracy_pruned"};
  std::vector<FoldPair> folds;
  for (const auto& e : j["folds"]) {
    require(e.is_object(), ErrorKind::kParse, "fold index: entries must be objects");
    for (auto it = e.begin(); it != e.end(); ++it)
      require(allowed.count(it.key()) != 0, ErrorKind::kParse, "fold index: unknown key '" + it.key() + "'");
    for (const char* k : {"fold", "hard_subset", "correct_in", "correct_out"})
      require(e.contains(k), ErrorKind::kParse, std::string("fold index: missing field '") + k + "'");
    FoldPair f;
    f.fold = e["fold"].get<int>();
    const auto hs_file = e["hard_subset"].get<std::string>();
    const auto hs = read_tensor(root / hs_file);
    require(hs.rank() == 1 && hs.dtype() != DType::kF32, ErrorKind::kDimMismatch,
            hs_file + ": hard subset must be a rank-1 integer tensor");
    f.hard_subset = hs.to_i64();
    const std::string in_file = e["correct_in"].get<std::string>(), out_file = e["correct_out"].get<std::string>();
    f.correct_in = detail::correctness_from(read_tensor(root / in_file), f.hard_subset.size(), in_file);
    f.correct_out = detail::correctness_from(read_tensor(root / out_file), f.hard_subset.size(), out_file);
    if (e.contains("test_accuracy_full")) f.test_accuracy_full = e["test_accuracy_full"].get<double>();
    if (e.contains("test_accuracy_pruned")) f.test_accuracy_pruned = e["test_accuracy_pruned"].get<double>();
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace sbdiag::memorization

#endif  // SBDIAG_MEMORIZATION_HPP
