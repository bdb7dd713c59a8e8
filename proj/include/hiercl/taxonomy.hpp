#pragma once

#include <array>
#include <string>
#include <vector>

#include "hiercl/error.hpp"
#include "hiercl/matrix.hpp"

namespace hiercl {

/// A record's position in the 3-level classification hierarchy. Subclass
/// codes encode their main class as a prefix (1402 -> main class 14), which
/// keeps the tree structure checkable.
struct HierLabel {
  int main_class = 0;
  int subclass = 0;
  std::string patent_id;

  friend bool operator==(const HierLabel&, const HierLabel&) = default;
};

inline void validate(const HierLabel& label) {
  check(!label.patent_id.empty(), "taxonomy/empty_patent_id",
        "HierLabel: patent_id must be non-empty");
  check(label.subclass > 0 && label.main_class > 0, "taxonomy/bad_code",
        "HierLabel: class codes must be positive (got main_class=" +
            std::to_string(label.main_class) +
            ", subclass=" + std::to_string(label.subclass) + ")");
  check(label.subclass / 100 == label.main_class, "taxonomy/prefix_mismatch",
        "HierLabel: subclass " + std::to_string(label.subclass) +
            " does not encode main_class " + std::to_string(label.main_class) +
            " as its prefix");
}

/// The three hierarchy levels, fine to coarse.
enum class HierLevel { PatentId, Subclass, MainClass };

inline constexpr std::array<HierLevel, 3> kAllLevels = {
    HierLevel::PatentId, HierLevel::Subclass, HierLevel::MainClass};

inline const char* level_name(HierLevel level) {
  switch (level) {
    case HierLevel::PatentId: return "patent_id";
    case HierLevel::Subclass: return "subclass";
    case HierLevel::MainClass: return "main_class";
  }
  return "unknown";
}

/// Per-level relevance scalars, s_p > s_s > s_m > 0. Defaults are the
/// balanced values used throughout: emphasis on the patent level with
/// progressively lower weight for broader matches.
struct ScoreConfig {
  double s_p = 1.0;
  double s_s = 0.35;
  double s_m = 0.2;
};

/// Meaningful configurations order the scores strictly (s_p > s_s > s_m > 0);
/// equalities and zeros are allowed so ablations such as diagonal-only
/// relevance (s_s = s_m = 0) stay expressible.
inline void validate(const ScoreConfig& cfg) {
  check(cfg.s_p >= cfg.s_s && cfg.s_s >= cfg.s_m && cfg.s_m >= 0.0 && cfg.s_p > 0.0,
        "taxonomy/bad_scores",
        "ScoreConfig: requires s_p >= s_s >= s_m >= 0 and s_p > 0 (got " +
            std::to_string(cfg.s_p) + ", " + std::to_string(cfg.s_s) + ", " +
            std::to_string(cfg.s_m) + ")");
}

/// Relevance score between two labels: s_p for the same patent, s_s for the
/// same subclass, s_m for the same main class, 0 otherwise. The cases are
/// mutually exclusive on consistent labels, so the first match wins.
inline double relevance(const HierLabel& a, const HierLabel& b, const ScoreConfig& cfg) {
  if (a.patent_id == b.patent_id) return cfg.s_p;
  if (a.subclass == b.subclass) return cfg.s_s;
  if (a.main_class == b.main_class) return cfg.s_m;
  return 0.0;
}

/// Pairwise relevance over a batch: entry (i, j) = relevance(anchors[i],
/// candidates[j]). For a positive-pair batch the diagonal is s_p.
inline DenseMatrix relevance_matrix(const std::vector<HierLabel>& anchors,
                                    const std::vector<HierLabel>& candidates,
                                    const ScoreConfig& cfg) {
  check(anchors.size() == candidates.size(), "taxonomy/length_mismatch",
        "relevance_matrix: anchor/candidate counts differ (" +
            std::to_string(anchors.size()) + " vs " +
            std::to_string(candidates.size()) + ")");
  check(!anchors.empty(), "taxonomy/empty", "relevance_matrix: empty batch");
  DenseMatrix h(anchors.size(), candidates.size());
  for (std::size_t i = 0; i < anchors.size(); ++i)
    for (std::size_t j = 0; j < candidates.size(); ++j)
      h(i, j) = relevance(anchors[i], candidates[j], cfg);
  return h;
}

/// mask[j] is true iff database[j] matches the query at `level` or finer.
/// Coarser levels therefore contain the finer ones: the PatentId mask is a
/// subset of the Subclass mask, which is a subset of the MainClass mask.
inline std::vector<bool> relevant_mask(const HierLabel& query,
                                       const std::vector<HierLabel>& database,
                                       HierLevel level) {
  check(!database.empty(), "taxonomy/empty", "relevant_mask: empty database");
  std::vector<bool> mask(database.size(), false);
  for (std::size_t j = 0; j < database.size(); ++j) {
    switch (level) {
      case HierLevel::PatentId:
        mask[j] = database[j].patent_id == query.patent_id;
        break;
      case HierLevel::Subclass:
        mask[j] = database[j].subclass == query.subclass;
        break;
      case HierLevel::MainClass:
        mask[j] = database[j].main_class == query.main_class;
        break;
    }
  }
  return mask;
}

}  // namespace hiercl
