#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "hiercl/data.hpp"
#include "hiercl/encoder.hpp"
#include "hiercl/error.hpp"
#include "hiercl/format.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/sampler.hpp"
#include "hiercl/taxonomy.hpp"

namespace hiercl {

/// Embedded database: l2-normalized rows with parallel label/id arrays.
struct EmbeddingIndex {
  DenseMatrix embeddings;
  std::vector<HierLabel> labels;
  std::vector<std::string> image_ids;

  std::size_t size() const { return labels.size(); }
};

/// Full descending-similarity ordering of the database for one query.
/// Ties break by ascending database index.
struct Ranking {
  std::string query_id;
  std::vector<std::size_t> order;
  std::vector<double> similarities;
};

/// Encodes records and l2-normalizes each embedding row.
inline EmbeddingIndex build_index(const EncoderParams& params,
                                  const std::vector<ImageRecord>& records) {
  check(!records.empty(), "retrieval/empty_database", "build_index: no records");
  EmbeddingIndex index;
  index.embeddings = forward(params, features_matrix(records));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double n = norm2(index.embeddings.row(i));
    check(n > 0.0 && std::isfinite(n), "retrieval/zero_embedding",
          "build_index: record \"" + records[i].image_id +
              "\" has a zero or non-finite embedding");
    for (double& v : index.embeddings.row(i)) v /= n;
    index.labels.push_back(records[i].label);
    index.image_ids.push_back(records[i].image_id);
  }
  return index;
}

inline Ranking rank(const EmbeddingIndex& index, std::span<const double> query_embedding,
                    std::string query_id = "") {
  check(query_embedding.size() == index.embeddings.cols(), "retrieval/dim_mismatch",
        "rank: query dimension " + std::to_string(query_embedding.size()) +
            " != index dimension " + std::to_string(index.embeddings.cols()));
  Ranking ranking;
  ranking.query_id = std::move(query_id);
  const std::size_t n = index.size();
  std::vector<double> sims(n);
  for (std::size_t i = 0; i < n; ++i) sims[i] = dot(index.embeddings.row(i), query_embedding);
  ranking.order.resize(n);
  std::iota(ranking.order.begin(), ranking.order.end(), std::size_t{0});
  std::sort(ranking.order.begin(), ranking.order.end(),
            [&sims](std::size_t a, std::size_t b) {
              if (sims[a] != sims[b]) return sims[a] > sims[b];
              return a < b;
            });
  ranking.similarities.resize(n);
  for (std::size_t r = 0; r < n; ++r) ranking.similarities[r] = sims[ranking.order[r]];
  return ranking;
}

namespace detail {

inline std::size_t count_relevant(const std::vector<bool>& relevant) {
  std::size_t r = 0;
  for (const bool b : relevant) r += b ? 1 : 0;
  return r;
}

inline void check_mask(const Ranking& ranking, const std::vector<bool>& relevant,
                       const char* op) {
  check(relevant.size() == ranking.order.size(), "retrieval/dim_mismatch",
        std::string(op) + ": mask length does not match database size");
  check(count_relevant(relevant) >= 1, "retrieval/no_relevant",
        std::string(op) + ": no relevant item for query \"" + ranking.query_id + "\"");
}

}  // namespace detail

/// AP = (1/R) * sum over relevant ranks k of precision@k, binary relevance,
/// full list.
inline double average_precision(const Ranking& ranking, const std::vector<bool>& relevant) {
  detail::check_mask(ranking, relevant, "average_precision");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t pos = 0; pos < ranking.order.size(); ++pos) {
    if (!relevant[ranking.order[pos]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
  }
  return sum / static_cast<double>(hits);
}

/// Binary gains, log2(rank+1) discount, full list; ideal places all R
/// relevant items at ranks 1..R.
inline double ndcg(const Ranking& ranking, const std::vector<bool>& relevant) {
  detail::check_mask(ranking, relevant, "ndcg");
  double dcg = 0.0;
  for (std::size_t pos = 0; pos < ranking.order.size(); ++pos)
    if (relevant[ranking.order[pos]])
      dcg += 1.0 / std::log2(static_cast<double>(pos + 2));
  const std::size_t r = detail::count_relevant(relevant);
  double idcg = 0.0;
  for (std::size_t pos = 0; pos < r; ++pos)
    idcg += 1.0 / std::log2(static_cast<double>(pos + 2));
  return dcg / idcg;
}

/// 1/r for the first relevant rank r if r <= K, else 0.
inline double mrr_at_k(const Ranking& ranking, const std::vector<bool>& relevant,
                       std::size_t k) {
  check(k >= 1, "retrieval/bad_k", "mrr_at_k: K must be >= 1");
  const std::size_t limit = std::min(k, ranking.order.size());
  for (std::size_t pos = 0; pos < limit; ++pos)
    if (relevant[ranking.order[pos]]) return 1.0 / static_cast<double>(pos + 1);
  return 0.0;
}

/// 1 iff any relevant item appears within the top K.
inline double acc_at_k(const Ranking& ranking, const std::vector<bool>& relevant,
                       std::size_t k) {
  check(k >= 1, "retrieval/bad_k", "acc_at_k: K must be >= 1");
  const std::size_t limit = std::min(k, ranking.order.size());
  for (std::size_t pos = 0; pos < limit; ++pos)
    if (relevant[ranking.order[pos]]) return 1.0;
  return 0.0;
}

/// Per-level aggregate over the queries that had at least one relevant item
/// at that level.
struct LevelMetrics {
  double map = 0.0;
  double ndcg = 0.0;
  std::map<std::size_t, double> mrr;
  std::map<std::size_t, double> acc;
  std::size_t evaluated = 0;
  double mean_relevant = 0.0;
};

struct MetricsReport {
  std::size_t query_count = 0;
  std::vector<std::size_t> ks;
  std::array<LevelMetrics, kAllLevels.size()> levels;

  const LevelMetrics& at(HierLevel level) const {
    return levels[static_cast<std::size_t>(level)];
  }
};

/// Embeds queries, ranks each against the database once, and aggregates all
/// metrics at all levels. Queries with no relevant item at a level are
/// excluded from that level's means. Relevant-set nesting and monotonicity
/// in K are asserted on every query.
inline MetricsReport evaluate(const EncoderParams& params, const EvalSplit& eval_split,
                              std::vector<std::size_t> ks = {1, 5, 10, 20}) {
  check(!eval_split.database.empty(), "retrieval/empty_database",
        "evaluate: empty database");
  check(!eval_split.queries.empty(), "retrieval/no_queries", "evaluate: no queries");
  check(!ks.empty(), "retrieval/bad_k", "evaluate: no K values given");
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  check(ks.front() >= 1, "retrieval/bad_k", "evaluate: K values must be >= 1");

  const EmbeddingIndex index = build_index(params, eval_split.database);
  DenseMatrix query_embeddings = forward(params, features_matrix(eval_split.queries));
  for (std::size_t q = 0; q < eval_split.queries.size(); ++q) {
    const double n = norm2(query_embeddings.row(q));
    check(n > 0.0 && std::isfinite(n), "retrieval/zero_embedding",
          "evaluate: query \"" + eval_split.queries[q].image_id +
              "\" has a zero or non-finite embedding");
    for (double& v : query_embeddings.row(q)) v /= n;
  }

  MetricsReport report;
  report.query_count = eval_split.queries.size();
  report.ks = ks;
  std::array<double, kAllLevels.size()> relevant_sums{};

  for (std::size_t q = 0; q < eval_split.queries.size(); ++q) {
    const ImageRecord& query = eval_split.queries[q];
    const Ranking ranking = rank(index, query_embeddings.row(q), query.image_id);

    std::array<std::vector<bool>, kAllLevels.size()> masks;
    for (const HierLevel level : kAllLevels)
      masks[static_cast<std::size_t>(level)] =
          relevant_mask(query.label, index.labels, level);

    // Nesting: patent-relevant implies subclass-relevant implies
    // main-class-relevant, for every database item.
    for (std::size_t i = 0; i < index.size(); ++i) {
      const bool p = masks[0][i];
      const bool s = masks[1][i];
      const bool m = masks[2][i];
      check(!p || s, "retrieval/nesting_violation",
            "patent-relevant item not subclass-relevant for query \"" + query.image_id +
                "\"");
      check(!s || m, "retrieval/nesting_violation",
            "subclass-relevant item not main-class-relevant for query \"" +
                query.image_id + "\"");
    }

    std::array<std::map<std::size_t, double>, kAllLevels.size()> mrr_q;
    std::array<std::map<std::size_t, double>, kAllLevels.size()> acc_q;
    for (const HierLevel level : kAllLevels) {
      const auto li = static_cast<std::size_t>(level);
      const std::vector<bool>& mask = masks[li];
      const std::size_t r = detail::count_relevant(mask);
      if (r == 0) continue;
      LevelMetrics& agg = report.levels[li];
      agg.map += average_precision(ranking, mask);
      agg.ndcg += ndcg(ranking, mask);
      double prev_mrr = 0.0;
      double prev_acc = 0.0;
      for (const std::size_t k : ks) {
        const double m = mrr_at_k(ranking, mask, k);
        const double a = acc_at_k(ranking, mask, k);
        check(m >= prev_mrr && a >= prev_acc, "retrieval/monotonicity_violation",
              "MRR@K or Acc@K decreased in K for query \"" + query.image_id + "\"");
        prev_mrr = m;
        prev_acc = a;
        agg.mrr[k] += m;
        agg.acc[k] += a;
        mrr_q[li][k] = m;
        acc_q[li][k] = a;
      }
      agg.evaluated += 1;
      relevant_sums[li] += static_cast<double>(r);
    }

    // Mask nesting makes coarser levels rank at least as well; assert it
    // whenever adjacent levels were both evaluated.
    for (std::size_t li = 0; li + 1 < kAllLevels.size(); ++li) {
      if (mrr_q[li].empty() || mrr_q[li + 1].empty()) continue;
      for (const std::size_t k : ks) {
        check(mrr_q[li + 1][k] >= mrr_q[li][k] && acc_q[li + 1][k] >= acc_q[li][k],
              "retrieval/nesting_violation",
              "metric not monotone across levels for query \"" + query.image_id + "\"");
      }
    }
  }

  for (const HierLevel level : kAllLevels) {
    const auto li = static_cast<std::size_t>(level);
    LevelMetrics& agg = report.levels[li];
    if (agg.evaluated == 0) continue;
    const double n = static_cast<double>(agg.evaluated);
    agg.map /= n;
    agg.ndcg /= n;
    for (auto& [k, v] : agg.mrr) v /= n;
    for (auto& [k, v] : agg.acc) v /= n;
    agg.mean_relevant = relevant_sums[li] / n;
  }
  return report;
}

inline nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["query_count"] = report.query_count;
  j["ks"] = report.ks;
  for (const HierLevel level : kAllLevels) {
    const LevelMetrics& m = report.at(level);
    nlohmann::json lj;
    lj["evaluated_queries"] = m.evaluated;
    lj["mean_relevant"] = m.mean_relevant;
    lj["map"] = m.map;
    lj["ndcg"] = m.ndcg;
    nlohmann::json mrr_j = nlohmann::json::object();
    nlohmann::json acc_j = nlohmann::json::object();
    for (const std::size_t k : report.ks) {
      mrr_j[std::to_string(k)] = m.mrr.count(k) ? m.mrr.at(k) : 0.0;
      acc_j[std::to_string(k)] = m.acc.count(k) ? m.acc.at(k) : 0.0;
    }
    lj["mrr"] = mrr_j;
    lj["acc"] = acc_j;
    j[level_name(level)] = lj;
  }
  return j;
}

/// One row per (level, metric, K); K empty for mAP and nDCG. The queries
/// column is the number of queries that entered that level's mean.
inline std::string report_to_csv(const MetricsReport& report) {
  std::string csv = "level,metric,K,value,queries\n";
  for (const HierLevel level : kAllLevels) {
    const LevelMetrics& m = report.at(level);
    const std::string name = level_name(level);
    const std::string queries = std::to_string(m.evaluated);
    csv += name + ",map,," + format_double(m.map) + "," + queries + "\n";
    csv += name + ",ndcg,," + format_double(m.ndcg) + "," + queries + "\n";
    for (const std::size_t k : report.ks)
      csv += name + ",mrr," + std::to_string(k) + "," +
             format_double(m.mrr.count(k) ? m.mrr.at(k) : 0.0) + "," + queries + "\n";
    for (const std::size_t k : report.ks)
      csv += name + ",acc," + std::to_string(k) + "," +
             format_double(m.acc.count(k) ? m.acc.at(k) : 0.0) + "," + queries + "\n";
  }
  return csv;
}

}  // namespace hiercl
