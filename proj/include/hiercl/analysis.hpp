#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "hiercl/data.hpp"
#include "hiercl/encoder.hpp"
#include "hiercl/error.hpp"
#include "hiercl/format.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/retrieval.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/sampler.hpp"
#include "hiercl/taxonomy.hpp"
#include "hiercl/train.hpp"

namespace hiercl {

/// One aggregate cell of the method comparison table.
struct ComparisonRow {
  std::string method;
  HierLevel level = HierLevel::PatentId;
  std::string metric;
  std::optional<std::size_t> k;
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t seeds = 0;
};

namespace detail {

struct SeedReports {
  MetricsReport baseline;
  MetricsReport cl;
  MetricsReport hmcl;
};

/// Runs f(0..n-1), at most `threads` jobs in flight. Results must be written
/// to pre-sized slots so ordering never depends on scheduling.
template <typename F>
inline void run_batched(std::size_t n, std::size_t threads, F f) {
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::size_t next = 0;
  while (next < n) {
    std::vector<std::future<void>> window;
    for (std::size_t j = 0; j < threads && next < n; ++j, ++next)
      window.push_back(std::async(std::launch::async, f, next));
    for (std::future<void>& fut : window) fut.get();
  }
}

inline double population_std(const std::vector<double>& xs, double mean) {
  double sq = 0.0;
  for (const double x : xs) sq += (x - mean) * (x - mean);
  return std::sqrt(sq / static_cast<double>(xs.size()));
}

inline void append_method_rows(std::vector<ComparisonRow>& rows, const std::string& method,
                               const std::vector<const MetricsReport*>& reports) {
  const std::vector<std::size_t>& ks = reports.front()->ks;
  auto add = [&](HierLevel level, const std::string& metric, std::optional<std::size_t> k,
                 auto getter) {
    std::vector<double> values;
    values.reserve(reports.size());
    for (const MetricsReport* r : reports) values.push_back(getter(r->at(level)));
    double mean = 0.0;
    for (const double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    rows.push_back(
        {method, level, metric, k, mean, population_std(values, mean), values.size()});
  };
  for (const HierLevel level : kAllLevels) {
    add(level, "map", std::nullopt, [](const LevelMetrics& m) { return m.map; });
    add(level, "ndcg", std::nullopt, [](const LevelMetrics& m) { return m.ndcg; });
    for (const std::size_t k : ks)
      add(level, "mrr", k,
          [k](const LevelMetrics& m) { return m.mrr.count(k) ? m.mrr.at(k) : 0.0; });
    for (const std::size_t k : ks)
      add(level, "acc", k,
          [k](const LevelMetrics& m) { return m.acc.count(k) ? m.acc.at(k) : 0.0; });
  }
}

}  // namespace detail

/// Trains CL and HMCL variants per seed (identical configs except the loss
/// mode) and evaluates them on the test split together with the untrained
/// Baseline encoder of the same seed. Rows aggregate mean and population
/// standard deviation per (method, level, metric, K), methods in the order
/// Baseline, CL, HMCL. Deterministic for a fixed seed list regardless of
/// `threads`.
inline std::vector<ComparisonRow> run_comparison(const Dataset& ds, const SplitSpec& split,
                                                 const TrainConfig& cfg_base,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 std::size_t threads = 1,
                                                 std::vector<std::size_t> ks = {1, 5, 10, 20}) {
  check(!seeds.empty(), "analysis/no_seeds", "run_comparison: seed list is empty");
  validate(cfg_base);
  validate_split(ds, split);
  check(!split.test.empty(), "analysis/empty_test", "run_comparison: test split is empty");

  Rng eval_rng(derive_seed(split.seed, "eval-test"));
  const EvalSplit test_split = build_eval_split(ds, split.test, 2, eval_rng);

  std::vector<detail::SeedReports> reports(seeds.size());
  detail::run_batched(seeds.size(), std::max<std::size_t>(threads, 1), [&](std::size_t i) {
    const std::uint64_t seed = seeds[i];

    Rng init_rng(derive_seed(seed, "init"));
    const EncoderParams baseline =
        init_encoder(ds.d_in, cfg_base.d, cfg_base.hidden, init_rng);
    reports[i].baseline = evaluate(baseline, test_split, ks);

    TrainConfig cfg_cl = cfg_base;
    cfg_cl.loss_mode = LossMode::Contrastive;
    cfg_cl.seed = seed;
    reports[i].cl = evaluate(train(ds, split, cfg_cl).params, test_split, ks);

    TrainConfig cfg_hmcl = cfg_base;
    cfg_hmcl.loss_mode = LossMode::Hierarchical;
    cfg_hmcl.seed = seed;
    reports[i].hmcl = evaluate(train(ds, split, cfg_hmcl).params, test_split, ks);
  });

  std::vector<ComparisonRow> rows;
  std::vector<const MetricsReport*> slice(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) slice[i] = &reports[i].baseline;
  detail::append_method_rows(rows, "Baseline", slice);
  for (std::size_t i = 0; i < seeds.size(); ++i) slice[i] = &reports[i].cl;
  detail::append_method_rows(rows, "CL", slice);
  for (std::size_t i = 0; i < seeds.size(); ++i) slice[i] = &reports[i].hmcl;
  detail::append_method_rows(rows, "HMCL", slice);
  return rows;
}

inline std::string comparison_to_csv(const std::vector<ComparisonRow>& rows) {
  std::string csv = "method,level,metric,K,mean,std,seeds\n";
  for (const ComparisonRow& row : rows) {
    csv += row.method + "," + level_name(row.level) + "," + row.metric + ",";
    if (row.k.has_value()) csv += std::to_string(*row.k);
    csv += "," + format_double(row.mean) + "," + format_double(row.std_dev) + "," +
           std::to_string(row.seeds) + "\n";
  }
  return csv;
}

struct ProjectionRow {
  double x = 0.0;
  double y = 0.0;
  int subclass = 0;
  int main_class = 0;
  std::string image_id;
};

/// Embeds every record of the requested subclasses (l2-normalized, as used
/// for retrieval) and projects onto the first two principal components.
inline std::vector<ProjectionRow> project_subclasses(const EncoderParams& params,
                                                     const Dataset& ds,
                                                     const std::vector<int>& subclasses) {
  check(!subclasses.empty(), "analysis/no_subclasses",
        "project_subclasses: no subclass codes given");
  std::set<int> present;
  for (const ImageRecord& rec : ds.records) present.insert(rec.label.subclass);
  std::set<int> wanted;
  for (const int code : subclasses) {
    check(present.count(code) > 0, "analysis/unknown_subclass",
          "subclass " + std::to_string(code) + " does not occur in the dataset");
    wanted.insert(code);
  }
  std::vector<ImageRecord> selected;
  for (const ImageRecord& rec : ds.records)
    if (wanted.count(rec.label.subclass) > 0) selected.push_back(rec);
  check(selected.size() >= 3, "analysis/too_few_records",
        "project_subclasses: need at least 3 records, found " +
            std::to_string(selected.size()));

  const EmbeddingIndex index = build_index(params, selected);
  const Pca2Result pca = pca2(index.embeddings);

  std::vector<ProjectionRow> rows;
  rows.reserve(selected.size());
  for (std::size_t i = 0; i < selected.size(); ++i)
    rows.push_back({pca.projection(i, 0), pca.projection(i, 1),
                    selected[i].label.subclass, selected[i].label.main_class,
                    selected[i].image_id});
  return rows;
}

inline std::string projection_to_csv(const std::vector<ProjectionRow>& rows) {
  std::string csv = "x,y,subclass,main_class,image_id\n";
  for (const ProjectionRow& row : rows)
    csv += format_double(row.x) + "," + format_double(row.y) + "," +
           std::to_string(row.subclass) + "," + std::to_string(row.main_class) + "," +
           row.image_id + "\n";
  return csv;
}

struct CurveRow {
  std::string method;
  HierLevel level = HierLevel::PatentId;
  std::string metric;
  std::size_t k = 0;
  double value = 0.0;
};

/// Flattens a report's MRR@K and Acc@K values into plot-ready rows.
inline std::vector<CurveRow> curves_mrr_acc(const MetricsReport& report,
                                            const std::string& method) {
  std::vector<CurveRow> rows;
  for (const HierLevel level : kAllLevels) {
    const LevelMetrics& m = report.at(level);
    for (const std::size_t k : report.ks)
      rows.push_back({method, level, "mrr", k, m.mrr.count(k) ? m.mrr.at(k) : 0.0});
    for (const std::size_t k : report.ks)
      rows.push_back({method, level, "acc", k, m.acc.count(k) ? m.acc.at(k) : 0.0});
  }
  return rows;
}

inline std::string curves_to_csv(const std::vector<CurveRow>& rows) {
  std::string csv = "method,level,metric,K,value\n";
  for (const CurveRow& row : rows)
    csv += row.method + "," + level_name(row.level) + "," + row.metric + "," +
           std::to_string(row.k) + "," + format_double(row.value) + "\n";
  return csv;
}

}  // namespace hiercl
