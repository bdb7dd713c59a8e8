#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "hiercl/data.hpp"
#include "hiercl/error.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/taxonomy.hpp"

namespace hiercl {

/// K anchor/positive pairs: row i holds two distinct images of the same
/// patent, and all K patents are distinct.
struct TrainBatch {
  std::vector<ImageRecord> anchor_records;
  std::vector<ImageRecord> positive_records;
  std::vector<HierLabel> labels;

  std::size_t size() const { return labels.size(); }
};

/// Query/database partition of an evaluation subset. Patents that cannot
/// keep a same-patent item in the database after query removal are skipped
/// as query sources and listed in skipped_patents.
struct EvalSplit {
  std::vector<ImageRecord> queries;
  std::vector<ImageRecord> database;
  std::vector<std::string> skipped_patents;
};

using PatentGroups = std::map<std::string, std::vector<std::size_t>>;

/// Patents from `patents` that have at least 2 images, input order kept.
inline std::vector<std::string> eligible_patents(const PatentGroups& groups,
                                                 const std::vector<std::string>& patents) {
  std::vector<std::string> eligible;
  for (const std::string& patent : patents) {
    const auto it = groups.find(patent);
    check(it != groups.end(), "sampler/unknown_patent",
          "patent \"" + patent + "\" is not in the dataset");
    if (it->second.size() >= 2) eligible.push_back(patent);
  }
  return eligible;
}

/// Builds one batch from an already-chosen patent list: two distinct images
/// drawn per patent, first anchor, second positive.
inline TrainBatch batch_from_patents(const Dataset& ds, const PatentGroups& groups,
                                     const std::vector<std::string>& patents, Rng& rng) {
  check(patents.size() >= 2, "loss/batch_too_small",
        "a batch needs at least 2 patents, got " + std::to_string(patents.size()));
  TrainBatch batch;
  batch.anchor_records.reserve(patents.size());
  batch.positive_records.reserve(patents.size());
  batch.labels.reserve(patents.size());
  for (const std::string& patent : patents) {
    const auto it = groups.find(patent);
    check(it != groups.end(), "sampler/unknown_patent",
          "patent \"" + patent + "\" is not in the dataset");
    const std::vector<std::size_t>& indices = it->second;
    check(indices.size() >= 2, "sampler/too_few_images",
          "patent \"" + patent + "\" has fewer than 2 images");
    const std::size_t a = rng.below(indices.size());
    std::size_t b = rng.below(indices.size() - 1);
    if (b >= a) ++b;
    batch.anchor_records.push_back(ds.records[indices[a]]);
    batch.positive_records.push_back(ds.records[indices[b]]);
    batch.labels.push_back(ds.records[indices[a]].label);
  }
  return batch;
}

/// Draws K distinct patents uniformly without replacement from the eligible
/// members of `patents`, then two distinct images per patent.
inline TrainBatch sample_batch(const Dataset& ds, const std::vector<std::string>& patents,
                               std::size_t k, Rng& rng) {
  const PatentGroups groups = group_by_patent(ds);
  std::vector<std::string> eligible = eligible_patents(groups, patents);
  check(eligible.size() >= k, "sampler/too_few_patents",
        "batch needs " + std::to_string(k) + " patents with >= 2 images, split has " +
            std::to_string(eligible.size()));
  rng.shuffle(eligible);
  eligible.resize(k);
  return batch_from_patents(ds, groups, eligible, rng);
}

/// Adds N(0, sigma^2 I) to each record's features independently with
/// probability p. Labels and ids untouched.
inline TrainBatch feature_noise(const TrainBatch& batch, double sigma, double p, Rng& rng) {
  check(sigma > 0.0, "sampler/bad_noise", "feature_noise: sigma must be > 0");
  check(p >= 0.0 && p <= 1.0, "sampler/bad_noise", "feature_noise: p must be in [0,1]");
  TrainBatch noisy = batch;
  auto perturb = [&](std::vector<ImageRecord>& records) {
    for (ImageRecord& rec : records) {
      if (rng.uniform() < p)
        for (double& v : rec.features) v += rng.normal(0.0, sigma);
    }
  };
  perturb(noisy.anchor_records);
  perturb(noisy.positive_records);
  return noisy;
}

/// Per patent (lexicographic order): queries_per_patent images become
/// queries, the rest go to the database. Patents with too few images to
/// leave a same-patent database item are skipped as query sources.
inline EvalSplit build_eval_split(const Dataset& ds, const std::vector<std::string>& patents,
                                  std::size_t queries_per_patent, Rng& rng) {
  check(queries_per_patent >= 1, "sampler/bad_query_count",
        "build_eval_split: queries_per_patent must be >= 1");
  const PatentGroups groups = group_by_patent(ds);
  std::vector<std::string> sorted = patents;
  std::sort(sorted.begin(), sorted.end());

  EvalSplit split;
  for (const std::string& patent : sorted) {
    const auto it = groups.find(patent);
    check(it != groups.end(), "sampler/unknown_patent",
          "patent \"" + patent + "\" is not in the dataset");
    std::vector<std::size_t> indices = it->second;
    if (indices.size() <= queries_per_patent) {
      split.skipped_patents.push_back(patent);
      for (const std::size_t idx : indices) split.database.push_back(ds.records[idx]);
      continue;
    }
    rng.shuffle(indices);
    for (std::size_t i = 0; i < indices.size(); ++i)
      (i < queries_per_patent ? split.queries : split.database)
          .push_back(ds.records[indices[i]]);
  }
  check(!split.database.empty(), "sampler/empty_database",
        "build_eval_split: resulting database is empty");
  return split;
}

}  // namespace hiercl
