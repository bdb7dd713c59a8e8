#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "hiercl/data.hpp"
#include "hiercl/sampler.hpp"
#include "helpers.hpp"

using hiercl::Dataset;
using hiercl::EvalSplit;
using hiercl::ImageRecord;
using hiercl::Rng;
using hiercl::TrainBatch;

namespace {

Dataset grid_dataset(int mains, int subs, int patents, int images, std::uint64_t seed = 1) {
  hiercl::SyntheticSpec spec;
  spec.main_classes = mains;
  spec.subclasses_per_main = subs;
  spec.patents_per_subclass = patents;
  spec.images_per_patent = images;
  spec.d_in = 6;
  spec.seed = seed;
  return hiercl::generate_synthetic(spec);
}

Dataset counts_dataset(const std::vector<std::pair<std::string, int>>& patent_image_counts) {
  Dataset ds;
  ds.d_in = 2;
  int sub = 0;
  for (const auto& [patent, count] : patent_image_counts) {
    const int subclass = 1001 + (sub++ % 9);
    for (int i = 0; i < count; ++i) {
      ImageRecord rec;
      rec.image_id = patent + "-" + std::to_string(i);
      rec.label = hiercl::HierLabel{10, subclass, patent};
      rec.features = {1.0 + i, 2.0};
      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

std::vector<std::string> patent_names(const Dataset& ds) {
  std::vector<std::string> names;
  for (const auto& [patent, idx] : hiercl::group_by_patent(ds)) names.push_back(patent);
  return names;
}

}  // namespace

TEST_CASE("eligible_patents filters single-image patents, keeping order") {
  const Dataset ds = counts_dataset({{"PA", 2}, {"PB", 1}, {"PC", 3}});
  const hiercl::PatentGroups groups = hiercl::group_by_patent(ds);
  const std::vector<std::string> out =
      hiercl::eligible_patents(groups, {"PC", "PB", "PA"});
  REQUIRE(out == std::vector<std::string>{"PC", "PA"});
  test::expect_error("sampler/unknown_patent",
                     [&] { hiercl::eligible_patents(groups, {"PA", "PX"}); });
}

TEST_CASE("batch pairs are same-patent, distinct images, and cover both orders") {
  const Dataset ds = counts_dataset({{"PA", 2}, {"PB", 2}});
  const hiercl::PatentGroups groups = hiercl::group_by_patent(ds);
  Rng rng(1);
  std::set<std::pair<std::string, std::string>> seen_pairs;
  for (int t = 0; t < 64; ++t) {
    const TrainBatch batch = hiercl::batch_from_patents(ds, groups, {"PA", "PB"}, rng);
    REQUIRE(batch.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      const ImageRecord& a = batch.anchor_records[i];
      const ImageRecord& p = batch.positive_records[i];
      REQUIRE(a.label.patent_id == p.label.patent_id);
      REQUIRE(a.image_id != p.image_id);
      REQUIRE(batch.labels[i] == a.label);
    }
    seen_pairs.emplace(batch.anchor_records[0].image_id, batch.positive_records[0].image_id);
  }
  // Both (0,1) and (1,0) orders of PA's two images must appear.
  REQUIRE(seen_pairs.size() == 2);

  test::expect_error("loss/batch_too_small",
                     [&] { hiercl::batch_from_patents(ds, groups, {"PA"}, rng); });
  const Dataset with_single = counts_dataset({{"PA", 2}, {"PB", 1}});
  const hiercl::PatentGroups g2 = hiercl::group_by_patent(with_single);
  test::expect_error("sampler/too_few_images", [&] {
    Rng r(1);
    hiercl::batch_from_patents(with_single, g2, {"PA", "PB"}, r);
  });
}

TEST_CASE("sample_batch draws K distinct eligible patents") {
  const Dataset ds = grid_dataset(2, 2, 3, 3);
  const std::vector<std::string> patents = patent_names(ds);
  REQUIRE(patents.size() == 12);

  Rng rng(5);
  const TrainBatch batch = hiercl::sample_batch(ds, patents, 8, rng);
  REQUIRE(batch.size() == 8);
  std::set<std::string> batch_patents;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < 8; ++i) {
    REQUIRE(batch_patents.insert(batch.labels[i].patent_id).second);
    REQUIRE(ids.insert(batch.anchor_records[i].image_id).second);
    REQUIRE(ids.insert(batch.positive_records[i].image_id).second);
  }

  // Same-patent pairs mean the relevance diagonal is always s_p.
  const hiercl::DenseMatrix rel = hiercl::relevance_matrix(
      batch.labels, batch.labels, hiercl::ScoreConfig{});
  for (std::size_t i = 0; i < 8; ++i) REQUIRE(rel(i, i) == 1.0);

  Rng r1(9), r2(9);
  const TrainBatch b1 = hiercl::sample_batch(ds, patents, 4, r1);
  const TrainBatch b2 = hiercl::sample_batch(ds, patents, 4, r2);
  for (std::size_t i = 0; i < 4; ++i) {
    REQUIRE(b1.anchor_records[i].image_id == b2.anchor_records[i].image_id);
    REQUIRE(b1.positive_records[i].image_id == b2.positive_records[i].image_id);
  }

  test::expect_error("sampler/too_few_patents", [&] {
    Rng r(1);
    hiercl::sample_batch(ds, patents, 13, r);
  });
}

TEST_CASE("feature_noise") {
  const Dataset ds = grid_dataset(1, 1, 4, 3);
  const hiercl::PatentGroups groups = hiercl::group_by_patent(ds);
  Rng rng(2);
  const TrainBatch batch =
      hiercl::batch_from_patents(ds, groups, patent_names(ds), rng);

  SECTION("p = 0 is a bitwise no-op") {
    Rng r(3);
    const TrainBatch noisy = hiercl::feature_noise(batch, 1.0, 0.0, r);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      REQUIRE(noisy.anchor_records[i].features == batch.anchor_records[i].features);
      REQUIRE(noisy.positive_records[i].features == batch.positive_records[i].features);
    }
  }

  SECTION("tiny sigma perturbs by at most a rounding-scale amount") {
    Rng r(3);
    const TrainBatch noisy = hiercl::feature_noise(batch, 1e-12, 1.0, r);
    bool changed = false;
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (std::size_t c = 0; c < batch.anchor_records[i].features.size(); ++c) {
        const double diff =
            noisy.anchor_records[i].features[c] - batch.anchor_records[i].features[c];
        REQUIRE(std::abs(diff) < 1e-10);
        changed = changed || diff != 0.0;
      }
    REQUIRE(changed);
  }

  SECTION("noise norm concentrates at sigma * sqrt(d)") {
    TrainBatch wide;
    ImageRecord rec;
    rec.image_id = "x";
    rec.label = hiercl::HierLabel{10, 1001, "P"};
    rec.features.assign(1000, 0.5);
    wide.anchor_records = {rec, rec};
    wide.positive_records = {rec, rec};
    wide.labels = {rec.label, rec.label};
    Rng r(4);
    const TrainBatch noisy = hiercl::feature_noise(wide, 1.0, 1.0, r);
    for (const ImageRecord& out : noisy.anchor_records) {
      double norm2 = 0.0;
      for (std::size_t c = 0; c < 1000; ++c) {
        const double d = out.features[c] - 0.5;
        norm2 += d * d;
      }
      const double norm = std::sqrt(norm2);
      REQUIRE(norm > std::sqrt(1000.0) * 0.9);
      REQUIRE(norm < std::sqrt(1000.0) * 1.1);
    }
  }

  SECTION("p = 0.5 perturbs roughly half the records") {
    TrainBatch many;
    ImageRecord rec;
    rec.image_id = "x";
    rec.label = hiercl::HierLabel{10, 1001, "P"};
    rec.features = {1.0, 2.0};
    for (int i = 0; i < 200; ++i) {
      many.anchor_records.push_back(rec);
      many.positive_records.push_back(rec);
      many.labels.push_back(rec.label);
    }
    Rng r(5);
    const TrainBatch noisy = hiercl::feature_noise(many, 1.0, 0.5, r);
    int touched = 0;
    for (int i = 0; i < 200; ++i)
      if (noisy.anchor_records[i].features != rec.features) ++touched;
    REQUIRE(touched > 60);
    REQUIRE(touched < 140);
  }

  SECTION("parameter validation") {
    Rng r(1);
    test::expect_error("sampler/bad_noise", [&] { hiercl::feature_noise(batch, 0.0, 0.5, r); });
    test::expect_error("sampler/bad_noise", [&] { hiercl::feature_noise(batch, 1.0, -0.1, r); });
    test::expect_error("sampler/bad_noise", [&] { hiercl::feature_noise(batch, 1.0, 1.5, r); });
  }
}

TEST_CASE("build_eval_split partitions each patent into queries and database") {
  const Dataset ds = grid_dataset(2, 1, 3, 4);  // 6 patents x 4 images
  const std::vector<std::string> patents = patent_names(ds);
  Rng rng(6);
  const EvalSplit split = hiercl::build_eval_split(ds, patents, 2, rng);
  REQUIRE(split.queries.size() == 12);
  REQUIRE(split.database.size() == 12);
  REQUIRE(split.skipped_patents.empty());

  std::set<std::string> query_ids, db_ids;
  for (const ImageRecord& q : split.queries) REQUIRE(query_ids.insert(q.image_id).second);
  for (const ImageRecord& r : split.database) REQUIRE(db_ids.insert(r.image_id).second);
  for (const std::string& id : query_ids) REQUIRE(db_ids.count(id) == 0);

  // Every query keeps a same-patent mate in the database.
  for (const ImageRecord& q : split.queries) {
    bool mate = false;
    for (const ImageRecord& r : split.database)
      mate = mate || r.label.patent_id == q.label.patent_id;
    REQUIRE(mate);
  }

  Rng r1(7), r2(7);
  const EvalSplit s1 = hiercl::build_eval_split(ds, patents, 2, r1);
  const EvalSplit s2 = hiercl::build_eval_split(ds, patents, 2, r2);
  REQUIRE(s1.queries.size() == s2.queries.size());
  for (std::size_t i = 0; i < s1.queries.size(); ++i)
    REQUIRE(s1.queries[i].image_id == s2.queries[i].image_id);
}

TEST_CASE("build_eval_split skips patents that cannot spare a query") {
  const Dataset ds = counts_dataset({{"PA", 2}, {"PB", 4}});
  Rng rng(8);
  const EvalSplit split = hiercl::build_eval_split(ds, {"PA", "PB"}, 2, rng);
  REQUIRE(split.skipped_patents == std::vector<std::string>{"PA"});
  REQUIRE(split.queries.size() == 2);   // PB only
  REQUIRE(split.database.size() == 4);  // PA's both images + PB's remaining 2
  for (const ImageRecord& q : split.queries) REQUIRE(q.label.patent_id == "PB");

  test::expect_error("sampler/bad_query_count", [&] {
    Rng r(1);
    hiercl::build_eval_split(ds, {"PA"}, 0, r);
  });
  test::expect_error("sampler/unknown_patent", [&] {
    Rng r(1);
    hiercl::build_eval_split(ds, {"PX"}, 2, r);
  });
  test::expect_error("sampler/empty_database", [&] {
    Rng r(1);
    hiercl::build_eval_split(ds, {}, 2, r);
  });
}
