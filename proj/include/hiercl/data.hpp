#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hiercl/error.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/taxonomy.hpp"

namespace hiercl {

/// One feature-vector record: an image stand-in with its hierarchy labels
/// and an optional object-name description.
struct ImageRecord {
  std::string image_id;
  HierLabel label;
  std::vector<double> features;
  std::optional<std::string> text;
};

struct Dataset {
  std::vector<ImageRecord> records;
  int d_in = 0;
};

/// Patent-granular split. Ratios are kept for provenance; membership is
/// what downstream code consumes.
struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  std::array<double, 3> ratios{0.7225, 0.1275, 0.15};
};

/// Nested Gaussian generator spec: a mean per main class, offset per
/// subclass, offset per patent, then per-image noise. Desk-scale stand-in
/// for a real patent-image corpus.
struct SyntheticSpec {
  int main_classes = 8;
  int subclasses_per_main = 2;
  int patents_per_subclass = 6;
  int images_per_patent = 4;
  int d_in = 32;
  double spread_main = 1.0;
  double spread_sub = 0.55;
  double spread_patent = 0.3;
  double spread_image = 1.2;
  std::uint64_t seed = 1;
};

inline void validate(const SyntheticSpec& spec) {
  check(spec.main_classes >= 1 && spec.subclasses_per_main >= 1 &&
            spec.patents_per_subclass >= 1,
        "data/bad_spec", "SyntheticSpec: counts must be >= 1");
  check(spec.subclasses_per_main <= 99, "data/bad_spec",
        "SyntheticSpec: subclasses_per_main must be <= 99 to keep subclass codes "
        "prefix-consistent");
  check(spec.images_per_patent >= 2, "data/bad_spec",
        "SyntheticSpec: images_per_patent must be >= 2 (anchor/positive pairs)");
  check(spec.d_in >= 1, "data/bad_spec", "SyntheticSpec: d_in must be >= 1");
  check(spec.spread_main >= 0 && spec.spread_sub >= 0 && spec.spread_patent >= 0 &&
            spec.spread_image >= 0,
        "data/bad_spec", "SyntheticSpec: spreads must be non-negative");
}

namespace detail {

inline void validate_features(const std::vector<double>& features, std::size_t line) {
  check(!features.empty(), "data/bad_features",
        "line " + std::to_string(line) + ": empty feature vector");
  bool any_nonzero = false;
  for (const double v : features) {
    check(std::isfinite(v), "data/bad_features",
          "line " + std::to_string(line) + ": non-finite feature value");
    if (v != 0.0) any_nonzero = true;
  }
  check(any_nonzero, "data/bad_features",
        "line " + std::to_string(line) + ": all-zero feature vector");
}

}  // namespace detail

/// Loads a JSONL dataset, one record per line:
///   {"image_id": str, "patent_id": str, "subclass": int, "main_class": int,
///    "features": [float...], "text": str?}
/// Every validation failure names the offending line.
inline Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "data/file_not_found", "cannot open dataset file: " + path);

  Dataset ds;
  std::map<std::string, std::size_t> seen_image_ids;   // id -> line
  std::map<std::string, int> patent_subclass;          // patent -> subclass
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail("data/malformed_json",
           "line " + std::to_string(line_no) + ": " + e.what());
    }
    check(j.is_object(), "data/malformed_record",
          "line " + std::to_string(line_no) + ": expected a JSON object");
    for (const char* key : {"image_id", "patent_id", "subclass", "main_class", "features"})
      check(j.contains(key), "data/malformed_record",
            "line " + std::to_string(line_no) + ": missing key \"" + key + "\"");

    ImageRecord rec;
    try {
      rec.image_id = j.at("image_id").get<std::string>();
      rec.label.patent_id = j.at("patent_id").get<std::string>();
      rec.label.subclass = j.at("subclass").get<int>();
      rec.label.main_class = j.at("main_class").get<int>();
      rec.features = j.at("features").get<std::vector<double>>();
      if (j.contains("text") && !j.at("text").is_null())
        rec.text = j.at("text").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail("data/malformed_record",
           "line " + std::to_string(line_no) + ": " + e.what());
    }

    try {
      validate(rec.label);
    } catch (const Error& e) {
      fail("data/hierarchy_inconsistency",
           "line " + std::to_string(line_no) + ": " + e.what());
    }
    detail::validate_features(rec.features, line_no);

    if (ds.records.empty()) {
      ds.d_in = static_cast<int>(rec.features.size());
    } else {
      check(static_cast<int>(rec.features.size()) == ds.d_in, "data/dim_mismatch",
            "line " + std::to_string(line_no) + ": feature dimension " +
                std::to_string(rec.features.size()) + " != " + std::to_string(ds.d_in));
    }

    auto [it, inserted] = seen_image_ids.emplace(rec.image_id, line_no);
    check(inserted, "data/duplicate_image_id",
          "line " + std::to_string(line_no) + ": duplicate image_id \"" + rec.image_id +
              "\" (first seen at line " + std::to_string(it->second) + ")");

    auto [pit, pinserted] = patent_subclass.emplace(rec.label.patent_id, rec.label.subclass);
    check(pinserted || pit->second == rec.label.subclass, "data/hierarchy_inconsistency",
          "line " + std::to_string(line_no) + ": patent \"" + rec.label.patent_id +
              "\" appears with subclass " + std::to_string(rec.label.subclass) +
              " but was first seen with subclass " + std::to_string(pit->second));

    ds.records.push_back(std::move(rec));
  }
  check(!ds.records.empty(), "data/empty", "dataset file has no records: " + path);
  return ds;
}

inline void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "data/unwritable", "cannot write dataset file: " + path);
  for (const ImageRecord& rec : ds.records) {
    nlohmann::json j;
    j["image_id"] = rec.image_id;
    j["patent_id"] = rec.label.patent_id;
    j["subclass"] = rec.label.subclass;
    j["main_class"] = rec.label.main_class;
    j["features"] = rec.features;
    if (rec.text.has_value()) j["text"] = *rec.text;
    out << j.dump() << '\n';
  }
  check(out.good(), "data/unwritable", "write failed: " + path);
}

/// Stacks record features into a row-per-record matrix.
inline DenseMatrix features_matrix(const std::vector<ImageRecord>& records) {
  check(!records.empty(), "data/empty", "features_matrix: no records");
  const std::size_t d = records.front().features.size();
  DenseMatrix m(records.size(), d);
  for (std::size_t i = 0; i < records.size(); ++i) {
    check(records[i].features.size() == d, "data/dim_mismatch",
          "features_matrix: record \"" + records[i].image_id +
              "\" has mismatched feature dimension");
    for (std::size_t c = 0; c < d; ++c) m(i, c) = records[i].features[c];
  }
  return m;
}

/// Record indices grouped by patent, patents in lexicographic order.
inline std::map<std::string, std::vector<std::size_t>> group_by_patent(const Dataset& ds) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    groups[ds.records[i].label.patent_id].push_back(i);
  return groups;
}

/// Shuffles patents with a seeded RNG and partitions them train/val/test with
/// floor(ratio * P) patents for train and val and the remainder for test.
/// The split is patent-granular: no patent straddles splits. Patents with a
/// single image cannot serve the query protocol and are assigned to train.
inline SplitSpec split_by_patent(const Dataset& ds, const std::array<double, 3>& ratios,
                                 std::uint64_t seed,
                                 std::vector<std::string>* warnings = nullptr) {
  for (const double r : ratios)
    check(r >= 0.0, "data/bad_ratios", "split ratios must be non-negative");
  check(std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) <= 1e-9, "data/bad_ratios",
        "split ratios must sum to 1");

  const auto groups = group_by_patent(ds);
  std::vector<std::string> eligible;
  std::vector<std::string> singletons;
  for (const auto& [patent, indices] : groups)
    (indices.size() >= 2 ? eligible : singletons).push_back(patent);
  check(eligible.size() >= 3, "data/too_few_patents",
        "split_by_patent: need at least 3 patents with >= 2 images, found " +
            std::to_string(eligible.size()));

  Rng rng(seed);
  rng.shuffle(eligible);
  const std::size_t p = eligible.size();
  const auto n_train = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(p)));
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(p)));

  SplitSpec split;
  split.seed = seed;
  split.ratios = ratios;
  split.train.assign(eligible.begin(), eligible.begin() + n_train);
  split.val.assign(eligible.begin() + n_train, eligible.begin() + n_train + n_val);
  split.test.assign(eligible.begin() + n_train + n_val, eligible.end());
  split.train.insert(split.train.end(), singletons.begin(), singletons.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());

  if (warnings != nullptr) {
    if (split.train.empty()) warnings->push_back("train split is empty");
    if (split.val.empty()) warnings->push_back("validation split is empty");
    if (split.test.empty()) warnings->push_back("test split is empty");
    if (!singletons.empty())
      warnings->push_back(std::to_string(singletons.size()) +
                          " single-image patent(s) assigned to train");
  }
  return split;
}

inline void save_split(const SplitSpec& split, const std::string& path) {
  nlohmann::json j;
  j["train"] = split.train;
  j["val"] = split.val;
  j["test"] = split.test;
  j["seed"] = split.seed;
  j["ratios"] = split.ratios;
  std::ofstream out(path);
  check(out.good(), "data/unwritable", "cannot write split file: " + path);
  out << j.dump(2) << '\n';
}

inline SplitSpec load_split(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "data/file_not_found", "cannot open split file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("data/malformed_json", std::string("split file: ") + e.what());
  }
  SplitSpec split;
  try {
    split.train = j.at("train").get<std::vector<std::string>>();
    split.val = j.at("val").get<std::vector<std::string>>();
    split.test = j.at("test").get<std::vector<std::string>>();
    split.seed = j.at("seed").get<std::uint64_t>();
    const auto r = j.at("ratios").get<std::vector<double>>();
    check(r.size() == 3, "data/malformed_record", "split file: ratios must have 3 entries");
    split.ratios = {r[0], r[1], r[2]};
  } catch (const nlohmann::json::exception& e) {
    fail("data/malformed_record", std::string("split file: ") + e.what());
  }
  return split;
}

/// Checks a split against a dataset: splits disjoint, every dataset patent
/// covered, every test patent with >= 2 images.
inline void validate_split(const Dataset& ds, const SplitSpec& split) {
  const auto groups = group_by_patent(ds);
  std::map<std::string, int> where;
  auto note = [&](const std::vector<std::string>& list, int tag) {
    for (const std::string& patent : list) {
      auto [it, inserted] = where.emplace(patent, tag);
      check(inserted, "data/split_overlap",
            "patent \"" + patent + "\" appears in more than one split");
      check(groups.count(patent) > 0, "data/split_unknown_patent",
            "split references unknown patent \"" + patent + "\"");
    }
  };
  note(split.train, 0);
  note(split.val, 1);
  note(split.test, 2);
  for (const auto& [patent, indices] : groups) {
    auto it = where.find(patent);
    check(it != where.end(), "data/split_uncovered",
          "patent \"" + patent + "\" is missing from the split");
    check(it->second != 2 || indices.size() >= 2, "data/split_bad_test_patent",
          "test patent \"" + patent + "\" has fewer than 2 images");
  }
}

namespace detail {

inline constexpr const char* kObjectNames[] = {
    "seat",  "bed",    "lamp",  "table", "chair",  "desk",   "sofa",  "shelf",
    "stool", "bench",  "cabinet", "mirror", "clock", "vase",  "rack",  "stand",
    "crate", "drawer", "frame", "hinge"};

inline std::string object_name_for(int subclass, int subclass_index) {
  const int n = static_cast<int>(std::size(kObjectNames));
  return std::string(kObjectNames[subclass_index % n]) + "-" + std::to_string(subclass);
}

}  // namespace detail

/// Draws a dataset from the nested Gaussian model. Fully determined by the
/// spec (including the seed): main-class means, then subclass, patent and
/// image offsets, in a fixed nesting order.
inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  Dataset ds;
  ds.d_in = spec.d_in;
  const std::size_t d = static_cast<std::size_t>(spec.d_in);

  int patent_counter = 0;
  int subclass_counter = 0;
  std::vector<double> main_mean(d), sub_mean(d), patent_mean(d);
  for (int m = 0; m < spec.main_classes; ++m) {
    const int main_code = 10 + m;
    for (std::size_t c = 0; c < d; ++c) main_mean[c] = rng.normal(0.0, spec.spread_main);
    for (int s = 0; s < spec.subclasses_per_main; ++s) {
      const int subclass_code = main_code * 100 + s + 1;
      const std::string object_name = detail::object_name_for(subclass_code, subclass_counter++);
      for (std::size_t c = 0; c < d; ++c)
        sub_mean[c] = main_mean[c] + rng.normal(0.0, spec.spread_sub);
      for (int p = 0; p < spec.patents_per_subclass; ++p) {
        char patent_id[16];
        std::snprintf(patent_id, sizeof(patent_id), "P%06d", patent_counter++);
        for (std::size_t c = 0; c < d; ++c)
          patent_mean[c] = sub_mean[c] + rng.normal(0.0, spec.spread_patent);
        for (int img = 0; img < spec.images_per_patent; ++img) {
          ImageRecord rec;
          rec.image_id = std::string(patent_id) + "-" + std::to_string(img);
          rec.label = HierLabel{main_code, subclass_code, patent_id};
          rec.features.resize(d);
          for (std::size_t c = 0; c < d; ++c)
            rec.features[c] = patent_mean[c] + rng.normal(0.0, spec.spread_image);
          rec.text = object_name;
          ds.records.push_back(std::move(rec));
        }
      }
    }
  }
  return ds;
}

namespace detail {

inline std::uint64_t token_hash(std::string_view token, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ (seed + 0x9e3779b97f4a7c15ull);
  for (const char c : token) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
  return h ^ (h >> 31);
}

}  // namespace detail

/// Deterministic hashed bag-of-tokens embedding standing in for a frozen
/// language encoder. The object name is wrapped in the caption template, the
/// caption is whitespace-tokenized, each token hashed into d buckets with
/// +/-1 signs, and the result l2-normalized. Four probes per token: captions
/// that differ in a single token would otherwise collide with probability
/// 1/(2d), far too often at small d.
inline std::vector<double> text_features(const std::string& text, int d,
                                         std::uint64_t seed) {
  check(!text.empty(), "data/empty_text", "text_features: empty description");
  check(d >= 1, "data/bad_spec", "text_features: dimension must be >= 1");
  const std::string caption = "This is a patent image of a " + text + ".";
  std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
  std::istringstream stream(caption);
  std::string token;
  while (stream >> token) {
    std::uint64_t h = detail::token_hash(token, seed);
    for (int probe = 0; probe < 4; ++probe) {
      h += 0x9e3779b97f4a7c15ull;
      std::uint64_t x = h;
      x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
      x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
      x ^= x >> 31;
      const auto bucket = static_cast<std::size_t>(x % static_cast<std::uint64_t>(d));
      acc[bucket] += ((x >> 32) & 1u) ? 1.0 : -1.0;
    }
  }
  return l2_normalize(acc);
}

}  // namespace hiercl
