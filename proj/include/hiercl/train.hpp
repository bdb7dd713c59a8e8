#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hiercl/data.hpp"
#include "hiercl/encoder.hpp"
#include "hiercl/error.hpp"
#include "hiercl/loss.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/retrieval.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/sampler.hpp"
#include "hiercl/taxonomy.hpp"

namespace hiercl {

enum class LossMode { Contrastive, Hierarchical };

inline const char* loss_mode_name(LossMode mode) {
  return mode == LossMode::Contrastive ? "cl" : "hmcl";
}

inline LossMode parse_loss_mode(const std::string& name) {
  if (name == "cl") return LossMode::Contrastive;
  if (name == "hmcl") return LossMode::Hierarchical;
  fail("train/bad_loss_mode", "unknown loss mode \"" + name + "\" (expected cl or hmcl)");
}

struct TrainConfig {
  LossMode loss_mode = LossMode::Hierarchical;
  LossConfig loss;
  ScoreConfig scores;
  double lr = 1e-4;
  double weight_decay = 0.01;
  std::size_t k = 64;
  int max_epochs = 20;
  int patience = 3;
  std::uint64_t seed = 1;
  bool use_text = false;
  double noise_sigma = 0.0;  // 0 disables the noise augmentation
  double noise_p = 0.2;
  int d = 64;
  int hidden = 0;  // 0 = single affine layer
};

inline void validate(const TrainConfig& cfg) {
  validate(cfg.loss);
  validate(cfg.scores);
  check(cfg.lr >= 0.0 && cfg.weight_decay >= 0.0, "train/bad_config",
        "TrainConfig: lr and weight_decay must be non-negative");
  check(cfg.k >= 2, "train/bad_config", "TrainConfig: batch size K must be >= 2");
  check(cfg.max_epochs >= 1, "train/bad_config", "TrainConfig: max_epochs must be >= 1");
  check(cfg.patience >= 1, "train/bad_config", "TrainConfig: patience must be >= 1");
  check(cfg.noise_sigma >= 0.0, "train/bad_config",
        "TrainConfig: noise_sigma must be non-negative");
  check(cfg.noise_p >= 0.0 && cfg.noise_p <= 1.0, "train/bad_config",
        "TrainConfig: noise_p must be in [0,1]");
  check(cfg.d >= 1 && cfg.hidden >= 0, "train/bad_config",
        "TrainConfig: d must be >= 1 and hidden >= 0");
}

/// Frozen text pathway: the hashed featurizer at a fixed internal width,
/// followed by a seeded Gaussian projection to the embedding dimension.
/// Nothing here is trained.
class TextEmbedder {
 public:
  static constexpr int kFeatureDim = 256;

  TextEmbedder(int d, std::uint64_t seed)
      : feature_seed_(derive_seed(seed, "text-features")),
        projection_(kFeatureDim, static_cast<std::size_t>(d)) {
    check(d >= 1, "train/bad_config", "TextEmbedder: d must be >= 1");
    Rng rng(derive_seed(seed, "text-projection"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(kFeatureDim));
    for (double& v : projection_.values()) v = rng.normal(0.0, scale);
  }

  std::vector<double> embed(const std::string& text) const {
    const std::vector<double> features = text_features(text, kFeatureDim, feature_seed_);
    std::vector<double> out(projection_.cols(), 0.0);
    for (std::size_t r = 0; r < projection_.rows(); ++r)
      for (std::size_t c = 0; c < projection_.cols(); ++c)
        out[c] += features[r] * projection_(r, c);
    return l2_normalize(out);
  }

 private:
  std::uint64_t feature_seed_;
  DenseMatrix projection_;
};

namespace detail {

/// Text embedding per batch row, taken from the anchor record (falling back
/// to the positive). Every row must carry a description.
inline DenseMatrix batch_text_matrix(const TrainBatch& batch, const TextEmbedder& embedder,
                                     std::map<std::string, std::vector<double>>& cache) {
  DenseMatrix text;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::optional<std::string>& t = batch.anchor_records[i].text.has_value()
                                              ? batch.anchor_records[i].text
                                              : batch.positive_records[i].text;
    check(t.has_value(), "train/missing_text",
          "image \"" + batch.anchor_records[i].image_id +
              "\" has no text description but use_text is set");
    auto it = cache.find(*t);
    if (it == cache.end()) it = cache.emplace(*t, embedder.embed(*t)).first;
    if (text.empty()) text = DenseMatrix(batch.size(), it->second.size());
    for (std::size_t c = 0; c < it->second.size(); ++c) text(i, c) = it->second[c];
  }
  return text;
}

}  // namespace detail

/// Loss and encoder-parameter gradients for one batch: the configured loss
/// on the encoded anchors/positives, backpropagated through both encoder
/// passes. Text embeddings bypass the encoder and receive no updates.
struct BatchStep {
  double loss = 0.0;
  std::vector<AffineLayer> grads;
};

inline BatchStep batch_step(const EncoderParams& params, const TrainBatch& batch,
                            const DenseMatrix* text, const TrainConfig& cfg) {
  const DenseMatrix x_anchors = features_matrix(batch.anchor_records);
  const DenseMatrix x_positives = features_matrix(batch.positive_records);
  const EncoderActivations acts_a = forward_acts(params, x_anchors);
  const EncoderActivations acts_p = forward_acts(params, x_positives);

  BatchEmbeddings emb;
  emb.anchors = acts_a.output;
  emb.positives = acts_p.output;
  LossOutput out;
  if (cfg.loss_mode == LossMode::Contrastive) {
    out = contrastive_loss(emb, cfg.loss);
  } else {
    if (text != nullptr) emb.text = *text;
    const DenseMatrix relevance = relevance_matrix(batch.labels, batch.labels, cfg.scores);
    out = total_loss(emb, relevance, cfg.loss);
  }

  const BackwardResult back_a = backward(params, x_anchors, acts_a, out.grad_anchors);
  const BackwardResult back_p = backward(params, x_positives, acts_p, out.grad_positives);
  BatchStep step;
  step.loss = out.value;
  step.grads = back_a.layers;
  for (std::size_t l = 0; l < step.grads.size(); ++l) {
    for (std::size_t i = 0; i < step.grads[l].weights.values().size(); ++i)
      step.grads[l].weights.values()[i] += back_p.layers[l].weights.values()[i];
    for (std::size_t i = 0; i < step.grads[l].bias.size(); ++i)
      step.grads[l].bias[i] += back_p.layers[l].bias[i];
  }
  return step;
}

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_map = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  EncoderParams params;       // parameters of the best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;         // 1-based; equals the last epoch without validation
  double best_val_map = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> warnings;
};

/// Runs the training protocol: per epoch, the eligible train patents are
/// reshuffled and consumed in K-sized chunks (floor(P/K) batches); after each
/// epoch the validation Patent-ID mAP decides early stopping with the given
/// patience, and the best epoch's parameters are returned. Without a usable
/// validation split (no queries), early stopping is disabled and the final
/// parameters are returned.
inline TrainResult train(const Dataset& ds, const SplitSpec& split, const TrainConfig& cfg) {
  validate(cfg);
  validate_split(ds, split);
  const PatentGroups groups = group_by_patent(ds);
  std::vector<std::string> eligible = eligible_patents(groups, split.train);
  check(eligible.size() >= cfg.k, "sampler/too_few_patents",
        "train split has " + std::to_string(eligible.size()) +
            " patents with >= 2 images, batch size K is " + std::to_string(cfg.k));
  const std::size_t batches_per_epoch = eligible.size() / cfg.k;

  TrainResult result;

  Rng init_rng(derive_seed(cfg.seed, "init"));
  EncoderParams params = init_encoder(ds.d_in, cfg.d, cfg.hidden, init_rng);

  std::optional<TextEmbedder> embedder;
  std::map<std::string, std::vector<double>> text_cache;
  if (cfg.use_text && cfg.loss_mode == LossMode::Hierarchical)
    embedder.emplace(cfg.d, cfg.seed);

  std::optional<EvalSplit> val_split;
  if (!split.val.empty()) {
    Rng val_rng(derive_seed(split.seed, "eval-val"));
    EvalSplit candidate = build_eval_split(ds, split.val, 2, val_rng);
    if (!candidate.queries.empty())
      val_split = std::move(candidate);
  }
  if (!val_split.has_value())
    result.warnings.push_back(
        "no usable validation queries; early stopping disabled, returning final epoch");

  std::vector<double> theta = flatten(params.layers);
  AdamW optimizer(theta.size(), cfg.lr, cfg.weight_decay);
  Rng train_rng(derive_seed(cfg.seed, "train"));

  double best_val = -std::numeric_limits<double>::infinity();
  int epochs_without_improvement = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    train_rng.shuffle(eligible);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::vector<std::string> chunk(eligible.begin() + b * cfg.k,
                                           eligible.begin() + (b + 1) * cfg.k);
      TrainBatch batch = batch_from_patents(ds, groups, chunk, train_rng);
      if (cfg.noise_sigma > 0.0)
        batch = feature_noise(batch, cfg.noise_sigma, cfg.noise_p, train_rng);
      DenseMatrix text;
      if (embedder.has_value())
        text = detail::batch_text_matrix(batch, *embedder, text_cache);
      const BatchStep step =
          batch_step(params, batch, embedder.has_value() ? &text : nullptr, cfg);
      check(std::isfinite(step.loss), "train/nonfinite_loss",
            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                std::to_string(b + 1));
      loss_sum += step.loss;
      optimizer.step(theta, flatten(step.grads));
      unflatten(theta, params);
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(batches_per_epoch);
    if (val_split.has_value())
      entry.val_map = evaluate(params, *val_split, {1}).at(HierLevel::PatentId).map;
    result.log.push_back(entry);

    if (val_split.has_value()) {
      if (entry.val_map > best_val) {
        best_val = entry.val_map;
        result.best_epoch = epoch;
        result.best_val_map = entry.val_map;
        result.params = params;
        epochs_without_improvement = 0;
      } else if (++epochs_without_improvement >= cfg.patience) {
        break;
      }
    } else {
      result.best_epoch = epoch;
      result.params = params;
    }
  }
  return result;
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["loss_mode"] = loss_mode_name(cfg.loss_mode);
  j["tau"] = cfg.loss.tau;
  j["lambda"] = cfg.loss.lambda;
  j["symmetric"] = cfg.loss.symmetric;
  j["s_p"] = cfg.scores.s_p;
  j["s_s"] = cfg.scores.s_s;
  j["s_m"] = cfg.scores.s_m;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["k"] = cfg.k;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["seed"] = cfg.seed;
  j["use_text"] = cfg.use_text;
  j["noise_sigma"] = cfg.noise_sigma;
  j["noise_p"] = cfg.noise_p;
  j["d"] = cfg.d;
  j["hidden"] = cfg.hidden;
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  try {
    cfg.loss_mode = parse_loss_mode(j.at("loss_mode").get<std::string>());
    cfg.loss.tau = j.at("tau").get<double>();
    cfg.loss.lambda = j.at("lambda").get<double>();
    cfg.loss.symmetric = j.at("symmetric").get<bool>();
    cfg.scores.s_p = j.at("s_p").get<double>();
    cfg.scores.s_s = j.at("s_s").get<double>();
    cfg.scores.s_m = j.at("s_m").get<double>();
    cfg.lr = j.at("lr").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.k = j.at("k").get<std::size_t>();
    cfg.max_epochs = j.at("max_epochs").get<int>();
    cfg.patience = j.at("patience").get<int>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.use_text = j.at("use_text").get<bool>();
    cfg.noise_sigma = j.at("noise_sigma").get<double>();
    cfg.noise_p = j.at("noise_p").get<double>();
    cfg.d = j.at("d").get<int>();
    cfg.hidden = j.at("hidden").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail("train/checkpoint_corrupt", std::string("bad config block: ") + e.what());
  }
  return cfg;
}

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const EncoderParams& params, const TrainConfig& cfg,
                            const std::string& path) {
  validate(params);
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["config"] = config_to_json(cfg);
  nlohmann::json layers = nlohmann::json::array();
  for (const AffineLayer& layer : params.layers) {
    nlohmann::json lj;
    lj["rows"] = layer.weights.rows();
    lj["cols"] = layer.weights.cols();
    lj["weights"] = layer.weights.values();
    lj["bias"] = layer.bias;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  std::ofstream out(path);
  check(out.good(), "train/unwritable", "cannot write checkpoint: " + path);
  out << j.dump(2) << '\n';
  check(out.good(), "train/unwritable", "write failed: " + path);
}

inline std::pair<EncoderParams, TrainConfig> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "train/checkpoint_missing", "cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail("train/checkpoint_corrupt", std::string("checkpoint: ") + e.what());
  }
  check(j.is_object() && j.contains("format_version"), "train/checkpoint_corrupt",
        "checkpoint: missing format_version");
  int version = -1;
  try {
    version = j.at("format_version").get<int>();
  } catch (const nlohmann::json::exception&) {
    fail("train/checkpoint_corrupt", "checkpoint: malformed format_version");
  }
  check(version == kCheckpointVersion, "train/checkpoint_version",
        "checkpoint format_version " + std::to_string(version) + " unsupported (expected " +
            std::to_string(kCheckpointVersion) + ")");

  EncoderParams params;
  TrainConfig cfg;
  try {
    cfg = config_from_json(j.at("config"));
    for (const nlohmann::json& lj : j.at("layers")) {
      AffineLayer layer;
      const auto rows = lj.at("rows").get<std::size_t>();
      const auto cols = lj.at("cols").get<std::size_t>();
      const auto weights = lj.at("weights").get<std::vector<double>>();
      check(weights.size() == rows * cols, "train/checkpoint_corrupt",
            "checkpoint: weights length does not match rows*cols");
      layer.weights = DenseMatrix(rows, cols);
      layer.weights.values() = weights;
      layer.bias = lj.at("bias").get<std::vector<double>>();
      params.layers.push_back(std::move(layer));
    }
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    fail("train/checkpoint_corrupt", std::string("checkpoint: ") + e.what());
  }
  try {
    validate(params);
  } catch (const Error& e) {
    fail("train/checkpoint_corrupt", std::string("checkpoint: ") + e.what());
  }
  return {std::move(params), cfg};
}

}  // namespace hiercl
