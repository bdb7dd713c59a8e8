#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "hiercl/error.hpp"
#include "hiercl/matrix.hpp"

namespace hiercl {

/// Loss hyperparameters. `tau` divides every similarity before the softmax
/// (InfoNCE convention); `lambda` weights the image-to-text term; `symmetric`
/// additionally averages the candidate->anchor direction for the image-image
/// terms (off by default, matching the one-directional definition; the text
/// term is always image->text).
struct LossConfig {
  double tau = 0.1;
  double lambda = 0.2;
  bool symmetric = false;
};

inline void validate(const LossConfig& cfg) {
  check(cfg.tau > 0.0, "loss/bad_tau", "LossConfig: tau must be positive");
  check(cfg.lambda >= 0.0, "loss/bad_lambda", "LossConfig: lambda must be non-negative");
}

/// The K anchor / K positive (and optional K text) embedding matrices that
/// enter the loss. Rows are raw encoder outputs; cosine normalization happens
/// inside the loss.
struct BatchEmbeddings {
  DenseMatrix anchors;    // K x d
  DenseMatrix positives;  // K x d
  std::optional<DenseMatrix> text;  // K x d

  std::size_t batch_size() const { return anchors.rows(); }
  std::size_t dim() const { return anchors.cols(); }
};

inline void validate(const BatchEmbeddings& batch) {
  check(batch.anchors.rows() >= 2, "loss/batch_too_small",
        "BatchEmbeddings: need K >= 2, got K=" + std::to_string(batch.anchors.rows()));
  check(batch.positives.rows() == batch.anchors.rows() &&
            batch.positives.cols() == batch.anchors.cols(),
        "loss/shape_mismatch", "BatchEmbeddings: anchor/positive shapes differ");
  if (batch.text.has_value())
    check(batch.text->rows() == batch.anchors.rows() &&
              batch.text->cols() == batch.anchors.cols(),
          "loss/shape_mismatch", "BatchEmbeddings: text shape differs from anchors");
}

/// Loss value (mean over anchors) and exact gradients with respect to every
/// raw input embedding.
struct LossOutput {
  double value = 0.0;
  DenseMatrix grad_anchors;
  DenseMatrix grad_positives;
  std::optional<DenseMatrix> grad_text;
};

/// d(sum_i L_i)/d(logit_il) for the weighted softmax cross-entropy with
/// row-stochastic weights: softmax(logits)_il - w_il. This closed form is the
/// gradient path used by every loss below.
inline DenseMatrix logit_gradients(const DenseMatrix& logits, const DenseMatrix& weights) {
  check(logits.rows() == weights.rows() && logits.cols() == weights.cols(),
        "loss/shape_mismatch", "logit_gradients: logits/weights shapes differ");
  DenseMatrix g(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const std::vector<double> lsm = log_softmax_row(logits.row(i));
    for (std::size_t j = 0; j < logits.cols(); ++j)
      g(i, j) = std::exp(lsm[j]) - weights(i, j);
  }
  return g;
}

/// Row-normalizes a non-negative relevance matrix into convex weights
/// w_ij = h_ij / H_i. Errors on a zero row (an anchor with no positive).
inline DenseMatrix normalize_relevance_rows(const DenseMatrix& h) {
  DenseMatrix w(h.rows(), h.cols());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < h.cols(); ++j) {
      const double v = h(i, j);
      check(std::isfinite(v) && v >= 0.0, "loss/negative_relevance",
            "relevance matrix entries must be finite and non-negative");
      row_sum += v;
    }
    check(row_sum > 0.0, "loss/zero_relevance_row",
          "relevance matrix row " + std::to_string(i) +
              " sums to zero; every anchor needs at least one positive");
    for (std::size_t j = 0; j < h.cols(); ++j) w(i, j) = h(i, j) / row_sum;
  }
  return w;
}

namespace detail {

struct PairwiseLoss {
  double value = 0.0;
  DenseMatrix grad_left;
  DenseMatrix grad_right;
};

// Mean over rows of -sum_j w_ij log softmax_l(cos(left_i, right_l)/tau)[l=j],
// with exact gradients through the cosine normalization chain. `weights`
// must be row-stochastic. Zero-weight terms contribute nothing to the value
// and are skipped, so a diagonal weight pattern reproduces the single-positive
// loss arithmetic exactly.
inline PairwiseLoss weighted_softmax_loss(const DenseMatrix& left,
                                          const DenseMatrix& right,
                                          const DenseMatrix& weights, double tau) {
  const std::size_t k = left.rows();
  const std::size_t d = left.cols();
  check(right.rows() == k && right.cols() == d, "loss/shape_mismatch",
        "weighted_softmax_loss: left/right shapes differ");
  check(weights.rows() == k && weights.cols() == k, "loss/shape_mismatch",
        "weighted_softmax_loss: weights must be K x K");

  std::vector<double> left_norm(k), right_norm(k);
  DenseMatrix left_hat(k, d), right_hat(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    left_norm[i] = norm2(left.row(i));
    right_norm[i] = norm2(right.row(i));
    check(left_norm[i] > 0.0 && right_norm[i] > 0.0, "loss/zero_embedding",
          "weighted_softmax_loss: zero embedding in row " + std::to_string(i));
    for (std::size_t c = 0; c < d; ++c) {
      left_hat(i, c) = left(i, c) / left_norm[i];
      right_hat(i, c) = right(i, c) / right_norm[i];
    }
  }

  DenseMatrix sims = multiply_abt(left_hat, right_hat);
  DenseMatrix logits(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      sims(i, j) = std::clamp(sims(i, j), -1.0, 1.0);
      logits(i, j) = sims(i, j) / tau;
    }

  double value = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::vector<double> lsm = log_softmax_row(logits.row(i));
    for (std::size_t j = 0; j < k; ++j)
      if (weights(i, j) != 0.0) value -= weights(i, j) * lsm[j];
  }
  value /= static_cast<double>(k);

  // d(value)/d(sim_ij), via the closed-form logit gradient.
  DenseMatrix grad_sim = logit_gradients(logits, weights);
  const double scale = 1.0 / (static_cast<double>(k) * tau);
  for (double& g : grad_sim.values()) g *= scale;

  // Chain through cos(u, v) = u^T v / (|u||v|):
  //   d cos / d u = (v_hat - cos * u_hat) / |u|.
  DenseMatrix grad_left_hat = multiply(grad_sim, right_hat);        // K x d
  DenseMatrix grad_right_hat = multiply_at_b(grad_sim, left_hat);   // K x d
  PairwiseLoss out;
  out.value = value;
  out.grad_left = DenseMatrix(k, d);
  out.grad_right = DenseMatrix(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    double rho = 0.0;
    for (std::size_t j = 0; j < k; ++j) rho += grad_sim(i, j) * sims(i, j);
    for (std::size_t c = 0; c < d; ++c)
      out.grad_left(i, c) = (grad_left_hat(i, c) - rho * left_hat(i, c)) / left_norm[i];
  }
  for (std::size_t j = 0; j < k; ++j) {
    double sigma = 0.0;
    for (std::size_t i = 0; i < k; ++i) sigma += grad_sim(i, j) * sims(i, j);
    for (std::size_t c = 0; c < d; ++c)
      out.grad_right(j, c) =
          (grad_right_hat(j, c) - sigma * right_hat(j, c)) / right_norm[j];
  }
  return out;
}

inline DenseMatrix identity_weights(std::size_t k) {
  DenseMatrix w(k, k);
  for (std::size_t i = 0; i < k; ++i) w(i, i) = 1.0;
  return w;
}

// Runs the image-image loss with the given row-stochastic weights, averaging
// the reverse direction when `symmetric` is set. Anchors and positives carry
// the same labels, so the relevance behind `weights` is symmetric and the
// reverse direction row-normalizes to the same weight matrix; reusing it
// keeps the row-stochastic contract of the gradient kernel.
inline LossOutput image_pair_loss(const BatchEmbeddings& batch, const DenseMatrix& weights,
                                  const LossConfig& cfg) {
  PairwiseLoss fwd = weighted_softmax_loss(batch.anchors, batch.positives, weights, cfg.tau);
  LossOutput out;
  if (!cfg.symmetric) {
    out.value = fwd.value;
    out.grad_anchors = std::move(fwd.grad_left);
    out.grad_positives = std::move(fwd.grad_right);
    return out;
  }
  PairwiseLoss rev =
      weighted_softmax_loss(batch.positives, batch.anchors, weights, cfg.tau);
  const std::size_t k = batch.batch_size();
  const std::size_t d = batch.dim();
  out.value = 0.5 * (fwd.value + rev.value);
  out.grad_anchors = DenseMatrix(k, d);
  out.grad_positives = DenseMatrix(k, d);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      out.grad_anchors(i, c) = 0.5 * (fwd.grad_left(i, c) + rev.grad_right(i, c));
      out.grad_positives(i, c) = 0.5 * (fwd.grad_right(i, c) + rev.grad_left(i, c));
    }
  return out;
}

}  // namespace detail

/// Single-positive contrastive loss over K pairs: each anchor's only target
/// is its own positive, all other candidates act as negatives in the softmax
/// denominator.
inline LossOutput contrastive_loss(const BatchEmbeddings& batch, const LossConfig& cfg) {
  validate(batch);
  validate(cfg);
  return detail::image_pair_loss(batch, detail::identity_weights(batch.batch_size()), cfg);
}

/// Hierarchical multi-positive contrastive loss: every candidate j
/// contributes to anchor i with convex weight h_ij / H_i, H_i = sum_j h_ij.
/// With a diagonal-only relevance matrix this reduces exactly to
/// contrastive_loss.
inline LossOutput hier_loss(const BatchEmbeddings& batch, const DenseMatrix& relevance,
                            const LossConfig& cfg) {
  validate(batch);
  validate(cfg);
  check(relevance.rows() == batch.batch_size() && relevance.cols() == batch.batch_size(),
        "loss/shape_mismatch", "hier_loss: relevance matrix must be K x K");
  return detail::image_pair_loss(batch, normalize_relevance_rows(relevance), cfg);
}

/// Language-supervision term: the multi-positive loss with text embeddings
/// as candidates, scaled by lambda. Gradients flow to anchors and text only.
inline LossOutput language_term(const BatchEmbeddings& batch, const DenseMatrix& relevance,
                                const LossConfig& cfg) {
  validate(batch);
  validate(cfg);
  check(batch.text.has_value(), "loss/missing_text",
        "language_term: batch has no text embeddings");
  const std::size_t k = batch.batch_size();
  const std::size_t d = batch.dim();
  check(relevance.rows() == k && relevance.cols() == k, "loss/shape_mismatch",
        "language_term: relevance matrix must be K x K");
  LossOutput out;
  out.grad_anchors = DenseMatrix(k, d);
  out.grad_positives = DenseMatrix(k, d);
  out.grad_text = DenseMatrix(k, d);
  if (cfg.lambda == 0.0) return out;  // switched off: zero value, zero gradients

  detail::PairwiseLoss term = detail::weighted_softmax_loss(
      batch.anchors, *batch.text, normalize_relevance_rows(relevance), cfg.tau);
  out.value = cfg.lambda * term.value;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      out.grad_anchors(i, c) = cfg.lambda * term.grad_left(i, c);
      (*out.grad_text)(i, c) = cfg.lambda * term.grad_right(i, c);
    }
  return out;
}

/// Full training objective: hier_loss plus the language term when text is
/// present and lambda > 0.
inline LossOutput total_loss(const BatchEmbeddings& batch, const DenseMatrix& relevance,
                             const LossConfig& cfg) {
  LossOutput out = hier_loss(batch, relevance, cfg);
  if (batch.text.has_value() && cfg.lambda > 0.0) {
    LossOutput lang = language_term(batch, relevance, cfg);
    out.value += lang.value;
    for (std::size_t i = 0; i < out.grad_anchors.rows(); ++i)
      for (std::size_t c = 0; c < out.grad_anchors.cols(); ++c)
        out.grad_anchors(i, c) += lang.grad_anchors(i, c);
    out.grad_text = std::move(lang.grad_text);
  }
  return out;
}

}  // namespace hiercl
