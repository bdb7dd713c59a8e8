#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "hiercl/loss.hpp"
#include "hiercl/rng.hpp"
#include "hiercl/taxonomy.hpp"
#include "helpers.hpp"

using hiercl::BatchEmbeddings;
using hiercl::DenseMatrix;
using hiercl::LossConfig;
using hiercl::LossOutput;
using hiercl::Rng;

namespace {

BatchEmbeddings random_batch(std::size_t k, std::size_t d, Rng& rng, bool with_text = false) {
  BatchEmbeddings b;
  b.anchors = test::random_matrix(k, d, rng);
  b.positives = test::random_matrix(k, d, rng);
  if (with_text) b.text = test::random_matrix(k, d, rng);
  return b;
}

// Reference value computed in long double, straight from the definition:
// L = (1/K) sum_i sum_j w_ij * (lse_i - s_ij / tau), s = cosine similarities.
double naive_weighted_value(const DenseMatrix& left, const DenseMatrix& right,
                            const DenseMatrix& w, double tau) {
  const std::size_t k = left.rows();
  const std::size_t d = left.cols();
  auto row_norm = [&](const DenseMatrix& m, std::size_t i) {
    long double s = 0.0L;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<long double>(m(i, c)) * m(i, c);
    return std::sqrt(s);
  };
  std::vector<std::vector<long double>> logits(k, std::vector<long double>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const long double ni = row_norm(left, i);
    for (std::size_t j = 0; j < k; ++j) {
      long double dot = 0.0L;
      for (std::size_t c = 0; c < d; ++c)
        dot += static_cast<long double>(left(i, c)) * right(j, c);
      logits[i][j] = dot / (ni * row_norm(right, j)) / tau;
    }
  }
  long double total = 0.0L;
  for (std::size_t i = 0; i < k; ++i) {
    long double hi = logits[i][0];
    for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, logits[i][j]);
    long double lse = 0.0L;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(logits[i][j] - hi);
    lse = hi + std::log(lse);
    for (std::size_t j = 0; j < k; ++j) total += w(i, j) * (lse - logits[i][j]);
  }
  return static_cast<double>(total / static_cast<long double>(k));
}

DenseMatrix normalized_rows(const DenseMatrix& h) { return hiercl::normalize_relevance_rows(h); }

// Central finite difference of `value` w.r.t. one entry of `m`.
template <class F>
double fd_entry(F&& value, DenseMatrix& m, std::size_t i, std::size_t j) {
  const double h = 1e-5;
  const double orig = m(i, j);
  m(i, j) = orig + h;
  const double fp = value();
  m(i, j) = orig - h;
  const double fm = value();
  m(i, j) = orig;
  return (fp - fm) / (2.0 * h);
}

template <class F>
void check_grad(F&& value, DenseMatrix& wrt, const DenseMatrix& grad) {
  REQUIRE(grad.rows() == wrt.rows());
  REQUIRE(grad.cols() == wrt.cols());
  for (std::size_t i = 0; i < wrt.rows(); ++i)
    for (std::size_t j = 0; j < wrt.cols(); ++j) {
      const double fd = fd_entry(value, wrt, i, j);
      const double g = grad(i, j);
      REQUIRE(std::abs(g - fd) <= 1e-4 * std::max({1.0, std::abs(g), std::abs(fd)}));
    }
}

DenseMatrix random_relevance(std::size_t k, Rng& rng) {
  const std::vector<hiercl::HierLabel> labels = test::random_labels(k, rng);
  return hiercl::relevance_matrix(labels, labels, hiercl::ScoreConfig{});
}

}  // namespace

TEST_CASE("contrastive loss on identical embeddings is log K") {
  for (const std::size_t k : {2u, 4u, 7u}) {
    BatchEmbeddings b;
    b.anchors = DenseMatrix(k, 3);
    for (std::size_t i = 0; i < k; ++i) {
      b.anchors(i, 0) = 1.0;
      b.anchors(i, 1) = 2.0;
      b.anchors(i, 2) = 3.0;
    }
    b.positives = b.anchors;
    const LossOutput out = hiercl::contrastive_loss(b, LossConfig{});
    REQUIRE(std::abs(out.value - std::log(static_cast<double>(k))) < 1e-12);
  }
}

TEST_CASE("contrastive loss on an orthonormal pair at tau 0.1") {
  BatchEmbeddings b;
  b.anchors = DenseMatrix::from_rows({{1.0, 0.0}, {0.0, 1.0}});
  b.positives = b.anchors;
  LossConfig cfg;
  cfg.tau = 0.1;
  const LossOutput out = hiercl::contrastive_loss(b, cfg);
  REQUIRE(std::abs(out.value - std::log1p(std::exp(-10.0))) < 1e-12);
  REQUIRE(out.value == Catch::Approx(4.5398e-5).epsilon(1e-3));
}

TEST_CASE("contrastive loss matches the naive definition") {
  Rng rng(101);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = 2 + rng.below(7);
    const BatchEmbeddings b = random_batch(k, 2 + rng.below(10), rng);
    LossConfig cfg;
    cfg.tau = 0.05 + rng.uniform();
    const LossOutput out = hiercl::contrastive_loss(b, cfg);
    const double ref =
        naive_weighted_value(b.anchors, b.positives, hiercl::detail::identity_weights(k), cfg.tau);
    REQUIRE(std::abs(out.value - ref) < 1e-12);
    REQUIRE(out.value >= 0.0);
  }
}

TEST_CASE("hier loss with diagonal relevance reduces to contrastive loss") {
  Rng rng(202);
  for (const double diag : {1.0, 0.35, 2.5}) {
    const BatchEmbeddings b = random_batch(6, 8, rng);
    DenseMatrix rel(6, 6);
    for (std::size_t i = 0; i < 6; ++i) rel(i, i) = diag;
    LossConfig cfg;
    cfg.tau = 0.1;
    const LossOutput hier = hiercl::hier_loss(b, rel, cfg);
    const LossOutput cl = hiercl::contrastive_loss(b, cfg);
    REQUIRE(hier.value == cl.value);
    REQUIRE(hier.grad_anchors == cl.grad_anchors);
    REQUIRE(hier.grad_positives == cl.grad_positives);
  }
}

TEST_CASE("hier loss matches the naive definition with normalized weights") {
  Rng rng(303);
  for (int t = 0; t < 10; ++t) {
    const std::size_t k = 3 + rng.below(6);
    const BatchEmbeddings b = random_batch(k, 5, rng);
    const DenseMatrix rel = random_relevance(k, rng);
    LossConfig cfg;
    cfg.tau = 0.07 + 0.4 * rng.uniform();
    const LossOutput out = hiercl::hier_loss(b, rel, cfg);
    const double ref = naive_weighted_value(b.anchors, b.positives, normalized_rows(rel), cfg.tau);
    REQUIRE(std::abs(out.value - ref) < 1e-12);
    REQUIRE(out.value >= 0.0);
  }
}

TEST_CASE("hier loss with all-ones relevance on identical embeddings is log K") {
  BatchEmbeddings b;
  b.anchors = DenseMatrix(4, 2);
  for (std::size_t i = 0; i < 4; ++i) b.anchors(i, 0) = 0.5;
  b.positives = b.anchors;
  const DenseMatrix rel(4, 4, 1.0);
  const LossOutput out = hiercl::hier_loss(b, rel, LossConfig{});
  REQUIRE(std::abs(out.value - std::log(4.0)) < 1e-12);
}

TEST_CASE("doubling the relevance matrix changes nothing") {
  Rng rng(404);
  const BatchEmbeddings b = random_batch(5, 6, rng);
  const DenseMatrix rel = random_relevance(5, rng);
  DenseMatrix scaled = rel;
  for (double& v : scaled.values()) v *= 2.0;
  LossConfig cfg;
  const LossOutput a = hiercl::hier_loss(b, rel, cfg);
  const LossOutput c = hiercl::hier_loss(b, scaled, cfg);
  REQUIRE(a.value == c.value);
  REQUIRE(a.grad_anchors == c.grad_anchors);
  REQUIRE(a.grad_positives == c.grad_positives);
}

TEST_CASE("normalize_relevance_rows") {
  const DenseMatrix h = DenseMatrix::from_rows({{2.0, 2.0}, {1.0, 3.0}});
  const DenseMatrix w = hiercl::normalize_relevance_rows(h);
  REQUIRE(w(0, 0) == 0.5);
  REQUIRE(w(0, 1) == 0.5);
  REQUIRE(w(1, 0) == 0.25);
  REQUIRE(w(1, 1) == 0.75);

  test::expect_error("loss/negative_relevance", [] {
    hiercl::normalize_relevance_rows(DenseMatrix::from_rows({{1.0, -0.1}, {0.0, 1.0}}));
  });
  test::expect_error("loss/zero_relevance_row", [] {
    hiercl::normalize_relevance_rows(DenseMatrix::from_rows({{1.0, 0.0}, {0.0, 0.0}}));
  });
}

TEST_CASE("logit gradients equal softmax minus weights") {
  Rng rng(505);
  for (int t = 0; t < 20; ++t) {
    const std::size_t k = 2 + rng.below(15);
    DenseMatrix logits(k, k);
    for (double& v : logits.values()) v = rng.uniform(-20.0, 20.0);
    DenseMatrix raw(k, k);
    for (double& v : raw.values()) v = rng.uniform();
    const DenseMatrix w = hiercl::normalize_relevance_rows(raw);

    const DenseMatrix g = hiercl::logit_gradients(logits, w);
    for (std::size_t i = 0; i < k; ++i) {
      long double hi = logits(i, 0);
      for (std::size_t j = 1; j < k; ++j) hi = std::max(hi, static_cast<long double>(logits(i, j)));
      long double z = 0.0L;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(i, j) - hi);
      long double row_sum = 0.0L;
      for (std::size_t j = 0; j < k; ++j) {
        const long double p = std::exp(logits(i, j) - hi) / z;
        REQUIRE(std::abs(g(i, j) - static_cast<double>(p - w(i, j))) <= 1e-10);
        row_sum += g(i, j);
      }
      // Softmax and weights both sum to one per row, so the gradient row sums to zero.
      REQUIRE(std::abs(static_cast<double>(row_sum)) < 1e-12);
    }
  }
  test::expect_error("loss/shape_mismatch", [] {
    hiercl::logit_gradients(DenseMatrix(2, 3), DenseMatrix(2, 2));
  });
}

TEST_CASE("contrastive gradients match finite differences") {
  Rng rng(606);
  BatchEmbeddings b = random_batch(4, 8, rng);
  LossConfig cfg;
  cfg.tau = 0.1;
  const LossOutput out = hiercl::contrastive_loss(b, cfg);
  const auto value = [&] { return hiercl::contrastive_loss(b, cfg).value; };
  check_grad(value, b.anchors, out.grad_anchors);
  check_grad(value, b.positives, out.grad_positives);
}

TEST_CASE("hier gradients match finite differences, symmetric mode included") {
  Rng rng(707);
  for (const bool symmetric : {false, true}) {
    BatchEmbeddings b = random_batch(5, 6, rng);
    const DenseMatrix rel = random_relevance(5, rng);
    LossConfig cfg;
    cfg.tau = 0.07;
    cfg.symmetric = symmetric;
    const LossOutput out = hiercl::hier_loss(b, rel, cfg);
    const auto value = [&] { return hiercl::hier_loss(b, rel, cfg).value; };
    check_grad(value, b.anchors, out.grad_anchors);
    check_grad(value, b.positives, out.grad_positives);
  }
}

TEST_CASE("symmetric mode averages both directions under one weight matrix") {
  // Strongly unequal relevance normalizers: anchor 0 relates to three rows,
  // anchor 3 only to itself. The reverse direction must reuse the same
  // row-normalized weights, or its gradient kernel loses the row-stochastic
  // precondition it relies on.
  const std::vector<hiercl::HierLabel> labels{
      {10, 1001, "P1"}, {10, 1001, "P1"}, {10, 1002, "P2"}, {11, 1101, "P3"}};
  Rng rng(717);
  BatchEmbeddings b = random_batch(4, 5, rng);
  const DenseMatrix rel =
      hiercl::relevance_matrix(labels, labels, hiercl::ScoreConfig{});
  LossConfig cfg;
  cfg.tau = 0.2;
  cfg.symmetric = true;

  const LossOutput sym = hiercl::hier_loss(b, rel, cfg);
  const auto value = [&] { return hiercl::hier_loss(b, rel, cfg).value; };
  check_grad(value, b.anchors, sym.grad_anchors);
  check_grad(value, b.positives, sym.grad_positives);

  // Exact decomposition: the symmetric loss is the mean of the forward pass
  // and the forward pass with the roles swapped.
  LossConfig one_way = cfg;
  one_way.symmetric = false;
  const LossOutput fwd = hiercl::hier_loss(b, rel, one_way);
  BatchEmbeddings swapped;
  swapped.anchors = b.positives;
  swapped.positives = b.anchors;
  const LossOutput rev = hiercl::hier_loss(swapped, rel, one_way);
  REQUIRE(sym.value == 0.5 * (fwd.value + rev.value));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 5; ++c) {
      REQUIRE(sym.grad_anchors(i, c) ==
              0.5 * (fwd.grad_anchors(i, c) + rev.grad_positives(i, c)));
      REQUIRE(sym.grad_positives(i, c) ==
              0.5 * (fwd.grad_positives(i, c) + rev.grad_anchors(i, c)));
    }
}

TEST_CASE("total loss gradients match finite differences with text") {
  Rng rng(808);
  BatchEmbeddings b = random_batch(4, 5, rng, /*with_text=*/true);
  const DenseMatrix rel = random_relevance(4, rng);
  LossConfig cfg;
  cfg.tau = 0.2;
  cfg.lambda = 0.5;
  const LossOutput out = hiercl::total_loss(b, rel, cfg);
  REQUIRE(out.grad_text.has_value());
  const auto value = [&] { return hiercl::total_loss(b, rel, cfg).value; };
  check_grad(value, b.anchors, out.grad_anchors);
  check_grad(value, b.positives, out.grad_positives);
  check_grad(value, *b.text, *out.grad_text);
}

TEST_CASE("language term identities") {
  Rng rng(909);
  BatchEmbeddings b = random_batch(4, 6, rng, /*with_text=*/true);
  const DenseMatrix rel = random_relevance(4, rng);

  LossConfig off;
  off.lambda = 0.0;
  const LossOutput zero = hiercl::language_term(b, rel, off);
  REQUIRE(zero.value == 0.0);
  REQUIRE(zero.grad_text.has_value());
  for (const double v : zero.grad_anchors.values()) REQUIRE(v == 0.0);
  for (const double v : zero.grad_text->values()) REQUIRE(v == 0.0);

  // With text equal to the positives and lambda 1, the language term is the
  // asymmetric hier loss with gradients routed to the text slot.
  BatchEmbeddings same = b;
  same.text = same.positives;
  LossConfig unit;
  unit.lambda = 1.0;
  const LossOutput lang = hiercl::language_term(same, rel, unit);
  const LossOutput hier = hiercl::hier_loss(same, rel, unit);
  REQUIRE(lang.value == hier.value);
  REQUIRE(lang.grad_anchors == hier.grad_anchors);
  REQUIRE(*lang.grad_text == hier.grad_positives);

  LossConfig fifth;
  fifth.lambda = 0.2;
  const LossOutput scaled = hiercl::language_term(same, rel, fifth);
  REQUIRE(scaled.value == 0.2 * lang.value);

  BatchEmbeddings no_text = b;
  no_text.text.reset();
  test::expect_error("loss/missing_text",
                     [&] { hiercl::language_term(no_text, rel, unit); });
}

TEST_CASE("total loss composes hier and language terms") {
  Rng rng(111);
  BatchEmbeddings b = random_batch(5, 4, rng, /*with_text=*/true);
  const DenseMatrix rel = random_relevance(5, rng);
  LossConfig cfg;
  cfg.lambda = 0.3;

  const LossOutput total = hiercl::total_loss(b, rel, cfg);
  const LossOutput hier = hiercl::hier_loss(b, rel, cfg);
  const LossOutput lang = hiercl::language_term(b, rel, cfg);
  REQUIRE(total.value == hier.value + lang.value);
  REQUIRE(total.grad_positives == hier.grad_positives);
  REQUIRE(total.grad_text.has_value());
  REQUIRE(*total.grad_text == *lang.grad_text);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      REQUIRE(total.grad_anchors(i, c) == hier.grad_anchors(i, c) + lang.grad_anchors(i, c));

  // lambda = 0 or missing text: exactly the hier loss, no text gradient.
  LossConfig off = cfg;
  off.lambda = 0.0;
  const LossOutput plain = hiercl::total_loss(b, rel, off);
  REQUIRE(plain.value == hiercl::hier_loss(b, rel, off).value);
  REQUIRE_FALSE(plain.grad_text.has_value());

  BatchEmbeddings no_text = b;
  no_text.text.reset();
  const LossOutput imgs = hiercl::total_loss(no_text, rel, cfg);
  REQUIRE(imgs.value == hiercl::hier_loss(no_text, rel, cfg).value);
  REQUIRE_FALSE(imgs.grad_text.has_value());
}

TEST_CASE("loss input validation") {
  Rng rng(222);
  test::expect_error("loss/batch_too_small", [&] {
    BatchEmbeddings b = random_batch(1, 4, rng);
    hiercl::contrastive_loss(b, LossConfig{});
  });
  test::expect_error("loss/shape_mismatch", [&] {
    BatchEmbeddings b = random_batch(3, 4, rng);
    b.positives = test::random_matrix(3, 5, rng);
    hiercl::contrastive_loss(b, LossConfig{});
  });
  test::expect_error("loss/shape_mismatch", [&] {
    BatchEmbeddings b = random_batch(3, 4, rng);
    hiercl::hier_loss(b, DenseMatrix(2, 3, 1.0), LossConfig{});
  });
  test::expect_error("loss/bad_tau", [&] {
    BatchEmbeddings b = random_batch(3, 4, rng);
    LossConfig cfg;
    cfg.tau = 0.0;
    hiercl::contrastive_loss(b, cfg);
  });
  test::expect_error("loss/bad_lambda", [&] {
    BatchEmbeddings b = random_batch(3, 4, rng);
    LossConfig cfg;
    cfg.lambda = -0.5;
    hiercl::contrastive_loss(b, cfg);
  });
  test::expect_error("loss/zero_embedding", [&] {
    BatchEmbeddings b = random_batch(3, 4, rng);
    for (std::size_t c = 0; c < 4; ++c) b.anchors(1, c) = 0.0;
    hiercl::contrastive_loss(b, LossConfig{});
  });
}
