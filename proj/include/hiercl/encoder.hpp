#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hiercl/error.hpp"
#include "hiercl/matrix.hpp"
#include "hiercl/rng.hpp"

namespace hiercl {

/// y = x W + b with W stored rows = fan-in, cols = fan-out. Doubles as the
/// gradient container (same shapes).
struct AffineLayer {
  DenseMatrix weights;
  std::vector<double> bias;
};

/// One or two affine layers; tanh between layers in the two-layer case.
struct EncoderParams {
  std::vector<AffineLayer> layers;

  int d_in() const { return static_cast<int>(layers.front().weights.rows()); }
  int d_out() const { return static_cast<int>(layers.back().weights.cols()); }
};

inline void validate(const EncoderParams& params) {
  check(params.layers.size() == 1 || params.layers.size() == 2, "encoder/bad_arch",
        "encoder must have 1 or 2 layers, has " + std::to_string(params.layers.size()));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const AffineLayer& layer = params.layers[l];
    check(layer.weights.rows() >= 1 && layer.weights.cols() >= 1, "encoder/bad_arch",
          "layer " + std::to_string(l) + " has an empty weight matrix");
    check(layer.bias.size() == layer.weights.cols(), "encoder/bad_arch",
          "layer " + std::to_string(l) + " bias length does not match fan-out");
    check(layer.weights.all_finite(), "encoder/nonfinite_params",
          "layer " + std::to_string(l) + " has non-finite weights");
    for (const double b : layer.bias)
      check(std::isfinite(b), "encoder/nonfinite_params",
            "layer " + std::to_string(l) + " has non-finite bias");
  }
  if (params.layers.size() == 2)
    check(params.layers[0].weights.cols() == params.layers[1].weights.rows(),
          "encoder/bad_arch", "layer shapes do not compose");
}

/// Weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)) drawn row-major, biases zero.
/// hidden = 0 yields a single affine layer, hidden > 0 the two-layer tanh net.
inline EncoderParams init_encoder(int d_in, int d, int hidden, Rng& rng) {
  check(d_in >= 1 && d >= 1 && hidden >= 0, "encoder/bad_arch",
        "init_encoder: dimensions must be positive (hidden may be 0)");
  auto make_layer = [&rng](int fan_in, int fan_out) {
    AffineLayer layer;
    layer.weights = DenseMatrix(static_cast<std::size_t>(fan_in),
                                static_cast<std::size_t>(fan_out));
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < layer.weights.values().size(); ++i)
      layer.weights.values()[i] = rng.uniform(-s, s);
    layer.bias.assign(static_cast<std::size_t>(fan_out), 0.0);
    return layer;
  };
  EncoderParams params;
  if (hidden == 0) {
    params.layers.push_back(make_layer(d_in, d));
  } else {
    params.layers.push_back(make_layer(d_in, hidden));
    params.layers.push_back(make_layer(hidden, d));
  }
  return params;
}

namespace detail {

inline DenseMatrix affine(const DenseMatrix& x, const AffineLayer& layer) {
  DenseMatrix out = multiply(x, layer.weights);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) out(i, c) += layer.bias[c];
  return out;
}

inline std::vector<double> column_sums(const DenseMatrix& m) {
  std::vector<double> sums(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) sums[c] += m(i, c);
  return sums;
}

}  // namespace detail

/// Caches needed by backward: post-tanh hidden activations (two-layer only)
/// and the output.
struct EncoderActivations {
  DenseMatrix hidden_post;
  DenseMatrix output;
};

inline EncoderActivations forward_acts(const EncoderParams& params, const DenseMatrix& x) {
  validate(params);
  check(static_cast<int>(x.cols()) == params.d_in(), "encoder/dim_mismatch",
        "forward: input has " + std::to_string(x.cols()) + " columns, encoder expects " +
            std::to_string(params.d_in()));
  EncoderActivations acts;
  if (params.layers.size() == 1) {
    acts.output = detail::affine(x, params.layers[0]);
    return acts;
  }
  DenseMatrix pre = detail::affine(x, params.layers[0]);
  for (double& v : pre.values()) v = std::tanh(v);
  acts.hidden_post = std::move(pre);
  acts.output = detail::affine(acts.hidden_post, params.layers[1]);
  return acts;
}

inline DenseMatrix forward(const EncoderParams& params, const DenseMatrix& x) {
  return forward_acts(params, x).output;
}

struct BackwardResult {
  std::vector<AffineLayer> layers;
  DenseMatrix input;
};

/// Exact gradients of the scalar loss whose output-gradient is grad_output,
/// with respect to every parameter and to the input rows.
inline BackwardResult backward(const EncoderParams& params, const DenseMatrix& x,
                               const EncoderActivations& acts,
                               const DenseMatrix& grad_output) {
  check(grad_output.rows() == x.rows() &&
            static_cast<int>(grad_output.cols()) == params.d_out(),
        "encoder/dim_mismatch", "backward: grad_output shape mismatch");
  BackwardResult result;
  result.layers.resize(params.layers.size());
  if (params.layers.size() == 1) {
    result.layers[0].weights = multiply_at_b(x, grad_output);
    result.layers[0].bias = detail::column_sums(grad_output);
    result.input = multiply_abt(grad_output, params.layers[0].weights);
    return result;
  }
  const DenseMatrix& h = acts.hidden_post;
  check(h.rows() == x.rows() &&
            h.cols() == params.layers[0].weights.cols(),
        "encoder/dim_mismatch", "backward: stale activations");
  result.layers[1].weights = multiply_at_b(h, grad_output);
  result.layers[1].bias = detail::column_sums(grad_output);
  DenseMatrix grad_pre = multiply_abt(grad_output, params.layers[1].weights);
  for (std::size_t i = 0; i < grad_pre.values().size(); ++i)
    grad_pre.values()[i] *= 1.0 - h.values()[i] * h.values()[i];
  result.layers[0].weights = multiply_at_b(x, grad_pre);
  result.layers[0].bias = detail::column_sums(grad_pre);
  result.input = multiply_abt(grad_pre, params.layers[0].weights);
  return result;
}

inline std::size_t param_count(const EncoderParams& params) {
  std::size_t n = 0;
  for (const AffineLayer& layer : params.layers)
    n += layer.weights.values().size() + layer.bias.size();
  return n;
}

/// Layer order, weights row-major then bias, matching unflatten.
inline std::vector<double> flatten(const std::vector<AffineLayer>& layers) {
  std::vector<double> flat;
  for (const AffineLayer& layer : layers) {
    flat.insert(flat.end(), layer.weights.values().begin(), layer.weights.values().end());
    flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
  }
  return flat;
}

inline void unflatten(const std::vector<double>& flat, EncoderParams& params) {
  check(flat.size() == param_count(params), "encoder/dim_mismatch",
        "unflatten: size mismatch");
  std::size_t pos = 0;
  for (AffineLayer& layer : params.layers) {
    std::copy(flat.begin() + pos, flat.begin() + pos + layer.weights.values().size(),
              layer.weights.values().begin());
    pos += layer.weights.values().size();
    std::copy(flat.begin() + pos, flat.begin() + pos + layer.bias.size(),
              layer.bias.begin());
    pos += layer.bias.size();
  }
}

/// AdamW with decoupled decay: theta -= lr * (mhat/(sqrt(vhat)+eps) + wd*theta).
class AdamW {
 public:
  AdamW(std::size_t n, double lr, double weight_decay)
      : lr_(lr), weight_decay_(weight_decay), m_(n, 0.0), v_(n, 0.0) {
    check(lr >= 0.0 && weight_decay >= 0.0, "encoder/bad_config",
          "AdamW: lr and weight_decay must be non-negative");
  }

  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    check(theta.size() == m_.size() && grad.size() == m_.size(), "encoder/dim_mismatch",
          "AdamW: parameter/gradient size mismatch");
    for (const double g : grad)
      check(std::isfinite(g), "encoder/nonfinite_grad",
            "AdamW: non-finite gradient at step " + std::to_string(step_count_ + 1));
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      theta[i] -= lr_ * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * theta[i]);
    }
  }

  long step_count() const { return step_count_; }

 private:
  static constexpr double beta1_ = 0.9;
  static constexpr double beta2_ = 0.999;
  static constexpr double eps_ = 1e-8;
  double lr_;
  double weight_decay_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_count_ = 0;
};

}  // namespace hiercl
