#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emmil/dense_matrix.hpp"
#include "emmil/errors.hpp"

namespace emmil {

constexpr double kBceClamp = 1e-7;

enum class Activation { kRelu, kSigmoid, kIdentity };

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double apply_activation(Activation act, double x) {
  switch (act) {
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kSigmoid:
      return sigmoid(x);
    case Activation::kIdentity:
      return x;
  }
  return x;
}

// Derivative expressed through the activated output value y = act(x).
inline double activation_grad_from_output(Activation act, double y) {
  switch (act) {
    case Activation::kRelu:
      return y > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid:
      return y * (1.0 - y);
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

struct AffineLayer {
  DenseMatrix weights;        // out_dim x in_dim
  std::vector<double> bias;   // out_dim
  Activation activation = Activation::kIdentity;

  std::size_t in_dim() const { return weights.cols(); }
  std::size_t out_dim() const { return weights.rows(); }
};

// Per-clip MLP: applied row-wise, ReLU hidden layers and (by default) a
// sigmoid output so scores stay in (0,1).
struct ScoringNetwork {
  std::vector<AffineLayer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : layers) n += layer.weights.size() + layer.bias.size();
    return n;
  }
};

// Uniform init in [-a, a] with a = sqrt(6 / (fan_in + fan_out)), zero bias.
inline ScoringNetwork make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                               std::size_t output_dim, std::mt19937_64& rng,
                               Activation output_activation = Activation::kSigmoid) {
  if (input_dim == 0 || output_dim == 0) {
    throw ConfigError("make_mlp: zero layer dimension");
  }
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(output_dim);

  ScoringNetwork net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i];
    const std::size_t fan_out = dims[i + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    AffineLayer layer;
    layer.weights = DenseMatrix(fan_out, fan_in);
    for (double& w : layer.weights.data()) w = dist(rng);
    layer.bias.assign(fan_out, 0.0);
    const bool last = (i + 2 == dims.size());
    layer.activation = last ? output_activation : Activation::kRelu;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// Activations after every layer; activations[0] is the input itself.
struct ForwardCache {
  std::vector<DenseMatrix> activations;
  const DenseMatrix& output() const { return activations.back(); }
};

inline ForwardCache forward_cached(const ScoringNetwork& net, const DenseMatrix& inputs) {
  if (inputs.cols() != net.input_dim()) {
    throw ConfigError("forward: input has " + std::to_string(inputs.cols()) +
                      " columns, network expects " + std::to_string(net.input_dim()));
  }
  ForwardCache cache;
  cache.activations.reserve(net.layers.size() + 1);
  cache.activations.push_back(inputs);
  for (const auto& layer : net.layers) {
    const DenseMatrix& x = cache.activations.back();
    DenseMatrix y(x.rows(), layer.out_dim());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_dim(); ++i) {
          acc += layer.weights(o, i) * x(r, i);
        }
        y(r, o) = apply_activation(layer.activation, acc);
      }
    }
    cache.activations.push_back(std::move(y));
  }
  return cache;
}

inline DenseMatrix forward(const ScoringNetwork& net, const DenseMatrix& inputs) {
  return forward_cached(net, inputs).activations.back();
}

struct BceResult {
  double loss = 0.0;
  DenseMatrix grad;  // d loss / d predictions, zero at masked entries
};

// Mean binary cross entropy over unmasked entries, predictions clamped to
// [kBceClamp, 1 - kBceClamp]. An all-zero mask yields loss 0, zero gradient.
inline BceResult bce_loss(const DenseMatrix& predictions, const DenseMatrix& targets,
                          const DenseMatrix* mask = nullptr) {
  require_same_shape(predictions, targets, "bce_loss");
  if (mask != nullptr) require_same_shape(predictions, *mask, "bce_loss mask");

  BceResult result;
  result.grad = DenseMatrix(predictions.rows(), predictions.cols());
  std::size_t active = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (mask == nullptr || mask->data()[i] != 0.0) ++active;
  }
  if (active == 0) return result;

  const double inv_n = 1.0 / static_cast<double>(active);
  double loss = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (mask != nullptr && mask->data()[i] == 0.0) continue;
    double p = predictions.data()[i];
    p = std::min(std::max(p, kBceClamp), 1.0 - kBceClamp);
    const double t = targets.data()[i];
    loss += -t * std::log(p) - (1.0 - t) * std::log(1.0 - p);
    result.grad.data()[i] = (-t / p + (1.0 - t) / (1.0 - p)) * inv_n;
  }
  result.loss = loss * inv_n;
  return result;
}

struct LayerGradients {
  DenseMatrix weights;
  std::vector<double> bias;
};

struct NetworkGradients {
  std::vector<LayerGradients> layers;
  DenseMatrix input;  // d loss / d inputs, occasionally useful for chaining
};

// Reverse-mode pass through the cached forward. output_grad is
// d loss / d output, same shape as the network output for this batch.
inline NetworkGradients backward(const ScoringNetwork& net, const ForwardCache& cache,
                                 const DenseMatrix& output_grad) {
  require_same_shape(output_grad, cache.activations.back(), "backward");

  NetworkGradients grads;
  grads.layers.resize(net.layers.size());
  DenseMatrix delta = output_grad;  // gradient w.r.t. current layer's activated output

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const AffineLayer& layer = net.layers[li];
    const DenseMatrix& x = cache.activations[li];
    const DenseMatrix& y = cache.activations[li + 1];

    // Through the activation: gradient w.r.t. pre-activation.
    DenseMatrix dz(delta.rows(), delta.cols());
    for (std::size_t i = 0; i < delta.size(); ++i) {
      dz.data()[i] = delta.data()[i] * activation_grad_from_output(layer.activation, y.data()[i]);
    }

    LayerGradients& lg = grads.layers[li];
    lg.weights = DenseMatrix(layer.out_dim(), layer.in_dim());
    lg.bias.assign(layer.out_dim(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        const double g = dz(r, o);
        lg.bias[o] += g;
        for (std::size_t i = 0; i < layer.in_dim(); ++i) {
          lg.weights(o, i) += g * x(r, i);
        }
      }
    }

    DenseMatrix dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t i = 0; i < layer.in_dim(); ++i) {
        double acc = 0.0;
        for (std::size_t o = 0; o < layer.out_dim(); ++o) {
          acc += layer.weights(o, i) * dz(r, o);
        }
        dx(r, i) = acc;
      }
    }
    delta = std::move(dx);
  }
  grads.input = std::move(delta);
  return grads;
}

struct MomentPair {
  DenseMatrix weights_m, weights_v;
  std::vector<double> bias_m, bias_v;
};

// Adam accumulators plus the step size; shapes mirror the network exactly.
struct OptimizerState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<MomentPair> moments;
};

inline OptimizerState make_adam(const ScoringNetwork& net, double learning_rate) {
  if (!(learning_rate > 0.0)) throw ConfigError("make_adam: learning rate must be > 0");
  OptimizerState state;
  state.learning_rate = learning_rate;
  for (const auto& layer : net.layers) {
    MomentPair mp;
    mp.weights_m = DenseMatrix(layer.out_dim(), layer.in_dim());
    mp.weights_v = DenseMatrix(layer.out_dim(), layer.in_dim());
    mp.bias_m.assign(layer.out_dim(), 0.0);
    mp.bias_v.assign(layer.out_dim(), 0.0);
    state.moments.push_back(std::move(mp));
  }
  return state;
}

namespace detail {

inline void adam_update(double& param, double grad, double& m, double& v,
                        const OptimizerState& s, double bias1, double bias2) {
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = s.beta2 * v + (1.0 - s.beta2) * grad * grad;
  const double m_hat = m / bias1;
  const double v_hat = v / bias2;
  param -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
}

}  // namespace detail

inline void apply_gradients(ScoringNetwork& net, OptimizerState& state,
                            const NetworkGradients& grads) {
  if (grads.layers.size() != net.layers.size() || state.moments.size() != net.layers.size()) {
    throw ConfigError("apply_gradients: layer count mismatch");
  }
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    const LayerGradients& lg = grads.layers[li];
    for (std::size_t i = 0; i < lg.weights.size(); ++i) {
      if (!std::isfinite(lg.weights.data()[i])) {
        throw InternalError("non-finite weight gradient in layer " + std::to_string(li));
      }
    }
    for (double b : lg.bias) {
      if (!std::isfinite(b)) {
        throw InternalError("non-finite bias gradient in layer " + std::to_string(li));
      }
    }
  }

  state.step_count += 1;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    AffineLayer& layer = net.layers[li];
    MomentPair& mp = state.moments[li];
    const LayerGradients& lg = grads.layers[li];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      detail::adam_update(layer.weights.data()[i], lg.weights.data()[i], mp.weights_m.data()[i],
                          mp.weights_v.data()[i], state, bias1, bias2);
    }
    for (std::size_t o = 0; o < layer.bias.size(); ++o) {
      detail::adam_update(layer.bias[o], lg.bias[o], mp.bias_m[o], mp.bias_v[o], state, bias1,
                          bias2);
    }
  }
}

// One full training step: backprop the given output gradient, then Adam.
inline void backward_and_step(ScoringNetwork& net, OptimizerState& state,
                              const ForwardCache& cache, const DenseMatrix& output_grad) {
  const NetworkGradients grads = backward(net, cache, output_grad);
  apply_gradients(net, state, grads);
}

// Central finite-difference check of all parameter gradients of
// bce_loss(forward(net, inputs), targets). Returns the worst relative error.
// Diagnostic; keep the network small (<= ~1000 parameters).
inline double grad_check(const ScoringNetwork& net, const DenseMatrix& inputs,
                         const DenseMatrix& targets, const DenseMatrix* mask = nullptr,
                         double h = 1e-5) {
  ScoringNetwork probe = net;
  const ForwardCache cache = forward_cached(probe, inputs);
  const BceResult bce = bce_loss(cache.output(), targets, mask);
  const NetworkGradients analytic = backward(probe, cache, bce.grad);

  auto loss_at = [&](const ScoringNetwork& n) {
    return bce_loss(forward(n, inputs), targets, mask).loss;
  };

  double worst = 0.0;
  auto check_param = [&](double& param, double analytic_grad) {
    const double original = param;
    param = original + h;
    const double plus = loss_at(probe);
    param = original - h;
    const double minus = loss_at(probe);
    param = original;
    const double fd = (plus - minus) / (2.0 * h);
    const double denom = std::max({std::abs(analytic_grad), std::abs(fd), 1e-3});
    worst = std::max(worst, std::abs(analytic_grad - fd) / denom);
  };

  for (std::size_t li = 0; li < probe.layers.size(); ++li) {
    AffineLayer& layer = probe.layers[li];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      check_param(layer.weights.data()[i], analytic.layers[li].weights.data()[i]);
    }
    for (std::size_t o = 0; o < layer.bias.size(); ++o) {
      check_param(layer.bias[o], analytic.layers[li].bias[o]);
    }
  }
  return worst;
}

}  // namespace emmil
