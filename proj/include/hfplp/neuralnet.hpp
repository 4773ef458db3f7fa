#pragma once

// Small dense-network stack with hand-written backprop and Adam. Batches are
// column-major: a (features x batch) matrix holds one sample per column.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "hfplp/error.hpp"

namespace hfplp::nn {

using Matrix = Eigen::MatrixXf;
using Vector = Eigen::VectorXf;

enum class Activation : int { kRelu = 0, kTanh = 1, kIdentity = 2 };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;
  Activation activation = Activation::kIdentity;
};

struct ForwardCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> outputs; // post-activation output of each layer
};

struct DenseGrads {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void set_zero() {
    for (auto& w : weight) w.setZero();
    for (auto& b : bias) b.setZero();
  }
};

class DenseNet {
 public:
  DenseNet() = default;

  DenseNet(int input_dim, const std::vector<int>& hidden, int output_dim, Activation hidden_act,
           Activation output_act = Activation::kIdentity) {
    int prev = input_dim;
    for (int h : hidden) {
      layers_.push_back({Matrix::Zero(h, prev), Vector::Zero(h), hidden_act});
      prev = h;
    }
    layers_.push_back({Matrix::Zero(output_dim, prev), Vector::Zero(output_dim), output_act});
  }

  // Uniform init with variance gain^2 / fan_in; biases zero.
  template <class Rng>
  void init(Rng& rng, float hidden_gain, float output_gain) {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& layer = layers_[l];
      const float gain = l + 1 == layers_.size() ? output_gain : hidden_gain;
      const float a = gain * std::sqrt(3.0f / static_cast<float>(layer.weight.cols()));
      std::uniform_real_distribution<float> dist(-a, a);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = dist(rng);
      layer.bias.setZero();
    }
  }

  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }
  bool empty() const { return layers_.empty(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  bool finite() const {
    for (const auto& l : layers_)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  Matrix forward(const Matrix& x) const {
    check_input(x);
    Matrix h = x;
    for (const auto& l : layers_) {
      Matrix z = l.weight * h;
      z.colwise() += l.bias;
      activate(l.activation, z);
      h = std::move(z);
    }
    return h;
  }

  Matrix forward(const Matrix& x, ForwardCache& cache) const {
    check_input(x);
    cache.inputs.resize(layers_.size());
    cache.outputs.resize(layers_.size());
    const Matrix* h = &x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& l = layers_[i];
      cache.inputs[i] = *h;
      Matrix z = l.weight * *h;
      z.colwise() += l.bias;
      activate(l.activation, z);
      cache.outputs[i] = std::move(z);
      h = &cache.outputs[i];
    }
    return cache.outputs.back();
  }

  // Gradients of the parameters and of the input given dL/dy. `grads` is
  // overwritten.
  Matrix backward(const ForwardCache& cache, const Matrix& dy, DenseGrads& grads) const {
    if (cache.outputs.size() != layers_.size()) throw ShapeMismatch("backward: cache does not match network");
    if (dy.rows() != output_dim() || dy.cols() != cache.outputs.back().cols())
      throw ShapeMismatch("backward: upstream gradient shape mismatch");
    grads.weight.resize(layers_.size());
    grads.bias.resize(layers_.size());
    Matrix delta = dy;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& l = layers_[k];
      const Matrix& out = cache.outputs[k];
      switch (l.activation) {
        case Activation::kRelu: delta = delta.cwiseProduct((out.array() > 0.0f).cast<float>().matrix()); break;
        case Activation::kTanh: delta = delta.cwiseProduct((1.0f - out.array().square()).matrix()); break;
        case Activation::kIdentity: break;
      }
      grads.weight[k].noalias() = delta * cache.inputs[k].transpose();
      grads.bias[k] = delta.rowwise().sum();
      Matrix next = l.weight.transpose() * delta;
      delta = std::move(next);
    }
    return delta;
  }

  DenseGrads zero_grads() const {
    DenseGrads g;
    for (const auto& l : layers_) {
      g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
  }

 private:
  void check_input(const Matrix& x) const {
    if (layers_.empty()) throw ShapeMismatch("forward on an empty network");
    if (x.rows() != input_dim())
      throw ShapeMismatch("forward: expected input dim " + std::to_string(input_dim()) + ", got " +
                          std::to_string(x.rows()));
  }

  static void activate(Activation a, Matrix& z) {
    switch (a) {
      case Activation::kRelu: z = z.cwiseMax(0.0f); break;
      case Activation::kTanh: z = z.array().tanh().matrix(); break;
      case Activation::kIdentity: break;
    }
  }

  std::vector<DenseLayer> layers_;
};

// ---------------------------------------------------------------------------
// Diagonal Gaussian policy head with a state-independent log std.

inline constexpr float kLogStdMin = -4.0f;
inline constexpr float kLogStdMax = 1.0f;

struct GaussianHead {
  Vector log_std;

  void clamp() { log_std = log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }
  Vector std_dev() const { return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax).array().exp(); }
  Vector clamped_log_std() const { return log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax); }

  // Column-wise log density of `actions` under N(mean, diag(std^2)).
  Eigen::RowVectorXf log_prob(const Matrix& mean, const Matrix& actions) const {
    const Vector ls = clamped_log_std();
    const Vector inv_var = (-2.0f * ls).array().exp();
    const float half_log_2pi = 0.5f * std::log(2.0f * std::numbers::pi_v<float>);
    const float norm = ls.sum() + half_log_2pi * static_cast<float>(ls.size());
    const Matrix diff = actions - mean;
    Eigen::RowVectorXf lp = -0.5f * (diff.array().square().colwise() * inv_var.array()).colwise().sum();
    lp.array() -= norm;
    return lp;
  }

  float entropy() const {
    const float per_dim = 0.5f * std::log(2.0f * std::numbers::pi_v<float> * std::numbers::e_v<float>);
    return clamped_log_std().sum() + per_dim * static_cast<float>(log_std.size());
  }

  template <class Rng>
  Matrix sample(const Matrix& mean, Rng& rng) const {
    const Vector sd = std_dev();
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix a(mean.rows(), mean.cols());
    for (Eigen::Index j = 0; j < mean.cols(); ++j)
      for (Eigen::Index i = 0; i < mean.rows(); ++i)
        a(i, j) = mean(i, j) + sd[i] * static_cast<float>(n01(rng));
    return a;
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  float learning_rate = 3e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
};

struct ParamBlock {
  float* value;
  float* grad;
  Eigen::Index size;
};

inline void append_params(DenseNet& net, DenseGrads& grads, std::vector<ParamBlock>& out) {
  auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({layers[i].weight.data(), grads.weight[i].data(), layers[i].weight.size()});
    out.push_back({layers[i].bias.data(), grads.bias[i].data(), layers[i].bias.size()});
  }
}

inline double grad_norm(const std::vector<ParamBlock>& params) {
  double ss = 0.0;
  for (const auto& p : params)
    for (Eigen::Index i = 0; i < p.size; ++i) ss += static_cast<double>(p.grad[i]) * p.grad[i];
  return std::sqrt(ss);
}

// Rescales gradients so their global norm is at most `max_norm`. Returns the
// norm before clipping.
inline double clip_grad_norm(std::vector<ParamBlock>& params, double max_norm) {
  const double n = grad_norm(params);
  if (n > max_norm && n > 0.0) {
    const float s = static_cast<float>(max_norm / n);
    for (auto& p : params)
      for (Eigen::Index i = 0; i < p.size; ++i) p.grad[i] *= s;
  }
  return n;
}

class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  void step(const std::vector<ParamBlock>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Vector::Zero(p.size));
        v_.push_back(Vector::Zero(p.size));
      }
    }
    if (m_.size() != params.size()) throw ShapeMismatch("adam: parameter list changed between steps");
    ++t_;
    const float b1 = cfg_.beta1, b2 = cfg_.beta2;
    const float c1 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b1), static_cast<double>(t_)));
    const float c2 = 1.0f - static_cast<float>(std::pow(static_cast<double>(b2), static_cast<double>(t_)));
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& p = params[k];
      if (m_[k].size() != p.size) throw ShapeMismatch("adam: parameter block resized");
      float* m = m_[k].data();
      float* v = v_[k].data();
      for (Eigen::Index i = 0; i < p.size; ++i) {
        const float g = p.grad[i];
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        const float mhat = m[i] / c1;
        const float vhat = v[i] / c2;
        p.value[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Vector> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace hfplp::nn
