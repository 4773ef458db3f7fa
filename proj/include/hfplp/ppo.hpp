#pragma once

// Generalized advantage estimation and the clipped-surrogate PPO update for
// one Gaussian actor + value critic pair.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "hfplp/error.hpp"
#include "hfplp/neuralnet.hpp"

namespace hfplp {

struct PpoConfig {
  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip_ratio = 0.2;
  double learning_rate = 3e-4;
  int epochs = 5;
  int minibatches = 4;
  int horizon = 24;
  int num_envs = 256;
  double entropy_coef = 0.005;
  double value_coef = 1.0;
  double max_grad_norm = 1.0;
  double reward_scale = 0.05;
  double init_log_std = -0.7;

  void validate() const {
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigError("ppo.discount must lie in [0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("ppo.gae_lambda must lie in [0, 1]");
    if (!(clip_ratio > 0.0)) throw ConfigError("ppo.clip_ratio must be > 0");
    if (!(learning_rate > 0.0)) throw ConfigError("ppo.learning_rate must be > 0");
    if (epochs < 1 || minibatches < 1 || horizon < 1 || num_envs < 1)
      throw ConfigError("ppo: epochs, minibatches, horizon, num_envs must be >= 1");
    if (!(max_grad_norm > 0.0) || !(reward_scale > 0.0)) throw ConfigError("ppo: grad norm / reward scale must be > 0");
  }
};

// rewards/values/dones are (T x N); bootstrap is the value after the last
// step for each of the N streams. dones[t] = 1 cuts the recursion after t.
struct GaeResult {
  Eigen::MatrixXd advantages;
  Eigen::MatrixXd returns;
};

inline GaeResult compute_gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values,
                             const Eigen::MatrixXd& dones, const Eigen::RowVectorXd& bootstrap, double discount,
                             double lambda) {
  const Eigen::Index T = rewards.rows(), N = rewards.cols();
  if (values.rows() != T || dones.rows() != T || values.cols() != N || dones.cols() != N || bootstrap.size() != N)
    throw ShapeMismatch("compute_gae: misaligned inputs");
  GaeResult r{Eigen::MatrixXd::Zero(T, N), Eigen::MatrixXd::Zero(T, N)};
  for (Eigen::Index n = 0; n < N; ++n) {
    double next_adv = 0.0;
    double next_value = bootstrap[n];
    for (Eigen::Index t = T; t-- > 0;) {
      const double live = 1.0 - dones(t, n);
      const double delta = rewards(t, n) + discount * next_value * live - values(t, n);
      next_adv = delta + discount * lambda * live * next_adv;
      r.advantages(t, n) = next_adv;
      next_value = values(t, n);
    }
  }
  r.returns = r.advantages + values;
  return r;
}

struct ActorCritic {
  nn::DenseNet actor;
  nn::GaussianHead head;
  nn::DenseNet critic;

  template <class Rng>
  static ActorCritic make(int actor_in, const std::vector<int>& actor_hidden, int action_dim, int critic_in,
                          const std::vector<int>& critic_hidden, float init_log_std, Rng& rng) {
    ActorCritic ac;
    ac.actor = nn::DenseNet(actor_in, actor_hidden, action_dim, nn::Activation::kRelu);
    ac.critic = nn::DenseNet(critic_in, critic_hidden, 1, nn::Activation::kRelu);
    ac.actor.init(rng, std::sqrt(2.0f), 0.01f);
    ac.critic.init(rng, std::sqrt(2.0f), 1.0f);
    ac.head.log_std = nn::Vector::Constant(action_dim, init_log_std);
    ac.head.clamp();
    return ac;
  }

  std::size_t parameter_count() const {
    return actor.parameter_count() + critic.parameter_count() + static_cast<std::size_t>(head.log_std.size());
  }
};

// Flattened rollout, one sample per column.
struct PpoBatch {
  nn::Matrix actor_obs;
  nn::Matrix critic_obs;
  nn::Matrix actions;
  Eigen::RowVectorXf log_prob;
  Eigen::RowVectorXf advantages;
  Eigen::RowVectorXf returns;

  Eigen::Index size() const { return actions.cols(); }
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double initial_ratio_error = 0.0;  // max |ratio - 1| on the first minibatch pass
};

class PpoLearner {
 public:
  PpoLearner(ActorCritic& ac, const PpoConfig& cfg)
      : ac_(&ac), cfg_(cfg), adam_(nn::AdamConfig{static_cast<float>(cfg.learning_rate)}) {}

  const PpoConfig& config() const { return cfg_; }

  template <class Rng>
  PpoStats update(const PpoBatch& batch, Rng& rng) {
    const Eigen::Index n = batch.size();
    if (batch.actor_obs.cols() != n || batch.critic_obs.cols() != n || batch.log_prob.size() != n ||
        batch.advantages.size() != n || batch.returns.size() != n)
      throw ShapeMismatch("ppo: batch columns disagree");
    const ActorCritic snapshot = *ac_;

    // Per-batch advantage normalization.
    Eigen::RowVectorXf adv = batch.advantages;
    const float mean = adv.mean();
    const float var = (adv.array() - mean).square().mean();
    adv = ((adv.array() - mean) / (std::sqrt(var) + 1e-8f)).matrix();

    PpoStats stats;
    int updates = 0;
    bool first_pass = true;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    const Eigen::Index mb = std::max<Eigen::Index>(1, n / cfg_.minibatches);
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::shuffle(order.begin(), order.end(), rng);
      for (int k = 0; k < cfg_.minibatches; ++k) {
        const Eigen::Index lo = k * mb;
        const Eigen::Index hi = k + 1 == cfg_.minibatches ? n : lo + mb;
        if (hi <= lo) continue;
        std::vector<Eigen::Index> idx(order.begin() + lo, order.begin() + hi);
        const PpoStats s = minibatch_step(batch, adv, idx, first_pass);
        first_pass = false;
        if (epoch == 0 && k == 0) stats.initial_ratio_error = s.initial_ratio_error;
        stats.policy_loss += s.policy_loss;
        stats.value_loss += s.value_loss;
        stats.entropy += s.entropy;
        stats.approx_kl += s.approx_kl;
        stats.clip_fraction += s.clip_fraction;
        stats.grad_norm += s.grad_norm;
        ++updates;
        if (!std::isfinite(s.policy_loss) || !std::isfinite(s.value_loss) || !std::isfinite(s.grad_norm) ||
            !ac_->actor.finite() || !ac_->critic.finite() || !ac_->head.log_std.allFinite()) {
          *ac_ = snapshot;
          throw NonFiniteLoss("ppo update produced a non-finite loss or parameter");
        }
      }
    }
    if (updates > 0) {
      stats.policy_loss /= updates;
      stats.value_loss /= updates;
      stats.entropy /= updates;
      stats.approx_kl /= updates;
      stats.clip_fraction /= updates;
      stats.grad_norm /= updates;
    }
    return stats;
  }

 private:
  PpoStats minibatch_step(const PpoBatch& batch, const Eigen::RowVectorXf& adv, const std::vector<Eigen::Index>& idx,
                          bool first_pass) {
    const Eigen::Index b = static_cast<Eigen::Index>(idx.size());
    nn::Matrix xa(batch.actor_obs.rows(), b), xc(batch.critic_obs.rows(), b), act(batch.actions.rows(), b);
    Eigen::RowVectorXf lp_old(b), a(b), ret(b);
    for (Eigen::Index j = 0; j < b; ++j) {
      const Eigen::Index c = idx[static_cast<std::size_t>(j)];
      xa.col(j) = batch.actor_obs.col(c);
      xc.col(j) = batch.critic_obs.col(c);
      act.col(j) = batch.actions.col(c);
      lp_old[j] = batch.log_prob[c];
      a[j] = adv[c];
      ret[j] = batch.returns[c];
    }

    nn::ForwardCache ca, cc;
    const nn::Matrix mean = ac_->actor.forward(xa, ca);
    const nn::Matrix value = ac_->critic.forward(xc, cc);
    const Eigen::RowVectorXf lp = ac_->head.log_prob(mean, act);
    const nn::Vector log_std = ac_->head.clamped_log_std();
    const nn::Vector inv_var = (-2.0f * log_std).array().exp();
    const float clip = static_cast<float>(cfg_.clip_ratio);
    const float inv_b = 1.0f / static_cast<float>(b);

    PpoStats s;
    Eigen::RowVectorXf dlp(b);
    double policy_loss = 0.0, kl = 0.0, clipped = 0.0, max_ratio_err = 0.0;
    for (Eigen::Index j = 0; j < b; ++j) {
      const float log_ratio = lp[j] - lp_old[j];
      const float ratio = std::exp(log_ratio);
      const float surr1 = ratio * a[j];
      const float surr2 = std::clamp(ratio, 1.0f - clip, 1.0f + clip) * a[j];
      policy_loss -= std::min(surr1, surr2);
      dlp[j] = surr1 <= surr2 ? -a[j] * ratio * inv_b : 0.0f;
      kl += (ratio - 1.0f) - log_ratio;
      if (std::abs(ratio - 1.0f) > clip) clipped += 1.0;
      max_ratio_err = std::max(max_ratio_err, static_cast<double>(std::abs(ratio - 1.0f)));
    }
    s.policy_loss = policy_loss * inv_b;
    s.approx_kl = kl * inv_b;
    s.clip_fraction = clipped * inv_b;
    s.initial_ratio_error = first_pass ? max_ratio_err : 0.0;

    // d log pi / d mean = (a - mean) / var; d log pi / d log_std = (a - mean)^2 / var - 1.
    const nn::Matrix diff = act - mean;
    const nn::Matrix dmean = (diff.array().colwise() * inv_var.array()).matrix() * dlp.asDiagonal();
    nn::Vector dlog_std = ((diff.array().square().colwise() * inv_var.array()) - 1.0f).matrix() * dlp.transpose();
    s.entropy = ac_->head.entropy();
    dlog_std.array() -= static_cast<float>(cfg_.entropy_coef);
    // Clamped entries receive no gradient.
    for (Eigen::Index i = 0; i < dlog_std.size(); ++i)
      if (ac_->head.log_std[i] < nn::kLogStdMin || ac_->head.log_std[i] > nn::kLogStdMax) dlog_std[i] = 0.0f;

    const Eigen::RowVectorXf verr = value.row(0) - ret;
    s.value_loss = static_cast<double>(verr.squaredNorm()) * inv_b;
    const nn::Matrix dvalue = (2.0f * static_cast<float>(cfg_.value_coef) * inv_b) * verr;

    nn::DenseGrads ga, gc;
    ac_->actor.backward(ca, dmean, ga);
    ac_->critic.backward(cc, dvalue, gc);

    std::vector<nn::ParamBlock> params;
    nn::append_params(ac_->actor, ga, params);
    params.push_back({ac_->head.log_std.data(), dlog_std.data(), dlog_std.size()});
    nn::append_params(ac_->critic, gc, params);
    s.grad_norm = nn::clip_grad_norm(params, cfg_.max_grad_norm);
    if (!std::isfinite(s.grad_norm)) return s;
    adam_.step(params);
    ac_->head.clamp();
    return s;
  }

  ActorCritic* ac_;
  PpoConfig cfg_;
  nn::Adam adam_;
};

}  // namespace hfplp
