#pragma once

// Disturbance estimation: generalized-momentum observer with a discrete
// low-pass filter, the two-network neural observer, and the mapping of
// compensation torques to foot forces.

#include <Eigen/Dense>

#include <cmath>

#include "hfplp/dynamics.hpp"
#include "hfplp/layout.hpp"
#include "hfplp/neuralnet.hpp"

namespace hfplp {

struct ObserverConfig {
  double cutoff_rad_per_s = 100.0;
  double sample_period_s = 0.01;

  double gamma() const { return std::exp(-cutoff_rad_per_s * sample_period_s); }
  double beta() const {
    const double g = gamma();
    return (1.0 - g) / g / sample_period_s;
  }

  void validate() const {
    if (!(cutoff_rad_per_s > 0.0)) throw ConfigError("observer.cutoff_rad_per_s must be > 0");
    if (!(sample_period_s > 0.0)) throw ConfigError("observer.sample_period_s must be > 0");
  }
};

struct ObserverState {
  Vec7 filter = Vec7::Zero();
  bool initialized = false;
};

// One step of
//   tau_d_hat = beta p - (1 - gamma) / (1 - gamma z^-1) (beta p + S^T tau + C^T qd - G),
// with p = M qd. The filter starts so that the first estimate is zero.
inline Vec7 gm_observer_step(const ObserverConfig& cfg, ObserverState& st, const Mat7& mass, const Mat7& coriolis,
                             const Vec7& gravity, const Vec4& tau_cmd, const Vec7& qd) {
  const double gamma = cfg.gamma();
  const double beta = cfg.beta();
  const Vec7 bp = beta * (mass * qd);
  Vec7 u = bp + coriolis.transpose() * qd - gravity;
  u.tail<4>() += tau_cmd;
  if (!st.initialized) {
    st.filter = bp;
    st.initialized = true;
  } else {
    st.filter = gamma * st.filter + (1.0 - gamma) * u;
  }
  return bp - st.filter;
}

inline Vec7 gm_observer_step(const ObserverConfig& cfg, ObserverState& st, const DynamicsTerms& terms,
                             const Vec4& tau_cmd, const Vec7& qd) {
  return gm_observer_step(cfg, st, terms.mass, terms.coriolis, terms.gravity, tau_cmd, qd);
}

// ---------------------------------------------------------------------------
// Neural observer

// Physical units of the stage-1 outputs: [a_b (2), pitch accel, F_c (4)].
struct NeuralObserverEstimate {
  Vec2 base_accel = Vec2::Zero();
  double pitch_accel = 0.0;
  Vec4 contact_forces = Vec4::Zero();  // front (x, z), rear (x, z)
  Vec2 external_force = Vec2::Zero();
};

using ObserverTargetVec = Eigen::Matrix<double, kObserverStage1Out + 2, 1>;

// Output scaling: networks regress targets divided by these.
inline ObserverTargetVec observer_target_scale() {
  ObserverTargetVec s;
  s << 10.0, 10.0, 20.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0;
  return s;
}

struct NeuralObserver {
  nn::DenseNet accel_contact_net;  // history (120) -> 7
  nn::DenseNet force_net;          // [o_t, stage-1 output] (31) -> 2
  ObsNormalizer normalizer;

  static NeuralObserver make(const RobotModel& m, const std::vector<int>& hidden = {128, 64, 32}) {
    NeuralObserver o;
    o.accel_contact_net = nn::DenseNet(obs::kHistoryDim, hidden, kObserverStage1Out, nn::Activation::kRelu);
    o.force_net = nn::DenseNet(kObserverStage2In, hidden, 2, nn::Activation::kRelu);
    o.normalizer = ObsNormalizer::for_model(m);
    return o;
  }

  template <class Rng>
  void init(Rng& rng) {
    accel_contact_net.init(rng, std::sqrt(2.0f), 1.0f);
    force_net.init(rng, std::sqrt(2.0f), 1.0f);
  }

  // Normalized network inputs for a batch; columns are samples.
  nn::Matrix history_input(const std::vector<HistoryVec>& histories) const {
    nn::Matrix x(obs::kHistoryDim, static_cast<Eigen::Index>(histories.size()));
    for (std::size_t i = 0; i < histories.size(); ++i) normalizer.apply_history(histories[i], x.col(i));
    return x;
  }

  // Batched forward in normalized units: returns the 9 x batch matrix
  // [stage-1 (7); F_ext (2)], with optional caches for training.
  nn::Matrix forward_normalized(const nn::Matrix& history_in, const nn::Matrix& obs_in,
                                nn::ForwardCache* c1 = nullptr, nn::ForwardCache* c2 = nullptr) const {
    if (history_in.rows() != obs::kHistoryDim || obs_in.rows() != obs::kDim || history_in.cols() != obs_in.cols())
      throw ShapeMismatch("neural observer: input shapes do not match");
    nn::Matrix s1 = c1 ? accel_contact_net.forward(history_in, *c1) : accel_contact_net.forward(history_in);
    nn::Matrix x2(kObserverStage2In, obs_in.cols());
    x2.topRows(obs::kDim) = obs_in;
    x2.bottomRows(kObserverStage1Out) = s1;
    nn::Matrix s2 = c2 ? force_net.forward(x2, *c2) : force_net.forward(x2);
    nn::Matrix out(kObserverStage1Out + 2, obs_in.cols());
    out.topRows(kObserverStage1Out) = s1;
    out.bottomRows(2) = s2;
    return out;
  }
};

inline NeuralObserverEstimate decode_observer_output(const Eigen::Ref<const nn::Vector>& normalized) {
  const ObserverTargetVec scale = observer_target_scale();
  const ObserverTargetVec v = normalized.cast<double>().cwiseProduct(scale);
  NeuralObserverEstimate e;
  e.base_accel = v.head<2>();
  e.pitch_accel = v[2];
  e.contact_forces = v.segment<4>(3);
  e.external_force = v.tail<2>();
  return e;
}

inline NeuralObserverEstimate neural_observer_forward(const NeuralObserver& ob, const Eigen::VectorXd& history,
                                                      const Eigen::VectorXd& o_t) {
  if (history.size() != obs::kHistoryDim || o_t.size() != obs::kDim)
    throw ShapeMismatch("neural observer expects a 120-entry history and a 24-entry observation");
  nn::Matrix hin(obs::kHistoryDim, 1), oin(obs::kDim, 1);
  ob.normalizer.apply_history(HistoryVec(history), hin.col(0));
  ob.normalizer.apply(ObsVec(o_t), oin.col(0));
  const nn::Matrix out = ob.forward_normalized(hin, oin);
  return decode_observer_output(out.col(0));
}

// Supervision targets from two consecutive simulator samples.
struct ObserverTargets {
  Vec2 base_accel = Vec2::Zero();
  double pitch_accel = 0.0;
  Vec4 contact_forces = Vec4::Zero();
  Vec2 external_force = Vec2::Zero();

  ObserverTargetVec stacked() const {
    ObserverTargetVec v;
    v << base_accel, pitch_accel, contact_forces, external_force;
    return v;
  }
};

inline ObserverTargets observer_targets(const Vec7& qd_prev, const Vec7& qd_now, double control_dt,
                                        const ContactForces& mean_contact, const Vec2& applied_force) {
  ObserverTargets t;
  t.base_accel = (qd_now.head<2>() - qd_prev.head<2>()) / control_dt;
  t.pitch_accel = (qd_now[2] - qd_prev[2]) / control_dt;
  t.contact_forces << mean_contact[0], mean_contact[1];
  t.external_force = applied_force;
  return t;
}

// F_ee = J^-T dtau: the force the foot exerts on its surroundings.
inline Vec2 foot_force_from_compensation(const Vec2& delta_tau, const Mat2& leg_jacobian, double eps_sing = 1e-4) {
  const double det = leg_jacobian.determinant();
  if (!(std::abs(det) > eps_sing)) throw NearSingularJacobian("leg Jacobian determinant " + std::to_string(det));
  return leg_jacobian.transpose().inverse() * delta_tau;
}

}  // namespace hfplp
