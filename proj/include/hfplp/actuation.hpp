#pragma once

// Torque laws between policy outputs and the joints.

#include <Eigen/Dense>

#include <array>
#include <cmath>

#include "hfplp/dynamics.hpp"

namespace hfplp {

using Vec8 = Eigen::Matrix<double, 8, 1>;

struct ActuatorGains {
  double kp = 20.0;  // N*m/rad
  double kd = 0.5;   // N*m*s/rad

  void validate() const {
    if (!(kp >= 0.0) || !(kd >= 0.0)) throw ConfigError("actuator gains must be non-negative");
  }
};

struct ActionScales {
  double position_rad = 0.5;
  double feedforward_nm = 10.0;
  double compensation_nm = 5.0;

  void validate() const {
    if (!(position_rad > 0.0) || !(feedforward_nm > 0.0) || !(compensation_nm > 0.0))
      throw ConfigError("action scales must be > 0");
  }
};

struct HfplpAction {
  Vec4 q_ref = Vec4::Zero();
  Vec4 tau_ff = Vec4::Zero();
};

struct DaacAction {
  Vec4 delta_tau = Vec4::Zero();
};

struct TorqueCommand {
  Vec4 tau = Vec4::Zero();
};

// tau_ff saturates at +-torque_limit; the map is linear inside that band.
inline HfplpAction scale_raw_action(const Vec8& raw, const Vec4& q_nom, const ActionScales& sc = {},
                                    double torque_limit = 30.0) {
  const Vec4 ff = sc.feedforward_nm * raw.tail<4>();
  return {q_nom + sc.position_rad * raw.head<4>(), ff.cwiseMax(-torque_limit).cwiseMin(torque_limit)};
}

inline Vec8 descale_action(const HfplpAction& a, const Vec4& q_nom, const ActionScales& sc = {}) {
  Vec8 raw;
  raw.head<4>() = (a.q_ref - q_nom) / sc.position_rad;
  raw.tail<4>() = a.tau_ff / sc.feedforward_nm;
  return raw;
}

inline Vec4 scale_position_action(const Vec4& raw, const Vec4& q_nom, const ActionScales& sc = {}) {
  return q_nom + sc.position_rad * raw;
}

// |delta_tau| <= compensation_nm.
inline DaacAction scale_daac_action(const Vec4& raw, const ActionScales& sc = {}) {
  return {(sc.compensation_nm * raw).cwiseMax(-sc.compensation_nm).cwiseMin(sc.compensation_nm)};
}

// tau_hfp = tau_ff + Kp (q_ref - q) - Kd qd, unclamped.
inline Vec4 hybrid_joint_torque(const HfplpAction& a, const Vec4& q, const Vec4& qd, const ActuatorGains& g) {
  return a.tau_ff + g.kp * (a.q_ref - q) - g.kd * qd;
}

inline Vec4 position_only_torque(const Vec4& q_ref, const Vec4& q, const Vec4& qd, const ActuatorGains& g) {
  return g.kp * (q_ref - q) - g.kd * qd;
}

struct CartesianGains {
  double kp = 400.0;  // N/m, placeholder
  double kd = 10.0;   // N*s/m, placeholder
};

// Foot-space PD with feedforward, per leg: tau_i = tau_ff_i + J_i^T [Kp dp + Kd dv].
inline Vec4 footspace_pd_torque(const Vec4& tau_ff, const std::array<Mat2, kNumLegs>& leg_jacobians,
                                const std::array<Vec2, kNumLegs>& p_ref, const std::array<Vec2, kNumLegs>& v_ref,
                                const std::array<Vec2, kNumLegs>& p, const std::array<Vec2, kNumLegs>& v,
                                const CartesianGains& g) {
  Vec4 tau = tau_ff;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const Vec2 force = g.kp * (p_ref[leg] - p[leg]) + g.kd * (v_ref[leg] - v[leg]);
    tau.segment<2>(2 * leg) += leg_jacobians[leg].transpose() * force;
  }
  return tau;
}

// Composition with the compensation torque; saturation happens only here.
inline TorqueCommand compose_command(const Vec4& tau_hfp, const Vec4& delta_tau, double torque_limit) {
  return {(tau_hfp + delta_tau).cwiseMax(-torque_limit).cwiseMin(torque_limit)};
}

}  // namespace hfplp
