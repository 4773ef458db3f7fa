#pragma once

// Observation layouts shared by the environment, the policies and the
// neural observer, plus the fixed normalization applied at network inputs.

#include <Eigen/Dense>

#include "hfplp/dynamics.hpp"

namespace hfplp {

// o_t = [pitch rate | projected gravity (x, z) | v_x command | joint q (4) |
//        joint qd (4) | applied torque (4) | previous raw action (8)]
namespace obs {
inline constexpr int kPitchRate = 0;
inline constexpr int kGravity = 1;
inline constexpr int kCommand = 3;
inline constexpr int kJointPos = 4;
inline constexpr int kJointVel = 8;
inline constexpr int kTorque = 12;
inline constexpr int kPrevAction = 16;
inline constexpr int kDim = 24;
inline constexpr int kHistoryLength = 5;
inline constexpr int kHistoryDim = kDim * kHistoryLength;
}  // namespace obs

// Privileged critic extras: base velocity (2) | contact flags (2) |
// foot clearance (2) | true external force (2).
namespace priv {
inline constexpr int kDim = 8;
}

inline constexpr int kHfplpActionDim = 8;
inline constexpr int kPositionActionDim = 4;
inline constexpr int kDaacActionDim = 4;
inline constexpr int kDaacObsDim = obs::kDim + 2 + kHfplpActionDim;  // 34
inline constexpr int kCriticObsDim = obs::kDim + priv::kDim;          // 32
inline constexpr int kDaacCriticObsDim = kDaacObsDim + priv::kDim;    // 42
inline constexpr int kObserverStage1Out = 7;
inline constexpr int kObserverStage2In = obs::kDim + kObserverStage1Out;  // 31

using ObsVec = Eigen::Matrix<double, obs::kDim, 1>;
using HistoryVec = Eigen::Matrix<double, obs::kHistoryDim, 1>;
using PrivVec = Eigen::Matrix<double, priv::kDim, 1>;

// (x - offset) .* scale, per observation entry.
struct ObsNormalizer {
  ObsVec offset = ObsVec::Zero();
  ObsVec scale = ObsVec::Ones();

  static ObsNormalizer for_model(const RobotModel& m) {
    ObsNormalizer n;
    n.scale[obs::kPitchRate] = 0.25;
    n.scale[obs::kCommand] = 2.0;
    n.offset.segment<4>(obs::kJointPos) = m.nominal_joint_angles_rad;
    n.scale.segment<4>(obs::kJointVel).setConstant(0.05);
    n.scale.segment<4>(obs::kTorque).setConstant(0.1);
    return n;
  }

  template <class Out>
  void apply(const ObsVec& o, Out&& out) const {
    out = ((o - offset).array() * scale.array()).template cast<float>().matrix();
  }

  template <class Out>
  void apply_history(const HistoryVec& h, Out&& out) const {
    for (int k = 0; k < obs::kHistoryLength; ++k)
      out.segment(k * obs::kDim, obs::kDim) =
          ((h.segment<obs::kDim>(k * obs::kDim) - offset).array() * scale.array()).template cast<float>().matrix();
  }
};

inline PrivVec privileged_scale() {
  PrivVec s;
  s << 1.0, 1.0, 1.0, 1.0, 10.0, 10.0, 0.01, 0.01;
  return s;
}

}  // namespace hfplp
