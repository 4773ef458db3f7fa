#pragma once

// Planar sagittal quadruped: floating trunk (x, z, pitch) with a front and a
// rear two-link leg. Front/rear legs each lump the left/right pair of the
// real robot into one leg.
//
// Conventions
//   q = [base_x, base_z, pitch, front_hip, front_knee, rear_hip, rear_knee]
//   A body-frame vector (a, b) maps to the world as
//     (a cos(pitch) + b sin(pitch), -a sin(pitch) + b cos(pitch)).
//   A link with absolute angle phi points along (-sin phi, -cos phi), so a
//   zero angle hangs straight down. Thigh angle = pitch + hip, shank angle =
//   pitch + hip + knee.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hfplp/error.hpp"

namespace hfplp {

inline constexpr int kNumQ = 7;
inline constexpr int kNumActuated = 4;
inline constexpr int kNumLegs = 2;

using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Matrix<double, 4, 1>;
using Vec7 = Eigen::Matrix<double, kNumQ, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat7 = Eigen::Matrix<double, kNumQ, kNumQ>;
using Mat27 = Eigen::Matrix<double, 2, kNumQ>;
using Mat74 = Eigen::Matrix<double, kNumQ, kNumActuated>;

struct RobotModel {
  double trunk_mass_kg = 10.0;
  double thigh_mass_kg = 1.0;
  double shank_mass_kg = 0.5;
  double thigh_length_m = 0.2;
  double shank_length_m = 0.2;
  double trunk_half_length_m = 0.35;
  // Rotational inertias about each link CoM (uniform rods by default).
  double trunk_inertia_kgm2 = 10.0 * 0.7 * 0.7 / 12.0;
  double thigh_inertia_kgm2 = 1.0 * 0.2 * 0.2 / 12.0;
  double shank_inertia_kgm2 = 0.5 * 0.2 * 0.2 / 12.0;
  double gravity_mps2 = 9.81;
  double torque_limit_nm = 30.0;
  // front hip, front knee, rear hip, rear knee. Mirror-symmetric so both
  // feet stand directly under their hips.
  Vec4 nominal_joint_angles_rad{0.6, -1.2, -0.6, 1.2};

  double total_mass() const { return trunk_mass_kg + 2.0 * (thigh_mass_kg + shank_mass_kg); }

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw ConfigError(std::string("robot.") + name + " must be strictly positive");
    };
    positive(trunk_mass_kg, "trunk_mass_kg");
    positive(thigh_mass_kg, "thigh_mass_kg");
    positive(shank_mass_kg, "shank_mass_kg");
    positive(thigh_length_m, "thigh_length_m");
    positive(shank_length_m, "shank_length_m");
    positive(trunk_half_length_m, "trunk_half_length_m");
    positive(trunk_inertia_kgm2, "trunk_inertia_kgm2");
    positive(thigh_inertia_kgm2, "thigh_inertia_kgm2");
    positive(shank_inertia_kgm2, "shank_inertia_kgm2");
    positive(gravity_mps2, "gravity_mps2");
    positive(torque_limit_nm, "torque_limit_nm");
    if (!nominal_joint_angles_rad.allFinite())
      throw ConfigError("robot.nominal_joint_angles_rad must be finite");
  }

  // Copy of the model carrying an extra mass rigidly fixed at the trunk CoM.
  // Trunk inertia scales with the mass ratio.
  RobotModel with_payload(double payload_kg) const {
    RobotModel m = *this;
    if (payload_kg > 0.0) {
      const double ratio = (trunk_mass_kg + payload_kg) / trunk_mass_kg;
      m.trunk_mass_kg += payload_kg;
      m.trunk_inertia_kgm2 *= ratio;
    }
    return m;
  }
};

// Selection matrix S (7x4): the actuated joints are coordinates 3..6.
inline Mat74 selection_matrix() {
  Mat74 s = Mat74::Zero();
  s.bottomRows<4>().setIdentity();
  return s;
}

struct State {
  Vec7 q = Vec7::Zero();
  Vec7 qd = Vec7::Zero();
  double t = 0.0;

  bool finite() const { return q.allFinite() && qd.allFinite() && std::isfinite(t); }
};

struct ContactParams {
  double normal_stiffness_n_per_m = 1e5;
  double normal_damping_ns_per_m = 300.0;
  double friction_coefficient = 0.8;
  double slip_velocity_mps = 0.05;
  double ground_height_m = 0.0;

  void validate() const {
    if (!(normal_stiffness_n_per_m > 0.0)) throw ConfigError("contact.normal_stiffness_n_per_m must be > 0");
    if (!(normal_damping_ns_per_m > 0.0)) throw ConfigError("contact.normal_damping_ns_per_m must be > 0");
    if (!(slip_velocity_mps > 0.0)) throw ConfigError("contact.slip_velocity_mps must be > 0");
    if (!(friction_coefficient >= 0.0)) throw ConfigError("contact.friction_coefficient must be >= 0");
    if (!std::isfinite(ground_height_m)) throw ConfigError("contact.ground_height_m must be finite");
  }
};

struct FootKinematics {
  std::array<Vec2, kNumLegs> position;  // world (x, z)
  std::array<Vec2, kNumLegs> velocity;
  std::array<Mat27, kNumLegs> jacobian;

  // 2x2 block of a leg Jacobian with respect to that leg's hip and knee.
  Mat2 leg_jacobian(int leg) const { return jacobian[leg].block<2, 2>(0, 3 + 2 * leg); }
};

struct DynamicsTerms {
  Mat7 mass;
  Mat7 coriolis;
  Vec7 gravity;
  FootKinematics feet;
};

using ContactForces = std::array<Vec2, kNumLegs>;

namespace detail {

inline Vec2 link_dir(double phi) { return {-std::sin(phi), -std::cos(phi)}; }
inline Vec2 link_dir_deriv(double phi) { return {-std::cos(phi), std::sin(phi)}; }

// Point on leg `leg` at distance `a` along the thigh and `b` along the shank.
// Returns world position; fills the 2x7 Jacobian.
inline Vec2 leg_point(const RobotModel& m, const Vec7& q, int leg, double a, double b, Mat27* jac) {
  const double sign = leg == 0 ? 1.0 : -1.0;
  const double pitch = q[2];
  const double c = std::cos(pitch), s = std::sin(pitch);
  const int hip = 3 + 2 * leg;
  const double phi1 = pitch + q[hip];
  const double phi2 = phi1 + q[hip + 1];
  const Vec2 d1 = link_dir(phi1), d2 = link_dir(phi2);
  const Vec2 hip_pos(q[0] + sign * m.trunk_half_length_m * c, q[1] - sign * m.trunk_half_length_m * s);
  if (jac) {
    const Vec2 dd1 = link_dir_deriv(phi1), dd2 = link_dir_deriv(phi2);
    jac->setZero();
    (*jac)(0, 0) = 1.0;
    (*jac)(1, 1) = 1.0;
    const Vec2 dknee = a * dd1 + b * dd2;
    jac->col(2) = sign * m.trunk_half_length_m * Vec2(-s, -c) + dknee;
    jac->col(hip) = dknee;
    jac->col(hip + 1) = b * dd2;
  }
  return hip_pos + a * d1 + b * d2;
}

}  // namespace detail

inline Mat7 mass_matrix(const RobotModel& m, const Vec7& q) {
  Mat7 mm = Mat7::Zero();
  mm(0, 0) = mm(1, 1) = m.trunk_mass_kg;
  mm(2, 2) = m.trunk_inertia_kgm2;
  Mat27 j;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    const int hip = 3 + 2 * leg;
    detail::leg_point(m, q, leg, 0.5 * m.thigh_length_m, 0.0, &j);
    mm.noalias() += m.thigh_mass_kg * j.transpose() * j;
    detail::leg_point(m, q, leg, m.thigh_length_m, 0.5 * m.shank_length_m, &j);
    mm.noalias() += m.shank_mass_kg * j.transpose() * j;
    // Rotational terms: thigh spins at pitch+hip, shank at pitch+hip+knee.
    const int t_idx[2] = {2, hip};
    for (int r : t_idx)
      for (int c : t_idx) mm(r, c) += m.thigh_inertia_kgm2;
    const int s_idx[3] = {2, hip, hip + 1};
    for (int r : s_idx)
      for (int c : s_idx) mm(r, c) += m.shank_inertia_kgm2;
  }
  return mm;
}

// Christoffel-symbol factorization with dM/dq from central differences.
// M does not depend on base x/z, so only pitch and joint derivatives are taken.
inline Mat7 coriolis_matrix(const RobotModel& m, const Vec7& q, const Vec7& qd, double step = 1e-6) {
  std::array<Mat7, kNumQ> dm;
  dm[0].setZero();
  dm[1].setZero();
  for (int k = 2; k < kNumQ; ++k) {
    Vec7 qp = q, qn = q;
    qp[k] += step;
    qn[k] -= step;
    dm[k] = (mass_matrix(m, qp) - mass_matrix(m, qn)) / (2.0 * step);
  }
  // Mdot = sum_k dM/dq_k qd_k
  Mat7 mdot = Mat7::Zero();
  for (int k = 2; k < kNumQ; ++k) mdot += dm[k] * qd[k];
  // C_ij = 1/2 (Mdot_ij + sum_k (dM_ik/dq_j - dM_jk/dq_i) qd_k)
  Mat7 c = 0.5 * mdot;
  for (int i = 0; i < kNumQ; ++i) {
    for (int j = 0; j < kNumQ; ++j) {
      double acc = 0.0;
      if (j >= 2) acc += dm[j].row(i).dot(qd);
      if (i >= 2) acc -= dm[i].row(j).dot(qd);
      c(i, j) += 0.5 * acc;
    }
  }
  return c;
}

inline Vec7 gravity_vector(const RobotModel& m, const Vec7& q) {
  Vec7 g = Vec7::Zero();
  g[1] = m.trunk_mass_kg * m.gravity_mps2;
  Mat27 j;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    detail::leg_point(m, q, leg, 0.5 * m.thigh_length_m, 0.0, &j);
    g += m.thigh_mass_kg * m.gravity_mps2 * j.row(1).transpose();
    detail::leg_point(m, q, leg, m.thigh_length_m, 0.5 * m.shank_length_m, &j);
    g += m.shank_mass_kg * m.gravity_mps2 * j.row(1).transpose();
  }
  return g;
}

inline FootKinematics foot_kinematics(const RobotModel& m, const Vec7& q, const Vec7& qd) {
  FootKinematics fk;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    fk.position[leg] = detail::leg_point(m, q, leg, m.thigh_length_m, m.shank_length_m, &fk.jacobian[leg]);
    fk.velocity[leg] = fk.jacobian[leg] * qd;
  }
  return fk;
}

// Jacobian of the trunk CoM, where external disturbances act.
inline Mat27 trunk_com_jacobian() {
  Mat27 j = Mat27::Zero();
  j(0, 0) = 1.0;
  j(1, 1) = 1.0;
  return j;
}

inline DynamicsTerms evaluate_terms(const RobotModel& m, const State& s) {
  return {mass_matrix(m, s.q), coriolis_matrix(m, s.q, s.qd), gravity_vector(m, s.q),
          foot_kinematics(m, s.q, s.qd)};
}

// Penalty normal force plus tanh-regularized Coulomb friction for one foot.
inline Vec2 contact_force(const ContactParams& p, const Vec2& pos, const Vec2& vel) {
  const double depth = pos.y() - p.ground_height_m;
  if (depth >= 0.0) return Vec2::Zero();
  const double fn = std::max(0.0, -p.normal_stiffness_n_per_m * depth - p.normal_damping_ns_per_m * vel.y());
  const double ft = -p.friction_coefficient * fn * std::tanh(vel.x() / p.slip_velocity_mps);
  return {ft, fn};
}

inline ContactForces contact_forces(const ContactParams& p, const FootKinematics& fk) {
  ContactForces f;
  for (int leg = 0; leg < kNumLegs; ++leg) f[leg] = contact_force(p, fk.position[leg], fk.velocity[leg]);
  return f;
}

inline Vec7 true_generalized_disturbance(const std::array<Mat27, kNumLegs>& contact_jacobians,
                                         const ContactForces& fc, const Mat27& ext_jacobian,
                                         const Vec2& f_ext) {
  Vec7 tau = ext_jacobian.transpose() * f_ext;
  for (int leg = 0; leg < kNumLegs; ++leg) tau.noalias() += contact_jacobians[leg].transpose() * fc[leg];
  return tau;
}

// Solves M qdd + C qd + G = S^T tau + sum J_c^T F_c + J_ext^T F_ext using
// precomputed terms (which must already include any payload).
inline Vec7 forward_dynamics(const DynamicsTerms& terms, const Vec7& qd, const Vec4& tau_cmd,
                             const ContactForces& fc, const Vec2& f_ext) {
  Vec7 rhs = true_generalized_disturbance(terms.feet.jacobian, fc, trunk_com_jacobian(), f_ext);
  rhs.tail<4>() += tau_cmd;
  rhs -= terms.coriolis * qd + terms.gravity;
  Eigen::LLT<Mat7> llt(terms.mass);
  if (llt.info() != Eigen::Success) throw LinearSolveFailure("mass matrix is not positive definite");
  Vec7 qdd = llt.solve(rhs);
  if (!qdd.allFinite()) throw LinearSolveFailure("non-finite generalized acceleration");
  return qdd;
}

struct ContactStep {
  Vec7 qdd = Vec7::Zero();
  ContactForces fc{Vec2::Zero(), Vec2::Zero()};
};

// One integration step's accelerations with the tangential law evaluated at
// the end-of-step foot velocity v + h*J*qdd (backward Euler on friction only).
// At h = 1e-3 the explicit form is unstable: mu*F_n/v_s * h exceeds twice the
// effective foot mass. Normal forces stay explicit.
inline ContactStep contact_dynamics(const DynamicsTerms& terms, const ContactParams& p, const Vec7& qd,
                                    const Vec4& tau_cmd, const Vec2& f_ext, double h) {
  ContactStep out;
  std::array<double, kNumLegs> fn{};
  std::vector<int> active;
  for (int leg = 0; leg < kNumLegs; ++leg) {
    fn[leg] = contact_force(p, terms.feet.position[leg], terms.feet.velocity[leg]).y();
    out.fc[leg] = Vec2(0.0, fn[leg]);
    if (fn[leg] > 0.0) active.push_back(leg);
  }
  Vec7 rhs = true_generalized_disturbance(terms.feet.jacobian, out.fc, trunk_com_jacobian(), f_ext);
  rhs.tail<4>() += tau_cmd;
  rhs -= terms.coriolis * qd + terms.gravity;
  Eigen::LLT<Mat7> llt(terms.mass);
  if (llt.info() != Eigen::Success) throw LinearSolveFailure("mass matrix is not positive definite");
  out.qdd = llt.solve(rhs);
  const int k = static_cast<int>(active.size());
  if (k > 0) {
    Eigen::Matrix<double, 7, Eigen::Dynamic> w(7, k);
    for (int i = 0; i < k; ++i) w.col(i) = terms.feet.jacobian[active[i]].row(0).transpose();
    const Eigen::Matrix<double, 7, Eigen::Dynamic> minv_w = llt.solve(w);
    const Eigen::MatrixXd a = h * (w.transpose() * minv_w);
    const Eigen::VectorXd v_free = w.transpose() * (qd + h * out.qdd);
    Eigen::VectorXd cap(k);
    for (int i = 0; i < k; ++i) cap[i] = p.friction_coefficient * fn[active[i]];
    auto residual = [&](const Eigen::VectorXd& f) {
      const Eigen::VectorXd u = (v_free + a * f) / p.slip_velocity_mps;
      return Eigen::VectorXd(f.array() + cap.array() * u.array().tanh());
    };
    // Newton with backtracking; the residual is monotone in f.
    Eigen::VectorXd f = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd r = residual(f);
    for (int it = 0; it < 50 && r.norm() > 1e-10 * (1.0 + cap.norm()); ++it) {
      const Eigen::VectorXd u = (v_free + a * f) / p.slip_velocity_mps;
      Eigen::MatrixXd jac = Eigen::MatrixXd::Identity(k, k);
      for (int i = 0; i < k; ++i) {
        const double sech = 1.0 / std::cosh(u[i]);
        jac.row(i) += cap[i] * sech * sech / p.slip_velocity_mps * a.row(i);
      }
      const Eigen::VectorXd step = jac.partialPivLu().solve(-r);
      double t = 1.0;
      Eigen::VectorXd trial = f + step, rt = residual(trial);
      while (rt.norm() >= r.norm() && t > 1e-6) {
        t *= 0.5;
        trial = f + t * step;
        rt = residual(trial);
      }
      f = trial;
      r = rt;
    }
    if (!f.allFinite()) throw LinearSolveFailure("non-finite friction solve");
    out.qdd += minv_w * f;
    for (int i = 0; i < k; ++i) out.fc[active[i]].x() = f[i];
  }
  if (!out.qdd.allFinite()) throw LinearSolveFailure("non-finite generalized acceleration");
  return out;
}

inline Vec7 forward_dynamics(const RobotModel& model, const State& state, const Vec4& tau_cmd,
                             const ContactForces& fc, const Vec2& f_ext, double payload_kg) {
  const RobotModel loaded = model.with_payload(payload_kg);
  return forward_dynamics(evaluate_terms(loaded, state), state.qd, tau_cmd, fc, f_ext);
}

// Height of the base above the lowest foot at pitch 0 for the given joints.
inline double standing_height(const RobotModel& m, const Vec4& joints) {
  Vec7 q = Vec7::Zero();
  q.tail<4>() = joints;
  const FootKinematics fk = foot_kinematics(m, q, Vec7::Zero());
  return -std::min(fk.position[0].y(), fk.position[1].y());
}

}  // namespace hfplp
