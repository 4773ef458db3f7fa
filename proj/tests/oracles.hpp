#pragma once

// Brute-force reference computations used only by tests. Written from the
// kinematic description directly, without the library's Jacobians.

#include <array>
#include <complex>
#include <cmath>
#include <random>

#include "hfplp/dynamics.hpp"

namespace oracle {

using hfplp::RobotModel;
using hfplp::Vec2;
using hfplp::Vec7;
using hfplp::Mat7;

template <class S>
struct Link {
  S x, z;
  S angle;
  double mass;
  double inertia;
};

// All five rigid links: trunk, front thigh, front shank, rear thigh, rear
// shank. Templated on the scalar so velocities can use complex-step
// differentiation.
template <class S>
std::array<Link<S>, 5> links(const RobotModel& m, const std::array<S, 7>& q) {
  using std::cos;
  using std::sin;
  std::array<Link<S>, 5> out;
  const S x = q[0], z = q[1], th = q[2];
  out[0] = {x, z, th, m.trunk_mass_kg, m.trunk_inertia_kgm2};
  for (int leg = 0; leg < 2; ++leg) {
    const double sgn = leg == 0 ? 1.0 : -1.0;
    const S hx = x + sgn * m.trunk_half_length_m * cos(th);
    const S hz = z - sgn * m.trunk_half_length_m * sin(th);
    const S a1 = th + q[3 + 2 * leg];
    const S a2 = a1 + q[4 + 2 * leg];
    const S kx = hx - m.thigh_length_m * sin(a1);
    const S kz = hz - m.thigh_length_m * cos(a1);
    out[1 + 2 * leg] = {hx - 0.5 * m.thigh_length_m * sin(a1), hz - 0.5 * m.thigh_length_m * cos(a1), a1,
                        m.thigh_mass_kg, m.thigh_inertia_kgm2};
    out[2 + 2 * leg] = {kx - 0.5 * m.shank_length_m * sin(a2), kz - 0.5 * m.shank_length_m * cos(a2), a2,
                        m.shank_mass_kg, m.shank_inertia_kgm2};
  }
  return out;
}

inline std::array<double, 7> to_array(const Vec7& v) {
  std::array<double, 7> a;
  for (int i = 0; i < 7; ++i) a[i] = v[i];
  return a;
}

inline std::array<Vec2, 2> feet(const RobotModel& m, const Vec7& q) {
  std::array<Vec2, 2> f;
  for (int leg = 0; leg < 2; ++leg) {
    const double sgn = leg == 0 ? 1.0 : -1.0;
    const double th = q[2];
    const double a1 = th + q[3 + 2 * leg], a2 = a1 + q[4 + 2 * leg];
    f[leg] = Vec2(q[0] + sgn * m.trunk_half_length_m * std::cos(th) - m.thigh_length_m * std::sin(a1) -
                      m.shank_length_m * std::sin(a2),
                  q[1] - sgn * m.trunk_half_length_m * std::sin(th) - m.thigh_length_m * std::cos(a1) -
                      m.shank_length_m * std::cos(a2));
  }
  return f;
}

// T = 1/2 sum(m |v|^2 + I w^2); link velocities by complex-step
// differentiation of positions along qd.
inline double kinetic_energy(const RobotModel& m, const Vec7& q, const Vec7& qd) {
  constexpr double h = 1e-30;
  std::array<std::complex<double>, 7> qc;
  for (int i = 0; i < 7; ++i) qc[i] = {q[i], h * qd[i]};
  double t = 0.0;
  for (const auto& l : links(m, qc)) {
    const double vx = l.x.imag() / h, vz = l.z.imag() / h, w = l.angle.imag() / h;
    t += 0.5 * (l.mass * (vx * vx + vz * vz) + l.inertia * w * w);
  }
  return t;
}

inline double potential_energy(const RobotModel& m, const Vec7& q) {
  double v = 0.0;
  for (const auto& l : links(m, to_array(q))) v += l.mass * m.gravity_mps2 * l.z;
  return v;
}

// M by polarization of the quadratic form T(q, .).
inline Mat7 mass_matrix(const RobotModel& m, const Vec7& q) {
  Mat7 out;
  Vec7 e[7];
  for (int i = 0; i < 7; ++i) e[i] = Vec7::Unit(i);
  double diag[7];
  for (int i = 0; i < 7; ++i) diag[i] = kinetic_energy(m, q, e[i]);
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 7; ++j)
      out(i, j) = i == j ? 2.0 * diag[i] : kinetic_energy(m, q, e[i] + e[j]) - diag[i] - diag[j];
  return out;
}

inline Vec7 gravity_vector(const RobotModel& m, const Vec7& q, double h = 1e-6) {
  Vec7 g;
  for (int k = 0; k < 7; ++k) {
    Vec7 qp = q, qn = q;
    qp[k] += h;
    qn[k] -= h;
    g[k] = (oracle::potential_energy(m, qp) - oracle::potential_energy(m, qn)) / (2 * h);
  }
  return g;
}

// Lagrangian inverse dynamics with qdd = 0 and gravity off:
// C qd = Mdot qd - dT/dq, every derivative taken numerically from the
// brute-force kinetic energy.
inline Vec7 coriolis_force(const RobotModel& m, const Vec7& q, const Vec7& qd, double h = 1e-5) {
  const Mat7 mp = oracle::mass_matrix(m, q + h * qd);
  const Mat7 mn = oracle::mass_matrix(m, q - h * qd);
  const Vec7 mdot_qd = (mp - mn) / (2 * h) * qd;
  Vec7 dtdq;
  for (int k = 0; k < 7; ++k) {
    Vec7 qp = q, qn = q;
    qp[k] += h;
    qn[k] -= h;
    dtdq[k] = (oracle::kinetic_energy(m, qp, qd) - oracle::kinetic_energy(m, qn, qd)) / (2 * h);
  }
  return mdot_qd - dtdq;
}

template <class Rng>
Vec7 random_configuration(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec7 q;
  q << u(rng), 0.3 + 0.2 * u(rng), 0.5 * u(rng), 1.2 * u(rng), 1.5 * u(rng), 1.2 * u(rng), 1.5 * u(rng);
  return q;
}

template <class Rng>
Vec7 random_velocity(Rng& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Vec7 v;
  for (int i = 0; i < 7; ++i) v[i] = u(rng);
  return v;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / std::max(1e-12, std::max(a.norm(), b.norm()));
}

}  // namespace oracle
