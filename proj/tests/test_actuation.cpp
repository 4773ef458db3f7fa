#include <gtest/gtest.h>

#include <random>

#include "hfplp/actuation.hpp"

namespace hfplp {
namespace {

const Vec4 kNom = RobotModel{}.nominal_joint_angles_rad;

Vec4 random4(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return Vec4(u(rng), u(rng), u(rng), u(rng));
}

TEST(ScaleRawAction, ZeroIsNominalPosture) {
  const HfplpAction a = scale_raw_action(Vec8::Zero(), kNom);
  EXPECT_EQ(a.q_ref, kNom);
  EXPECT_EQ(a.tau_ff.norm(), 0.0);
}

TEST(ScaleRawAction, LinearScaling) {
  Vec8 raw = Vec8::Zero();
  raw[0] = 1.0;
  raw[7] = 1.0;
  const HfplpAction a = scale_raw_action(raw, kNom);
  EXPECT_DOUBLE_EQ(a.q_ref[0], kNom[0] + 0.5);
  EXPECT_DOUBLE_EQ(a.tau_ff[3], 10.0);
}

TEST(ScaleRawAction, DescaleInvertsScale) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int i = 0; i < 100; ++i) {
    Vec8 raw;
    for (int k = 0; k < 8; ++k) raw[k] = u(rng);
    EXPECT_LT((descale_action(scale_raw_action(raw, kNom), kNom) - raw).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(ScaleRawAction, FeedforwardSaturatesAtTorqueLimit) {
  Vec8 raw = Vec8::Zero();
  raw[4] = 5.0;
  raw[5] = -5.0;
  raw[6] = 2.0;
  const HfplpAction a = scale_raw_action(raw, kNom, {}, 30.0);
  EXPECT_EQ(a.tau_ff, Vec4(30.0, -30.0, 20.0, 0.0));
}

TEST(ScaleDaacAction, LinearInsideBandAndBounded) {
  EXPECT_EQ(scale_daac_action(Vec4(0.2, -0.4, 1.0, 0.0)).delta_tau, Vec4(1.0, -2.0, 5.0, 0.0));
  std::mt19937_64 rng(4);
  for (int i = 0; i < 100; ++i)
    EXPECT_LE(scale_daac_action(random4(rng, 10.0)).delta_tau.cwiseAbs().maxCoeff(), 5.0);
}

TEST(HybridTorque, PureFeedforwardWhenTracking) {
  const ActuatorGains g;
  HfplpAction a{kNom, Vec4(1, -2, 3, -4)};
  EXPECT_EQ(hybrid_joint_torque(a, kNom, Vec4::Zero(), g), a.tau_ff);
}

TEST(HybridTorque, ProportionalTerm) {
  const ActuatorGains g{20.0, 0.5};
  HfplpAction a{kNom + Vec4::Constant(0.1), Vec4::Zero()};
  const Vec4 tau = hybrid_joint_torque(a, kNom, Vec4::Zero(), g);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(tau[i], 2.0, 1e-12);
}

TEST(HybridTorque, FullLaw) {
  // 5 + 20 * (-0.1) - 0.5 * 2 = 2
  const ActuatorGains g{20.0, 0.5};
  HfplpAction a{kNom - Vec4::Constant(0.1), Vec4::Constant(5.0)};
  const Vec4 tau = hybrid_joint_torque(a, kNom, Vec4::Constant(2.0), g);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(tau[i], 2.0, 1e-12);
}

TEST(HybridTorque, Superposition) {
  std::mt19937_64 rng(2);
  const ActuatorGains g{20.0, 0.5};
  for (int i = 0; i < 100; ++i) {
    const Vec4 q = random4(rng, 1.0), qd = random4(rng, 5.0);
    HfplpAction a{random4(rng, 1.0), random4(rng, 10.0)}, b{random4(rng, 1.0), random4(rng, 10.0)};
    HfplpAction sum{a.q_ref + b.q_ref, a.tau_ff + b.tau_ff};
    const Vec4 lhs = hybrid_joint_torque(sum, q, qd, g) + hybrid_joint_torque({}, q, qd, g);
    const Vec4 rhs = hybrid_joint_torque(a, q, qd, g) + hybrid_joint_torque(b, q, qd, g);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PositionOnly, RestrictionOfHybridLaw) {
  std::mt19937_64 rng(3);
  const ActuatorGains g{20.0, 0.5};
  EXPECT_EQ(position_only_torque(kNom, kNom, Vec4::Zero(), g).norm(), 0.0);
  for (int i = 0; i < 100; ++i) {
    const Vec4 q = random4(rng, 1.0), qd = random4(rng, 5.0), qref = random4(rng, 1.0), ff = random4(rng, 10.0);
    EXPECT_LT((position_only_torque(qref, q, qd, g) - hybrid_joint_torque({qref, Vec4::Zero()}, q, qd, g))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
    EXPECT_LT((hybrid_joint_torque({qref, ff}, q, qd, g) - position_only_torque(qref, q, qd, g) - ff)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
  }
}

TEST(FootspacePd, ReducesToFeedforwardOnTarget) {
  std::mt19937_64 rng(4);
  std::array<Mat2, 2> j{Mat2::Random(), Mat2::Random()};
  std::array<Vec2, 2> p{Vec2(0.1, -0.3), Vec2(-0.1, -0.3)}, v{Vec2(0.2, 0.0), Vec2::Zero()};
  const Vec4 ff = random4(rng, 5.0);
  EXPECT_EQ(footspace_pd_torque(ff, j, p, v, p, v, {}), ff);
}

TEST(FootspacePd, IdentityJacobianIsJointPd) {
  std::array<Mat2, 2> j{Mat2::Identity(), Mat2::Identity()};
  std::array<Vec2, 2> pref{Vec2(0.1, 0.2), Vec2(0.3, 0.4)}, zero{Vec2::Zero(), Vec2::Zero()};
  const CartesianGains g{100.0, 1.0};
  const Vec4 tau = footspace_pd_torque(Vec4::Zero(), j, pref, zero, zero, zero, g);
  EXPECT_TRUE(tau.isApprox(Vec4(10, 20, 30, 40)));
}

TEST(FootspacePd, MatchesDirectEvaluation) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const CartesianGains g{400.0, 10.0};
  for (int trial = 0; trial < 50; ++trial) {
    std::array<Mat2, 2> j;
    std::array<Vec2, 2> pr, vr, p, v;
    for (int l = 0; l < 2; ++l) {
      j[l] << u(rng), u(rng), u(rng), u(rng);
      pr[l] = Vec2(u(rng), u(rng));
      vr[l] = Vec2(u(rng), u(rng));
      p[l] = Vec2(u(rng), u(rng));
      v[l] = Vec2(u(rng), u(rng));
    }
    const Vec4 ff = random4(rng, 5.0);
    const Vec4 tau = footspace_pd_torque(ff, j, pr, vr, p, v, g);
    for (int l = 0; l < 2; ++l) {
      const double fx = g.kp * (pr[l].x() - p[l].x()) + g.kd * (vr[l].x() - v[l].x());
      const double fz = g.kp * (pr[l].y() - p[l].y()) + g.kd * (vr[l].y() - v[l].y());
      EXPECT_NEAR(tau[2 * l], ff[2 * l] + j[l](0, 0) * fx + j[l](1, 0) * fz, 1e-10);
      EXPECT_NEAR(tau[2 * l + 1], ff[2 * l + 1] + j[l](0, 1) * fx + j[l](1, 1) * fz, 1e-10);
    }
  }
}

TEST(ComposeCommand, Saturates) {
  EXPECT_DOUBLE_EQ(compose_command(Vec4::Constant(25.0), Vec4::Constant(10.0), 30.0).tau[0], 30.0);
  EXPECT_DOUBLE_EQ(compose_command(Vec4::Constant(-25.0), Vec4::Constant(-10.0), 30.0).tau[2], -30.0);
  const Vec4 tau(3.0, -40.0, 12.0, 0.0);
  EXPECT_EQ(compose_command(tau, Vec4::Zero(), 30.0).tau, Vec4(3.0, -30.0, 12.0, 0.0));
}

TEST(ComposeCommand, ExactSumWithinLimitsAndBoundedAlways) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 1000; ++i) {
    const Vec4 a = random4(rng, 12.0), b = random4(rng, 5.0);
    EXPECT_LT((compose_command(a, b, 30.0).tau - (a + b)).cwiseAbs().maxCoeff(), 1e-12);
    const Vec4 big = compose_command(random4(rng, 100.0), random4(rng, 100.0), 30.0).tau;
    EXPECT_LE(big.cwiseAbs().maxCoeff(), 30.0);
  }
}

}  // namespace
}  // namespace hfplp
