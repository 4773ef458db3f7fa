#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "hfplp/env.hpp"
#include "hfplp/observer.hpp"
#include "oracles.hpp"

namespace hfplp {
namespace {

Mat7 random_spd(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat7 a;
  for (int i = 0; i < 49; ++i) a.data()[i] = n(rng);
  return a * a.transpose() + Mat7::Identity();
}

Vec7 random7(std::mt19937_64& rng, double s) {
  std::uniform_real_distribution<double> u(-s, s);
  Vec7 v;
  for (int i = 0; i < 7; ++i) v[i] = u(rng);
  return v;
}

TEST(ObserverConfig, GammaBetaAtReferencePoint) {
  const ObserverConfig cfg{100.0, 0.005};
  EXPECT_NEAR(cfg.gamma(), 0.606531, 1e-6);
  EXPECT_DOUBLE_EQ(cfg.gamma(), std::exp(-0.5));
  const double g = std::exp(-0.5);
  EXPECT_NEAR(cfg.beta(), (1.0 - g) / (g * 0.005), 1e-9);
  EXPECT_NEAR(cfg.beta(), 129.744, 1e-3);
}

TEST(ObserverConfig, RejectsNonPositive) {
  EXPECT_THROW((ObserverConfig{0.0, 0.01}.validate()), ConfigError);
  EXPECT_THROW((ObserverConfig{100.0, -1.0}.validate()), ConfigError);
}

// Recursion against the closed-form expansion
//   y_k = gamma^k y_0 + sum_{j=1..k} gamma^(k-j) (1 - gamma) u_j.
TEST(GmObserver, RecursionMatchesDirectExpansion) {
  std::mt19937_64 rng(11);
  const ObserverConfig cfg{100.0, 0.005};
  const double g = cfg.gamma(), b = cfg.beta();
  ObserverState st;
  std::vector<Vec7> u;
  Vec7 y0 = Vec7::Zero();
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Mat7 m = random_spd(rng);
    Mat7 c;
    for (int i = 0; i < 49; ++i) c.data()[i] = random7(rng, 1.0)[i % 7];
    const Vec7 grav = random7(rng, 50.0), qd = random7(rng, 2.0);
    const Vec4 tau = random7(rng, 30.0).head<4>();
    const Vec7 est = gm_observer_step(cfg, st, m, c, grav, tau, qd);

    const Vec7 bp = b * (m * qd);
    Vec7 uk = bp + c.transpose() * qd - grav;
    uk.tail<4>() += tau;
    Vec7 y;
    if (k == 0) {
      y0 = bp;
      y = y0;
    } else {
      u.push_back(uk);
      y = std::pow(g, static_cast<double>(u.size())) * y0;
      for (std::size_t j = 1; j <= u.size(); ++j)
        y += std::pow(g, static_cast<double>(u.size() - j)) * (1.0 - g) * u[j - 1];
    }
    const Vec7 direct = bp - y;
    worst = std::max(worst, (est - direct).cwiseAbs().maxCoeff() / std::max(1.0, direct.cwiseAbs().maxCoeff()));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(GmObserver, FirstEstimateIsZero) {
  ObserverState st;
  std::mt19937_64 rng(3);
  const Vec7 e = gm_observer_step(ObserverConfig{}, st, random_spd(rng), Mat7::Zero(), random7(rng, 10.0),
                                  Vec4::Zero(), random7(rng, 1.0));
  EXPECT_LT(e.norm(), 1e-12);
}

// At rest the dynamics reduce to G = S^T tau + tau_d; the estimate converges
// geometrically to tau_d with error fraction gamma^k.
TEST(GmObserver, ConstantDisturbanceConvergesWithinOnePercent) {
  const ObserverConfig cfg{100.0, 0.005};
  const RobotModel model;
  Vec7 q;
  q << 0.0, 0.3, 0.0, 0.6, -1.2, -0.6, 1.2;
  const Vec7 grav = gravity_vector(model, q);
  const Vec4 tau(1.0, -2.0, 3.0, -4.0);
  Vec7 tau_d = grav;
  tau_d.tail<4>() -= tau;
  const Mat7 m = mass_matrix(model, q);
  ObserverState st;
  const int steps = static_cast<int>(std::ceil(5.0 / (cfg.cutoff_rad_per_s * cfg.sample_period_s)));
  Vec7 est;
  for (int k = 0; k <= steps; ++k) est = gm_observer_step(cfg, st, m, Mat7::Zero(), grav, tau, Vec7::Zero());
  EXPECT_LE((est - tau_d).norm(), 0.01 * tau_d.norm());
  EXPECT_NEAR((est - tau_d).norm() / tau_d.norm(), std::pow(cfg.gamma(), steps), 1e-12);
}

TEST(GmObserver, LinearInDisturbance) {
  const ObserverConfig cfg{100.0, 0.01};
  std::mt19937_64 rng(5);
  const Mat7 m = random_spd(rng);
  ObserverState a, b, c;
  const Vec7 g1 = random7(rng, 10.0), g2 = random7(rng, 10.0);
  const Vec7 qd = random7(rng, 1.0);
  Vec7 ea, eb, ec;
  for (int k = 0; k < 20; ++k) {
    ea = gm_observer_step(cfg, a, m, Mat7::Zero(), g1, Vec4::Zero(), qd);
    eb = gm_observer_step(cfg, b, m, Mat7::Zero(), g2, Vec4::Zero(), qd);
    ec = gm_observer_step(cfg, c, m, Mat7::Zero(), g1 + g2, Vec4::Zero(), qd);
  }
  EXPECT_LT((ea + eb - ec).norm(), 1e-9 * (1.0 + ec.norm()));
}

// Standing robot, PD holding the nominal posture, 50 N pushing the trunk
// CoM along x. The GM base rows minus the contact term recover the push.
TEST(GmObserver, StandingPushRecoveredWithinTenPercent) {
  EnvParams p;
  p.run_gm_observer = true;
  Env env(&p, ActionMode::kHybrid);
  EpisodeSetup setup;
  setup.schedule.segments.push_back({0.5, 100.0, Vec2(50.0, 0.0)});
  Rng rng(1);
  env.reset(setup, rng);
  const double settle_until = 0.5 + 5.0 / p.observer.cutoff_rad_per_s;
  Vec2 est = Vec2::Zero();
  while (env.state().t < settle_until - 1e-9) {
    const StepInfo& info = env.step(Eigen::VectorXd::Zero(8));
    ASSERT_EQ(info.done, Termination::kRunning);
    est = info.gm_estimate.head<2>() - info.mean_contact[0] - info.mean_contact[1];
  }
  EXPECT_NEAR(est.x(), 50.0, 5.0);
  EXPECT_NEAR(est.y(), 0.0, 5.0);
}

TEST(GmObserver, NoPushEstimateNearZero) {
  EnvParams p;
  p.run_gm_observer = true;
  Env env(&p, ActionMode::kHybrid);
  Rng rng(2);
  env.reset(EpisodeSetup{}, rng);
  Vec2 est = Vec2::Zero();
  for (int k = 0; k < 60; ++k) {
    const StepInfo& info = env.step(Eigen::VectorXd::Zero(8));
    est = info.gm_estimate.head<2>() - info.mean_contact[0] - info.mean_contact[1];
  }
  EXPECT_LT(est.norm(), 5.0);
}

// ---------------------------------------------------------------------------
// Neural observer

TEST(NeuralObserver, ShapesAndErrors) {
  NeuralObserver ob = NeuralObserver::make(RobotModel{});
  std::mt19937_64 rng(1);
  ob.init(rng);
  const NeuralObserverEstimate e =
      neural_observer_forward(ob, Eigen::VectorXd::Zero(obs::kHistoryDim), Eigen::VectorXd::Zero(obs::kDim));
  EXPECT_TRUE(e.external_force.allFinite());
  EXPECT_THROW(neural_observer_forward(ob, Eigen::VectorXd::Zero(119), Eigen::VectorXd::Zero(obs::kDim)),
               ShapeMismatch);
  EXPECT_THROW(neural_observer_forward(ob, Eigen::VectorXd::Zero(obs::kHistoryDim), Eigen::VectorXd::Zero(23)),
               ShapeMismatch);
}

TEST(NeuralObserver, ZeroWeightsGiveZeroEstimate) {
  NeuralObserver ob = NeuralObserver::make(RobotModel{});
  std::mt19937_64 rng(4);
  Eigen::VectorXd h = Eigen::VectorXd::Random(obs::kHistoryDim), o = Eigen::VectorXd::Random(obs::kDim);
  const NeuralObserverEstimate e = neural_observer_forward(ob, h, o);
  EXPECT_EQ(e.external_force.norm(), 0.0);
  EXPECT_EQ(e.contact_forces.norm(), 0.0);
}

TEST(NeuralObserver, MatchesManualComposition) {
  NeuralObserver ob = NeuralObserver::make(RobotModel{});
  std::mt19937_64 rng(9);
  ob.init(rng);
  HistoryVec h;
  ObsVec o;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < h.size(); ++i) h[i] = u(rng);
  for (int i = 0; i < o.size(); ++i) o[i] = u(rng);
  nn::Matrix hin(obs::kHistoryDim, 1), oin(obs::kDim, 1);
  ob.normalizer.apply_history(h, hin.col(0));
  ob.normalizer.apply(o, oin.col(0));
  const nn::Matrix s1 = ob.accel_contact_net.forward(hin);
  nn::Matrix x2(kObserverStage2In, 1);
  x2 << oin, s1;
  const nn::Matrix s2 = ob.force_net.forward(x2);
  const NeuralObserverEstimate e = neural_observer_forward(ob, h, o);
  EXPECT_NEAR(e.external_force.x(), 100.0 * s2(0, 0), 1e-4);
  EXPECT_NEAR(e.external_force.y(), 100.0 * s2(1, 0), 1e-4);
  EXPECT_NEAR(e.base_accel.x(), 10.0 * s1(0, 0), 1e-5);
  EXPECT_NEAR(e.pitch_accel, 20.0 * s1(2, 0), 1e-5);
  EXPECT_NEAR(e.contact_forces[3], 100.0 * s1(6, 0), 1e-4);
  // Deterministic.
  const NeuralObserverEstimate e2 = neural_observer_forward(ob, h, o);
  EXPECT_EQ(e.external_force, e2.external_force);
}

TEST(ObserverTargets, FiniteDifferenceAndPassThrough) {
  Vec7 a = Vec7::Zero(), b = Vec7::Zero();
  b[0] = 0.1;
  b[1] = -0.2;
  b[2] = 0.05;
  const ContactForces fc{Vec2(1, 2), Vec2(3, 4)};
  const ObserverTargets t = observer_targets(a, b, 0.01, fc, Vec2(5, -6));
  EXPECT_NEAR(t.base_accel.x(), 10.0, 1e-12);
  EXPECT_NEAR(t.base_accel.y(), -20.0, 1e-12);
  EXPECT_NEAR(t.pitch_accel, 5.0, 1e-12);
  EXPECT_EQ(t.contact_forces, Vec4(1, 2, 3, 4));
  EXPECT_EQ(t.external_force, Vec2(5, -6));
  EXPECT_EQ(t.stacked().size(), 9);
}

// ---------------------------------------------------------------------------
// Foot force from compensation torques

TEST(FootForce, SatisfiesJacobianTransposeRelation) {
  const RobotModel model;
  std::mt19937_64 rng(21);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vec7 q = oracle::random_configuration(rng);
    const FootKinematics fk = foot_kinematics(model, q, Vec7::Zero());
    for (int leg = 0; leg < kNumLegs; ++leg) {
      const Mat2 j = fk.leg_jacobian(leg);
      if (std::abs(j.determinant()) < 1e-3) continue;
      const Vec2 dtau = random7(rng, 5.0).head<2>();
      const Vec2 f = foot_force_from_compensation(dtau, j);
      EXPECT_LT((j.transpose() * f - dtau).norm(), 1e-9 * (1.0 + f.norm()));
      ++checked;
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(FootForce, IdentityJacobian) {
  EXPECT_EQ(foot_force_from_compensation(Vec2(1.5, -2.0), Mat2::Identity()), Vec2(1.5, -2.0));
}

TEST(FootForce, StraightLegIsSingular) {
  const RobotModel model;
  Vec7 q = Vec7::Zero();
  q[1] = 0.4;
  const FootKinematics fk = foot_kinematics(model, q, Vec7::Zero());
  EXPECT_THROW(foot_force_from_compensation(Vec2(1.0, 1.0), fk.leg_jacobian(0)), NearSingularJacobian);
}

}  // namespace
}  // namespace hfplp
