#pragma once

// Locomotion environment: physics at the substep rate, actuator law held
// over each control period, scheduled external pushes, observations, reward
// and termination.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "hfplp/actuation.hpp"
#include "hfplp/dynamics.hpp"
#include "hfplp/layout.hpp"
#include "hfplp/observer.hpp"
#include "hfplp/parallel.hpp"

namespace hfplp {

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32), 0x48465050u};
  return Rng(seq);
}

enum class ActionMode { kHybrid, kPositionOnly };

inline int action_dim(ActionMode m) { return m == ActionMode::kHybrid ? kHfplpActionDim : kPositionActionDim; }

struct EpisodeConfig {
  double control_period_s = 0.01;
  int substeps = 10;
  double episode_length_s = 10.0;
  double command_min_mps = 0.0;
  double command_max_mps = 1.2;
  double zero_command_fraction = 0.1;
  double disturbance_probability = 0.6;
  double force_x_max_n = 100.0;       // F_x ~ U[-max, max]
  double force_z_min_n = -200.0;      // F_z ~ U[min, 0]
  double duration_min_s = 1.0;
  double duration_max_s = 4.0;
  double payload_probability = 0.0;
  double payload_max_kg = 10.0;
  double reset_joint_noise_rad = 0.05;
  double fall_pitch_rad = 1.0;
  double fall_height_m = 0.15;
  double blowup_limit = 1e6;

  double physics_step_s() const { return control_period_s / substeps; }
  int steps_per_episode() const { return static_cast<int>(std::lround(episode_length_s / control_period_s)); }

  void validate() const {
    if (!(control_period_s > 0.0) || substeps < 1 || !(episode_length_s > 0.0))
      throw ConfigError("env: periods and episode length must be positive");
    auto prob = [](double p, const char* name) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("env.") + name + " must lie in [0, 1]");
    };
    prob(zero_command_fraction, "zero_command_fraction");
    prob(disturbance_probability, "disturbance_probability");
    prob(payload_probability, "payload_probability");
    if (command_max_mps < command_min_mps) throw ConfigError("env: command range is empty");
    if (!(duration_min_s > 0.0) || duration_max_s < duration_min_s)
      throw ConfigError("env: disturbance duration range is invalid");
    if (force_x_max_n < 0.0 || force_z_min_n > 0.0) throw ConfigError("env: disturbance force ranges are invalid");
    if (payload_max_kg < 0.0 || reset_joint_noise_rad < 0.0) throw ConfigError("env: negative payload/noise bound");
  }
};

struct RewardWeights {
  double tracking = 1.0;
  double tracking_sigma_sq = 0.25;
  double vertical_velocity = -2.0;
  double pitch_rate = -0.05;
  double orientation = -5.0;
  double torque = -1e-4;
  double action_rate = -0.01;
  double base_height = -10.0;
  double joint_tracking = -0.2;

  void validate() const {
    if (!(tracking_sigma_sq > 0.0)) throw ConfigError("reward.tracking_sigma_sq must be > 0");
  }
};

// ---------------------------------------------------------------------------
// External force schedules

struct ForceSegment {
  double start_s = 0.0;
  double duration_s = 0.0;
  Vec2 force = Vec2::Zero();
};

struct DisturbanceSpec {
  Vec2 force = Vec2::Zero();
  double start_s = 0.0;
  double duration_s = 0.0;
  bool active = false;
};

struct ForceSchedule {
  std::vector<ForceSegment> segments;

  static ForceSchedule from(const DisturbanceSpec& d) {
    ForceSchedule s;
    if (d.active) s.segments.push_back({d.start_s, d.duration_s, d.force});
    return s;
  }

  // Sum of segments whose window [start, start + duration) contains t.
  Vec2 at(double t) const {
    Vec2 f = Vec2::Zero();
    for (const auto& seg : segments)
      if (t >= seg.start_s && t < seg.start_s + seg.duration_s) f += seg.force;
    return f;
  }
};

inline DisturbanceSpec sample_disturbance(Rng& rng, const EpisodeConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  DisturbanceSpec d;
  if (u01(rng) >= cfg.disturbance_probability) return d;
  d.active = true;
  d.force.x() = std::uniform_real_distribution<double>(-cfg.force_x_max_n, cfg.force_x_max_n)(rng);
  d.force.y() = std::uniform_real_distribution<double>(cfg.force_z_min_n, 0.0)(rng);
  d.duration_s = std::uniform_real_distribution<double>(cfg.duration_min_s, cfg.duration_max_s)(rng);
  const double latest = std::max(0.0, cfg.episode_length_s - d.duration_s);
  d.start_s = std::uniform_real_distribution<double>(0.0, latest)(rng);
  return d;
}

// Everything that defines an episode besides the initial joint noise.
struct EpisodeSetup {
  double command_mps = 0.0;
  double payload_kg = 0.0;
  ForceSchedule schedule;
  std::optional<double> episode_length_s;  // overrides EpisodeConfig when set
};

inline EpisodeSetup sample_episode_setup(Rng& rng, const EpisodeConfig& cfg) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  EpisodeSetup s;
  if (u01(rng) >= cfg.zero_command_fraction)
    s.command_mps = std::uniform_real_distribution<double>(cfg.command_min_mps, cfg.command_max_mps)(rng);
  s.schedule = ForceSchedule::from(sample_disturbance(rng, cfg));
  if (u01(rng) < cfg.payload_probability) s.payload_kg = u01(rng) * cfg.payload_max_kg;
  return s;
}

// ---------------------------------------------------------------------------
// Reward

struct RewardBreakdown {
  double tracking = 0.0;
  double vertical_velocity = 0.0;
  double pitch_rate = 0.0;
  double orientation = 0.0;
  double torque = 0.0;
  double action_rate = 0.0;
  double base_height = 0.0;
  double joint_tracking = 0.0;
  double total = 0.0;

  static constexpr int kTerms = 8;
  static constexpr std::array<const char*, kTerms> names() {
    return {"tracking", "vertical_velocity", "pitch_rate", "orientation",
            "torque", "action_rate", "base_height", "joint_tracking"};
  }
  std::array<double, kTerms> terms() const {
    return {tracking, vertical_velocity, pitch_rate, orientation, torque, action_rate, base_height, joint_tracking};
  }
};

struct RewardInputs {
  double vx = 0.0, vz = 0.0, pitch_rate = 0.0, gravity_x = 0.0;
  double base_z = 0.0, nominal_z = 0.0;
  double command = 0.0;
  Vec4 torque = Vec4::Zero();
  Eigen::VectorXd action, prev_action;
  std::optional<Vec4> joint_error;  // q_ref - q, only for the hybrid action space
};

inline RewardBreakdown compute_reward(const RewardInputs& in, const RewardWeights& w) {
  RewardBreakdown r;
  const double ev = in.vx - in.command;
  r.tracking = w.tracking * std::exp(-ev * ev / w.tracking_sigma_sq);
  r.vertical_velocity = w.vertical_velocity * in.vz * in.vz;
  r.pitch_rate = w.pitch_rate * in.pitch_rate * in.pitch_rate;
  r.orientation = w.orientation * in.gravity_x * in.gravity_x;
  r.torque = w.torque * in.torque.squaredNorm();
  if (in.action.size() > 0 && in.action.size() == in.prev_action.size())
    r.action_rate = w.action_rate * (in.action - in.prev_action).squaredNorm();
  const double dz = in.base_z - in.nominal_z;
  r.base_height = w.base_height * dz * dz;
  if (in.joint_error) r.joint_tracking = w.joint_tracking * in.joint_error->squaredNorm();
  const auto t = r.terms();
  r.total = 0.0;
  for (double v : t) r.total += v;
  return r;
}

// ---------------------------------------------------------------------------
// Termination

enum class Termination { kRunning, kFall, kTimeout };

inline Termination check_termination(const State& s, double episode_length_s, const EpisodeConfig& cfg) {
  if (std::abs(s.q[2]) > cfg.fall_pitch_rad || s.q[1] < cfg.fall_height_m) return Termination::kFall;
  if (s.t >= episode_length_s - 1e-9) return Termination::kTimeout;
  return Termination::kRunning;
}

// ---------------------------------------------------------------------------
// Environment

struct EnvParams {
  RobotModel model;
  ContactParams contact;
  ActuatorGains gains;
  ActionScales scales;
  EpisodeConfig episode;
  RewardWeights reward;
  ObserverConfig observer;
  bool run_gm_observer = false;
};

struct StepInfo {
  Termination done = Termination::kRunning;
  bool blowup = false;
  ContactForces mean_contact{Vec2::Zero(), Vec2::Zero()};
  ContactForces last_contact{Vec2::Zero(), Vec2::Zero()};
  Vec2 applied_force = Vec2::Zero();  // F_ext at the last substep
  Vec4 tau_cmd = Vec4::Zero();        // last applied command (post-clamp)
  Vec4 delta_tau = Vec4::Zero();
  Vec4 q_ref = Vec4::Zero();
  Vec7 gm_estimate = Vec7::Zero();    // tau_d_hat, when the GM observer runs
  ObserverTargets targets;
  FootKinematics feet;                // at the end of the control period
  RewardBreakdown reward;
};

struct SubstepRecord {
  double t = 0.0;
  Vec2 applied_force = Vec2::Zero();
};

class Env {
 public:
  Env() = default;
  Env(const EnvParams* params, ActionMode mode) : p_(params), mode_(mode) {}

  ActionMode mode() const { return mode_; }
  const State& state() const { return state_; }
  State& mutable_state() { return state_; }
  const EpisodeSetup& setup() const { return setup_; }
  const ObsVec& observation() const { return obs_; }
  const HistoryVec& history() const { return history_; }
  const ObserverState& gm_state() const { return gm_; }
  const StepInfo& last_info() const { return info_; }
  int step_count() const { return steps_; }
  double nominal_height() const { return nominal_z_; }
  double episode_length() const { return setup_.episode_length_s.value_or(p_->episode.episode_length_s); }
  void set_gains(const ActuatorGains& g) { gains_override_ = g; }
  void set_substep_hook(std::function<void(const SubstepRecord&)> hook) { hook_ = std::move(hook); }

  ObsVec reset(const EpisodeSetup& setup, Rng& rng) {
    setup_ = setup;
    loaded_ = p_->model.with_payload(setup.payload_kg);
    const Vec4 q_nom = p_->model.nominal_joint_angles_rad;
    std::uniform_real_distribution<double> noise(-p_->episode.reset_joint_noise_rad, p_->episode.reset_joint_noise_rad);
    state_ = State{};
    for (int i = 0; i < 4; ++i) state_.q[3 + i] = q_nom[i] + noise(rng);
    nominal_z_ = standing_height(p_->model, q_nom) + p_->contact.ground_height_m;
    state_.q[1] = standing_height(p_->model, state_.q.tail<4>()) + p_->contact.ground_height_m;
    prev_raw_.setZero();
    prev_daac_raw_.setZero();
    info_ = StepInfo{};
    info_.feet = foot_kinematics(p_->model, state_.q, state_.qd);
    gm_ = ObserverState{};
    steps_ = 0;
    obs_ = build_observation();
    for (int k = 0; k < obs::kHistoryLength; ++k) history_.segment<obs::kDim>(k * obs::kDim) = obs_;
    return obs_;
  }

  PrivVec privileged() const {
    PrivVec v;
    v.head<2>() = state_.qd.head<2>();
    for (int leg = 0; leg < kNumLegs; ++leg) {
      v[2 + leg] = info_.last_contact[leg].y() > 1.0 ? 1.0 : 0.0;
      v[4 + leg] = info_.feet.position[leg].y() - p_->contact.ground_height_m;
    }
    v.tail<2>() = setup_.schedule.at(state_.t);
    if (!v.allFinite()) v.setZero();
    return v;
  }

  // Advances one control period. `raw` has 8 entries (hybrid) or 4
  // (position-only); `daac_raw`, when given, adds a scaled compensation.
  const StepInfo& step(const Eigen::VectorXd& raw, const std::optional<Vec4>& daac_raw = std::nullopt) {
    const ActuatorGains gains = gains_override_.value_or(p_->gains);
    const ActionScales& sc = p_->scales;
    const Vec4 q_nom = p_->model.nominal_joint_angles_rad;
    HfplpAction action;
    Eigen::VectorXd raw8 = Eigen::VectorXd::Zero(kHfplpActionDim);
    if (mode_ == ActionMode::kHybrid) {
      if (raw.size() != kHfplpActionDim) throw ShapeMismatch("hybrid action needs 8 entries");
      raw8 = raw;
      action = scale_raw_action(Vec8(raw), q_nom, sc, p_->model.torque_limit_nm);
    } else {
      if (raw.size() != kPositionActionDim) throw ShapeMismatch("position action needs 4 entries");
      raw8.head<4>() = raw;
      action.q_ref = scale_position_action(Vec4(raw), q_nom, sc);
    }
    const Vec4 delta = daac_raw ? scale_daac_action(*daac_raw, sc).delta_tau : Vec4::Zero();

    StepInfo info;
    info.q_ref = action.q_ref;
    info.delta_tau = delta;
    const Vec7 qd_prev = state_.qd;
    const double h = p_->episode.physics_step_s();
    const int n_sub = p_->episode.substeps;
    try {
      for (int s = 0; s < n_sub; ++s) {
        const DynamicsTerms terms = evaluate_terms(loaded_, state_);
        const Vec4 q4 = state_.q.tail<4>(), qd4 = state_.qd.tail<4>();
        const Vec4 tau_law = mode_ == ActionMode::kHybrid ? hybrid_joint_torque(action, q4, qd4, gains)
                                                          : position_only_torque(action.q_ref, q4, qd4, gains);
        const TorqueCommand cmd = compose_command(tau_law, delta, p_->model.torque_limit_nm);
        const Vec2 fext = setup_.schedule.at(state_.t);
        if (hook_) hook_({state_.t, fext});
        const ContactStep cs = contact_dynamics(terms, p_->contact, state_.qd, cmd.tau, fext, h);
        const ContactForces& fc = cs.fc;
        state_.qd += cs.qdd * h;
        state_.q += state_.qd * h;
        state_.t += h;
        for (int leg = 0; leg < kNumLegs; ++leg) info.mean_contact[leg] += fc[leg] / n_sub;
        info.last_contact = fc;
        info.applied_force = fext;
        info.tau_cmd = cmd.tau;
      }
    } catch (const LinearSolveFailure&) {
      info.blowup = true;
    }
    ++steps_;
    if (info.blowup || !state_.finite() || state_.q.cwiseAbs().maxCoeff() > p_->episode.blowup_limit ||
        state_.qd.cwiseAbs().maxCoeff() > p_->episode.blowup_limit) {
      info.blowup = true;
      info.done = Termination::kFall;
      info.feet = info_.feet;
      info_ = info;
      return info_;
    }

    info.feet = foot_kinematics(p_->model, state_.q, state_.qd);
    info.targets = observer_targets(qd_prev, state_.qd, p_->episode.control_period_s, info.mean_contact,
                                    info.applied_force);
    if (p_->run_gm_observer) {
      // Nominal model: payload is part of what the observer has to see.
      const DynamicsTerms nominal = evaluate_terms(p_->model, state_);
      info.gm_estimate = gm_observer_step(p_->observer, gm_, nominal, info.tau_cmd, state_.qd);
    }

    RewardInputs ri;
    ri.vx = state_.qd[0];
    ri.vz = state_.qd[1];
    ri.pitch_rate = state_.qd[2];
    ri.gravity_x = std::sin(state_.q[2]);
    ri.base_z = state_.q[1];
    ri.nominal_z = nominal_z_;
    ri.command = setup_.command_mps;
    ri.torque = info.tau_cmd;
    const int na = action_dim(mode_);
    const int nd = daac_raw ? kDaacActionDim : 0;
    ri.action.resize(na + nd);
    ri.prev_action.resize(na + nd);
    ri.action.head(na) = raw8.head(na);
    ri.prev_action.head(na) = prev_raw_.head(na);
    if (daac_raw) {
      ri.action.tail(nd) = *daac_raw;
      ri.prev_action.tail(nd) = prev_daac_raw_;
      prev_daac_raw_ = *daac_raw;
    }
    if (mode_ == ActionMode::kHybrid) ri.joint_error = Vec4(action.q_ref - state_.q.tail<4>());
    info.reward = compute_reward(ri, p_->reward);

    prev_raw_ = raw8;
    info.done = check_termination(state_, episode_length(), p_->episode);
    info_ = info;
    obs_ = build_observation();
    push_history(obs_);
    return info_;
  }

 private:
  ObsVec build_observation() const {
    ObsVec o;
    o[obs::kPitchRate] = state_.qd[2];
    o[obs::kGravity] = std::sin(state_.q[2]);
    o[obs::kGravity + 1] = -std::cos(state_.q[2]);
    o[obs::kCommand] = setup_.command_mps;
    o.segment<4>(obs::kJointPos) = state_.q.tail<4>();
    o.segment<4>(obs::kJointVel) = state_.qd.tail<4>();
    o.segment<4>(obs::kTorque) = info_.tau_cmd;
    o.segment<8>(obs::kPrevAction) = prev_raw_;
    return o;
  }

  void push_history(const ObsVec& o) {
    constexpr int keep = obs::kHistoryDim - obs::kDim;
    const Eigen::Matrix<double, keep, 1> tail = history_.tail<keep>();
    history_.head<keep>() = tail;
    history_.tail<obs::kDim>() = o;
  }

  const EnvParams* p_ = nullptr;
  ActionMode mode_ = ActionMode::kHybrid;
  RobotModel loaded_;
  State state_;
  EpisodeSetup setup_;
  ObsVec obs_ = ObsVec::Zero();
  HistoryVec history_ = HistoryVec::Zero();
  Vec8 prev_raw_ = Vec8::Zero();
  Vec4 prev_daac_raw_ = Vec4::Zero();
  ObserverState gm_;
  StepInfo info_;
  double nominal_z_ = 0.0;
  int steps_ = 0;
  std::optional<ActuatorGains> gains_override_;
  std::function<void(const SubstepRecord&)> hook_;
};

// ---------------------------------------------------------------------------
// Batch of independent environments with auto-reset.

class VecEnv {
 public:
  VecEnv(const EnvParams& params, ActionMode mode, int count, std::uint64_t seed) : params_(params) {
    envs_.reserve(count);
    for (int i = 0; i < count; ++i) {
      envs_.emplace_back(&params_, mode);
      rngs_.push_back(make_rng(seed, static_cast<std::uint64_t>(i)));
    }
    episode_returns_.assign(count, 0.0);
  }

  VecEnv(const VecEnv&) = delete;
  VecEnv& operator=(const VecEnv&) = delete;

  int size() const { return static_cast<int>(envs_.size()); }
  Env& env(int i) { return envs_[i]; }
  const Env& env(int i) const { return envs_[i]; }
  const EnvParams& params() const { return params_; }

  void reset_all() {
    for (int i = 0; i < size(); ++i) reset_env(i);
  }

  void reset_env(int i) {
    const EpisodeSetup setup = sample_episode_setup(rngs_[i], params_.episode);
    envs_[i].reset(setup, rngs_[i]);
    episode_returns_[i] = 0.0;
  }

  struct Outcome {
    double reward = 0.0;
    Termination done = Termination::kRunning;
    ObsVec final_obs = ObsVec::Zero();     // observation before auto-reset
    PrivVec final_priv = PrivVec::Zero();
    HistoryVec final_history = HistoryVec::Zero();
    double episode_return = 0.0;           // valid when done != kRunning
    StepInfo info;
  };

  // raw: action_dim x N; daac (optional): 4 x N.
  std::vector<Outcome> step(const Eigen::MatrixXd& raw, const Eigen::MatrixXd* daac = nullptr) {
    std::vector<Outcome> out(size());
    parallel_for(size(), [&](int i) {
      Env& e = envs_[i];
      std::optional<Vec4> d;
      if (daac) d = Vec4(daac->col(i));
      const StepInfo& info = e.step(raw.col(i), d);
      Outcome& o = out[i];
      o.reward = info.reward.total;
      o.done = info.done;
      o.info = info;
      episode_returns_[i] += info.reward.total;
      o.final_obs = e.observation();
      o.final_priv = e.privileged();
      o.final_history = e.history();
      if (info.done != Termination::kRunning) {
        o.episode_return = episode_returns_[i];
        reset_env(i);
      }
    });
    return out;
  }

 private:
  EnvParams params_;
  std::vector<Env> envs_;
  std::vector<Rng> rngs_;
  std::vector<double> episode_returns_;
};

}  // namespace hfplp
