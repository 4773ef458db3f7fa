#pragma once

// Workbench configuration: one JSON tree with units in the key names.
// Loading starts from the defaults, rejects unknown keys and type changes
// by path, then validates every section.

#include <json.hpp>

#include <array>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hfplp/actuation.hpp"
#include "hfplp/dynamics.hpp"
#include "hfplp/env.hpp"
#include "hfplp/error.hpp"
#include "hfplp/observer.hpp"
#include "hfplp/ppo.hpp"

namespace hfplp {

using Json = nlohmann::json;

struct StageConfig {
  int iterations = 1500;
  double disturbance_probability = 0.0;
  double payload_probability = 0.0;
};

struct Stage2Config {
  int iterations = 3000;
  double disturbance_probability = 0.6;
  double payload_probability = 0.3;
  std::vector<int> daac_hidden{128, 64, 32};
  double daac_output_gain = 0.01;
  std::vector<int> observer_hidden{128, 64, 32};
  double observer_learning_rate = 1e-3;
  int observer_epochs = 3;
  int observer_minibatches = 4;
  int observer_holdout_envs = 32;
};

struct EvalConfig {
  std::vector<std::uint64_t> seeds{101, 102, 103, 104, 105};
  double command_mps = 1.0;
  double tracking_command_mps = 0.5;
  double episode_length_s = 10.0;
  double payload_kg = 5.0;
  std::vector<double> payloads_kg{0.0, 2.5, 5.0, 7.5, 10.0, 12.5, 15.0};
  std::vector<double> kp_list{10.0, 20.0, 40.0};
  std::vector<double> impulses_ns{5.0, 10.0, 15.0, 20.0};
  double impact_duration_s = 0.1;
  double impact_onset_s = 3.0;
  double pull_force_n = 40.0;
  double push_force_n = 60.0;
  double square_wave_amplitude_n = 100.0;
  double square_wave_segment_s = 5.0;
  double square_wave_command_mps = 0.5;
  double success_rate_threshold = 0.8;
};

struct IoConfig {
  std::string out_dir = "runs";
  int checkpoint_every = 100;
  bool dump_traces = true;
};

struct WorkbenchConfig {
  std::uint64_t seed = 7;
  RobotModel robot;
  ContactParams contact;
  ActuatorGains gains;
  ActionScales scales;
  ObserverConfig observer;
  EpisodeConfig env;
  RewardWeights reward;
  PpoConfig ppo;
  std::vector<int> actor_hidden{256, 128, 64};
  std::vector<int> critic_hidden{256, 128, 64};
  StageConfig stage1;
  Stage2Config stage2;
  EvalConfig eval;
  IoConfig io;

  void validate() const;

  // Environment parameters for a training stage or evaluation.
  EnvParams env_params(double disturbance_probability, double payload_probability) const {
    EnvParams p;
    p.model = robot;
    p.contact = contact;
    p.gains = gains;
    p.scales = scales;
    p.episode = env;
    p.episode.disturbance_probability = disturbance_probability;
    p.episode.payload_probability = payload_probability;
    p.reward = reward;
    p.observer = observer;
    return p;
  }
};

namespace detail {

// Binds struct fields to JSON keys in both directions.
struct Binder {
  Json* j;
  bool writing;

  template <class T>
  void operator()(const char* key, T& v) {
    if (writing)
      (*j)[key] = v;
    else
      v = j->at(key).get<T>();
  }
  void operator()(const char* key, Vec4& v) {
    std::array<double, 4> a{v[0], v[1], v[2], v[3]};
    (*this)(key, a);
    v = Vec4(a[0], a[1], a[2], a[3]);
  }
  Binder sub(const char* key) {
    if (writing && !j->contains(key)) (*j)[key] = Json::object();
    return Binder{&j->at(key), writing};
  }
};

inline void bind(WorkbenchConfig& c, Binder b) {
  b("seed", c.seed);
  {
    Binder r = b.sub("robot");
    r("trunk_mass_kg", c.robot.trunk_mass_kg);
    r("thigh_mass_kg", c.robot.thigh_mass_kg);
    r("shank_mass_kg", c.robot.shank_mass_kg);
    r("thigh_length_m", c.robot.thigh_length_m);
    r("shank_length_m", c.robot.shank_length_m);
    r("trunk_half_length_m", c.robot.trunk_half_length_m);
    r("trunk_inertia_kgm2", c.robot.trunk_inertia_kgm2);
    r("thigh_inertia_kgm2", c.robot.thigh_inertia_kgm2);
    r("shank_inertia_kgm2", c.robot.shank_inertia_kgm2);
    r("gravity_mps2", c.robot.gravity_mps2);
    r("nominal_joint_angles_rad", c.robot.nominal_joint_angles_rad);
  }
  {
    Binder r = b.sub("contact");
    r("normal_stiffness_n_per_m", c.contact.normal_stiffness_n_per_m);
    r("normal_damping_ns_per_m", c.contact.normal_damping_ns_per_m);
    r("friction_coefficient", c.contact.friction_coefficient);
    r("slip_velocity_mps", c.contact.slip_velocity_mps);
    r("ground_height_m", c.contact.ground_height_m);
  }
  {
    Binder r = b.sub("actuator");
    r("kp_nm_per_rad", c.gains.kp);
    r("kd_nms_per_rad", c.gains.kd);
    r("position_scale_rad", c.scales.position_rad);
    r("feedforward_scale_nm", c.scales.feedforward_nm);
    r("compensation_scale_nm", c.scales.compensation_nm);
    r("torque_limit_nm", c.robot.torque_limit_nm);
  }
  {
    Binder r = b.sub("observer");
    r("cutoff_rad_per_s", c.observer.cutoff_rad_per_s);
  }
  {
    Binder r = b.sub("env");
    r("control_period_s", c.env.control_period_s);
    r("substeps", c.env.substeps);
    r("episode_length_s", c.env.episode_length_s);
    r("command_min_mps", c.env.command_min_mps);
    r("command_max_mps", c.env.command_max_mps);
    r("zero_command_fraction", c.env.zero_command_fraction);
    r("force_x_max_n", c.env.force_x_max_n);
    r("force_z_min_n", c.env.force_z_min_n);
    r("disturbance_duration_min_s", c.env.duration_min_s);
    r("disturbance_duration_max_s", c.env.duration_max_s);
    r("payload_max_kg", c.env.payload_max_kg);
    r("reset_joint_noise_rad", c.env.reset_joint_noise_rad);
    r("fall_pitch_rad", c.env.fall_pitch_rad);
    r("fall_height_m", c.env.fall_height_m);
    Binder w = r.sub("reward");
    w("tracking", c.reward.tracking);
    w("tracking_sigma_sq_m2ps2", c.reward.tracking_sigma_sq);
    w("vertical_velocity", c.reward.vertical_velocity);
    w("pitch_rate", c.reward.pitch_rate);
    w("orientation", c.reward.orientation);
    w("torque", c.reward.torque);
    w("action_rate", c.reward.action_rate);
    w("base_height", c.reward.base_height);
    w("joint_tracking", c.reward.joint_tracking);
  }
  {
    Binder r = b.sub("ppo");
    r("discount", c.ppo.discount);
    r("gae_lambda", c.ppo.gae_lambda);
    r("clip_ratio", c.ppo.clip_ratio);
    r("learning_rate", c.ppo.learning_rate);
    r("epochs", c.ppo.epochs);
    r("minibatches", c.ppo.minibatches);
    r("horizon_steps", c.ppo.horizon);
    r("num_envs", c.ppo.num_envs);
    r("entropy_coef", c.ppo.entropy_coef);
    r("value_coef", c.ppo.value_coef);
    r("max_grad_norm", c.ppo.max_grad_norm);
    r("reward_scale", c.ppo.reward_scale);
    r("init_log_std", c.ppo.init_log_std);
    r("actor_hidden", c.actor_hidden);
    r("critic_hidden", c.critic_hidden);
  }
  {
    Binder r = b.sub("stage1");
    r("iterations", c.stage1.iterations);
    r("disturbance_probability", c.stage1.disturbance_probability);
    r("payload_probability", c.stage1.payload_probability);
  }
  {
    Binder r = b.sub("stage2");
    r("iterations", c.stage2.iterations);
    r("disturbance_probability", c.stage2.disturbance_probability);
    r("payload_probability", c.stage2.payload_probability);
    r("daac_hidden", c.stage2.daac_hidden);
    r("daac_output_gain", c.stage2.daac_output_gain);
    r("observer_hidden", c.stage2.observer_hidden);
    r("observer_learning_rate", c.stage2.observer_learning_rate);
    r("observer_epochs", c.stage2.observer_epochs);
    r("observer_minibatches", c.stage2.observer_minibatches);
    r("observer_holdout_envs", c.stage2.observer_holdout_envs);
  }
  {
    Binder r = b.sub("eval");
    r("seeds", c.eval.seeds);
    r("command_mps", c.eval.command_mps);
    r("tracking_command_mps", c.eval.tracking_command_mps);
    r("episode_length_s", c.eval.episode_length_s);
    r("payload_kg", c.eval.payload_kg);
    r("payloads_kg", c.eval.payloads_kg);
    r("kp_list_nm_per_rad", c.eval.kp_list);
    r("impulses_ns", c.eval.impulses_ns);
    r("impact_duration_s", c.eval.impact_duration_s);
    r("impact_onset_s", c.eval.impact_onset_s);
    r("pull_force_n", c.eval.pull_force_n);
    r("push_force_n", c.eval.push_force_n);
    r("square_wave_amplitude_n", c.eval.square_wave_amplitude_n);
    r("square_wave_segment_s", c.eval.square_wave_segment_s);
    r("square_wave_command_mps", c.eval.square_wave_command_mps);
    r("success_rate_threshold", c.eval.success_rate_threshold);
  }
  {
    Binder r = b.sub("io");
    r("out_dir", c.io.out_dir);
    r("checkpoint_every", c.io.checkpoint_every);
    r("dump_traces", c.io.dump_traces);
  }
}

inline const char* json_kind(const Json& j) {
  if (j.is_object()) return "object";
  if (j.is_array()) return "array";
  if (j.is_string()) return "string";
  if (j.is_boolean()) return "boolean";
  if (j.is_number()) return "number";
  return "null";
}

// Every key of `in` must exist in `ref` with a compatible type.
inline void check_against(const Json& in, const Json& ref, const std::string& path) {
  if (ref.is_object()) {
    if (!in.is_object()) throw ConfigError(path + ": expected object, got " + json_kind(in));
    for (auto it = in.begin(); it != in.end(); ++it) {
      const std::string sub = path.empty() ? it.key() : path + "." + it.key();
      if (!ref.contains(it.key())) throw ConfigError("unknown key '" + sub + "'");
      check_against(it.value(), ref.at(it.key()), sub);
    }
    return;
  }
  if (ref.is_array()) {
    if (!in.is_array()) throw ConfigError(path + ": expected array, got " + json_kind(in));
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (!in[i].is_number()) throw ConfigError(path + ": array entries must be numbers");
      if (!ref.empty()) check_against(in[i], ref[0], path + "[" + std::to_string(i) + "]");
    }
    return;
  }
  const bool ok = (ref.is_number() && in.is_number()) || (ref.is_string() && in.is_string()) ||
                  (ref.is_boolean() && in.is_boolean());
  if (!ok) throw ConfigError(path + ": expected " + json_kind(ref) + ", got " + json_kind(in));
  if (ref.is_number_integer() && !in.is_number_integer()) throw ConfigError(path + ": expected an integer");
  if (ref.is_number_unsigned() && in.is_number_integer() && !in.is_number_unsigned())
    throw ConfigError(path + ": expected a non-negative integer");
}

}  // namespace detail

inline void WorkbenchConfig::validate() const {
  robot.validate();
  contact.validate();
  gains.validate();
  scales.validate();
  observer.validate();
  env.validate();
  reward.validate();
  ppo.validate();
  auto hidden = [](const std::vector<int>& h, const char* name) {
    if (h.empty()) throw ConfigError(std::string(name) + " must list at least one layer");
    for (int n : h)
      if (n < 1) throw ConfigError(std::string(name) + " entries must be >= 1");
  };
  hidden(actor_hidden, "ppo.actor_hidden");
  hidden(critic_hidden, "ppo.critic_hidden");
  hidden(stage2.daac_hidden, "stage2.daac_hidden");
  hidden(stage2.observer_hidden, "stage2.observer_hidden");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0, 1]");
  };
  prob(stage1.disturbance_probability, "stage1.disturbance_probability");
  prob(stage1.payload_probability, "stage1.payload_probability");
  prob(stage2.disturbance_probability, "stage2.disturbance_probability");
  prob(stage2.payload_probability, "stage2.payload_probability");
  prob(eval.success_rate_threshold, "eval.success_rate_threshold");
  if (stage1.iterations < 0 || stage2.iterations < 0) throw ConfigError("stage iterations must be >= 0");
  if (!(stage2.daac_output_gain > 0.0)) throw ConfigError("stage2.daac_output_gain must be > 0");
  if (!(stage2.observer_learning_rate > 0.0) || stage2.observer_epochs < 1 || stage2.observer_minibatches < 1)
    throw ConfigError("stage2 observer optimizer settings are invalid");
  if (stage2.observer_holdout_envs < 1 || stage2.observer_holdout_envs >= ppo.num_envs)
    throw ConfigError("stage2.observer_holdout_envs must lie in [1, ppo.num_envs)");
  if (eval.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  for (std::size_t i = 0; i < eval.seeds.size(); ++i)
    for (std::size_t k = 0; k < i; ++k)
      if (eval.seeds[i] == eval.seeds[k]) throw ConfigError("eval.seeds must be distinct");
  for (std::size_t i = 1; i < eval.payloads_kg.size(); ++i)
    if (eval.payloads_kg[i] < eval.payloads_kg[i - 1]) throw ConfigError("eval.payloads_kg must be ascending");
  if (eval.payload_kg < 0.0) throw ConfigError("eval.payload_kg must be >= 0");
  for (double p : eval.payloads_kg)
    if (p < 0.0) throw ConfigError("eval.payloads_kg entries must be >= 0");
  for (double k : eval.kp_list)
    if (k < 0.0) throw ConfigError("eval.kp_list_nm_per_rad entries must be >= 0");
  if (!(eval.episode_length_s > 0.0) || !(eval.impact_duration_s > 0.0) || !(eval.square_wave_segment_s > 0.0))
    throw ConfigError("eval durations must be > 0");
  if (io.checkpoint_every < 1) throw ConfigError("io.checkpoint_every must be >= 1");
  if (io.out_dir.empty()) throw ConfigError("io.out_dir must not be empty");
}

inline Json to_json(const WorkbenchConfig& c) {
  Json j = Json::object();
  WorkbenchConfig copy = c;
  detail::bind(copy, detail::Binder{&j, true});
  return j;
}

// Canonical text: sorted keys, two-space indent, trailing newline.
inline std::string serialize_config(const WorkbenchConfig& c) { return to_json(c).dump(2) + "\n"; }

inline WorkbenchConfig config_from_json(const Json& in) {
  WorkbenchConfig c;
  Json merged = to_json(c);
  detail::check_against(in, merged, "");
  merged.merge_patch(in);
  try {
    detail::bind(c, detail::Binder{&merged, false});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.observer.sample_period_s = c.env.control_period_s;
  c.validate();
  return c;
}

inline WorkbenchConfig parse_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return config_from_json(j);
}

inline WorkbenchConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_digest(const WorkbenchConfig& c) {
  const std::string s = serialize_config(c);
  return hex64(fnv1a64(s.data(), s.size()));
}

}  // namespace hfplp
