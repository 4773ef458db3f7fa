#pragma once

// Deterministic evaluation: scenarios, per-trial traces, ATE / SR / PD
// metrics, sweeps, observer diagnostics and report export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hfplp/config.hpp"
#include "hfplp/env.hpp"
#include "hfplp/observer.hpp"
#include "hfplp/parallel.hpp"
#include "hfplp/policy.hpp"

namespace hfplp {

enum class ScenarioKind { kNominal, kPayload, kConstantForce, kImpact, kPdMismatch, kSquareWave };

struct Scenario {
  std::string name = "nominal";
  ScenarioKind kind = ScenarioKind::kNominal;
  double command_mps = 1.0;
  double episode_length_s = 10.0;
  double payload_kg = 0.0;
  Vec2 force = Vec2::Zero();        // constant force for the whole episode
  double impulse_ns = 0.0;          // along -x
  double impulse_onset_s = 3.0;
  double impulse_duration_s = 0.1;
  double square_amplitude_n = 0.0;  // 0, +A, -A, +A, 0 in equal segments
  double square_segment_s = 5.0;
  std::optional<ActuatorGains> gains;
  std::vector<std::uint64_t> seeds{101, 102, 103, 104, 105};
  bool use_daac = true;             // false evaluates the HFPLP alone

  void validate() const {
    if (seeds.empty()) throw ConfigError("scenario " + name + ": needs at least one trial seed");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t k = 0; k < i; ++k)
        if (seeds[i] == seeds[k]) throw ConfigError("scenario " + name + ": seeds must be distinct");
    if (!(episode_length_s > 0.0)) throw ConfigError("scenario " + name + ": episode length must be > 0");
    if (payload_kg < 0.0) throw ConfigError("scenario " + name + ": payload must be >= 0");
    if (!(impulse_duration_s > 0.0) || !(square_segment_s > 0.0))
      throw ConfigError("scenario " + name + ": durations must be > 0");
    if (gains) gains->validate();
  }

  ForceSchedule schedule() const {
    ForceSchedule s;
    const double forever = episode_length_s + 1.0;
    if (force.squaredNorm() > 0.0) s.segments.push_back({0.0, forever, force});
    if (impulse_ns != 0.0)
      s.segments.push_back({impulse_onset_s, impulse_duration_s, Vec2(-impulse_ns / impulse_duration_s, 0.0)});
    if (square_amplitude_n != 0.0) {
      const double a = square_amplitude_n, d = square_segment_s;
      s.segments.push_back({d, d, Vec2(a, 0.0)});
      s.segments.push_back({2 * d, d, Vec2(-a, 0.0)});
      s.segments.push_back({3 * d, d, Vec2(a, 0.0)});
    }
    return s;
  }
};

// One control step of a trial.
struct TraceRecord {
  double t = 0.0;
  Vec7 q = Vec7::Zero();
  Vec7 qd = Vec7::Zero();
  Vec4 tau_cmd = Vec4::Zero();
  Vec4 delta_tau = Vec4::Zero();
  Vec7 tau_hat = Vec7::Zero();        // GM observer, nominal model
  Vec2 fext_gm = Vec2::Zero();        // GM base rows minus the contact term
  Vec2 fext_est = Vec2::Zero();       // neural observer
  Vec2 fext_true = Vec2::Zero();
  std::array<Vec2, kNumLegs> f_ee{Vec2::Zero(), Vec2::Zero()};  // J^-T dtau per leg
  std::array<bool, kNumLegs> stance{false, false};
  double reward = 0.0;
  double command = 0.0;
  std::string done = "running";
};

struct TrialResult {
  std::uint64_t seed = 0;
  bool success = false;
  double ate = 0.0;
  double pd = 0.0;
  std::vector<TraceRecord> trace;
};

struct Metrics {
  double ate = 0.0;
  double sr = 0.0;
  double pd = 0.0;
  std::vector<TrialResult> trials;
};

inline double trace_ate(const std::vector<TraceRecord>& tr) {
  if (tr.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : tr) s += std::abs(r.qd[0] - r.command);
  return s / static_cast<double>(tr.size());
}

// Largest |x - command * t| from the start position x = 0.
inline double trace_pd(const std::vector<TraceRecord>& tr) {
  double m = 0.0;
  for (const auto& r : tr) m = std::max(m, std::abs(r.q[0] - r.command * r.t));
  return m;
}

inline Metrics summarize(std::vector<TrialResult> trials) {
  Metrics m;
  if (trials.empty()) return m;
  for (const auto& t : trials) {
    m.ate += t.ate;
    m.pd += t.pd;
    m.sr += t.success ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(trials.size());
  m.ate /= n;
  m.pd /= n;
  m.sr /= n;
  m.trials = std::move(trials);
  return m;
}

inline TrialResult run_trial(const PolicyStack& stack, const WorkbenchConfig& cfg, const Scenario& sc,
                             std::uint64_t seed) {
  EnvParams p = cfg.env_params(0.0, 0.0);
  p.run_gm_observer = true;
  Env env(&p, stack.mode);
  if (sc.gains) env.set_gains(*sc.gains);
  EpisodeSetup setup;
  setup.command_mps = sc.command_mps;
  setup.payload_kg = sc.payload_kg;
  setup.schedule = sc.schedule();
  setup.episode_length_s = sc.episode_length_s;
  Rng rng = make_rng(seed, 0);
  env.reset(setup, rng);

  TrialResult res;
  res.seed = seed;
  const bool daac = sc.use_daac && stack.has_daac();
  const int max_steps = static_cast<int>(std::lround(sc.episode_length_s / p.episode.control_period_s));
  res.trace.reserve(static_cast<std::size_t>(max_steps));
  for (int k = 0; k < max_steps; ++k) {
    const StackActions a = act_deterministic(stack, {&env.history()}, {&env.observation()}, daac);
    const Eigen::VectorXd raw = a.hfplp_raw.col(0).cast<double>();
    std::optional<Vec4> d;
    if (daac) d = Vec4(a.daac_raw.col(0).cast<double>());
    const Vec2 fext_est = a.observer_out.size() ? Vec2(a.observer_out.col(0).tail<2>().cast<double>() * 100.0)
                                                : Vec2::Zero();
    const StepInfo& info = env.step(raw, d);

    TraceRecord r;
    r.t = env.state().t;
    r.q = env.state().q;
    r.qd = env.state().qd;
    r.tau_cmd = info.tau_cmd;
    r.delta_tau = info.delta_tau;
    r.tau_hat = info.gm_estimate;
    r.fext_gm = info.gm_estimate.head<2>() - info.mean_contact[0] - info.mean_contact[1];
    r.fext_est = fext_est;
    r.fext_true = info.applied_force;
    for (int leg = 0; leg < kNumLegs; ++leg) {
      r.stance[leg] = info.mean_contact[leg].y() > 1.0;
      try {
        r.f_ee[leg] = foot_force_from_compensation(info.delta_tau.segment<2>(2 * leg), info.feet.leg_jacobian(leg));
      } catch (const NearSingularJacobian&) {
        r.f_ee[leg].setZero();
      }
    }
    r.reward = info.reward.total;
    r.command = sc.command_mps;
    if (info.done == Termination::kFall) r.done = "fall";
    if (info.done == Termination::kTimeout) r.done = "timeout";
    if (!r.q.allFinite() || !r.qd.allFinite()) {
      r.q.setZero();
      r.qd.setZero();
      r.done = "fall";
    }
    res.trace.push_back(r);
    if (info.done != Termination::kRunning || r.done == "fall") break;
  }
  res.success = !res.trace.empty() && res.trace.back().done == "timeout";
  res.ate = trace_ate(res.trace);
  res.pd = trace_pd(res.trace);
  return res;
}

inline Metrics run_scenario(const PolicyStack& stack, const WorkbenchConfig& cfg, const Scenario& sc) {
  sc.validate();
  std::vector<TrialResult> trials(sc.seeds.size());
  parallel_for(static_cast<int>(sc.seeds.size()),
               [&](int i) { trials[static_cast<std::size_t>(i)] = run_trial(stack, cfg, sc, sc.seeds[i]); });
  return summarize(std::move(trials));
}

// ---------------------------------------------------------------------------
// Named scenarios

inline Scenario base_scenario(const WorkbenchConfig& cfg, const std::string& name, std::optional<int> trials) {
  Scenario s;
  s.name = name;
  s.command_mps = cfg.eval.command_mps;
  s.episode_length_s = cfg.eval.episode_length_s;
  s.seeds = cfg.eval.seeds;
  s.impulse_duration_s = cfg.eval.impact_duration_s;
  s.impulse_onset_s = cfg.eval.impact_onset_s;
  if (trials) {
    if (*trials < 1) throw ConfigError("--trials must be >= 1");
    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < *trials; ++i)
      seeds.push_back(i < static_cast<int>(cfg.eval.seeds.size()) ? cfg.eval.seeds[i]
                                                                   : cfg.eval.seeds.back() + 1000u + i);
    s.seeds = seeds;
  }
  return s;
}

inline Scenario named_scenario(const WorkbenchConfig& cfg, const std::string& name, std::optional<int> trials = {}) {
  Scenario s = base_scenario(cfg, name, trials);
  if (name == "nominal") return s;
  if (name == "tracking") {
    s.command_mps = cfg.eval.tracking_command_mps;
    return s;
  }
  if (name == "payload") {
    s.kind = ScenarioKind::kPayload;
    s.payload_kg = cfg.eval.payload_kg;
    return s;
  }
  if (name == "constant-pull") {
    s.kind = ScenarioKind::kConstantForce;
    s.force = Vec2(-cfg.eval.pull_force_n, 0.0);
    return s;
  }
  if (name == "push") {
    s.kind = ScenarioKind::kConstantForce;
    s.force = Vec2(cfg.eval.push_force_n, 0.0);
    return s;
  }
  if (name == "impact") {
    s.kind = ScenarioKind::kImpact;
    s.impulse_ns = cfg.eval.impulses_ns.empty() ? 0.0 : cfg.eval.impulses_ns.back();
    return s;
  }
  if (name == "pd-mismatch") {
    s.kind = ScenarioKind::kPdMismatch;
    s.gains = ActuatorGains{cfg.eval.kp_list.empty() ? cfg.gains.kp : cfg.eval.kp_list.front(), cfg.gains.kd};
    return s;
  }
  if (name == "square-wave") {
    s.kind = ScenarioKind::kSquareWave;
    s.command_mps = cfg.eval.square_wave_command_mps;
    s.square_amplitude_n = cfg.eval.square_wave_amplitude_n;
    s.square_segment_s = cfg.eval.square_wave_segment_s;
    s.episode_length_s = 5.0 * cfg.eval.square_wave_segment_s;
    return s;
  }
  throw ConfigError("unknown scenario '" + name + "'");
}

inline std::string evaluation_names_help() {
  return "nominal | tracking | payload | constant-pull | push | impact | pd-mismatch | square-wave | "
         "payload-sweep | pd-mismatch-sweep | impact-sweep";
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::vector<std::string> columns;  // first column holds a text label
  std::vector<std::string> labels;
  std::vector<std::vector<double>> rows;

  void add(const std::string& label, std::vector<double> values) {
    if (values.size() + 1 != columns.size()) throw ShapeMismatch("table row width does not match header");
    labels.push_back(label);
    rows.push_back(std::move(values));
  }
};

inline Table metrics_table() { return Table{{"scenario", "parameter", "trials", "sr", "ate_mps", "pd_m"}, {}, {}}; }

inline void add_metrics_row(Table& t, const std::string& label, double parameter, const Metrics& m) {
  t.add(label, {parameter, static_cast<double>(m.trials.size()), m.sr, m.ate, m.pd});
}

struct SweepPoint {
  double parameter = 0.0;
  Metrics metrics;
};

inline std::vector<SweepPoint> payload_sweep(const PolicyStack& stack, const WorkbenchConfig& cfg, Scenario base,
                                             const std::vector<double>& payloads) {
  for (std::size_t i = 1; i < payloads.size(); ++i)
    if (payloads[i] < payloads[i - 1]) throw ConfigError("payload list must be ascending");
  std::vector<SweepPoint> out;
  for (double p : payloads) {
    Scenario s = base;
    s.kind = ScenarioKind::kPayload;
    s.payload_kg = p;
    out.push_back({p, run_scenario(stack, cfg, s)});
  }
  return out;
}

inline std::vector<SweepPoint> pd_mismatch_sweep(const PolicyStack& stack, const WorkbenchConfig& cfg, Scenario base,
                                                 const std::vector<double>& kps) {
  std::vector<SweepPoint> out;
  for (double kp : kps) {
    Scenario s = base;
    s.kind = ScenarioKind::kPdMismatch;
    s.gains = ActuatorGains{kp, cfg.gains.kd};
    out.push_back({kp, run_scenario(stack, cfg, s)});
  }
  return out;
}

inline std::vector<SweepPoint> impact_sweep(const PolicyStack& stack, const WorkbenchConfig& cfg, Scenario base,
                                            const std::vector<double>& impulses) {
  std::vector<SweepPoint> out;
  for (double j : impulses) {
    Scenario s = base;
    s.kind = ScenarioKind::kImpact;
    s.impulse_ns = j;
    out.push_back({j, run_scenario(stack, cfg, s)});
  }
  return out;
}

// Largest sweep parameter whose success rate reaches the threshold, or -1.
inline double max_passing_parameter(const std::vector<SweepPoint>& sweep, double threshold) {
  double best = -1.0;
  for (const auto& p : sweep)
    if (p.metrics.sr >= threshold) best = std::max(best, p.parameter);
  return best;
}

// ---------------------------------------------------------------------------
// Observer diagnostics

struct ObserverDiagnostics {
  double correlation_x = 0.0;          // true vs neural estimate, x component
  double gm_correlation_x = 0.0;       // true vs GM base estimate
  double quiet_mean_abs_estimate = 0.0;  // mean |F_ext_est| where F_ext = 0
  double opposing_fraction = 0.0;      // reaction of stance-summed F_ee against F_ext
  int disturbed_stance_frames = 0;
  int frames = 0;
};

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  if (n < 2 || b.size() != n) return 0.0;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline ObserverDiagnostics observer_diagnostics(const std::vector<TraceRecord>& trace) {
  ObserverDiagnostics d;
  std::vector<double> truth, est, gm;
  double quiet = 0.0;
  int quiet_n = 0, oppose = 0;
  for (const auto& r : trace) {
    truth.push_back(r.fext_true.x());
    est.push_back(r.fext_est.x());
    gm.push_back(r.fext_gm.x());
    if (r.fext_true.squaredNorm() == 0.0) {
      quiet += r.fext_est.norm();
      ++quiet_n;
      continue;
    }
    if (r.fext_true.x() == 0.0 || (!r.stance[0] && !r.stance[1])) continue;
    double sum_x = 0.0;
    for (int leg = 0; leg < kNumLegs; ++leg)
      if (r.stance[leg]) sum_x += r.f_ee[leg].x();
    ++d.disturbed_stance_frames;
    if (-sum_x * r.fext_true.x() < 0.0) ++oppose;
  }
  d.frames = static_cast<int>(trace.size());
  d.correlation_x = pearson(truth, est);
  d.gm_correlation_x = pearson(truth, gm);
  d.quiet_mean_abs_estimate = quiet_n ? quiet / quiet_n : 0.0;
  d.opposing_fraction = d.disturbed_stance_frames ? static_cast<double>(oppose) / d.disturbed_stance_frames : 0.0;
  return d;
}

inline Table diagnostics_table() {
  return Table{{"scenario", "seed", "frames", "corr_fx", "gm_corr_fx", "quiet_mean_abs_est_n", "opposing_fraction",
                "disturbed_stance_frames", "success"},
               {},
               {}};
}

// ---------------------------------------------------------------------------
// Named evaluations and export

struct EvalRequest {
  std::string name;
  std::optional<int> trials;
};

struct EvalOutput {
  Table table;
  std::vector<std::pair<std::string, TrialResult>> traces;  // (label, trial)
};

inline void append_traces(EvalOutput& out, const std::string& label, const Metrics& m) {
  for (const auto& t : m.trials) out.traces.push_back({label, t});
}

inline EvalOutput run_named_evaluation(const PolicyStack& stack, const WorkbenchConfig& cfg, const EvalRequest& req) {
  EvalOutput out;
  out.table = metrics_table();
  const std::string& name = req.name;
  if (name == "payload-sweep" || name == "pd-mismatch-sweep" || name == "impact-sweep") {
    const Scenario base = base_scenario(cfg, name, req.trials);
    std::vector<SweepPoint> sweep;
    std::string param;
    if (name == "payload-sweep") {
      sweep = payload_sweep(stack, cfg, base, cfg.eval.payloads_kg);
      param = "payload_kg";
    } else if (name == "pd-mismatch-sweep") {
      sweep = pd_mismatch_sweep(stack, cfg, base, cfg.eval.kp_list);
      param = "kp";
    } else {
      sweep = impact_sweep(stack, cfg, base, cfg.eval.impulses_ns);
      param = "impulse_ns";
    }
    for (const auto& p : sweep) {
      char label[64];
      std::snprintf(label, sizeof label, "%s=%g", param.c_str(), p.parameter);
      add_metrics_row(out.table, label, p.parameter, p.metrics);
      append_traces(out, label, p.metrics);
    }
    return out;
  }
  const Scenario sc = named_scenario(cfg, name, req.trials);
  const Metrics m = run_scenario(stack, cfg, sc);
  if (sc.kind == ScenarioKind::kSquareWave) {
    out.table = diagnostics_table();
    for (const auto& t : m.trials) {
      const ObserverDiagnostics d = observer_diagnostics(t.trace);
      out.table.add(name, {static_cast<double>(t.seed), static_cast<double>(d.frames), d.correlation_x,
                           d.gm_correlation_x, d.quiet_mean_abs_estimate, d.opposing_fraction,
                           static_cast<double>(d.disturbed_stance_frames), t.success ? 1.0 : 0.0});
    }
  } else {
    double parameter = 0.0;
    if (sc.kind == ScenarioKind::kPayload) parameter = sc.payload_kg;
    if (sc.kind == ScenarioKind::kConstantForce) parameter = sc.force.x();
    if (sc.kind == ScenarioKind::kImpact) parameter = sc.impulse_ns;
    if (sc.kind == ScenarioKind::kPdMismatch) parameter = sc.gains->kp;
    if (sc.kind == ScenarioKind::kNominal) parameter = sc.command_mps;
    add_metrics_row(out.table, name, parameter, m);
  }
  append_traces(out, name, m);
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string table_csv(const Table& t) {
  std::string s;
  for (std::size_t i = 0; i < t.columns.size(); ++i) s += (i ? "," : "") + t.columns[i];
  s += "\n";
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    s += t.labels[r];
    for (double v : t.rows[r]) s += "," + format_double(v);
    s += "\n";
  }
  return s;
}

inline Table parse_table_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw CorruptFile("table has no header line");
  {
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) t.columns.push_back(cell);
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string label, cell;
    std::getline(ls, label, ',');
    std::vector<double> values;
    while (std::getline(ls, cell, ',')) values.push_back(std::strtod(cell.c_str(), nullptr));
    if (values.size() + 1 != t.columns.size()) throw CorruptFile("table row width does not match header");
    t.labels.push_back(label);
    t.rows.push_back(std::move(values));
  }
  return t;
}

inline Json trace_record_json(const TraceRecord& r) {
  auto vec = [](const auto& v) {
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = v[i];
    return out;
  };
  Json j;
  j["t"] = r.t;
  j["q"] = vec(r.q);
  j["qd"] = vec(r.qd);
  j["tau_cmd"] = vec(r.tau_cmd);
  j["delta_tau"] = vec(r.delta_tau);
  j["tau_hat"] = vec(r.tau_hat);
  j["fext_gm"] = vec(r.fext_gm);
  j["fext_est"] = vec(r.fext_est);
  j["fext_true"] = vec(r.fext_true);
  j["f_ee"] = {vec(r.f_ee[0]), vec(r.f_ee[1])};
  j["stance"] = {r.stance[0], r.stance[1]};
  j["reward"] = r.reward;
  j["command"] = r.command;
  j["done"] = r.done;
  return j;
}

inline std::vector<TraceRecord> parse_trace_jsonl(const std::string& text) {
  std::vector<TraceRecord> out;
  std::istringstream in(text);
  std::string line;
  auto fill = [](const Json& a, auto& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = a.at(static_cast<std::size_t>(i)).get<double>();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    TraceRecord r;
    r.t = j.at("t").get<double>();
    fill(j.at("q"), r.q);
    fill(j.at("qd"), r.qd);
    fill(j.at("tau_cmd"), r.tau_cmd);
    fill(j.at("delta_tau"), r.delta_tau);
    fill(j.at("tau_hat"), r.tau_hat);
    fill(j.at("fext_gm"), r.fext_gm);
    fill(j.at("fext_est"), r.fext_est);
    fill(j.at("fext_true"), r.fext_true);
    fill(j.at("f_ee").at(0), r.f_ee[0]);
    fill(j.at("f_ee").at(1), r.f_ee[1]);
    r.stance = {j.at("stance").at(0).get<bool>(), j.at("stance").at(1).get<bool>()};
    r.reward = j.at("reward").get<double>();
    r.command = j.at("command").get<double>();
    r.done = j.at("done").get<std::string>();
    out.push_back(r);
  }
  return out;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw IoError("short write to '" + p.string() + "'");
}

// <dir>/<name>.csv plus <dir>/<name>_traces/<label>_seed<seed>.jsonl
inline void export_report(const EvalOutput& out, const std::string& dir, const std::string& name, bool traces = true) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  write_text(std::filesystem::path(dir) / (name + ".csv"), table_csv(out.table));
  if (!traces) return;
  const std::filesystem::path tdir = std::filesystem::path(dir) / (name + "_traces");
  std::filesystem::create_directories(tdir, ec);
  if (ec) throw IoError("cannot create '" + tdir.string() + "': " + ec.message());
  for (const auto& [label, trial] : out.traces) {
    std::string text;
    for (const auto& r : trial.trace) text += trace_record_json(r).dump() + "\n";
    write_text(tdir / (label + "_seed" + std::to_string(trial.seed) + ".jsonl"), text);
  }
}

}  // namespace hfplp
