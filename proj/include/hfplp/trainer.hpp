#pragma once

// Two-stage training. Stage 1 trains the HFPLP actor (or the position-only
// baseline) with a privileged critic. Stage 2 freezes it and trains the
// DAAC actor/critic by PPO while the neural observer is fit by supervised
// regression on the same rollouts.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hfplp/checkpoint.hpp"
#include "hfplp/config.hpp"
#include "hfplp/env.hpp"
#include "hfplp/policy.hpp"
#include "hfplp/ppo.hpp"

namespace hfplp {

enum class TrainStage { kHfplp, kBaselinePosition, kDaac, kDaacNoObserver };

inline const char* stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::kHfplp: return "hfplp";
    case TrainStage::kBaselinePosition: return "baseline-position";
    case TrainStage::kDaac: return "daac";
    case TrainStage::kDaacNoObserver: return "daac-no-observer";
  }
  return "?";
}

inline TrainStage parse_stage(const std::string& s) {
  if (s == "hfplp") return TrainStage::kHfplp;
  if (s == "baseline-position") return TrainStage::kBaselinePosition;
  if (s == "daac") return TrainStage::kDaac;
  if (s == "daac-no-observer") return TrainStage::kDaacNoObserver;
  throw ConfigError("unknown training stage '" + s + "'");
}

inline bool is_stage2(TrainStage s) { return s == TrainStage::kDaac || s == TrainStage::kDaacNoObserver; }

struct TrainOptions {
  TrainStage stage = TrainStage::kHfplp;
  std::string out_dir;
  std::optional<int> iterations;            // overrides the stage config
  std::optional<std::string> resume;        // checkpoint of the same stage
  std::optional<std::string> stage1_checkpoint;
  bool quiet = true;
};

struct TrainResult {
  std::string checkpoint_path;
  std::string log_path;
  int iterations = 0;
  PolicyStack stack;
};

inline std::string checkpoint_path(const std::string& out_dir, TrainStage s) {
  return (std::filesystem::path(out_dir) / (std::string(stage_name(s)) + ".ckpt")).string();
}
inline std::string log_path(const std::string& out_dir, TrainStage s) {
  return (std::filesystem::path(out_dir) / (std::string(stage_name(s)) + ".log.jsonl")).string();
}
inline std::string timing_path(const std::string& out_dir, TrainStage s) {
  return (std::filesystem::path(out_dir) / (std::string(stage_name(s)) + ".timing.jsonl")).string();
}

namespace detail {

struct Rollout {
  int T = 0, N = 0;
  nn::Matrix actor_obs, critic_obs, actions;
  Eigen::RowVectorXf log_prob;
  Eigen::MatrixXd rewards, values, dones;
  Eigen::RowVectorXd bootstrap;

  double reward_sum = 0.0;
  std::array<double, RewardBreakdown::kTerms> term_sums{};
  std::vector<double> episode_returns;
  int falls = 0;
  int blowups = 0;

  void allocate(int t, int n, int actor_dim, int critic_dim, int act_dim) {
    T = t;
    N = n;
    actor_obs.resize(actor_dim, t * n);
    critic_obs.resize(critic_dim, t * n);
    actions.resize(act_dim, t * n);
    log_prob.resize(t * n);
    rewards.setZero(t, n);
    values.setZero(t, n);
    dones.setZero(t, n);
    bootstrap.setZero(n);
  }

  PpoBatch to_batch(const PpoConfig& cfg) const {
    const GaeResult g = compute_gae(rewards, values, dones, bootstrap, cfg.discount, cfg.gae_lambda);
    PpoBatch b{actor_obs, critic_obs, actions, log_prob, Eigen::RowVectorXf(T * N), Eigen::RowVectorXf(T * N)};
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) {
        b.advantages[t * N + n] = static_cast<float>(g.advantages(t, n));
        b.returns[t * N + n] = static_cast<float>(g.returns(t, n));
      }
    return b;
  }
};

struct EnvViews {
  std::vector<const HistoryVec*> hist;
  std::vector<const ObsVec*> obs;
  std::vector<PrivVec> priv_store;
  std::vector<const PrivVec*> priv;

  explicit EnvViews(const VecEnv& v) {
    const int n = v.size();
    priv_store.resize(n);
    for (int i = 0; i < n; ++i) {
      hist.push_back(&v.env(i).history());
      obs.push_back(&v.env(i).observation());
      priv_store[i] = v.env(i).privileged();
    }
    for (int i = 0; i < n; ++i) priv.push_back(&priv_store[i]);
  }
};

// Scaled rewards, done flags and stats; timeouts bootstrap from the critic
// evaluated on the pre-reset observation.
template <class FinalCriticInput>
void record_outcomes(Rollout& r, int t, const std::vector<VecEnv::Outcome>& out, const PpoConfig& cfg,
                     const nn::DenseNet& critic, FinalCriticInput&& final_input) {
  std::vector<int> timeouts;
  for (int n = 0; n < r.N; ++n) {
    const auto& o = out[n];
    r.rewards(t, n) = o.reward * cfg.reward_scale;
    r.reward_sum += o.reward;
    const auto terms = o.info.reward.terms();
    for (int k = 0; k < RewardBreakdown::kTerms; ++k) r.term_sums[k] += terms[k];
    if (o.done != Termination::kRunning) {
      r.dones(t, n) = 1.0;
      r.episode_returns.push_back(o.episode_return);
      if (o.done == Termination::kFall) ++r.falls;
      if (o.info.blowup) ++r.blowups;
      if (o.done == Termination::kTimeout) timeouts.push_back(n);
    }
  }
  if (timeouts.empty()) return;
  const nn::Matrix x = final_input(timeouts);
  const nn::Matrix v = critic.forward(x);
  for (std::size_t k = 0; k < timeouts.size(); ++k)
    r.rewards(t, timeouts[k]) += cfg.discount * static_cast<double>(v(0, static_cast<Eigen::Index>(k)));
}

inline Json iteration_record(int iteration, const Rollout& r, const PpoStats& s) {
  const double steps = static_cast<double>(r.T) * r.N;
  Json j;
  j["iteration"] = iteration;
  j["mean_reward"] = r.reward_sum / steps;
  if (r.episode_returns.empty()) {
    j["mean_episode_return"] = nullptr;
  } else {
    double sum = 0.0;
    for (double v : r.episode_returns) sum += v;
    j["mean_episode_return"] = sum / static_cast<double>(r.episode_returns.size());
  }
  j["episodes"] = r.episode_returns.size();
  j["falls"] = r.falls;
  j["blowups"] = r.blowups;
  Json terms = Json::object();
  const auto names = RewardBreakdown::names();
  for (int k = 0; k < RewardBreakdown::kTerms; ++k) terms[names[k]] = r.term_sums[k] / steps;
  j["reward_terms"] = terms;
  j["policy_loss"] = s.policy_loss;
  j["value_loss"] = s.value_loss;
  j["entropy"] = s.entropy;
  j["approx_kl"] = s.approx_kl;
  j["clip_fraction"] = s.clip_fraction;
  j["grad_norm"] = s.grad_norm;
  j["initial_ratio_error"] = s.initial_ratio_error;
  return j;
}

class RunLogger {
 public:
  RunLogger(const std::string& log, const std::string& timing, bool append) {
    const auto mode = append ? std::ios::app : std::ios::trunc;
    log_.open(log, std::ios::binary | mode);
    timing_.open(timing, std::ios::binary | mode);
    if (!log_) throw IoError("cannot open log '" + log + "'");
    if (!timing_) throw IoError("cannot open timing log '" + timing + "'");
    start_ = std::chrono::steady_clock::now();
  }

  // Wall time goes to the sidecar so the main log is reproducible.
  void write(const Json& rec) {
    log_ << rec.dump() << "\n";
    log_.flush();
    Json t;
    t["iteration"] = rec.at("iteration");
    t["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    timing_ << t.dump() << "\n";
    timing_.flush();
  }

 private:
  std::ofstream log_, timing_;
  std::chrono::steady_clock::time_point start_;
};

inline std::uint64_t iteration_seed(std::uint64_t seed, int start_iteration) {
  return seed + 0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(start_iteration);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1

inline TrainResult train_stage1(WorkbenchConfig cfg, const TrainOptions& opt) {
  if (is_stage2(opt.stage)) throw ConfigError("train_stage1 called with a stage-2 stage");
  cfg.observer.sample_period_s = cfg.env.control_period_s;
  cfg.validate();
  const ActionMode mode = opt.stage == TrainStage::kHfplp ? ActionMode::kHybrid : ActionMode::kPositionOnly;
  const int total = opt.iterations.value_or(cfg.stage1.iterations);
  std::filesystem::create_directories(opt.out_dir);

  PolicyStack stack;
  int start = 0;
  if (opt.resume) {
    Checkpoint ck = load_checkpoint(*opt.resume, &cfg);
    if (ck.info.stage != stage_name(opt.stage))
      throw ConfigError("resume checkpoint is from stage '" + ck.info.stage + "'");
    if (ck.info.config_digest != config_digest(cfg))
      throw ConfigError("resume checkpoint was trained with a different config");
    stack = std::move(ck.stack);
    start = ck.info.iteration;
  } else {
    Rng init = make_rng(cfg.seed, 0x494e4954);
    stack = make_stage1_stack(cfg, mode, init);
  }

  const EnvParams ep = cfg.env_params(cfg.stage1.disturbance_probability, cfg.stage1.payload_probability);
  const int N = cfg.ppo.num_envs, T = cfg.ppo.horizon;
  VecEnv venv(ep, mode, N, detail::iteration_seed(cfg.seed, start));
  venv.reset_all();
  Rng rng = make_rng(detail::iteration_seed(cfg.seed, start), 0x50504f);
  PpoLearner learner(stack.hfplp, cfg.ppo);
  const std::string ckpt = checkpoint_path(opt.out_dir, opt.stage);
  detail::RunLogger logger(log_path(opt.out_dir, opt.stage), timing_path(opt.out_dir, opt.stage), opt.resume.has_value());
  const int adim = action_dim(mode);

  for (int it = start; it < total; ++it) {
    detail::Rollout r;
    r.allocate(T, N, obs::kHistoryDim, kCriticObsDim, adim);
    for (int t = 0; t < T; ++t) {
      const detail::EnvViews views(venv);
      const nn::Matrix xa = actor_input(stack, views.hist);
      const nn::Matrix xc = stack_rows(obs_input(stack, views.obs), priv_input(views.priv));
      const nn::Matrix mean = stack.hfplp.actor.forward(xa);
      const nn::Matrix act = stack.hfplp.head.sample(mean, rng);
      const Eigen::RowVectorXf lp = stack.hfplp.head.log_prob(mean, act);
      const nn::Matrix v = stack.hfplp.critic.forward(xc);
      r.actor_obs.middleCols(t * N, N) = xa;
      r.critic_obs.middleCols(t * N, N) = xc;
      r.actions.middleCols(t * N, N) = act;
      r.log_prob.segment(t * N, N) = lp;
      r.values.row(t) = v.row(0).cast<double>();

      const auto out = venv.step(act.cast<double>());
      detail::record_outcomes(r, t, out, cfg.ppo, stack.hfplp.critic, [&](const std::vector<int>& idx) {
        std::vector<const ObsVec*> o;
        std::vector<const PrivVec*> p;
        for (int n : idx) {
          o.push_back(&out[n].final_obs);
          p.push_back(&out[n].final_priv);
        }
        return stack_rows(obs_input(stack, o), priv_input(p));
      });
    }
    {
      const detail::EnvViews views(venv);
      const nn::Matrix xc = stack_rows(obs_input(stack, views.obs), priv_input(views.priv));
      r.bootstrap = stack.hfplp.critic.forward(xc).row(0).cast<double>();
    }
    const PpoStats stats = learner.update(r.to_batch(cfg.ppo), rng);
    Json rec = detail::iteration_record(it + 1, r, stats);
    logger.write(rec);
    if ((it + 1) % cfg.io.checkpoint_every == 0 || it + 1 == total)
      save_checkpoint(ckpt, stack, cfg, stage_name(opt.stage), it + 1);
  }
  if (start >= total) save_checkpoint(ckpt, stack, cfg, stage_name(opt.stage), start);
  return {ckpt, log_path(opt.out_dir, opt.stage), total, std::move(stack)};
}

// ---------------------------------------------------------------------------
// Stage 2

struct ObserverBatch {
  nn::Matrix history_in;  // 120 x S
  nn::Matrix obs_in;      // 24 x S
  nn::Matrix targets;     // 9 x S, normalized
};

// Mean squared error over all normalized outputs, and over F_ext only.
inline std::pair<double, double> observer_mse(const NeuralObserver& ob, const ObserverBatch& b) {
  if (b.targets.cols() == 0) return {0.0, 0.0};
  const nn::Matrix out = ob.forward_normalized(b.history_in, b.obs_in);
  const nn::Matrix e = out - b.targets;
  const double all = static_cast<double>(e.squaredNorm()) / static_cast<double>(e.size());
  const double fext = static_cast<double>(e.bottomRows(2).squaredNorm()) / static_cast<double>(2 * e.cols());
  return {all, fext};
}

// Minibatched MSE regression; the F_ext loss also trains the first net.
template <class Rng>
double train_observer(NeuralObserver& ob, nn::Adam& adam, const ObserverBatch& b, int epochs, int minibatches,
                      Rng& rng) {
  const Eigen::Index S = b.targets.cols();
  if (S == 0) return 0.0;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  double loss_sum = 0.0;
  int count = 0;
  const Eigen::Index mb = std::max<Eigen::Index>(1, S / minibatches);
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (int k = 0; k < minibatches; ++k) {
      const Eigen::Index lo = k * mb, hi = k + 1 == minibatches ? S : lo + mb;
      if (hi <= lo) continue;
      const Eigen::Index B = hi - lo;
      nn::Matrix xh(obs::kHistoryDim, B), xo(obs::kDim, B), y(kObserverStage1Out + 2, B);
      for (Eigen::Index j = 0; j < B; ++j) {
        const Eigen::Index c = order[static_cast<std::size_t>(lo + j)];
        xh.col(j) = b.history_in.col(c);
        xo.col(j) = b.obs_in.col(c);
        y.col(j) = b.targets.col(c);
      }
      nn::ForwardCache c1, c2;
      const nn::Matrix out = ob.forward_normalized(xh, xo, &c1, &c2);
      const nn::Matrix err = out - y;
      loss_sum += static_cast<double>(err.squaredNorm()) / static_cast<double>(err.size());
      ++count;
      const nn::Matrix dout = (2.0f / static_cast<float>(err.size())) * err;
      nn::DenseGrads g1, g2;
      const nn::Matrix dx2 = ob.force_net.backward(c2, dout.bottomRows(2), g2);
      const nn::Matrix ds1 = dout.topRows(kObserverStage1Out) + dx2.bottomRows(kObserverStage1Out);
      ob.accel_contact_net.backward(c1, ds1, g1);
      std::vector<nn::ParamBlock> params;
      nn::append_params(ob.accel_contact_net, g1, params);
      nn::append_params(ob.force_net, g2, params);
      const double gn = nn::clip_grad_norm(params, 1.0);
      if (!std::isfinite(gn)) throw NonFiniteLoss("observer regression produced a non-finite gradient");
      adam.step(params);
    }
  }
  return count ? loss_sum / count : 0.0;
}

inline TrainResult train_stage2(WorkbenchConfig cfg, const TrainOptions& opt) {
  if (!is_stage2(opt.stage)) throw ConfigError("train_stage2 called with a stage-1 stage");
  cfg.observer.sample_period_s = cfg.env.control_period_s;
  cfg.validate();
  const bool uses_observer = opt.stage == TrainStage::kDaac;
  const int total = opt.iterations.value_or(cfg.stage2.iterations);
  std::filesystem::create_directories(opt.out_dir);

  PolicyStack stack;
  int start = 0;
  if (opt.resume) {
    Checkpoint ck = load_checkpoint(*opt.resume, &cfg);
    if (ck.info.stage != stage_name(opt.stage))
      throw ConfigError("resume checkpoint is from stage '" + ck.info.stage + "'");
    if (ck.info.config_digest != config_digest(cfg))
      throw ConfigError("resume checkpoint was trained with a different config");
    stack = std::move(ck.stack);
    start = ck.info.iteration;
  } else {
    if (!opt.stage1_checkpoint) throw MissingInput("stage 2 needs a stage-1 checkpoint (--stage1)");
    if (!std::filesystem::exists(*opt.stage1_checkpoint))
      throw MissingInput("stage-1 checkpoint '" + *opt.stage1_checkpoint + "' does not exist");
    Checkpoint s1 = load_checkpoint(*opt.stage1_checkpoint, &cfg);
    if (s1.info.mode != ActionMode::kHybrid || s1.info.has_stage2)
      throw ConfigError("'" + *opt.stage1_checkpoint + "' is not a hybrid stage-1 checkpoint");
    stack = std::move(s1.stack);
    Rng init = make_rng(cfg.seed, 0x44414143);
    add_stage2(stack, cfg, uses_observer, init);
  }
  stack.daac_uses_observer = uses_observer;
  stack.hfplp_frozen = true;
  const std::uint64_t frozen = hfplp_checksum(stack);

  EnvParams ep = cfg.env_params(cfg.stage2.disturbance_probability, cfg.stage2.payload_probability);
  const int N = cfg.ppo.num_envs, T = cfg.ppo.horizon;
  const int holdout = cfg.stage2.observer_holdout_envs;
  VecEnv venv(ep, ActionMode::kHybrid, N, detail::iteration_seed(cfg.seed, start) ^ 0x5354414745320000ull);
  venv.reset_all();
  Rng rng = make_rng(detail::iteration_seed(cfg.seed, start), 0x44414143);
  Rng obs_rng = make_rng(detail::iteration_seed(cfg.seed, start), 0x4f4253);
  ActorCritic& daac = *stack.daac;
  NeuralObserver& ob = *stack.observer;
  PpoLearner learner(daac, cfg.ppo);
  nn::Adam obs_adam(nn::AdamConfig{static_cast<float>(cfg.stage2.observer_learning_rate)});
  const std::string ckpt = checkpoint_path(opt.out_dir, opt.stage);
  detail::RunLogger logger(log_path(opt.out_dir, opt.stage), timing_path(opt.out_dir, opt.stage), opt.resume.has_value());
  const ObserverTargetVec target_scale = observer_target_scale();

  for (int it = start; it < total; ++it) {
    detail::Rollout r;
    r.allocate(T, N, kDaacObsDim, kDaacCriticObsDim, kDaacActionDim);
    const Eigen::Index train_cols = static_cast<Eigen::Index>(T) * (N - holdout);
    ObserverBatch train{nn::Matrix(obs::kHistoryDim, train_cols), nn::Matrix(obs::kDim, train_cols),
                        nn::Matrix(kObserverStage1Out + 2, train_cols)};
    ObserverBatch val{nn::Matrix(obs::kHistoryDim, T * holdout), nn::Matrix(obs::kDim, T * holdout),
                      nn::Matrix(kObserverStage1Out + 2, T * holdout)};
    Eigen::Index n_train = 0, n_val = 0;

    for (int t = 0; t < T; ++t) {
      const detail::EnvViews views(venv);
      const nn::Matrix xh = actor_input(stack, views.hist);
      const nn::Matrix xo = obs_input(stack, views.obs);
      const nn::Matrix a_hfp = stack.hfplp.actor.forward(xh);
      const nn::Matrix fext = uses_observer ? nn::Matrix(ob.forward_normalized(xh, xo).bottomRows(2))
                                            : nn::Matrix::Zero(2, N);
      const nn::Matrix xd = daac_actor_input(xo, fext, a_hfp);
      const nn::Matrix xc = stack_rows(xd, priv_input(views.priv));
      const nn::Matrix mean = daac.actor.forward(xd);
      const nn::Matrix act = daac.head.sample(mean, rng);
      const Eigen::RowVectorXf lp = daac.head.log_prob(mean, act);
      const nn::Matrix v = daac.critic.forward(xc);
      r.actor_obs.middleCols(t * N, N) = xd;
      r.critic_obs.middleCols(t * N, N) = xc;
      r.actions.middleCols(t * N, N) = act;
      r.log_prob.segment(t * N, N) = lp;
      r.values.row(t) = v.row(0).cast<double>();

      const Eigen::MatrixXd daac_raw = act.cast<double>();
      const auto out = venv.step(a_hfp.cast<double>(), &daac_raw);

      // Observer supervision: post-step history against the targets of the
      // period that just ended.
      for (int n = 0; n < N; ++n) {
        const auto& o = out[n];
        if (o.info.blowup) continue;
        ObserverBatch& dst = n >= N - holdout ? val : train;
        Eigen::Index& col = n >= N - holdout ? n_val : n_train;
        stack.normalizer.apply_history(o.final_history, dst.history_in.col(col));
        stack.normalizer.apply(o.final_obs, dst.obs_in.col(col));
        dst.targets.col(col) = o.info.targets.stacked().cwiseQuotient(target_scale).cast<float>();
        ++col;
      }

      detail::record_outcomes(r, t, out, cfg.ppo, daac.critic, [&](const std::vector<int>& idx) {
        std::vector<const HistoryVec*> h;
        std::vector<const ObsVec*> o;
        std::vector<const PrivVec*> p;
        for (int n : idx) {
          h.push_back(&out[n].final_history);
          o.push_back(&out[n].final_obs);
          p.push_back(&out[n].final_priv);
        }
        const nn::Matrix fh = actor_input(stack, h);
        const nn::Matrix fo = obs_input(stack, o);
        const nn::Matrix fa = stack.hfplp.actor.forward(fh);
        const nn::Matrix ff = uses_observer ? nn::Matrix(ob.forward_normalized(fh, fo).bottomRows(2))
                                            : nn::Matrix::Zero(2, fo.cols());
        return stack_rows(daac_actor_input(fo, ff, fa), priv_input(p));
      });
    }
    {
      const detail::EnvViews views(venv);
      const nn::Matrix xh = actor_input(stack, views.hist);
      const nn::Matrix xo = obs_input(stack, views.obs);
      const nn::Matrix a_hfp = stack.hfplp.actor.forward(xh);
      const nn::Matrix fext = uses_observer ? nn::Matrix(ob.forward_normalized(xh, xo).bottomRows(2))
                                            : nn::Matrix::Zero(2, N);
      const nn::Matrix xc = stack_rows(daac_actor_input(xo, fext, a_hfp), priv_input(views.priv));
      r.bootstrap = daac.critic.forward(xc).row(0).cast<double>();
    }
    for (ObserverBatch* b : {&train, &val}) {
      const Eigen::Index n = b == &train ? n_train : n_val;
      b->history_in.conservativeResize(Eigen::NoChange, n);
      b->obs_in.conservativeResize(Eigen::NoChange, n);
      b->targets.conservativeResize(Eigen::NoChange, n);
    }

    const PpoStats stats = learner.update(r.to_batch(cfg.ppo), rng);
    const auto [val_mse, val_fext] = observer_mse(ob, val);
    const double train_mse =
        train_observer(ob, obs_adam, train, cfg.stage2.observer_epochs, cfg.stage2.observer_minibatches, obs_rng);
    if (hfplp_checksum(stack) != frozen) throw ChecksumMismatch("frozen HFPLP weights changed during stage 2");

    Json rec = detail::iteration_record(it + 1, r, stats);
    rec["observer_val_mse"] = val_mse;
    rec["observer_val_fext_mse"] = val_fext;
    rec["observer_train_mse"] = train_mse;
    rec["hfplp_checksum"] = hex64(frozen);
    logger.write(rec);
    if ((it + 1) % cfg.io.checkpoint_every == 0 || it + 1 == total)
      save_checkpoint(ckpt, stack, cfg, stage_name(opt.stage), it + 1);
  }
  if (start >= total) save_checkpoint(ckpt, stack, cfg, stage_name(opt.stage), start);
  return {ckpt, log_path(opt.out_dir, opt.stage), total, std::move(stack)};
}

inline TrainResult train(const WorkbenchConfig& cfg, const TrainOptions& opt) {
  return is_stage2(opt.stage) ? train_stage2(cfg, opt) : train_stage1(cfg, opt);
}

}  // namespace hfplp
