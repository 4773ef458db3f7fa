#pragma once

// The full set of trained networks and the input views each one consumes.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

#include "hfplp/config.hpp"
#include "hfplp/env.hpp"
#include "hfplp/layout.hpp"
#include "hfplp/observer.hpp"
#include "hfplp/ppo.hpp"

namespace hfplp {

struct PolicyStack {
  ActionMode mode = ActionMode::kHybrid;
  ActorCritic hfplp;
  std::optional<ActorCritic> daac;
  std::optional<NeuralObserver> observer;
  bool daac_uses_observer = true;
  bool hfplp_frozen = false;
  ObsNormalizer normalizer;

  bool has_daac() const { return daac.has_value(); }
};

// Fresh stage-1 networks sized from the config.
inline PolicyStack make_stage1_stack(const WorkbenchConfig& cfg, ActionMode mode, Rng& rng) {
  PolicyStack s;
  s.mode = mode;
  s.normalizer = ObsNormalizer::for_model(cfg.robot);
  s.hfplp = ActorCritic::make(obs::kHistoryDim, cfg.actor_hidden, action_dim(mode), kCriticObsDim, cfg.critic_hidden,
                              static_cast<float>(cfg.ppo.init_log_std), rng);
  return s;
}

// Adds DAAC actor/critic and the neural observer to a stage-1 stack.
inline void add_stage2(PolicyStack& s, const WorkbenchConfig& cfg, bool uses_observer, Rng& rng) {
  if (s.mode != ActionMode::kHybrid) throw ConfigError("stage 2 requires a hybrid-action stage-1 stack");
  ActorCritic d = ActorCritic::make(kDaacObsDim, cfg.stage2.daac_hidden, kDaacActionDim, kDaacCriticObsDim,
                                    cfg.stage2.daac_hidden, static_cast<float>(cfg.ppo.init_log_std), rng);
  d.actor.init(rng, std::sqrt(2.0f), static_cast<float>(cfg.stage2.daac_output_gain));
  s.daac = std::move(d);
  NeuralObserver ob = NeuralObserver::make(cfg.robot, cfg.stage2.observer_hidden);
  ob.init(rng);
  s.observer = std::move(ob);
  s.daac_uses_observer = uses_observer;
  s.hfplp_frozen = true;
}

// Empty stack with the architecture a config implies, for loading.
inline PolicyStack skeleton_stack(const WorkbenchConfig& cfg, ActionMode mode, bool with_stage2) {
  Rng rng(0);
  PolicyStack s = make_stage1_stack(cfg, mode, rng);
  if (with_stage2) add_stage2(s, cfg, true, rng);
  s.hfplp_frozen = with_stage2;
  return s;
}

// ---------------------------------------------------------------------------
// Input views (columns are environments).

inline nn::Matrix actor_input(const PolicyStack& s, const std::vector<const HistoryVec*>& hist) {
  nn::Matrix x(obs::kHistoryDim, static_cast<Eigen::Index>(hist.size()));
  for (std::size_t i = 0; i < hist.size(); ++i) s.normalizer.apply_history(*hist[i], x.col(i));
  return x;
}

inline nn::Matrix obs_input(const PolicyStack& s, const std::vector<const ObsVec*>& o) {
  nn::Matrix x(obs::kDim, static_cast<Eigen::Index>(o.size()));
  for (std::size_t i = 0; i < o.size(); ++i) s.normalizer.apply(*o[i], x.col(i));
  return x;
}

inline nn::Matrix priv_input(const std::vector<const PrivVec*>& p) {
  const PrivVec scale = privileged_scale();
  nn::Matrix x(priv::kDim, static_cast<Eigen::Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) x.col(i) = p[i]->cwiseProduct(scale).cast<float>();
  return x;
}

inline nn::Matrix stack_rows(const nn::Matrix& a, const nn::Matrix& b) {
  nn::Matrix x(a.rows() + b.rows(), a.cols());
  x.topRows(a.rows()) = a;
  x.bottomRows(b.rows()) = b;
  return x;
}

// [normalized o_t; F_ext estimate / 100 N; HFPLP raw action]
inline nn::Matrix daac_actor_input(const nn::Matrix& obs_in, const nn::Matrix& fext_normalized,
                                   const nn::Matrix& hfplp_raw) {
  nn::Matrix x(kDaacObsDim, obs_in.cols());
  x.topRows(obs::kDim) = obs_in;
  x.middleRows(obs::kDim, 2) = fext_normalized;
  x.bottomRows(kHfplpActionDim) = hfplp_raw;
  return x;
}

// Deterministic (mean) actions of the full stack for a batch of envs.
struct StackActions {
  nn::Matrix hfplp_raw;       // action_dim x N
  nn::Matrix observer_out;    // 9 x N normalized, empty without observer
  nn::Matrix fext_input;      // 2 x N, what the DAAC saw
  nn::Matrix daac_raw;        // 4 x N, empty without DAAC
};

inline StackActions act_deterministic(const PolicyStack& s, const std::vector<const HistoryVec*>& hist,
                                      const std::vector<const ObsVec*>& o, bool use_daac = true) {
  StackActions a;
  const nn::Matrix xh = actor_input(s, hist);
  a.hfplp_raw = s.hfplp.actor.forward(xh);
  if (s.observer) a.observer_out = s.observer->forward_normalized(xh, obs_input(s, o));
  if (s.daac && use_daac) {
    const nn::Matrix xo = obs_input(s, o);
    a.fext_input = s.daac_uses_observer && s.observer ? nn::Matrix(a.observer_out.bottomRows(2))
                                                      : nn::Matrix::Zero(2, xo.cols());
    a.daac_raw = s.daac->actor.forward(daac_actor_input(xo, a.fext_input, a.hfplp_raw));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Named tensors, used by checkpoints and checksums.

struct TensorRef {
  std::string name;
  float* data;
  Eigen::Index rows;
  Eigen::Index cols;
  Eigen::Index size() const { return rows * cols; }
};

namespace detail {
inline void net_tensors(const std::string& prefix, nn::DenseNet& net, std::vector<TensorRef>& out) {
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = prefix + ".l" + std::to_string(l);
    out.push_back({p + ".weight", layers[l].weight.data(), layers[l].weight.rows(), layers[l].weight.cols()});
    out.push_back({p + ".bias", layers[l].bias.data(), layers[l].bias.rows(), 1});
  }
}
}  // namespace detail

inline std::vector<TensorRef> hfplp_tensors(PolicyStack& s) {
  std::vector<TensorRef> t;
  detail::net_tensors("hfplp_actor", s.hfplp.actor, t);
  t.push_back({"hfplp_actor.log_std", s.hfplp.head.log_std.data(), s.hfplp.head.log_std.size(), 1});
  detail::net_tensors("hfplp_critic", s.hfplp.critic, t);
  return t;
}

inline std::vector<TensorRef> stack_tensors(PolicyStack& s) {
  std::vector<TensorRef> t = hfplp_tensors(s);
  if (s.daac) {
    detail::net_tensors("daac_actor", s.daac->actor, t);
    t.push_back({"daac_actor.log_std", s.daac->head.log_std.data(), s.daac->head.log_std.size(), 1});
    detail::net_tensors("daac_critic", s.daac->critic, t);
  }
  if (s.observer) {
    detail::net_tensors("observer_accel_contact", s.observer->accel_contact_net, t);
    detail::net_tensors("observer_force", s.observer->force_net, t);
  }
  return t;
}

inline std::uint64_t tensors_checksum(const std::vector<TensorRef>& ts) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : ts) {
    h = fnv1a64(t.name.data(), t.name.size(), h);
    h = fnv1a64(t.data, static_cast<std::size_t>(t.size()) * sizeof(float), h);
  }
  return h;
}

inline std::uint64_t hfplp_checksum(const PolicyStack& s) {
  return tensors_checksum(hfplp_tensors(const_cast<PolicyStack&>(s)));
}

}  // namespace hfplp
