#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pushlab/checkpoint.hpp"
#include "pushlab/env.hpp"
#include "pushlab/metrics.hpp"
#include "pushlab/nets.hpp"
#include "pushlab/util.hpp"

namespace pushlab::agent {

enum class FeatureVariant { kVpm, kStacked5, kGru };

struct AgentVariant {
  FeatureVariant features = FeatureVariant::kVpm;
  env::SamplerMode sampler = env::SamplerMode::kUniformIndependent;
};

// vpm | stacked | ugru | egru
inline AgentVariant variant_from_name(const std::string& name) {
  if (name == "vpm") return {FeatureVariant::kVpm, env::SamplerMode::kUniformIndependent};
  if (name == "stacked")
    return {FeatureVariant::kStacked5, env::SamplerMode::kUniformIndependent};
  if (name == "ugru") return {FeatureVariant::kGru, env::SamplerMode::kUniformIndependent};
  if (name == "egru") return {FeatureVariant::kGru, env::SamplerMode::kExponentialMirrored};
  throw ConfigError("unknown variant '" + name + "' (expected vpm|stacked|ugru|egru)");
}

inline std::string variant_name(const AgentVariant& v) {
  switch (v.features) {
    case FeatureVariant::kVpm:
      return "vpm";
    case FeatureVariant::kStacked5:
      return "stacked";
    case FeatureVariant::kGru:
      return v.sampler == env::SamplerMode::kExponentialMirrored ? "egru" : "ugru";
  }
  return "?";
}

constexpr int kActionDim = 3;
constexpr int kStackDepth = 5;

// ---------------------------------------------------------------------------
// episode record

struct Episode {
  env::Observation reset_obs;                  // observation the first action saw
  std::vector<env::Observation> obs;           // post-action observations, length 50
  std::vector<env::Action> actions;            // length 50
  std::vector<Vec2> object_pos;                // ground-truth object position per step
  std::vector<double> object_theta;            // ground-truth orientation per step
  std::vector<vision::LatentCode> achieved;    // object latent per step (== obs[t] slot)
  std::vector<double> distances;               // object-goal distance per step
  std::vector<double> rewards;                 // sparse reward per step
  vision::LatentCode goal_latent{};
  Vec2 goal_pos;
  physics::ShapeSpec shape;

  bool complete() const {
    const size_t n = env::kEpisodeLen;
    return obs.size() == n && actions.size() == n && object_pos.size() == n &&
           object_theta.size() == n && achieved.size() == n && distances.size() == n &&
           rewards.size() == n;
  }
};

// ---------------------------------------------------------------------------
// feature extraction

inline int feature_dim(FeatureVariant variant, int gru_hidden) {
  switch (variant) {
    case FeatureVariant::kVpm:
      return env::kObsDim;
    case FeatureVariant::kStacked5:
      return kStackDepth * env::kObsDim;
    case FeatureVariant::kGru:
      return gru_hidden;
  }
  return 0;
}

inline nets::Tensor obs_row(const env::Observation& o) {
  nets::Tensor t(1, env::kObsDim);
  for (int i = 0; i < env::kObsDim; ++i) t.at(0, i) = o.v[i];
  return t;
}

// Feature vector for a history o_1..o_T: the current observation (VPM), the
// zero-padded last five observations (Stacked5), or the GRU hidden state after
// consuming the whole history from h0 = 0.
inline nets::Tensor extract_features(FeatureVariant variant, const nets::GruCell* cell,
                                     const std::vector<env::Observation>& history) {
  if (history.empty()) throw std::invalid_argument("extract_features: empty history");
  switch (variant) {
    case FeatureVariant::kVpm:
      return obs_row(history.back());
    case FeatureVariant::kStacked5: {
      nets::Tensor out(1, kStackDepth * env::kObsDim);
      const int t = static_cast<int>(history.size());
      for (int s = 0; s < kStackDepth; ++s) {
        const int idx = t - kStackDepth + s;  // oldest first
        if (idx < 0) continue;                // zero padding before step 5
        for (int j = 0; j < env::kObsDim; ++j)
          out.at(0, s * env::kObsDim + j) = history[idx].v[j];
      }
      return out;
    }
    case FeatureVariant::kGru: {
      if (cell == nullptr) throw std::invalid_argument("extract_features: missing GRU cell");
      nets::Tensor h(1, cell->hidden);
      for (const auto& o : history) h = nets::gru_step(*cell, obs_row(o), h);
      return h;
    }
  }
  throw std::logic_error("extract_features: unreachable");
}

// ---------------------------------------------------------------------------
// networks

struct SacConfig {
  AgentVariant variant;
  int gru_hidden = 128;
  std::vector<int> mlp_hidden = {256, 256};
  double gamma = 0.95;
  double tau = 0.005;
  double lr = 3e-4;
  int batch_size = 256;
  int her_k = 4;
  double target_entropy = -static_cast<double>(kActionDim);
  float log_std_min = -20.0f;
  float log_std_max = 2.0f;
  int buffer_capacity_episodes = 2000;
};

struct GaussianActor {
  FeatureVariant variant = FeatureVariant::kVpm;
  nets::GruCell gru;
  nets::Mlp trunk;        // features -> hidden, relu output
  nets::Mlp mean_head;    // hidden -> 3
  nets::Mlp logstd_head;  // hidden -> 3

  void collect_params(const std::string& prefix, std::vector<nets::ParamRef<float>>& out) {
    if (variant == FeatureVariant::kGru) gru.collect_params(prefix + "/gru", out);
    trunk.collect_params(prefix + "/trunk", out);
    mean_head.collect_params(prefix + "/mean", out);
    logstd_head.collect_params(prefix + "/logstd", out);
  }
};

struct Critic {
  FeatureVariant variant = FeatureVariant::kVpm;
  nets::GruCell gru;
  nets::Mlp q;  // [features, action] -> 1

  void collect_params(const std::string& prefix, std::vector<nets::ParamRef<float>>& out) {
    if (variant == FeatureVariant::kGru) gru.collect_params(prefix + "/gru", out);
    q.collect_params(prefix + "/q", out);
  }
};

// ---------------------------------------------------------------------------
// replay buffer (episode granularity, FIFO overwrite)

class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity_episodes = 2000) : capacity_(capacity_episodes) {}

  void add(Episode ep) {
    if (!ep.complete()) throw std::invalid_argument("replay: incomplete episode");
    if (static_cast<int>(episodes_.size()) < capacity_) {
      episodes_.push_back(std::move(ep));
    } else {
      episodes_[next_] = std::move(ep);
      next_ = (next_ + 1) % capacity_;
    }
  }

  const Episode& get(int i) const { return episodes_[i]; }
  int size() const { return static_cast<int>(episodes_.size()); }

 private:
  int capacity_;
  size_t next_ = 0;
  std::vector<Episode> episodes_;
};

// ---------------------------------------------------------------------------
// hindsight relabeling

struct RelabeledSample {
  int episode_index = 0;   // index into the replay buffer
  int t = 1;               // 1-based transition index
  int future = 0;          // 0 = original goal, else achieved step f in (t, 50]
  double reward = 0.0;
  vision::LatentCode goal_latent{};
  Vec2 goal_pos;
};

inline RelabeledSample make_sample(const Episode& ep, int t, int future,
                                   int episode_index = 0) {
  RelabeledSample s;
  s.episode_index = episode_index;
  s.t = t;
  s.future = future;
  if (future == 0) {
    s.goal_latent = ep.goal_latent;
    s.goal_pos = ep.goal_pos;
    s.reward = ep.rewards[t - 1];
  } else {
    s.goal_latent = ep.achieved[future - 1];
    s.goal_pos = ep.object_pos[future - 1];
    s.reward = env::reward(ep.object_pos[t - 1], s.goal_pos);
  }
  return s;
}

// History under the sample's goal: every observation gets its goal-latent slot
// rewritten, so recurrent features are recomputed from t = 1 for the new goal.
inline std::vector<env::Observation> relabeled_history(const Episode& ep,
                                                       const RelabeledSample& s,
                                                       bool include_post) {
  const int len = include_post ? s.t + 1 : s.t;
  std::vector<env::Observation> out;
  out.reserve(len);
  for (int k = 0; k < len; ++k) {
    env::Observation o = (k == 0) ? ep.reset_obs : ep.obs[k - 1];
    if (s.future != 0) o.set_goal_latent(s.goal_latent);
    out.push_back(o);
  }
  return out;
}

// Original transitions plus k future-goal relabels each. The virtual goal of a
// transition is an object state reached at step f >= t, i.e. no earlier than
// the transition's own arrival; f = t makes the achieved state its own goal.
inline std::vector<RelabeledSample> her_relabel(const Episode& ep, int k, Rng& rng) {
  if (!ep.complete()) throw std::invalid_argument("her_relabel: incomplete episode");
  std::vector<RelabeledSample> out;
  out.reserve(static_cast<size_t>(env::kEpisodeLen) * (k + 1));
  for (int t = 1; t <= env::kEpisodeLen; ++t) {
    out.push_back(make_sample(ep, t, 0));
    for (int j = 0; j < k; ++j) {
      const int f = static_cast<int>(rng.uniform_int(t, env::kEpisodeLen));
      out.push_back(make_sample(ep, t, f));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// SAC state

struct LossReport {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double mean_q = 0.0;
};

class SacState {
 public:
  SacConfig cfg;
  GaussianActor actor;
  Critic q1, q2, q1_target, q2_target;
  float log_alpha = 0.0f;
  nets::Adam actor_opt;
  nets::Adam critic_opt;
  double alpha_m = 0.0, alpha_v = 0.0;
  long alpha_steps = 0;
  ReplayBuffer buffer;
  Rng rng;
  long env_steps = 0;
  long episodes_collected = 0;
  long updates_done = 0;

  static SacState init(const SacConfig& cfg, std::uint64_t seed) {
    SacState s;
    s.cfg = cfg;
    s.rng = Rng(seed);
    s.buffer = ReplayBuffer(cfg.buffer_capacity_episodes);
    const int feat = feature_dim(cfg.variant.features, cfg.gru_hidden);

    s.actor.variant = cfg.variant.features;
    if (cfg.variant.features == FeatureVariant::kGru)
      s.actor.gru = nets::GruCell(env::kObsDim, cfg.gru_hidden, s.rng);
    std::vector<int> trunk_sizes{feat};
    trunk_sizes.insert(trunk_sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
    s.actor.trunk = nets::Mlp(trunk_sizes, s.rng, nets::Activation::kRelu,
                              nets::Activation::kRelu);
    const int trunk_out = s.actor.trunk.out_dim();
    s.actor.mean_head = nets::Mlp({trunk_out, kActionDim}, s.rng);
    s.actor.logstd_head = nets::Mlp({trunk_out, kActionDim}, s.rng);
    // near-zero head init keeps initial actions centered and unsaturated,
    // so gradients still flow through the tanh squash
    for (auto& w : s.actor.mean_head.weights[0].v) w *= 0.01f;
    for (auto& w : s.actor.logstd_head.weights[0].v) w *= 0.01f;

    auto make_critic = [&]() {
      Critic c;
      c.variant = cfg.variant.features;
      if (cfg.variant.features == FeatureVariant::kGru)
        c.gru = nets::GruCell(env::kObsDim, cfg.gru_hidden, s.rng);
      std::vector<int> sizes{feat + kActionDim};
      sizes.insert(sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
      sizes.push_back(1);
      c.q = nets::Mlp(sizes, s.rng);
      return c;
    };
    s.q1 = make_critic();
    s.q2 = make_critic();
    s.q1_target = s.q1;
    s.q2_target = s.q2;
    s.actor_opt.lr = cfg.lr;
    s.critic_opt.lr = cfg.lr;
    return s;
  }

  std::vector<nets::ParamRef<float>> actor_params() {
    std::vector<nets::ParamRef<float>> out;
    actor.collect_params("actor", out);
    return out;
  }
  std::vector<nets::ParamRef<float>> critic_params() {
    std::vector<nets::ParamRef<float>> out;
    q1.collect_params("critic1", out);
    q2.collect_params("critic2", out);
    return out;
  }
  std::vector<nets::ParamRef<float>> target_params() {
    std::vector<nets::ParamRef<float>> out;
    q1_target.collect_params("target1", out);
    q2_target.collect_params("target2", out);
    return out;
  }

  double alpha() const { return std::exp(static_cast<double>(log_alpha)); }

  struct PolicyEval {
    std::array<double, kActionDim> u{};  // squashed output in [-1, 1]^3
    double log_prob = 0.0;
  };

  PolicyEval policy_from_features(const nets::Tensor& features, bool stochastic, Rng* noise) {
    const nets::Tensor hidden = nets::mlp_forward(actor.trunk, features);
    const nets::Tensor mean = nets::mlp_forward(actor.mean_head, hidden);
    nets::Tensor logstd = nets::mlp_forward(actor.logstd_head, hidden);
    for (auto& x : logstd.v) x = std::clamp(x, cfg.log_std_min, cfg.log_std_max);
    PolicyEval out;
    double logp = 0.0;
    for (int i = 0; i < kActionDim; ++i) {
      const double mu = mean.at(0, i);
      const double sigma = std::exp(static_cast<double>(logstd.at(0, i)));
      double eps = 0.0;
      if (stochastic) {
        if (noise == nullptr) throw std::invalid_argument("policy: missing noise rng");
        eps = noise->normal();
      }
      const double pre = mu + sigma * eps;
      const double a = std::tanh(pre);
      out.u[i] = a;
      logp += -0.5 * eps * eps - 0.5 * std::log(2.0 * M_PI) - std::log(sigma);
      logp -= std::log(1.0 - a * a + 1e-6);
    }
    out.log_prob = logp;
    return out;
  }

  double q_value(const Critic& critic, const nets::Tensor& features,
                 const std::array<double, kActionDim>& u) const {
    nets::Tensor in(1, features.cols + kActionDim);
    for (int j = 0; j < features.cols; ++j) in.at(0, j) = features.at(0, j);
    for (int j = 0; j < kActionDim; ++j)
      in.at(0, features.cols + j) = static_cast<float>(u[j]);
    return nets::mlp_forward(critic.q, in).at(0, 0);
  }
};

// Action over an observation history; deterministic mode takes the squashed
// mean, as used for evaluation.
inline env::Action select_action(SacState& state, const std::vector<env::Observation>& history,
                                 bool stochastic) {
  const nets::GruCell* cell =
      state.cfg.variant.features == FeatureVariant::kGru ? &state.actor.gru : nullptr;
  const nets::Tensor feat = extract_features(state.cfg.variant.features, cell, history);
  const SacState::PolicyEval pe =
      state.policy_from_features(feat, stochastic, stochastic ? &state.rng : nullptr);
  return env::rescale_action({pe.u[0], pe.u[1], pe.u[2]});
}

// ---------------------------------------------------------------------------
// batched feature assembly for updates

namespace detail {

struct HistoryBatch {
  std::vector<nets::Tensor> steps;  // time-major [B, obs] inputs, zero padded
  std::vector<int> lengths;         // per-sample history length
  int max_len = 0;
};

inline HistoryBatch make_history_batch(const ReplayBuffer& buffer,
                                       const std::vector<RelabeledSample>& batch, bool post) {
  HistoryBatch hb;
  const int b = static_cast<int>(batch.size());
  hb.lengths.resize(b);
  for (int i = 0; i < b; ++i) {
    hb.lengths[i] = batch[i].t + (post ? 1 : 0);
    hb.max_len = std::max(hb.max_len, hb.lengths[i]);
  }
  hb.steps.assign(hb.max_len, nets::Tensor(b, env::kObsDim));
  for (int i = 0; i < b; ++i) {
    const Episode& ep = buffer.get(batch[i].episode_index);
    for (int k = 0; k < hb.lengths[i]; ++k) {
      env::Observation o = (k == 0) ? ep.reset_obs : ep.obs[k - 1];
      if (batch[i].future != 0) o.set_goal_latent(batch[i].goal_latent);
      for (int j = 0; j < env::kObsDim; ++j) hb.steps[k].at(i, j) = o.v[j];
    }
  }
  return hb;
}

// batch features without gradients, shared by target and frozen-critic passes
inline nets::Tensor features_numeric(FeatureVariant variant, const nets::GruCell* cell,
                                     int gru_hidden, const HistoryBatch& hb) {
  const int b = static_cast<int>(hb.lengths.size());
  if (variant == FeatureVariant::kVpm) {
    nets::Tensor out(b, env::kObsDim);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < env::kObsDim; ++j)
        out.at(i, j) = hb.steps[hb.lengths[i] - 1].at(i, j);
    return out;
  }
  if (variant == FeatureVariant::kStacked5) {
    nets::Tensor out(b, kStackDepth * env::kObsDim);
    for (int i = 0; i < b; ++i) {
      for (int s = 0; s < kStackDepth; ++s) {
        const int idx = hb.lengths[i] - kStackDepth + s;
        if (idx < 0) continue;
        for (int j = 0; j < env::kObsDim; ++j)
          out.at(i, s * env::kObsDim + j) = hb.steps[idx].at(i, j);
      }
    }
    return out;
  }
  nets::Tensor h(b, gru_hidden);
  std::vector<nets::Tensor> hs;
  hs.reserve(hb.max_len);
  for (int t = 0; t < hb.max_len; ++t) {
    h = nets::gru_step(*cell, hb.steps[t], h);
    hs.push_back(h);
  }
  nets::Tensor out(b, gru_hidden);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < gru_hidden; ++j) out.at(i, j) = hs[hb.lengths[i] - 1].at(i, j);
  return out;
}

// features on the tape; gradients flow into the bound GRU for the recurrent
// variant, the feedforward variants enter as constants
inline int features_on_tape(nets::Tape& tape, nets::TapeBinding<float>& binding,
                            FeatureVariant variant, nets::GruCell* cell, int gru_hidden,
                            const HistoryBatch& hb) {
  if (variant != FeatureVariant::kGru) {
    return tape.leaf(features_numeric(variant, nullptr, 0, hb));
  }
  const nets::GruNodes<float> ids = nets::bind_gru(binding, *cell);
  const int b = static_cast<int>(hb.lengths.size());
  int h = tape.leaf(nets::Tensor(b, gru_hidden));
  std::vector<int> hs;
  hs.reserve(hb.max_len);
  for (int t = 0; t < hb.max_len; ++t) {
    h = nets::gru_step_on_tape(tape, ids, tape.leaf(hb.steps[t]), h);
    hs.push_back(h);
  }
  return tape.select_step(hs, hb.lengths);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SAC update

// Bootstrap targets r + gamma * (min Q' - alpha * log pi'). The fixed horizon
// is treated as terminal: step-50 samples get no bootstrap. With
// clamp_q_to_return_range the entropy-free Bellman arithmetic is checked on Q
// estimates clamped to the feasible return interval [-1/(1-gamma), 0].
inline std::vector<double> critic_targets(SacState& state,
                                          const std::vector<RelabeledSample>& batch,
                                          bool clamp_q_to_return_range = false) {
  const int b = static_cast<int>(batch.size());
  const detail::HistoryBatch post = detail::make_history_batch(state.buffer, batch, true);
  const bool recurrent = state.cfg.variant.features == FeatureVariant::kGru;
  const nets::Tensor f_actor = detail::features_numeric(
      state.cfg.variant.features, recurrent ? &state.actor.gru : nullptr,
      state.cfg.gru_hidden, post);

  nets::Tensor u_next(b, kActionDim);
  std::vector<double> logp(b);
  {
    const nets::Tensor hidden = nets::mlp_forward(state.actor.trunk, f_actor);
    const nets::Tensor mean = nets::mlp_forward(state.actor.mean_head, hidden);
    nets::Tensor logstd = nets::mlp_forward(state.actor.logstd_head, hidden);
    for (auto& x : logstd.v) x = std::clamp(x, state.cfg.log_std_min, state.cfg.log_std_max);
    for (int i = 0; i < b; ++i) {
      double lp = 0.0;
      for (int j = 0; j < kActionDim; ++j) {
        const double sigma = std::exp(static_cast<double>(logstd.at(i, j)));
        const double eps = state.rng.normal();
        const double pre = mean.at(i, j) + sigma * eps;
        const double a = std::tanh(pre);
        u_next.at(i, j) = static_cast<float>(a);
        lp += -0.5 * eps * eps - 0.5 * std::log(2.0 * M_PI) - std::log(sigma);
        lp -= std::log(1.0 - a * a + 1e-6);
      }
      logp[i] = lp;
    }
  }

  auto q_of = [&](Critic& critic) {
    const nets::Tensor f = detail::features_numeric(
        state.cfg.variant.features, recurrent ? &critic.gru : nullptr, state.cfg.gru_hidden,
        post);
    nets::Tensor in(b, f.cols + kActionDim);
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < f.cols; ++j) in.at(i, j) = f.at(i, j);
      for (int j = 0; j < kActionDim; ++j) in.at(i, f.cols + j) = u_next.at(i, j);
    }
    return nets::mlp_forward(critic.q, in);
  };
  const nets::Tensor q1 = q_of(state.q1_target);
  const nets::Tensor q2 = q_of(state.q2_target);

  const double gamma = state.cfg.gamma;
  const double lo = -1.0 / (1.0 - gamma);
  std::vector<double> targets(b);
  for (int i = 0; i < b; ++i) {
    double qmin = std::min(q1.at(i, 0), q2.at(i, 0));
    const bool terminal = batch[i].t >= env::kEpisodeLen;
    if (clamp_q_to_return_range) {
      qmin = std::clamp(qmin, lo, 0.0);
      targets[i] = batch[i].reward + (terminal ? 0.0 : gamma * qmin);
    } else {
      targets[i] =
          batch[i].reward + (terminal ? 0.0 : gamma * (qmin - state.alpha() * logp[i]));
    }
  }
  return targets;
}

inline LossReport sac_update(SacState& state, const std::vector<RelabeledSample>& batch) {
  if (batch.empty()) throw std::invalid_argument("sac_update: empty batch");
  const int b = static_cast<int>(batch.size());
  const bool recurrent = state.cfg.variant.features == FeatureVariant::kGru;
  LossReport report;
  report.alpha = state.alpha();

  const std::vector<double> targets = critic_targets(state, batch);
  nets::Tensor y(b, 1);
  for (int i = 0; i < b; ++i) y.at(i, 0) = static_cast<float>(targets[i]);

  nets::Tensor actions(b, kActionDim);
  for (int i = 0; i < b; ++i) {
    const Episode& ep = state.buffer.get(batch[i].episode_index);
    const std::array<double, 3> u = env::normalize_action(ep.actions[batch[i].t - 1]);
    for (int j = 0; j < kActionDim; ++j) actions.at(i, j) = static_cast<float>(u[j]);
  }

  const detail::HistoryBatch pre = detail::make_history_batch(state.buffer, batch, false);

  // --- critic step
  {
    nets::Tape tape;
    nets::TapeBinding<float> binding(tape);
    const int a_node = tape.leaf(actions);
    auto q_forward = [&](Critic& critic) {
      const int f = detail::features_on_tape(tape, binding, state.cfg.variant.features,
                                             &critic.gru, state.cfg.gru_hidden, pre);
      const nets::MlpNodes<float> ids = nets::bind_mlp(binding, critic.q);
      return nets::mlp_on_tape(tape, critic.q, ids, tape.concat_cols(f, a_node));
    };
    const int q1_out = q_forward(state.q1);
    const int q2_out = q_forward(state.q2);
    const int loss = tape.add(tape.mse_loss(q1_out, y), tape.mse_loss(q2_out, y));
    report.critic_loss = tape.val(loss).at(0, 0);
    double qsum = 0.0;
    for (int i = 0; i < b; ++i) qsum += tape.val(q1_out).at(i, 0);
    report.mean_q = qsum / b;
    tape.backward(loss);
    state.critic_opt.step(binding.params, binding.grads());
  }

  // --- actor step
  double mean_logp = 0.0;
  {
    nets::Tape tape;
    nets::TapeBinding<float> binding(tape);
    const int f_actor =
        detail::features_on_tape(tape, binding, state.cfg.variant.features, &state.actor.gru,
                                 state.cfg.gru_hidden, pre);
    const nets::MlpNodes<float> trunk_ids = nets::bind_mlp(binding, state.actor.trunk);
    const nets::MlpNodes<float> mean_ids = nets::bind_mlp(binding, state.actor.mean_head);
    const nets::MlpNodes<float> logstd_ids = nets::bind_mlp(binding, state.actor.logstd_head);
    const size_t actor_param_count = binding.params.size();

    const int hidden = nets::mlp_on_tape(tape, state.actor.trunk, trunk_ids, f_actor);
    const int mean = nets::mlp_on_tape(tape, state.actor.mean_head, mean_ids, hidden);
    const int logstd =
        tape.clamp(nets::mlp_on_tape(tape, state.actor.logstd_head, logstd_ids, hidden),
                   state.cfg.log_std_min, state.cfg.log_std_max);
    const int sigma = tape.exp_(logstd);

    nets::Tensor eps(b, kActionDim);
    for (auto& x : eps.v) x = static_cast<float>(state.rng.normal());
    nets::Tensor gauss_const(b, 1);
    for (int i = 0; i < b; ++i) {
      double c = 0.0;
      for (int j = 0; j < kActionDim; ++j) {
        const double e = eps.at(i, j);
        c += -0.5 * e * e - 0.5 * std::log(2.0 * M_PI);
      }
      gauss_const.at(i, 0) = static_cast<float>(c);
    }
    const int pre_squash = tape.add(mean, tape.mul(sigma, tape.leaf(eps)));
    const int action = tape.tanh_(pre_squash);
    const int logp =
        tape.sub(tape.sub(tape.leaf(gauss_const), tape.row_sum(logstd)),
                 tape.row_sum(tape.squash_logdet(pre_squash, 1e-6f)));

    // critics consume the fresh action; their parameters are bound after the
    // actor's and their gradients are simply not applied
    auto q_pi = [&](Critic& critic) {
      const int f = tape.leaf(detail::features_numeric(state.cfg.variant.features,
                                                       recurrent ? &critic.gru : nullptr,
                                                       state.cfg.gru_hidden, pre));
      const nets::MlpNodes<float> ids = nets::bind_mlp(binding, critic.q);
      return nets::mlp_on_tape(tape, critic.q, ids, tape.concat_cols(f, action));
    };
    const int qmin = tape.min2(q_pi(state.q1), q_pi(state.q2));
    const int loss =
        tape.mean(tape.sub(tape.scale(logp, static_cast<float>(state.alpha())), qmin));
    report.actor_loss = tape.val(loss).at(0, 0);
    for (int i = 0; i < b; ++i) mean_logp += tape.val(logp).at(i, 0);
    mean_logp /= b;
    tape.backward(loss);

    std::vector<nets::TensorT<float>*> params(binding.params.begin(),
                                              binding.params.begin() + actor_param_count);
    std::vector<const nets::TensorT<float>*> grads;
    grads.reserve(actor_param_count);
    for (size_t i = 0; i < actor_param_count; ++i)
      grads.push_back(&tape.grad(binding.nodes[i]));
    state.actor_opt.step(params, grads);
  }

  // --- temperature step (scalar Adam on log alpha, SB3-style loss)
  {
    const double err = mean_logp + state.cfg.target_entropy;
    report.alpha_loss = -static_cast<double>(state.log_alpha) * err;
    const double g = -err;
    ++state.alpha_steps;
    state.alpha_m = 0.9 * state.alpha_m + 0.1 * g;
    state.alpha_v = 0.999 * state.alpha_v + 0.001 * g * g;
    const double mhat = state.alpha_m / (1.0 - std::pow(0.9, state.alpha_steps));
    const double vhat = state.alpha_v / (1.0 - std::pow(0.999, state.alpha_steps));
    state.log_alpha -= static_cast<float>(state.cfg.lr * mhat / (std::sqrt(vhat) + 1e-8));
  }

  // --- polyak averaging of the target critics
  {
    auto src = state.critic_params();
    auto dst = state.target_params();
    const float tau = static_cast<float>(state.cfg.tau);
    for (size_t p = 0; p < src.size(); ++p) {
      for (int i = 0; i < src[p].tensor->size(); ++i)
        dst[p].tensor->v[i] = (1.0f - tau) * dst[p].tensor->v[i] + tau * src[p].tensor->v[i];
    }
  }

  if (!std::isfinite(report.critic_loss) || !std::isfinite(report.actor_loss))
    throw NumericalError("sac_update: non-finite loss");
  ++state.updates_done;
  return report;
}

// uniform transition sampling with future relabeling at ratio k/(k+1)
inline std::vector<RelabeledSample> sample_batch(SacState& state, int batch_size) {
  std::vector<RelabeledSample> batch;
  batch.reserve(batch_size);
  const double virtual_fraction =
      static_cast<double>(state.cfg.her_k) / (state.cfg.her_k + 1);
  for (int i = 0; i < batch_size; ++i) {
    const int e = static_cast<int>(state.rng.uniform_int(0, state.buffer.size() - 1));
    const int t = static_cast<int>(state.rng.uniform_int(1, env::kEpisodeLen));
    const Episode& ep = state.buffer.get(e);
    int future = 0;
    if (state.rng.bernoulli(virtual_fraction))
      future = static_cast<int>(state.rng.uniform_int(t, env::kEpisodeLen));
    batch.push_back(make_sample(ep, t, future, e));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// rollout and evaluation

struct RolloutResult {
  Episode episode;
  metrics::EpisodeRecord record;
};

enum class RolloutPolicy { kDeterministic, kStochastic, kUniformRandom };

inline RolloutResult run_episode(env::PushEnv& environment, SacState& state,
                                 RolloutPolicy policy) {
  RolloutResult out;
  Episode& ep = out.episode;
  std::vector<env::Observation> history;
  history.reserve(env::kEpisodeLen + 1);
  history.push_back(environment.reset());
  ep.reset_obs = history.front();
  ep.shape = environment.episode().shape;
  ep.goal_latent = environment.goal_latent();
  ep.goal_pos = environment.episode().goal_pose.pos;

  metrics::DistanceSeries series;
  for (int t = 1; t <= env::kEpisodeLen; ++t) {
    const env::Action action =
        policy == RolloutPolicy::kUniformRandom
            ? env::rescale_action({state.rng.uniform(-1.0, 1.0),
                                   state.rng.uniform(-1.0, 1.0),
                                   state.rng.uniform(-1.0, 1.0)})
            : select_action(state, history, policy == RolloutPolicy::kStochastic);
    const env::PushEnv::StepResult sr = environment.step(action);
    ep.actions.push_back(action);
    ep.obs.push_back(sr.obs);
    ep.object_pos.push_back(sr.info.object_pos);
    ep.object_theta.push_back(environment.object().theta);
    ep.achieved.push_back(sr.obs.object_latent());
    ep.distances.push_back(sr.info.distance);
    ep.rewards.push_back(sr.reward);
    series.d.push_back(sr.info.distance);
    history.push_back(sr.obs);
  }

  out.record.shape_class = metrics::classify_shape(ep.shape);
  out.record.success = env::success(ep.distances.back());
  out.record.episode_return = metrics::episode_return(series);
  out.record.overshoot_corrections = metrics::count_overshoot(series);
  out.record.distance_corrections = metrics::count_distance_corrections(series);
  return out;
}

struct EvalOptions {
  int episodes = 100;
  std::uint64_t seed = 1;
  env::SamplerMode sampler = env::SamplerMode::kUniformIndependent;
  std::string trajectory_dir;  // per-episode CSV exports when non-empty
};

inline void write_trajectory_csv(const Episode& ep, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("trajectory export: cannot write " + path);
  out << "t,ee_x,ee_y,obj_x,obj_y,obj_theta,goal_x,goal_y,distance,reward,a_x,a_y,a_s\n";
  char line[512];
  for (int t = 1; t <= env::kEpisodeLen; ++t) {
    const env::Observation& o = ep.obs[t - 1];
    std::snprintf(line, sizeof(line),
                  "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d\n", t,
                  static_cast<double>(o.v[0]), static_cast<double>(o.v[1]),
                  ep.object_pos[t - 1].x, ep.object_pos[t - 1].y, ep.object_theta[t - 1],
                  ep.goal_pos.x, ep.goal_pos.y, ep.distances[t - 1], ep.rewards[t - 1],
                  ep.actions[t - 1].dx, ep.actions[t - 1].dy, ep.actions[t - 1].substeps);
    out << line;
  }
}

// Deterministic-policy evaluation over independently seeded episodes; episode
// i is fully determined by (options.seed, i), so results are identical no
// matter how many workers PUSHLAB_THREADS allows.
inline std::vector<metrics::EpisodeRecord> evaluate(SacState& state,
                                                    const env::EnvConfig& env_cfg,
                                                    const EvalOptions& options) {
  std::vector<metrics::EpisodeRecord> records(options.episodes);
  std::vector<Episode> episodes(options.episodes);
  env::EnvConfig cfg = env_cfg;
  cfg.sampler = options.sampler;
  parallel_for(options.episodes, [&](int i) {
    env::PushEnv environment(cfg, options.seed + static_cast<std::uint64_t>(i) * 7919);
    SacState* st = &state;  // shared read-only actor; no updates during eval
    RolloutResult rr = run_episode(environment, *st, RolloutPolicy::kDeterministic);
    records[i] = rr.record;
    episodes[i] = std::move(rr.episode);
  });
  if (!options.trajectory_dir.empty()) {
    std::filesystem::create_directories(options.trajectory_dir);
    for (int i = 0; i < options.episodes; ++i) {
      write_trajectory_csv(episodes[i],
                           options.trajectory_dir + "/episode_" + std::to_string(i) + ".csv");
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// agent checkpoints

inline void save_agent(SacState& state, env::ObsMode obs_mode, const std::string& path) {
  Checkpoint ck;
  ck.magic = Checkpoint::kAgentMagic;
  for (const auto& p : state.actor_params()) ck.add(p.name, *p.tensor);
  for (const auto& p : state.critic_params()) ck.add(p.name, *p.tensor);
  for (const auto& p : state.target_params()) ck.add(p.name, *p.tensor);
  ck.add_scalar("meta/features", static_cast<float>(state.cfg.variant.features));
  ck.add_scalar("meta/sampler", static_cast<float>(state.cfg.variant.sampler));
  ck.add_scalar("meta/obs_mode", static_cast<float>(obs_mode));
  ck.add_scalar("meta/gru_hidden", static_cast<float>(state.cfg.gru_hidden));
  ck.add_scalar("meta/mlp_layers", static_cast<float>(state.cfg.mlp_hidden.size()));
  for (size_t i = 0; i < state.cfg.mlp_hidden.size(); ++i)
    ck.add_scalar("meta/mlp_hidden" + std::to_string(i),
                  static_cast<float>(state.cfg.mlp_hidden[i]));
  ck.add_scalar("meta/log_alpha", state.log_alpha);
  ck.add_scalar("meta/env_steps", static_cast<float>(state.env_steps));
  ck.save(path);
}

struct LoadedAgent {
  SacState state;
  env::ObsMode obs_mode = env::ObsMode::kOracle;
};

inline LoadedAgent load_agent(const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path, Checkpoint::kAgentMagic);
  SacConfig cfg;
  cfg.variant.features = static_cast<FeatureVariant>(ck.scalar("meta/features"));
  cfg.variant.sampler = static_cast<env::SamplerMode>(ck.scalar("meta/sampler"));
  cfg.gru_hidden = static_cast<int>(ck.scalar("meta/gru_hidden"));
  cfg.mlp_hidden.clear();
  const int layers = static_cast<int>(ck.scalar("meta/mlp_layers"));
  for (int i = 0; i < layers; ++i)
    cfg.mlp_hidden.push_back(static_cast<int>(ck.scalar("meta/mlp_hidden" + std::to_string(i))));
  LoadedAgent out{SacState::init(cfg, 0),
                  static_cast<env::ObsMode>(ck.scalar("meta/obs_mode"))};
  for (const auto& p : out.state.actor_params()) *p.tensor = ck.tensor(p.name);
  for (const auto& p : out.state.critic_params()) *p.tensor = ck.tensor(p.name);
  for (const auto& p : out.state.target_params()) *p.tensor = ck.tensor(p.name);
  out.state.log_alpha = ck.scalar("meta/log_alpha");
  out.state.env_steps = static_cast<long>(ck.scalar("meta/env_steps"));
  return out;
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
  SacConfig sac;
  env::EnvConfig env_cfg;
  std::uint64_t seed = 0;
  long total_env_steps = 200000;
  long learning_starts = 1000;          // env steps collected before updates
  int gradient_steps_per_episode = 50;
  int eval_interval_episodes = 50;
  int eval_episodes = 100;
  double stop_at_success_rate = -1.0;   // stop early when reached; < 0 disables
  std::string out_dir;                  // metrics.csv + checkpoints when non-empty
};

struct TrainResult {
  double best_success_rate = 0.0;
  double final_success_rate = 0.0;
  long env_steps = 0;
  long episodes = 0;
  int discarded_episodes = 0;
  std::string metrics_csv;  // full CSV content, also written to out_dir
};

inline const char* kMetricsHeader =
    "step,episode,success_rate,mean_return,overshoot_mean,distcorr_mean,alpha,"
    "actor_loss,critic_loss,alpha_loss\n";

inline TrainResult train(const TrainConfig& cfg) {
  TrainResult result;
  result.metrics_csv = kMetricsHeader;

  SacState state = SacState::init(cfg.sac, cfg.seed);
  env::EnvConfig env_cfg = cfg.env_cfg;
  env_cfg.sampler = cfg.sac.variant.sampler;
  env::PushEnv rollout_env(env_cfg, cfg.seed ^ 0x9E3779B97F4A7C15ull);

  const bool to_disk = !cfg.out_dir.empty();
  if (to_disk) std::filesystem::create_directories(cfg.out_dir);

  auto flush_metrics = [&]() {
    if (!to_disk) return;
    std::ofstream f(cfg.out_dir + "/metrics.csv", std::ios::trunc);
    f << result.metrics_csv;
  };
  auto save_checkpoint = [&](const std::string& name) {
    if (!to_disk) return;
    save_agent(state, cfg.env_cfg.obs, cfg.out_dir + "/" + name);
  };

  double loss_actor_acc = 0.0, loss_critic_acc = 0.0, loss_alpha_acc = 0.0;
  long loss_count = 0;
  std::uint64_t eval_round = 0;
  bool stop = false;

  while (!stop && state.env_steps < cfg.total_env_steps) {
    try {
      const RolloutPolicy rollout_policy = state.env_steps < cfg.learning_starts
                                         ? RolloutPolicy::kUniformRandom
                                         : RolloutPolicy::kStochastic;
      RolloutResult rr = run_episode(rollout_env, state, rollout_policy);
      state.buffer.add(std::move(rr.episode));
      state.env_steps += env::kEpisodeLen;
      ++state.episodes_collected;
    } catch (const SimulationError&) {
      // a blown-up episode is dropped; the counter keeps it visible
      ++result.discarded_episodes;
      if (result.discarded_episodes > 1000)
        throw SimulationError("train: too many unstable episodes discarded");
      continue;
    }

    if (state.env_steps >= cfg.learning_starts && state.buffer.size() > 0) {
      for (int gs = 0; gs < cfg.gradient_steps_per_episode; ++gs) {
        const LossReport report = sac_update(state, sample_batch(state, cfg.sac.batch_size));
        loss_actor_acc += report.actor_loss;
        loss_critic_acc += report.critic_loss;
        loss_alpha_acc += report.alpha_loss;
        ++loss_count;
      }
    }

    if (state.episodes_collected % cfg.eval_interval_episodes == 0) {
      EvalOptions eo;
      eo.episodes = cfg.eval_episodes;
      eo.seed = cfg.seed * 1000003ull + (++eval_round) * 7919ull + 17ull;
      const std::vector<metrics::EpisodeRecord> records = evaluate(state, cfg.env_cfg, eo);
      const metrics::EvalReport report = metrics::aggregate(records);
      const double succ = report.overall.success_rate;
      result.final_success_rate = succ;

      char row[320];
      std::snprintf(row, sizeof(row), "%ld,%ld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                    state.env_steps, state.episodes_collected, succ, report.overall.ret.mean,
                    report.overall.overshoot.mean, report.overall.distcorr.mean,
                    state.alpha(), loss_count ? loss_actor_acc / loss_count : 0.0,
                    loss_count ? loss_critic_acc / loss_count : 0.0,
                    loss_count ? loss_alpha_acc / loss_count : 0.0);
      result.metrics_csv += row;
      flush_metrics();
      loss_actor_acc = loss_critic_acc = loss_alpha_acc = 0.0;
      loss_count = 0;

      save_checkpoint("checkpoint_last.bin");
      if (succ > result.best_success_rate) {
        result.best_success_rate = succ;
        save_checkpoint("checkpoint_best.bin");
      }
      if (cfg.stop_at_success_rate >= 0.0 && succ >= cfg.stop_at_success_rate) stop = true;
    }
  }

  result.env_steps = state.env_steps;
  result.episodes = state.episodes_collected;
  save_checkpoint("checkpoint_last.bin");
  flush_metrics();
  return result;
}

}  // namespace pushlab::agent
