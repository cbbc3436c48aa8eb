#pragma once

#include "pushlab/agent.hpp"
#include "pushlab/env.hpp"
#include "pushlab/util.hpp"

namespace pushlab::testing {

// one full episode under a uniformly random policy
inline agent::Episode random_episode(env::PushEnv& e, Rng& rng) {
  agent::Episode ep;
  ep.reset_obs = e.reset();
  ep.shape = e.episode().shape;
  ep.goal_latent = e.goal_latent();
  ep.goal_pos = e.episode().goal_pose.pos;
  for (int t = 1; t <= env::kEpisodeLen; ++t) {
    const env::Action a = env::rescale_action(
        {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)});
    const env::PushEnv::StepResult sr = e.step(a);
    ep.actions.push_back(a);
    ep.obs.push_back(sr.obs);
    ep.object_pos.push_back(sr.info.object_pos);
    ep.object_theta.push_back(e.object().theta);
    ep.achieved.push_back(sr.obs.object_latent());
    ep.distances.push_back(sr.info.distance);
    ep.rewards.push_back(sr.reward);
  }
  return ep;
}

inline env::EnvConfig small_oracle_env() {
  env::EnvConfig cfg;
  cfg.obs = env::ObsMode::kOracle;
  cfg.sampler = env::SamplerMode::kUniformIndependent;
  return cfg;
}

}  // namespace pushlab::testing
