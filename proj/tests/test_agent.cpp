#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "helpers.hpp"
#include "pushlab/agent.hpp"

using namespace pushlab;
using namespace pushlab::agent;

namespace {

SacConfig tiny_vpm_config() {
  SacConfig cfg;
  cfg.variant = {FeatureVariant::kVpm, env::SamplerMode::kUniformIndependent};
  cfg.mlp_hidden = {32, 32};
  cfg.batch_size = 32;
  cfg.buffer_capacity_episodes = 16;
  return cfg;
}

SacConfig tiny_gru_config() {
  SacConfig cfg;
  cfg.variant = {FeatureVariant::kGru, env::SamplerMode::kUniformIndependent};
  cfg.gru_hidden = 8;
  cfg.mlp_hidden = {16};
  cfg.batch_size = 16;
  cfg.buffer_capacity_episodes = 8;
  return cfg;
}

env::Observation obs_with(float fill, float goal_fill) {
  env::Observation o;
  for (int i = 0; i < env::kObsDim; ++i) o.v[i] = fill + 0.01f * i;
  for (int i = 8; i < 14; ++i) o.v[i] = goal_fill;
  return o;
}

}  // namespace

TEST_CASE("variant names map to the four agents") {
  CHECK(variant_from_name("vpm").features == FeatureVariant::kVpm);
  CHECK(variant_from_name("vpm").sampler == env::SamplerMode::kUniformIndependent);
  CHECK(variant_from_name("stacked").features == FeatureVariant::kStacked5);
  CHECK(variant_from_name("ugru").features == FeatureVariant::kGru);
  CHECK(variant_from_name("ugru").sampler == env::SamplerMode::kUniformIndependent);
  CHECK(variant_from_name("egru").features == FeatureVariant::kGru);
  CHECK(variant_from_name("egru").sampler == env::SamplerMode::kExponentialMirrored);
  CHECK_THROWS_AS(variant_from_name("gru"), ConfigError);
  CHECK(variant_name(variant_from_name("egru")) == "egru");
}

TEST_CASE("extract_features") {
  std::vector<env::Observation> history;
  for (int t = 0; t < 7; ++t) history.push_back(obs_with(0.1f * t, 0.5f));

  SUBCASE("vpm passes the current observation through") {
    const nets::Tensor f = extract_features(FeatureVariant::kVpm, nullptr, history);
    REQUIRE(f.cols == env::kObsDim);
    for (int i = 0; i < env::kObsDim; ++i) CHECK(f.at(0, i) == history.back().v[i]);
  }

  SUBCASE("stacked features are 70 wide, zero padded before step 5") {
    const std::vector<env::Observation> one(history.begin(), history.begin() + 1);
    const nets::Tensor f = extract_features(FeatureVariant::kStacked5, nullptr, one);
    REQUIRE(f.cols == 70);
    for (int i = 0; i < 4 * env::kObsDim; ++i) CHECK(f.at(0, i) == 0.0f);
    for (int i = 0; i < env::kObsDim; ++i)
      CHECK(f.at(0, 4 * env::kObsDim + i) == one[0].v[i]);
  }

  SUBCASE("stacked features hold the last five observations, oldest first") {
    const nets::Tensor f = extract_features(FeatureVariant::kStacked5, nullptr, history);
    for (int s = 0; s < 5; ++s)
      for (int i = 0; i < env::kObsDim; ++i)
        CHECK(f.at(0, s * env::kObsDim + i) == history[2 + s].v[i]);
  }

  SUBCASE("a zero GRU cell extracts zero features") {
    Rng rng(1);
    nets::GruCell cell(env::kObsDim, 8, rng);
    for (auto* t : {&cell.wz, &cell.uz, &cell.bz, &cell.wr, &cell.ur, &cell.br, &cell.wc,
                    &cell.uc, &cell.bc})
      for (auto& v : t->v) v = 0.0f;
    const std::vector<env::Observation> one(history.begin(), history.begin() + 1);
    const nets::Tensor f = extract_features(FeatureVariant::kGru, &cell, one);
    for (const float v : f.v) CHECK(v == 0.0f);
  }

  SUBCASE("an empty history is rejected") {
    CHECK_THROWS_AS(extract_features(FeatureVariant::kVpm, nullptr, {}),
                    std::invalid_argument);
  }
}

TEST_CASE("select_action is deterministic in deterministic mode") {
  SacState state = SacState::init(tiny_vpm_config(), 3);
  std::vector<env::Observation> history{obs_with(0.3f, 0.2f)};
  const env::Action a = select_action(state, history, false);
  const env::Action b = select_action(state, history, false);
  CHECK(a.dx == b.dx);
  CHECK(a.dy == b.dy);
  CHECK(a.substeps == b.substeps);
  CHECK(a.dx >= -1.0);
  CHECK(a.dx <= 1.0);
  CHECK(a.substeps >= 10);
  CHECK(a.substeps <= 600);
}

TEST_CASE("her_relabel") {
  env::PushEnv environment(testing::small_oracle_env(), 5);
  Rng rng(6);
  const Episode ep = testing::random_episode(environment, rng);

  SUBCASE("k = 0 reproduces the original transitions exactly") {
    Rng r2(7);
    const std::vector<RelabeledSample> samples = her_relabel(ep, 0, r2);
    REQUIRE(samples.size() == 50);
    for (int t = 1; t <= 50; ++t) {
      CHECK(samples[t - 1].t == t);
      CHECK(samples[t - 1].future == 0);
      CHECK(samples[t - 1].reward == ep.rewards[t - 1]);
      CHECK(samples[t - 1].goal_pos == ep.goal_pos);
    }
  }

  SUBCASE("virtual samples recompute rewards against the achieved goal") {
    Rng r2(8);
    const std::vector<RelabeledSample> samples = her_relabel(ep, 4, r2);
    REQUIRE(samples.size() == 50 * 5);
    for (const auto& s : samples) {
      if (s.future == 0) continue;
      CHECK(s.future >= s.t);
      CHECK(s.future <= 50);
      const double expected = env::reward(ep.object_pos[s.t - 1], ep.object_pos[s.future - 1]);
      CHECK(s.reward == expected);
    }
  }

  SUBCASE("a goal achieved at the transition's own arrival is rewarded 0") {
    const RelabeledSample s = make_sample(ep, 17, 17);
    CHECK(s.reward == 0.0);
  }

  SUBCASE("relabeled observations differ only in the goal-latent slots") {
    const RelabeledSample s = make_sample(ep, 10, 25);
    const std::vector<env::Observation> hist = relabeled_history(ep, s, true);
    REQUIRE(hist.size() == 11);
    for (int k = 0; k < 11; ++k) {
      const env::Observation& original = k == 0 ? ep.reset_obs : ep.obs[k - 1];
      for (int i = 0; i < 8; ++i) CHECK(hist[k].v[i] == original.v[i]);
      for (int i = 8; i < 14; ++i) CHECK(hist[k].v[i] == ep.achieved[24][i - 8]);
    }
  }

  SUBCASE("original samples keep their stored history verbatim") {
    const RelabeledSample s = make_sample(ep, 10, 0);
    const std::vector<env::Observation> hist = relabeled_history(ep, s, false);
    REQUIRE(hist.size() == 10);
    for (int k = 0; k < 10; ++k) {
      const env::Observation& original = k == 0 ? ep.reset_obs : ep.obs[k - 1];
      CHECK(std::memcmp(hist[k].v.data(), original.v.data(), sizeof(float) * 14) == 0);
    }
  }
}

TEST_CASE("incremental feature extraction matches batched recomputation") {
  env::PushEnv environment(testing::small_oracle_env(), 9);
  Rng rng(10);
  SacState state = SacState::init(tiny_gru_config(), 11);
  for (int e = 0; e < 3; ++e) state.buffer.add(testing::random_episode(environment, rng));

  std::vector<RelabeledSample> batch;
  for (int i = 0; i < 24; ++i) {
    const int e = static_cast<int>(rng.uniform_int(0, state.buffer.size() - 1));
    const int t = static_cast<int>(rng.uniform_int(1, 50));
    const int f = rng.bernoulli(0.5) ? static_cast<int>(rng.uniform_int(t, 50)) : 0;
    batch.push_back(make_sample(state.buffer.get(e), t, f, e));
  }

  const detail::HistoryBatch hb = detail::make_history_batch(state.buffer, batch, false);
  const nets::Tensor batched =
      detail::features_numeric(FeatureVariant::kGru, &state.actor.gru, 8, hb);
  for (size_t i = 0; i < batch.size(); ++i) {
    const std::vector<env::Observation> hist =
        relabeled_history(state.buffer.get(batch[i].episode_index), batch[i], false);
    const nets::Tensor single = extract_features(FeatureVariant::kGru, &state.actor.gru, hist);
    for (int j = 0; j < 8; ++j)
      CHECK(std::abs(single.at(0, j) - batched.at(static_cast<int>(i), j)) < 1e-6f);
  }
}

TEST_CASE("replay buffer round-trips episodes losslessly") {
  env::PushEnv environment(testing::small_oracle_env(), 12);
  Rng rng(13);
  const Episode ep = testing::random_episode(environment, rng);
  ReplayBuffer buffer(4);
  buffer.add(ep);
  const Episode& back = buffer.get(0);
  CHECK(std::memcmp(back.reset_obs.v.data(), ep.reset_obs.v.data(), sizeof(float) * 14) == 0);
  for (int t = 0; t < 50; ++t) {
    CHECK(std::memcmp(back.obs[t].v.data(), ep.obs[t].v.data(), sizeof(float) * 14) == 0);
    CHECK(back.actions[t].dx == ep.actions[t].dx);
    CHECK(back.actions[t].substeps == ep.actions[t].substeps);
    CHECK(back.object_pos[t] == ep.object_pos[t]);
    CHECK(back.distances[t] == ep.distances[t]);
    CHECK(back.rewards[t] == ep.rewards[t]);
  }
  CHECK(back.goal_pos == ep.goal_pos);

  SUBCASE("capacity evicts oldest episodes first") {
    ReplayBuffer small(2);
    Episode a = ep, b = ep, c = ep;
    a.goal_pos = {1, 1};
    b.goal_pos = {2, 2};
    c.goal_pos = {3, 3};
    small.add(a);
    small.add(b);
    small.add(c);
    CHECK(small.size() == 2);
    CHECK(small.get(0).goal_pos == Vec2{3, 3});  // slot 0 overwritten first
    CHECK(small.get(1).goal_pos == Vec2{2, 2});
  }

  SUBCASE("incomplete episodes are rejected") {
    Episode bad = ep;
    bad.rewards.pop_back();
    ReplayBuffer rb(2);
    CHECK_THROWS_AS(rb.add(bad), std::invalid_argument);
  }
}

TEST_CASE("actor and critics share no parameter tensors") {
  SacState state = SacState::init(tiny_gru_config(), 14);
  std::set<const void*> seen;
  for (const auto& group :
       {state.actor_params(), state.critic_params(), state.target_params()}) {
    for (const auto& p : group) {
      CHECK(seen.insert(p.tensor).second);  // every tensor appears exactly once
    }
  }
}

TEST_CASE("critic targets") {
  env::PushEnv environment(testing::small_oracle_env(), 15);
  Rng rng(16);
  SacState state = SacState::init(tiny_vpm_config(), 17);
  state.buffer.add(testing::random_episode(environment, rng));

  SUBCASE("terminal samples with zero reward get exactly zero target") {
    Episode ep = state.buffer.get(0);
    RelabeledSample s = make_sample(ep, 50, 50);  // own-goal at the horizon: reward 0
    s.episode_index = 0;
    const std::vector<double> targets = critic_targets(state, {s});
    REQUIRE(targets.size() == 1);
    CHECK(targets[0] == 0.0);
  }

  SUBCASE("with clamped Q estimates every target lies in [-1/(1-gamma), 0]") {
    std::vector<RelabeledSample> batch;
    for (int i = 0; i < 64; ++i) {
      const int t = static_cast<int>(state.rng.uniform_int(1, 50));
      const int f = state.rng.bernoulli(0.5)
                        ? static_cast<int>(state.rng.uniform_int(t, 50))
                        : 0;
      batch.push_back(make_sample(state.buffer.get(0), t, f, 0));
    }
    const double lo = -1.0 / (1.0 - state.cfg.gamma);
    for (const double y : critic_targets(state, batch, /*clamp_q=*/true)) {
      CHECK(y >= lo - 1e-9);
      CHECK(y <= 0.0 + 1e-9);
    }
  }
}

TEST_CASE("sac_update") {
  env::PushEnv environment(testing::small_oracle_env(), 18);

  SUBCASE("identical states and batches give identical losses and parameters") {
    Rng epr(19);
    const Episode ep = [&] {
      env::PushEnv e2(testing::small_oracle_env(), 20);
      return testing::random_episode(e2, epr);
    }();
    SacState a = SacState::init(tiny_vpm_config(), 21);
    SacState b = SacState::init(tiny_vpm_config(), 21);
    a.buffer.add(ep);
    b.buffer.add(ep);
    const LossReport ra = sac_update(a, sample_batch(a, 16));
    const LossReport rb = sac_update(b, sample_batch(b, 16));
    CHECK(ra.critic_loss == rb.critic_loss);
    CHECK(ra.actor_loss == rb.actor_loss);
    CHECK(ra.alpha_loss == rb.alpha_loss);
    const auto pa = a.actor_params();
    const auto pb = b.actor_params();
    for (size_t p = 0; p < pa.size(); ++p)
      for (int i = 0; i < pa[p].tensor->size(); ++i)
        CHECK(pa[p].tensor->v[i] == pb[p].tensor->v[i]);
  }

  SUBCASE("critic loss decreases on a fixed tiny buffer") {
    Rng epr(22);
    SacState state = SacState::init(tiny_vpm_config(), 23);
    for (int e = 0; e < 2; ++e) state.buffer.add(testing::random_episode(environment, epr));
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 60; ++i) {
      const LossReport r = sac_update(state, sample_batch(state, 32));
      if (i == 0) first = r.critic_loss;
      last = r.critic_loss;
    }
    CHECK(last < first);
    CHECK(state.alpha() > 0.0);
    CHECK(std::isfinite(state.log_alpha));
  }

  SUBCASE("the recurrent variant trains end to end") {
    Rng epr(24);
    SacState state = SacState::init(tiny_gru_config(), 25);
    state.buffer.add(testing::random_episode(environment, epr));
    for (int i = 0; i < 3; ++i) {
      const LossReport r = sac_update(state, sample_batch(state, 8));
      CHECK(std::isfinite(r.critic_loss));
      CHECK(std::isfinite(r.actor_loss));
    }
  }
}

TEST_CASE("agent checkpoints round-trip") {
  SacState state = SacState::init(tiny_gru_config(), 26);
  state.log_alpha = -0.37f;
  const std::string path = "test_agent_ck.bin";
  save_agent(state, env::ObsMode::kOracle, path);
  LoadedAgent loaded = load_agent(path);
  CHECK(loaded.obs_mode == env::ObsMode::kOracle);
  CHECK(loaded.state.cfg.variant.features == FeatureVariant::kGru);
  CHECK(loaded.state.cfg.gru_hidden == 8);
  CHECK(loaded.state.log_alpha == doctest::Approx(-0.37f));
  auto pa = state.actor_params();
  auto pb = loaded.state.actor_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t p = 0; p < pa.size(); ++p) {
    REQUIRE(pa[p].name == pb[p].name);
    for (int i = 0; i < pa[p].tensor->size(); ++i)
      CHECK(pa[p].tensor->v[i] == pb[p].tensor->v[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("train") {
  TrainConfig tc;
  tc.sac = tiny_vpm_config();
  tc.env_cfg = testing::small_oracle_env();
  tc.env_cfg.ranges = env::SampleRanges::smoke_discs();
  tc.seed = 27;
  tc.learning_starts = 100;
  tc.gradient_steps_per_episode = 2;
  tc.eval_interval_episodes = 2;
  tc.eval_episodes = 3;

  SUBCASE("budget zero yields an initialized checkpoint and a bare header") {
    TrainConfig zero = tc;
    zero.total_env_steps = 0;
    zero.out_dir = "test_train_zero";
    const TrainResult r = train(zero);
    CHECK(r.env_steps == 0);
    CHECK(r.episodes == 0);
    CHECK(r.metrics_csv == std::string(kMetricsHeader));
    CHECK(std::filesystem::exists("test_train_zero/checkpoint_last.bin"));
    CHECK(std::filesystem::exists("test_train_zero/metrics.csv"));
    std::filesystem::remove_all("test_train_zero");
  }

  SUBCASE("same config and seed reproduce the metrics byte for byte") {
    TrainConfig t2 = tc;
    t2.total_env_steps = 300;
    const TrainResult a = train(t2);
    const TrainResult b = train(t2);
    CHECK(a.metrics_csv == b.metrics_csv);
    CHECK(a.metrics_csv.size() > std::string(kMetricsHeader).size());
  }
}

TEST_CASE("evaluate runs the deterministic protocol") {
  SacState state = SacState::init(tiny_vpm_config(), 28);
  EvalOptions eo;
  eo.episodes = 5;
  eo.seed = 29;
  const auto records = agent::evaluate(state, testing::small_oracle_env(), eo);
  REQUIRE(records.size() == 5);
  const auto again = agent::evaluate(state, testing::small_oracle_env(), eo);
  for (int i = 0; i < 5; ++i) {
    CHECK(records[i].episode_return == again[i].episode_return);
    CHECK(records[i].success == again[i].success);
  }
}
