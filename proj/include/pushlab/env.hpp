#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "pushlab/physics.hpp"
#include "pushlab/util.hpp"
#include "pushlab/vision.hpp"

namespace pushlab::env {

constexpr int kObsDim = 14;        // [ee(2), object latent(6), goal latent(6)]
constexpr int kEpisodeLen = 50;    // fixed horizon, no early termination
constexpr double kGoalThreshold = 0.01;
constexpr double kFixedMuForMassSampling = 0.4;

enum class SamplerMode { kUniformIndependent, kExponentialMirrored };
enum class ObsMode { kOracle, kEncoder };

// ---------------------------------------------------------------------------
// randomization ranges

struct SampleRanges {
  double disc_radius_lo = 0.04;
  double disc_radius_hi = 0.055;
  double side_lo = 0.05;
  double side_hi = 0.11;
  double height_min = 0.046;
  double height_max_disc = 0.055;
  double height_max_rect = 0.08;  // additionally capped by the side lengths
  double mass_lo = 0.001;
  double mass_hi = 1.0;
  double mu_lo = 0.2;
  double mu_hi = 1.0;
  double mu_t_lo = 0.001;
  double mu_t_hi = 0.01;
  double damping = 0.01;
  double mu_roll = 0.0001;
  bool discs_only = false;

  // low sliding-friction-force evaluation regime
  static SampleRanges small_friction_eval() {
    SampleRanges r;
    r.mass_lo = 0.001;
    r.mass_hi = 0.01;
    r.mu_lo = 0.2;
    r.mu_hi = 0.3;
    r.height_min = 0.052;  // recorded for config fidelity; height is metadata
    return r;
  }

  // easy regime for the learning smoke test: heavy, grippy discs
  static SampleRanges smoke_discs() {
    SampleRanges r;
    r.discs_only = true;
    r.mass_lo = 0.5;
    r.mass_hi = 1.0;
    r.mu_lo = 0.8;
    r.mu_hi = 1.0;
    return r;
  }
};

struct SampledObject {
  physics::ShapeSpec shape;
  physics::PhysParams params;
};

// mass for a fixed friction coefficient from the boundary-weighted mixing
// value w = (1-x)(1-y) + x*y
inline double mass_from_xy(double x, double y, const SampleRanges& ranges) {
  const double f_min = ranges.mass_lo * ranges.mu_lo;
  const double f_max = ranges.mass_hi * ranges.mu_hi;
  const double w = (1.0 - x) * (1.0 - y) + x * y;
  return (f_max - f_min) / kFixedMuForMassSampling * w + f_min / kFixedMuForMassSampling;
}

// x ~ Exponential(scale 1/7) clipped to [0,1], y ~ Bernoulli(1/2); the mixing
// piles probability onto both ends of the friction-force range
inline double sample_mass_exponential(Rng& rng, const SampleRanges& ranges = {}) {
  const double x = std::min(rng.exponential(1.0 / 7.0), 1.0);
  const double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return mass_from_xy(x, y, ranges);
}

inline SampledObject sample_object(SamplerMode mode, Rng& rng,
                                   const SampleRanges& ranges = {}) {
  SampledObject out;
  const bool disc = ranges.discs_only ? true : rng.bernoulli(0.5);
  if (disc) {
    out.shape.kind = physics::ShapeKind::kDisc;
    out.shape.radius = rng.uniform(ranges.disc_radius_lo, ranges.disc_radius_hi);
    out.shape.height = rng.uniform(ranges.height_min,
                                   std::max(ranges.height_min, ranges.height_max_disc));
  } else {
    out.shape.kind = physics::ShapeKind::kRectangle;
    const double length = rng.uniform(ranges.side_lo, ranges.side_hi);
    const double width = rng.uniform(ranges.side_lo, ranges.side_hi);
    out.shape.half_extents = {0.5 * length, 0.5 * width};
    const double cap = std::min({ranges.height_max_rect, length, width});
    out.shape.height = rng.uniform(std::min(ranges.height_min, cap),
                                   std::max(ranges.height_min, cap));
  }
  if (mode == SamplerMode::kExponentialMirrored) {
    out.params.mass = sample_mass_exponential(rng, ranges);
    out.params.mu_k = kFixedMuForMassSampling;
  } else {
    out.params.mass = rng.uniform(ranges.mass_lo, ranges.mass_hi);
    out.params.mu_k = rng.uniform(ranges.mu_lo, ranges.mu_hi);
  }
  out.params.mu_t = rng.uniform(ranges.mu_t_lo, ranges.mu_t_hi);
  out.params.damping = ranges.damping;
  out.params.mu_roll = ranges.mu_roll;
  return out;
}

// ---------------------------------------------------------------------------
// observation, action, reward

struct Observation {
  std::array<float, kObsDim> v{};

  Vec2 ee() const { return {static_cast<double>(v[0]), static_cast<double>(v[1])}; }
  vision::LatentCode object_latent() const {
    vision::LatentCode c{};
    for (int i = 0; i < vision::kLatentDim; ++i) c[i] = v[2 + i];
    return c;
  }
  vision::LatentCode goal_latent() const {
    vision::LatentCode c{};
    for (int i = 0; i < vision::kLatentDim; ++i) c[i] = v[8 + i];
    return c;
  }
  void set_goal_latent(const vision::LatentCode& c) {
    for (int i = 0; i < vision::kLatentDim; ++i) v[8 + i] = c[i];
  }

  static Observation assemble(const Vec2& ee, const vision::LatentCode& z_o,
                              const vision::LatentCode& z_g) {
    Observation o;
    o.v[0] = static_cast<float>(ee.x);
    o.v[1] = static_cast<float>(ee.y);
    for (int i = 0; i < vision::kLatentDim; ++i) {
      o.v[2 + i] = z_o[i];
      o.v[8 + i] = z_g[i];
    }
    return o;
  }
};

struct Action {
  double dx = 0.0;      // desired EE offset, meters, in [-1, 1]
  double dy = 0.0;
  int substeps = 10;    // control cycles to run, in [10, 600]
};

constexpr double kSubstepCenter = 305.0;
constexpr double kSubstepSpan = 295.0;

// normalized policy output in [-1,1]^3 -> executable action
inline Action rescale_action(const std::array<double, 3>& u) {
  Action a;
  a.dx = std::clamp(u[0], -1.0, 1.0);
  a.dy = std::clamp(u[1], -1.0, 1.0);
  const double s = kSubstepCenter + kSubstepSpan * std::clamp(u[2], -1.0, 1.0);
  a.substeps = static_cast<int>(std::clamp(std::lround(s), 10l, 600l));
  return a;
}

inline std::array<double, 3> normalize_action(const Action& a) {
  return {a.dx, a.dy, (a.substeps - kSubstepCenter) / kSubstepSpan};
}

// sparse reward on ground-truth planar positions
inline double reward(const Vec2& object_pos, const Vec2& goal_pos) {
  return (object_pos - goal_pos).norm() >= kGoalThreshold ? -1.0 : 0.0;
}

// an episode succeeds iff the final-step distance is strictly below threshold
inline bool success(double final_distance) { return final_distance < kGoalThreshold; }

// ---------------------------------------------------------------------------
// environment

struct EpisodeConfig {
  physics::ShapeSpec shape;
  physics::PhysParams params;
  vision::Pose start_pose;
  vision::Pose goal_pose;
  Vec2 ee_start;
  double threshold = kGoalThreshold;
  int t_max = kEpisodeLen;
};

struct StepInfo {
  Vec2 object_pos;
  Vec2 goal_pos;
  double distance = 0.0;
  bool success = false;
};

struct EnvConfig {
  physics::WorldConfig world;
  SamplerMode sampler = SamplerMode::kUniformIndependent;
  ObsMode obs = ObsMode::kOracle;
  SampleRanges ranges;
  double min_start_goal_separation = 0.05;
  // EE position in observations divided by the table half-extent, putting it
  // on the same [-1, 1] scale as the latent centroid components
  bool normalize_ee_obs = true;
  const vision::EncoderModel* encoder = nullptr;  // required in encoder mode
};

class PushEnv {
 public:
  struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool truncated = false;
    StepInfo info;
  };

  PushEnv(const EnvConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    if (cfg_.obs == ObsMode::kEncoder && cfg_.encoder == nullptr)
      throw ConfigError("PushEnv: encoder mode requires an encoder model");
    camera_ = vision::Camera::covering(cfg_.world.table);
  }

  Observation reset(std::uint64_t seed) {
    rng_.reseed(seed);
    return reset();
  }

  Observation reset() {
    const SampledObject sampled = sample_object(cfg_.sampler, rng_, cfg_.ranges);
    ep_.shape = sampled.shape;
    ep_.params = sampled.params;
    world_ = cfg_.world;
    world_.tune_contact_for_mass(ep_.params.mass);

    const double margin = ep_.shape.bounding_radius();
    int tries = 0;
    for (;; ++tries) {
      if (tries >= 100)
        throw SimulationError("reset: could not place start/goal after 100 retries");
      ep_.start_pose = random_pose(margin);
      ep_.goal_pose = random_pose(margin);
      const double sep = (ep_.start_pose.pos - ep_.goal_pose.pos).norm();
      if (sep >= cfg_.min_start_goal_separation) break;
    }

    object_ = physics::BodyState{};
    object_.pos = ep_.start_pose.pos;
    object_.theta = ep_.start_pose.theta;

    for (tries = 0;; ++tries) {
      if (tries >= 100)
        throw SimulationError("reset: could not place the pusher after 100 retries");
      ep_.ee_start = {rng_.uniform(world_.table.lo.x, world_.table.hi.x),
                      rng_.uniform(world_.table.lo.y, world_.table.hi.y)};
      const auto geo =
          physics::contact_geometry(ep_.shape, object_, ep_.ee_start, pusher_.radius + 0.005);
      if (!geo.touching) break;
    }
    pusher_ = physics::PusherState{};
    pusher_.pos = ep_.ee_start;

    goal_latent_ = latent_at(ep_.goal_pose);
    t_ = 0;
    active_ = true;
    return observe();
  }

  StepResult step(const Action& action) {
    if (!active_) throw std::logic_error("step: episode is over, call reset first");
    if (action.substeps < 10 || action.substeps > 600)
      throw std::invalid_argument("step: substep count outside [10, 600]");

    const Vec2 target = world_.table.clamp(pusher_.pos + Vec2{action.dx, action.dy});
    const physics::StepResult advanced = physics::step_substeps(
        object_, ep_.shape, ep_.params, pusher_, target, action.substeps, world_);
    object_ = advanced.object;
    pusher_ = advanced.pusher;

    ++t_;
    StepResult out;
    out.info.object_pos = object_.pos;
    out.info.goal_pos = ep_.goal_pose.pos;
    out.info.distance = (object_.pos - ep_.goal_pose.pos).norm();
    out.info.success = out.info.distance < ep_.threshold;
    out.reward = reward(object_.pos, ep_.goal_pose.pos);
    out.truncated = t_ >= ep_.t_max;
    out.obs = observe();
    if (out.truncated) active_ = false;
    return out;
  }

  Observation observe() const {
    Vec2 ee = pusher_.pos;
    if (cfg_.normalize_ee_obs) {
      const Vec2 center = world_.table.center();
      const Vec2 half = world_.table.size() * 0.5;
      ee = {(ee.x - center.x) / half.x, (ee.y - center.y) / half.y};
    }
    return Observation::assemble(ee, latent_at({object_.pos, object_.theta}), goal_latent_);
  }

  const EpisodeConfig& episode() const { return ep_; }
  const physics::BodyState& object() const { return object_; }
  const physics::PusherState& pusher() const { return pusher_; }
  const physics::WorldConfig& world() const { return world_; }
  const vision::LatentCode& goal_latent() const { return goal_latent_; }
  int steps_done() const { return t_; }
  bool active() const { return active_; }
  Rng& rng() { return rng_; }

  vision::LatentCode latent_at(const vision::Pose& pose) const {
    if (cfg_.obs == ObsMode::kOracle)
      return vision::oracle_descriptor(ep_.shape, pose, world_.table);
    return vision::encode(*cfg_.encoder, vision::render_mask(ep_.shape, pose, camera_));
  }

 private:
  vision::Pose random_pose(double margin) {
    const auto& t = cfg_.world.table;
    vision::Pose p;
    p.pos = {rng_.uniform(t.lo.x + margin, t.hi.x - margin),
             rng_.uniform(t.lo.y + margin, t.hi.y - margin)};
    p.theta = rng_.uniform(-M_PI, M_PI);
    return p;
  }

  EnvConfig cfg_;
  Rng rng_;
  vision::Camera camera_;
  physics::WorldConfig world_;
  EpisodeConfig ep_;
  physics::BodyState object_;
  physics::PusherState pusher_;
  vision::LatentCode goal_latent_{};
  int t_ = 0;
  bool active_ = false;
};

// random masks over the randomization ranges, for autoencoder training
inline std::vector<vision::Mask> render_random_masks(int n, Rng& rng,
                                                     const physics::TableBounds& table,
                                                     const SampleRanges& ranges = {}) {
  const vision::Camera cam = vision::Camera::covering(table);
  std::vector<vision::Mask> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const SampledObject s = sample_object(SamplerMode::kUniformIndependent, rng, ranges);
    const double margin = s.shape.bounding_radius();
    vision::Pose pose;
    pose.pos = {rng.uniform(table.lo.x + margin, table.hi.x - margin),
                rng.uniform(table.lo.y + margin, table.hi.y - margin)};
    pose.theta = rng.uniform(-M_PI, M_PI);
    out.push_back(vision::render_mask(s.shape, pose, cam));
  }
  return out;
}

}  // namespace pushlab::env
