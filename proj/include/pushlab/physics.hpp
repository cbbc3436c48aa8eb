#pragma once

#include <cmath>
#include <stdexcept>

#include "pushlab/util.hpp"

namespace pushlab::physics {

enum class ShapeKind { kDisc, kRectangle };

struct ShapeSpec {
  ShapeKind kind = ShapeKind::kDisc;
  double radius = 0.05;       // disc
  Vec2 half_extents{0.04, 0.04};  // rectangle
  double height = 0.05;       // metadata only, no effect on planar dynamics

  double bounding_radius() const {
    return kind == ShapeKind::kDisc ? radius : half_extents.norm();
  }

  // moment of inertia divided by mass, uniform density footprint
  double inertia_per_mass() const {
    if (kind == ShapeKind::kDisc) return 0.5 * radius * radius;
    return (half_extents.x * half_extents.x + half_extents.y * half_extents.y) / 3.0;
  }

  // lumped radius converting torsional friction to angular deceleration
  double effective_torsion_radius() const {
    if (kind == ShapeKind::kDisc) return radius;
    return 0.5 * (half_extents.x + half_extents.y);
  }
};

struct PhysParams {
  double mass = 0.5;      // kg
  double mu_k = 0.4;      // sliding friction coefficient (object-table)
  double mu_t = 0.005;    // torsional friction coefficient
  double damping = 0.01;  // velocity damping factor per second
  double mu_roll = 0.0001;  // recorded only; nothing rolls in the plane
  double g = 9.81;
};

struct BodyState {
  Vec2 pos;
  double theta = 0.0;  // normalized to (-pi, pi]
  Vec2 vel;
  double omega = 0.0;

  double kinetic_energy(double mass, double inertia) const {
    return 0.5 * mass * vel.norm_sq() + 0.5 * inertia * omega * omega;
  }
};

struct PusherState {
  Vec2 pos;
  double radius = 0.005;
  double max_speed = 0.3;   // m/s
  double servo_gain = 20.0; // 1/s
};

struct TableBounds {
  Vec2 lo{-0.2, -0.2};
  Vec2 hi{0.2, 0.2};

  Vec2 size() const { return hi - lo; }
  Vec2 center() const { return (lo + hi) * 0.5; }
  bool contains(const Vec2& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
  }
  Vec2 clamp(const Vec2& p) const {
    return {std::clamp(p.x, lo.x, hi.x), std::clamp(p.y, lo.y, hi.y)};
  }
};

struct WorldConfig {
  TableBounds table;
  double dt_substep = 0.001;        // robot control cycle
  double contact_stiffness = 2.5e4; // N/m
  double contact_damping = 100.0;   // N·s/m
  double contact_mu = 0.5;          // pusher-object tangential friction cap

  // Stiffness scaled with the object mass keeps the contact frequency fixed
  // (omega = 500/s, critically damped), so both gram-scale and kilogram-scale
  // objects stay stable at the 1 ms substep.
  void tune_contact_for_mass(double mass) {
    constexpr double kOmega = 500.0;
    contact_stiffness = mass * kOmega * kOmega;
    contact_damping = 2.0 * mass * kOmega;
  }
};

// velocity command toward target, proportional gain, saturated magnitude
inline Vec2 pusher_servo(const PusherState& pusher, const Vec2& target) {
  Vec2 cmd = (target - pusher.pos) * pusher.servo_gain;
  const double speed = cmd.norm();
  if (speed > pusher.max_speed) cmd = cmd * (pusher.max_speed / speed);
  return cmd;
}

struct ContactGeometry {
  bool touching = false;
  Vec2 normal;            // outward from the object surface toward the pusher
  double penetration = 0; // overlap depth, >= 0 when touching
  Vec2 point;             // deepest pusher point inside the object, world frame
};

inline ContactGeometry contact_geometry(const ShapeSpec& shape, const BodyState& object,
                                        const Vec2& pusher_pos, double pusher_radius) {
  ContactGeometry geo;
  if (shape.kind == ShapeKind::kDisc) {
    const Vec2 d = pusher_pos - object.pos;
    const double dist = d.norm();
    const double sep = dist - (shape.radius + pusher_radius);
    if (sep >= 0.0) return geo;
    geo.touching = true;
    geo.normal = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
    geo.penetration = -sep;
    geo.point = pusher_pos - geo.normal * pusher_radius;
    return geo;
  }
  // rectangle: work in the object frame
  const Vec2 q = rotate(pusher_pos - object.pos, -object.theta);
  const Vec2 h = shape.half_extents;
  const Vec2 clamped{std::clamp(q.x, -h.x, h.x), std::clamp(q.y, -h.y, h.y)};
  Vec2 n_local;
  double sep;
  if (q.x != clamped.x || q.y != clamped.y) {
    const Vec2 diff = q - clamped;
    const double dist = diff.norm();
    sep = dist - pusher_radius;
    n_local = diff * (1.0 / dist);
  } else {
    // pusher center inside the rectangle: exit through the nearest face
    const double dx = h.x - std::abs(q.x);
    const double dy = h.y - std::abs(q.y);
    if (dx < dy)
      n_local = {q.x >= 0.0 ? 1.0 : -1.0, 0.0};
    else
      n_local = {0.0, q.y >= 0.0 ? 1.0 : -1.0};
    sep = -(std::min(dx, dy) + pusher_radius);
  }
  if (sep >= 0.0) return geo;
  geo.touching = true;
  geo.normal = rotate(n_local, object.theta);
  geo.penetration = -sep;
  geo.point = object.pos + rotate(q - n_local * pusher_radius, object.theta);
  return geo;
}

struct ContactResult {
  bool touching = false;
  Vec2 force_object;  // total contact force on the object
  Vec2 force_pusher;  // reaction on the pusher
  double torque_object = 0.0;
  Vec2 point;
  double penetration = 0.0;
};

// Penalty contact: normal spring-damper plus a velocity-proportional tangential
// drag capped Coulomb-style at contact_mu times the normal force.
inline ContactResult resolve_contact(const ShapeSpec& shape, const BodyState& object,
                                     const PusherState& pusher, const Vec2& pusher_vel,
                                     const WorldConfig& cfg) {
  ContactResult out;
  const ContactGeometry geo = contact_geometry(shape, object, pusher.pos, pusher.radius);
  if (!geo.touching) return out;
  if (geo.penetration > 0.1 * pusher.radius)
    throw SimulationError("contact penetration exceeds 10% of the pusher radius");

  out.touching = true;
  out.point = geo.point;
  out.penetration = geo.penetration;

  const Vec2 r_vec = geo.point - object.pos;
  const Vec2 v_point = object.vel + perp(r_vec) * object.omega;
  const Vec2 v_rel = pusher_vel - v_point;
  const double approach = -dot(v_rel, geo.normal);

  const double f_n =
      std::max(0.0, cfg.contact_stiffness * geo.penetration + cfg.contact_damping * approach);

  const Vec2 tangent = perp(geo.normal);
  const double v_t = dot(v_rel, tangent);
  const double f_t_mag = std::min(cfg.contact_damping * std::abs(v_t), cfg.contact_mu * f_n);
  const double f_t = v_t >= 0.0 ? f_t_mag : -f_t_mag;

  out.force_object = geo.normal * (-f_n) + tangent * f_t;
  out.force_pusher = -out.force_object;
  out.torque_object = cross(r_vec, out.force_object);
  return out;
}

// Coulomb friction against the table. The speed decrement is mu_k * g * dt
// regardless of mass and never reverses the motion; torsional friction slows
// rotation through the lumped contact radius.
inline BodyState apply_friction(const BodyState& state, const PhysParams& params,
                                double torsion_radius, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("apply_friction: dt must be positive");
  BodyState out = state;
  const double speed = state.vel.norm();
  const double dec = params.mu_k * params.g * dt;
  if (speed <= dec)
    out.vel = {0.0, 0.0};
  else
    out.vel = state.vel * ((speed - dec) / speed);
  const double wdec = params.mu_t * params.g * dt / torsion_radius;
  if (std::abs(state.omega) <= wdec)
    out.omega = 0.0;
  else
    out.omega = state.omega - (state.omega > 0.0 ? wdec : -wdec);
  return out;
}

inline void apply_damping(BodyState& state, double damping, double dt) {
  const double factor = std::max(0.0, 1.0 - damping * dt);
  state.vel = state.vel * factor;
  state.omega *= factor;
}

inline void clamp_to_table(BodyState& state, const TableBounds& table) {
  if (state.pos.x < table.lo.x) {
    state.pos.x = table.lo.x;
    if (state.vel.x < 0.0) state.vel.x = 0.0;
  } else if (state.pos.x > table.hi.x) {
    state.pos.x = table.hi.x;
    if (state.vel.x > 0.0) state.vel.x = 0.0;
  }
  if (state.pos.y < table.lo.y) {
    state.pos.y = table.lo.y;
    if (state.vel.y < 0.0) state.vel.y = 0.0;
  } else if (state.pos.y > table.hi.y) {
    state.pos.y = table.hi.y;
    if (state.vel.y > 0.0) state.vel.y = 0.0;
  }
}

struct StepResult {
  BodyState object;
  PusherState pusher;
};

// n substeps of {servo pusher, resolve contact, integrate (semi-implicit
// Euler), damp, rub against the table, clamp to bounds}.
inline StepResult step_substeps(const BodyState& object_in, const ShapeSpec& shape,
                                const PhysParams& params, const PusherState& pusher_in,
                                const Vec2& servo_target, int n, const WorldConfig& cfg) {
  if (n < 10 || n > 600)
    throw std::invalid_argument("step_substeps: substep count outside [10, 600]");
  BodyState object = object_in;
  PusherState pusher = pusher_in;
  const double dt = cfg.dt_substep;
  const double inertia = params.mass * shape.inertia_per_mass();
  const double torsion_radius = shape.effective_torsion_radius();
  // the rod cannot be driven deeper than 80% of the instability threshold
  const double projection_cap = 0.08 * pusher.radius;

  for (int i = 0; i < n; ++i) {
    const Vec2 cmd = pusher_servo(pusher, servo_target);
    pusher.pos += cmd * dt;
    pusher.pos = cfg.table.clamp(pusher.pos);

    ContactGeometry geo = contact_geometry(shape, object, pusher.pos, pusher.radius);
    if (geo.touching && geo.penetration > projection_cap) {
      pusher.pos += geo.normal * (geo.penetration - projection_cap);
    }

    const ContactResult contact = resolve_contact(shape, object, pusher, cmd, cfg);
    if (contact.touching) {
      object.vel += contact.force_object * (dt / params.mass);
      object.omega += contact.torque_object * (dt / inertia);
    }
    apply_damping(object, params.damping, dt);
    object = apply_friction(object, params, torsion_radius, dt);
    object.pos += object.vel * dt;
    object.theta = wrap_angle(object.theta + object.omega * dt);
    clamp_to_table(object, cfg.table);
  }
  return {object, pusher};
}

}  // namespace pushlab::physics
