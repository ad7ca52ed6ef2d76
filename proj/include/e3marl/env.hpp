#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "e3marl/group.hpp"
#include "e3marl/rng.hpp"

// Cooperative Navigation: N agents cover N landmarks in the z = 0 plane.
// States are 3D point clouds; dynamics, reward, and observations are
// equivariant under all of E(3). Planarity is an invariant of the canonical
// trajectories, not enforced by projection, so transformed states evolve
// consistently.

namespace e3marl {

enum class EntityType { Agent, Landmark };

struct Entity {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  EntityType type = EntityType::Agent;
};

struct PointCloudState {
  std::vector<Entity> entities;  // agents first, then landmarks
  std::size_t num_agents = 0;

  std::size_t size() const { return entities.size(); }
};

struct ObservedEntity {
  Vec3 rel_position = Vec3::Zero();  // relative to the observing agent
  Vec3 velocity = Vec3::Zero();      // own absolute velocity, zero for others
  EntityType type = EntityType::Agent;
};

// Fully-relative observation from one agent's perspective. When
// absolute_self_position is set (compatibility with observations whose own
// position is absolute), the self entry carries x_i instead of zero.
struct Observation {
  std::vector<ObservedEntity> entities;
  std::size_t self_index = 0;
  std::size_t num_agents = 0;
  bool absolute_self_position = false;
};

using JointAction = std::vector<Vec3>;  // planar force commands, one per agent

struct NavigationParams {
  double dt = 0.1;
  double damping = 0.25;
  double max_speed = 1.0;
  double max_action = 1.0;
  double collision_radius = 0.2;
  double collision_penalty = 1.0;
  int episode_length = 25;
  double spawn_half_extent = 1.0;  // uniform box [-e, e]^2
};

inline Vec3 clip_norm(const Vec3& v, double max_norm) {
  const double n = v.norm();
  return n > max_norm ? Vec3(v * (max_norm / n)) : v;
}

// Agents and landmarks placed uniformly in the spawn box, zero velocities.
inline PointCloudState nav_reset(std::size_t num_agents, std::uint64_t seed,
                                 const NavigationParams& params = {}) {
  if (num_agents == 0) {
    throw std::invalid_argument("nav_reset: need at least one agent");
  }
  Rng rng(seed);
  PointCloudState s;
  s.num_agents = num_agents;
  const double e = params.spawn_half_extent;
  for (std::size_t k = 0; k < 2 * num_agents; ++k) {
    Entity ent;
    ent.type = k < num_agents ? EntityType::Agent : EntityType::Landmark;
    ent.position = Vec3(rng.uniform(-e, e), rng.uniform(-e, e), 0.0);
    s.entities.push_back(ent);
  }
  return s;
}

// Coverage term plus collision penalty, evaluated on the given state.
inline double nav_reward(const PointCloudState& s,
                         const NavigationParams& params = {}) {
  double r = 0.0;
  for (std::size_t l = s.num_agents; l < s.size(); ++l) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.num_agents; ++i) {
      best = std::min(best,
                      (s.entities[i].position - s.entities[l].position).norm());
    }
    r -= best;
  }
  for (std::size_t i = 0; i < s.num_agents; ++i) {
    for (std::size_t j = i + 1; j < s.num_agents; ++j) {
      if ((s.entities[i].position - s.entities[j].position).norm() <
          params.collision_radius) {
        r -= params.collision_penalty;
      }
    }
  }
  return r;
}

struct DynamicsResult {
  PointCloudState next;
  double reward = 0.0;
  std::size_t clipped_actions = 0;
};

// One step of the damped point-mass dynamics. Over-limit action norms are
// clipped, not rejected. Reward is evaluated on the post-step state.
inline DynamicsResult nav_dynamics(const PointCloudState& s,
                                   const JointAction& action,
                                   const NavigationParams& params = {}) {
  if (action.size() != s.num_agents) {
    throw std::invalid_argument("nav_dynamics: one action per agent required");
  }
  DynamicsResult out;
  out.next = s;
  for (std::size_t i = 0; i < s.num_agents; ++i) {
    Vec3 a = action[i];
    if (a.norm() > params.max_action) {
      a = clip_norm(a, params.max_action);
      ++out.clipped_actions;
    }
    Entity& ent = out.next.entities[i];
    Vec3 v = (1.0 - params.damping) * ent.velocity + a * params.dt;
    v = clip_norm(v, params.max_speed);
    ent.velocity = v;
    ent.position += v * params.dt;
  }
  out.reward = nav_reward(out.next, params);
  return out;
}

inline Observation nav_observe(const PointCloudState& s, std::size_t agent,
                               bool absolute_self_position = false) {
  if (agent >= s.num_agents) {
    throw std::invalid_argument("nav_observe: invalid agent index");
  }
  Observation o;
  o.self_index = agent;
  o.num_agents = s.num_agents;
  o.absolute_self_position = absolute_self_position;
  const Vec3 origin = s.entities[agent].position;
  for (std::size_t v = 0; v < s.size(); ++v) {
    ObservedEntity oe;
    oe.type = s.entities[v].type;
    if (v == agent) {
      oe.rel_position = absolute_self_position ? origin : Vec3::Zero();
      oe.velocity = s.entities[v].velocity;
    } else {
      oe.rel_position = s.entities[v].position - origin;
      oe.velocity = Vec3::Zero();  // other entities' velocities unobserved
    }
    o.entities.push_back(oe);
  }
  return o;
}

// Group actions L_g, K_g, H_g. Positions are translated and rotated;
// velocities, actions, and relative observations only rotate; entity types
// are invariant scalars.
inline PointCloudState apply_group(const GroupElement& g,
                                   const PointCloudState& s) {
  PointCloudState out = s;
  for (Entity& e : out.entities) {
    e.position = g.apply_point(e.position);
    e.velocity = g.apply_vector(e.velocity);
  }
  return out;
}

inline JointAction apply_group(const GroupElement& g, const JointAction& a) {
  JointAction out = a;
  for (Vec3& v : out) v = g.apply_vector(v);
  return out;
}

inline Observation apply_group(const GroupElement& g, const Observation& o) {
  Observation out = o;
  for (std::size_t v = 0; v < out.entities.size(); ++v) {
    ObservedEntity& oe = out.entities[v];
    if (v == o.self_index && o.absolute_self_position) {
      oe.rel_position = g.apply_point(oe.rel_position);
    } else {
      oe.rel_position = g.apply_vector(oe.rel_position);
    }
    oe.velocity = g.apply_vector(oe.velocity);
  }
  return out;
}

// Episode wrapper with time bookkeeping; one instance per rollout worker.
class NavigationEnv {
 public:
  explicit NavigationEnv(std::size_t num_agents, NavigationParams params = {})
      : num_agents_(num_agents), params_(params) {}

  const PointCloudState& reset(std::uint64_t seed) {
    state_ = nav_reset(num_agents_, seed, params_);
    t_ = 0;
    return state_;
  }

  struct StepResult {
    double reward = 0.0;
    bool done = false;
  };

  StepResult step(const JointAction& action) {
    DynamicsResult d = nav_dynamics(state_, action, params_);
    state_ = std::move(d.next);
    clipped_actions_ += d.clipped_actions;
    ++t_;
    return {d.reward, t_ >= params_.episode_length};
  }

  Observation observe(std::size_t agent) const {
    return nav_observe(state_, agent, absolute_self_position_);
  }

  const PointCloudState& state() const { return state_; }
  std::size_t num_agents() const { return num_agents_; }
  const NavigationParams& params() const { return params_; }
  int time() const { return t_; }
  std::size_t clipped_action_count() const { return clipped_actions_; }

  void set_absolute_self_position(bool v) { absolute_self_position_ = v; }
  bool absolute_self_position() const { return absolute_self_position_; }

 private:
  std::size_t num_agents_;
  NavigationParams params_;
  PointCloudState state_;
  int t_ = 0;
  std::size_t clipped_actions_ = 0;
  bool absolute_self_position_ = false;
};

// Line-delimited episode trace: one record per step.
inline void write_trace_record(std::ostream& os, int t,
                               const PointCloudState& s,
                               const JointAction& action, double reward) {
  os << "{\"t\":" << t << ",\"entities\":[";
  for (std::size_t v = 0; v < s.size(); ++v) {
    const Entity& e = s.entities[v];
    if (v) os << ",";
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "{\"type\":\"%s\",\"p\":[%.17g,%.17g,%.17g],"
                  "\"v\":[%.17g,%.17g,%.17g]}",
                  e.type == EntityType::Agent ? "agent" : "landmark",
                  e.position.x(), e.position.y(), e.position.z(),
                  e.velocity.x(), e.velocity.y(), e.velocity.z());
    os << buf;
  }
  os << "],\"actions\":[";
  for (std::size_t i = 0; i < action.size(); ++i) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s[%.17g,%.17g,%.17g]", i ? "," : "",
                  action[i].x(), action[i].y(), action[i].z());
    os << buf;
  }
  char rbuf[64];
  std::snprintf(rbuf, sizeof(rbuf), "%.17g", reward);
  os << "],\"reward\":" << rbuf << "}\n";
}

}  // namespace e3marl
