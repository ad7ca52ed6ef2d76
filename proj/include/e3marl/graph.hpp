#pragma once

#include <algorithm>
#include <numeric>
#include <utility>
#include <vector>

#include "e3marl/env.hpp"
#include "e3marl/group.hpp"

// Converts states, state-action pairs, and observations into Euclidean
// graphs with steerable features. Vertex order is deterministic (agents by
// index, then landmarks), so repeated builds are identical.

namespace e3marl {

struct GraphConfig {
  enum class EdgeMode { Complete, Knn };
  EdgeMode edge_mode = EdgeMode::Complete;
  std::size_t k = 2;  // neighbors per vertex in Knn mode

  void validate(std::size_t num_vertices) const {
    if (edge_mode == EdgeMode::Knn && (k < 1 || k >= num_vertices)) {
      throw std::invalid_argument("GraphConfig: knn degree must be in [1, " +
                                  std::to_string(num_vertices - 1) + "]");
    }
  }
};

struct EuclideanGraph {
  std::vector<Vec3> positions;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (u, v): u -> v

  IrrepSpec feature_spec;
  IrrepSpec attribute_spec;
  IrrepSpec edge_spec;
  std::vector<Eigen::VectorXd> node_features;
  std::vector<Eigen::VectorXd> node_attributes;
  std::vector<Eigen::VectorXd> edge_attributes;

  std::size_t num_vertices() const { return positions.size(); }
};

inline std::vector<std::pair<std::size_t, std::size_t>> complete_edges(
    std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(n * (n - 1));
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (u != v) edges.emplace_back(u, v);
    }
  }
  return edges;
}

// Directed edges from each vertex to its k nearest neighbors; distance ties
// break toward the lower vertex id. Coincident points are legal.
inline std::vector<std::pair<std::size_t, std::size_t>> knn_edges(
    const std::vector<Vec3>& positions, std::size_t k) {
  const std::size_t n = positions.size();
  if (k < 1 || k >= n) {
    throw std::invalid_argument("knn_edges: k must be in [1, n-1]");
  }
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(n * k);
  std::vector<std::size_t> order(n);
  for (std::size_t v = 0; v < n; ++v) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = (positions[a] - positions[v]).squaredNorm();
      const double db = (positions[b] - positions[v]).squaredNorm();
      return da != db ? da < db : a < b;
    });
    std::size_t taken = 0;
    for (std::size_t u : order) {
      if (u == v) continue;
      edges.emplace_back(v, u);
      if (++taken == k) break;
    }
  }
  return edges;
}

inline std::vector<std::pair<std::size_t, std::size_t>> build_edges(
    const std::vector<Vec3>& positions, const GraphConfig& cfg) {
  cfg.validate(positions.size());
  return cfg.edge_mode == GraphConfig::EdgeMode::Complete
             ? complete_edges(positions.size())
             : knn_edges(positions, cfg.k);
}

// Norm feature channels share the autodiff epsilon so values computed here
// match l2_norm_rows on live tensors.
inline double stabilized_norm(const Vec3& v, double eps = 1e-12) {
  return std::sqrt(v.squaredNorm() + eps);
}

// [velocity (1o), |velocity| (0e), action (1o), |action| (0e)]
inline const IrrepSpec& state_action_feature_spec() {
  static const IrrepSpec spec{{1, {1, Parity::Odd}},
                              {1, {0, Parity::Even}},
                              {1, {1, Parity::Odd}},
                              {1, {0, Parity::Even}}};
  return spec;
}

// [velocity (1o), |velocity| (0e)]
inline const IrrepSpec& observation_feature_spec() {
  static const IrrepSpec spec{{1, {1, Parity::Odd}}, {1, {0, Parity::Even}}};
  return spec;
}

// Entity-type one-hot over {agent, landmark}.
inline const IrrepSpec& entity_attribute_spec() {
  static const IrrepSpec spec{{2, {0, Parity::Even}}};
  return spec;
}

inline const IrrepSpec& edge_attribute_spec() {
  static const IrrepSpec spec{{1, {1, Parity::Odd}}};
  return spec;
}

namespace graph_detail {

inline Eigen::VectorXd type_one_hot(EntityType t) {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(2);
  a[t == EntityType::Agent ? 0 : 1] = 1.0;
  return a;
}

inline void fill_edge_attributes(EuclideanGraph& g) {
  g.edge_spec = edge_attribute_spec();
  g.edge_attributes.clear();
  g.edge_attributes.reserve(g.edges.size());
  for (const auto& [u, v] : g.edges) {
    g.edge_attributes.push_back(g.positions[u] - g.positions[v]);
  }
}

}  // namespace graph_detail

// State-action graph for centralized critics: one vertex per entity,
// landmarks padded with the zero action.
inline EuclideanGraph build_state_action_graph(const PointCloudState& s,
                                               const JointAction& action,
                                               const GraphConfig& cfg = {}) {
  if (action.size() != s.num_agents) {
    throw std::invalid_argument(
        "build_state_action_graph: one action per agent required");
  }
  EuclideanGraph g;
  g.feature_spec = state_action_feature_spec();
  g.attribute_spec = entity_attribute_spec();
  g.positions.reserve(s.size());
  for (std::size_t v = 0; v < s.size(); ++v) {
    const Entity& e = s.entities[v];
    g.positions.push_back(e.position);
    const Vec3 a = v < s.num_agents ? action[v] : Vec3::Zero();
    Eigen::VectorXd f(8);
    f.segment<3>(0) = e.velocity;
    f[3] = stabilized_norm(e.velocity);
    f.segment<3>(4) = a;
    f[7] = stabilized_norm(a);
    g.node_features.push_back(std::move(f));
    g.node_attributes.push_back(graph_detail::type_one_hot(e.type));
  }
  g.edges = build_edges(g.positions, cfg);
  graph_detail::fill_edge_attributes(g);
  return g;
}

struct ObservationGraph {
  EuclideanGraph graph;
  std::size_t self_vertex = 0;
};

// Observation graph for actors: relative positions, unobserved velocities
// zero-padded. A translation of the underlying state yields an identical
// graph (positions are relative unless the observation carries an absolute
// self position, in which case only edge differences stay translation-free).
inline ObservationGraph build_observation_graph(const Observation& obs,
                                                const GraphConfig& cfg = {}) {
  ObservationGraph out;
  out.self_vertex = obs.self_index;
  EuclideanGraph& g = out.graph;
  g.feature_spec = observation_feature_spec();
  g.attribute_spec = entity_attribute_spec();
  const Vec3 self_origin = obs.absolute_self_position
                               ? obs.entities[obs.self_index].rel_position
                               : Vec3::Zero();
  for (std::size_t v = 0; v < obs.entities.size(); ++v) {
    const ObservedEntity& e = obs.entities[v];
    g.positions.push_back(v == obs.self_index ? self_origin
                                              : Vec3(e.rel_position + self_origin));
    Eigen::VectorXd f(4);
    f.segment<3>(0) = e.velocity;
    f[3] = stabilized_norm(e.velocity);
    g.node_features.push_back(std::move(f));
    g.node_attributes.push_back(graph_detail::type_one_hot(e.type));
  }
  g.edges = build_edges(g.positions, cfg);
  graph_detail::fill_edge_attributes(g);
  return out;
}

// Whole-graph group action: positions as points, all features block-wise.
inline EuclideanGraph apply_group(const GroupElement& g,
                                  const EuclideanGraph& graph) {
  EuclideanGraph out = graph;
  for (Vec3& p : out.positions) p = g.apply_point(p);
  for (auto& f : out.node_features) {
    f = transform_steerable({graph.feature_spec, f}, g).data;
  }
  for (auto& a : out.node_attributes) {
    a = transform_steerable({graph.attribute_spec, a}, g).data;
  }
  for (auto& e : out.edge_attributes) {
    e = transform_steerable({graph.edge_spec, e}, g).data;
  }
  return out;
}

}  // namespace e3marl
