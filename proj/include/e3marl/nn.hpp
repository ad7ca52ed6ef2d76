#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "e3marl/autodiff.hpp"
#include "e3marl/graph.hpp"
#include "e3marl/steerable_ops.hpp"

// Steerable E(3)-equivariant message passing networks, invariant critic
// readouts, equivariant actor heads, and the MLP / flat-GCN baselines.

namespace e3marl {

struct IncompatibleArchitecture : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Batched graphs: disjoint union of Euclidean graphs flattened into tensors.

struct GraphBatch {
  std::size_t num_graphs = 0;
  IrrepSpec feature_spec;
  IrrepSpec attribute_spec;

  std::vector<std::size_t> vertex_offset;  // num_graphs + 1
  std::vector<std::size_t> graph_of_vertex;
  std::vector<std::size_t> edge_src, edge_dst;  // global vertex ids

  ad::Tensor node_features;    // [V x df]
  ad::Tensor node_attributes;  // [V x da]
  ad::Tensor edge_sh;          // [E x 4], (1, unit displacement)
  ad::Tensor edge_attr;        // [E x 3], x_u - x_v

  std::vector<double> in_degree_inv;   // per vertex, 0 when isolated
  std::vector<double> graph_size_inv;  // per graph
  std::vector<std::size_t> self_rows;  // observation batches only

  std::size_t total_vertices() const { return graph_of_vertex.size(); }
  std::size_t total_edges() const { return edge_src.size(); }
};

inline GraphBatch make_graph_batch(
    const std::vector<const EuclideanGraph*>& graphs,
    const std::vector<std::size_t>* self_vertices = nullptr) {
  if (graphs.empty()) throw std::invalid_argument("make_graph_batch: empty");
  GraphBatch b;
  b.num_graphs = graphs.size();
  b.feature_spec = graphs[0]->feature_spec;
  b.attribute_spec = graphs[0]->attribute_spec;
  std::size_t total_v = 0, total_e = 0;
  b.vertex_offset.push_back(0);
  for (const EuclideanGraph* g : graphs) {
    if (g->feature_spec != b.feature_spec ||
        g->attribute_spec != b.attribute_spec) {
      throw std::invalid_argument("make_graph_batch: mixed specs");
    }
    total_v += g->num_vertices();
    total_e += g->edges.size();
    b.vertex_offset.push_back(total_v);
  }
  const std::size_t df = b.feature_spec.dim();
  const std::size_t da = b.attribute_spec.dim();
  b.node_features = ad::Tensor({total_v, df});
  b.node_attributes = ad::Tensor({total_v, da});
  b.edge_sh = ad::Tensor({total_e, 4});
  b.edge_attr = ad::Tensor({total_e, 3});
  b.graph_of_vertex.resize(total_v);
  b.in_degree_inv.assign(total_v, 0.0);
  b.edge_src.reserve(total_e);
  b.edge_dst.reserve(total_e);

  std::vector<std::size_t> in_degree(total_v, 0);
  std::size_t voff = 0, eoff = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const EuclideanGraph& g = *graphs[gi];
    b.graph_size_inv.push_back(1.0 / static_cast<double>(g.num_vertices()));
    for (std::size_t v = 0; v < g.num_vertices(); ++v) {
      b.graph_of_vertex[voff + v] = gi;
      for (std::size_t c = 0; c < df; ++c) {
        b.node_features.at(voff + v, c) = g.node_features[v][c];
      }
      for (std::size_t c = 0; c < da; ++c) {
        b.node_attributes.at(voff + v, c) = g.node_attributes[v][c];
      }
    }
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      b.edge_src.push_back(voff + g.edges[e].first);
      b.edge_dst.push_back(voff + g.edges[e].second);
      ++in_degree[voff + g.edges[e].second];
      const Vec3 rel = g.edge_attributes[e];
      for (int c = 0; c < 3; ++c) b.edge_attr.at(eoff + e, c) = rel[c];
      const double n = rel.norm();
      b.edge_sh.at(eoff + e, 0) = 1.0;
      if (n > 0.0) {  // coincident endpoints map to the zero l=1 embedding
        for (int c = 0; c < 3; ++c) b.edge_sh.at(eoff + e, c + 1) = rel[c] / n;
      }
    }
    voff += g.num_vertices();
    eoff += g.edges.size();
  }
  for (std::size_t v = 0; v < total_v; ++v) {
    if (in_degree[v] > 0) b.in_degree_inv[v] = 1.0 / in_degree[v];
  }
  if (self_vertices) {
    if (self_vertices->size() != graphs.size()) {
      throw std::invalid_argument("make_graph_batch: one self vertex per graph");
    }
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
      if ((*self_vertices)[gi] >= graphs[gi]->num_vertices()) {
        throw std::invalid_argument("make_graph_batch: self vertex out of range");
      }
      b.self_rows.push_back(b.vertex_offset[gi] + (*self_vertices)[gi]);
    }
  }
  return b;
}

// State-action batch with the raw action columns kept separate so a live
// (differentiable) action tensor can replace one agent's rows.
struct StateActionBatch {
  GraphBatch geometry;
  ad::Tensor velocity_part;  // [V x 4]: velocity, |velocity|
  ad::Tensor actions;        // [V x 3]: per-vertex action (zero on landmarks)
  std::size_t num_agents = 0;

  std::vector<std::size_t> agent_rows(std::size_t agent) const {
    std::vector<std::size_t> rows;
    rows.reserve(geometry.num_graphs);
    for (std::size_t b = 0; b < geometry.num_graphs; ++b) {
      rows.push_back(geometry.vertex_offset[b] + agent);
    }
    return rows;
  }
};

inline StateActionBatch make_state_action_batch(
    const std::vector<const PointCloudState*>& states,
    const std::vector<const JointAction*>& actions, const GraphConfig& cfg) {
  if (states.size() != actions.size() || states.empty()) {
    throw std::invalid_argument("make_state_action_batch: size mismatch");
  }
  std::vector<EuclideanGraph> graphs;
  graphs.reserve(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    graphs.push_back(build_state_action_graph(*states[i], *actions[i], cfg));
  }
  std::vector<const EuclideanGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  StateActionBatch out;
  out.geometry = make_graph_batch(ptrs);
  out.num_agents = states[0]->num_agents;
  const std::size_t total_v = out.geometry.total_vertices();
  out.velocity_part = ad::Tensor({total_v, 4});
  out.actions = ad::Tensor({total_v, 3});
  for (std::size_t v = 0; v < total_v; ++v) {
    for (std::size_t c = 0; c < 4; ++c) {
      out.velocity_part.at(v, c) = out.geometry.node_features.at(v, c);
    }
    for (std::size_t c = 0; c < 3; ++c) {
      out.actions.at(v, c) = out.geometry.node_features.at(v, 4 + c);
    }
  }
  return out;
}

inline GraphBatch make_observation_batch(
    const std::vector<const Observation*>& observations,
    const GraphConfig& cfg) {
  std::vector<EuclideanGraph> graphs;
  std::vector<std::size_t> selves;
  graphs.reserve(observations.size());
  for (const Observation* o : observations) {
    ObservationGraph og = build_observation_graph(*o, cfg);
    graphs.push_back(std::move(og.graph));
    selves.push_back(og.self_vertex);
  }
  std::vector<const EuclideanGraph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_graph_batch(ptrs, &selves);
}

// ---------------------------------------------------------------------------
// E3-MP layer

inline ad::Tensor init_cg_weights(const CGProduct& cg, Rng& rng) {
  // Fan-in per output block: number of weighted terms feeding one channel.
  std::map<std::size_t, double> fan;
  for (const auto& ins : cg.instructions()) {
    fan[ins.out_offset] += static_cast<double>(ins.mult_a * ins.mult_b);
  }
  ad::Tensor w({cg.weight_count()});
  for (const auto& ins : cg.instructions()) {
    const double s = std::sqrt(3.0 / std::max(1.0, fan[ins.out_offset]));
    const std::size_t count = ins.mult_a * ins.mult_b * ins.mult_out;
    for (std::size_t i = 0; i < count; ++i) {
      w.data[ins.weight_offset + i] = rng.uniform(-s, s);
    }
  }
  return w;
}

inline ad::Var ones_column(ad::Tape& tape, std::size_t rows) {
  ad::Tensor t({rows, 1});
  std::fill(t.data.begin(), t.data.end(), 1.0);
  return tape.constant(std::move(t));
}

// One message-passing round. Per edge (u -> v) the message is the gated CG
// product of (features_u ++ edge attribute) with the edge's spherical
// harmonics; per vertex, messages aggregate by mean and the update is a CG
// product with the node attribute. Positions and edges are untouched, and
// only relative positions enter, so the layer is E(3)-equivariant.
class E3MPLayer {
 public:
  E3MPLayer(const std::string& prefix, const IrrepSpec& in_spec,
            const IrrepSpec& attr_spec, const IrrepSpec& edge_spec,
            std::size_t hidden_scalars, std::size_t hidden_vectors,
            ad::ParameterMap& params, Rng& rng)
      : hs_(hidden_scalars),
        hv_(hidden_vectors),
        in_spec_(in_spec),
        gated_spec_{{hidden_scalars, {0, Parity::Even}},
                    {hidden_vectors, {0, Parity::Even}},
                    {hidden_vectors, {1, Parity::Odd}}},
        hidden_spec_{{hidden_scalars, {0, Parity::Even}},
                     {hidden_vectors, {1, Parity::Odd}}},
        message_cg_(concat_specs(in_spec, edge_spec), sh_l1_spec(), gated_spec_),
        update_cg_(concat_specs(in_spec, hidden_spec_), attr_spec, hidden_spec_),
        msg_w_(&params.create(prefix + ".msg_w", init_cg_weights(message_cg_, rng))),
        upd_w_(&params.create(prefix + ".upd_w", init_cg_weights(update_cg_, rng))) {}

  ad::Var forward(ad::Tape& tape, const GraphBatch& batch, ad::Var features,
                  bool trainable) const {
    if (features.value().shape[1] != in_spec_.dim()) {
      throw std::invalid_argument("E3MPLayer: feature spec mismatch, expected " +
                                  in_spec_.to_string());
    }
    ad::Var mw = trainable ? tape.leaf(*msg_w_) : tape.constant(msg_w_->value);
    ad::Var uw = trainable ? tape.leaf(*upd_w_) : tape.constant(upd_w_->value);

    ad::Var src = ad::gather_rows(features, batch.edge_src);
    ad::Var a = ad::concat({src, tape.constant(batch.edge_attr)}, 1);
    ad::Var pre = ad::cg_product_rows(message_cg_, a,
                                      tape.constant(batch.edge_sh), mw);
    ad::Var msg = ad::gated_nonlinearity_rows(pre, hs_, hv_);
    ad::Var agg = ad::scale_rows(
        ad::scatter_add_rows(msg, batch.edge_dst, batch.total_vertices()),
        batch.in_degree_inv);
    ad::Var u = ad::concat({features, agg}, 1);
    return ad::cg_product_rows(update_cg_, u,
                               tape.constant(batch.node_attributes), uw);
  }

  const IrrepSpec& in_spec() const { return in_spec_; }
  const IrrepSpec& out_spec() const { return hidden_spec_; }
  std::size_t hidden_scalars() const { return hs_; }
  std::size_t hidden_vectors() const { return hv_; }

 private:
  std::size_t hs_, hv_;
  IrrepSpec in_spec_, gated_spec_, hidden_spec_;
  CGProduct message_cg_, update_cg_;
  ad::Parameter* msg_w_;
  ad::Parameter* upd_w_;
};

// Single-graph convenience forward: returns the graph with updated features.
inline EuclideanGraph e3mp_forward(const E3MPLayer& layer,
                                   const EuclideanGraph& graph) {
  std::vector<const EuclideanGraph*> ptrs{&graph};
  GraphBatch batch = make_graph_batch(ptrs);
  ad::Tape tape;
  ad::Var out = layer.forward(tape, batch, tape.constant(batch.node_features),
                              /*trainable=*/false);
  EuclideanGraph result = graph;
  result.feature_spec = layer.out_spec();
  const std::size_t d = layer.out_spec().dim();
  for (std::size_t v = 0; v < graph.num_vertices(); ++v) {
    Eigen::VectorXd f(static_cast<long>(d));
    for (std::size_t c = 0; c < d; ++c) f[c] = out.value().at(v, c);
    result.node_features[v] = std::move(f);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Actor / critic interfaces shared by all architectures

class CriticNetwork {
 public:
  virtual ~CriticNetwork() = default;
  virtual ad::ParameterMap& params() = 0;
  virtual const ad::ParameterMap& params() const = 0;
  virtual std::string architecture() const = 0;
  virtual std::unique_ptr<CriticNetwork> clone() const = 0;

  virtual double value(const PointCloudState& s, const JointAction& a) const = 0;
  virtual ad::Var forward(ad::Tape& tape,
                          const std::vector<const PointCloudState*>& states,
                          const std::vector<const JointAction*>& actions,
                          bool trainable) const = 0;
  // Q with agent's action columns replaced by a live [B x 3] tensor.
  virtual ad::Var forward_replaced(
      ad::Tape& tape, const std::vector<const PointCloudState*>& states,
      const std::vector<const JointAction*>& actions, std::size_t agent,
      ad::Var live_actions, bool trainable) const = 0;
};

class ActorNetwork {
 public:
  virtual ~ActorNetwork() = default;
  virtual ad::ParameterMap& params() = 0;
  virtual const ad::ParameterMap& params() const = 0;
  virtual std::string architecture() const = 0;
  virtual bool supports_variable_entities() const = 0;
  virtual std::unique_ptr<ActorNetwork> clone() const = 0;

  virtual Vec3 act(const Observation& obs) const = 0;
  virtual ad::Var forward(ad::Tape& tape,
                          const std::vector<const Observation*>& observations,
                          bool trainable) const = 0;  // [n x 3]
};

// ---------------------------------------------------------------------------
// SEGNN-style networks

struct SegnnConfig {
  std::size_t layers = 2;
  std::size_t hidden_scalars = 32;
  std::size_t hidden_vectors = 8;
};

class SegnnCritic : public CriticNetwork {
 public:
  SegnnCritic(SegnnConfig cfg, GraphConfig gcfg, std::uint64_t init_seed)
      : cfg_(cfg), gcfg_(gcfg), init_seed_(init_seed) {
    Rng rng(init_seed);
    IrrepSpec in = state_action_feature_spec();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      layers_.emplace_back("critic.layer" + std::to_string(l), in,
                           entity_attribute_spec(), edge_attribute_spec(),
                           cfg.hidden_scalars, cfg.hidden_vectors, params_, rng);
      in = layers_.back().out_spec();
    }
    const double s = std::sqrt(3.0 / static_cast<double>(cfg.hidden_scalars));
    ad::Tensor w({cfg.hidden_scalars, 1});
    for (double& x : w.data) x = rng.uniform(-s, s);
    w_out_ = &params_.create("critic.readout.w", std::move(w));
    b_out_ = &params_.create("critic.readout.b", ad::Tensor({1, 1}));
  }

  ad::ParameterMap& params() override { return params_; }
  const ad::ParameterMap& params() const override { return params_; }
  std::string architecture() const override { return "segnn"; }

  std::unique_ptr<CriticNetwork> clone() const override {
    auto copy = std::make_unique<SegnnCritic>(cfg_, gcfg_, init_seed_);
    copy->params_.copy_values_from(params_);
    return copy;
  }

  // Invariant readout: mean of the scalar channels per graph, then linear.
  ad::Var forward_features(ad::Tape& tape, const GraphBatch& batch,
                           ad::Var features, bool trainable) const {
    for (const auto& layer : layers_) {
      features = layer.forward(tape, batch, features, trainable);
    }
    ad::Var scalars = ad::slice(features, 1, 0, cfg_.hidden_scalars);
    ad::Var pooled = ad::scale_rows(
        ad::scatter_add_rows(scalars, batch.graph_of_vertex, batch.num_graphs),
        batch.graph_size_inv);
    ad::Var w = trainable ? tape.leaf(*w_out_) : tape.constant(w_out_->value);
    ad::Var b = trainable ? tape.leaf(*b_out_) : tape.constant(b_out_->value);
    return ad::add(ad::matmul(pooled, w),
                   ad::matmul(ones_column(tape, batch.num_graphs), b));
  }

  ad::Var forward(ad::Tape& tape,
                  const std::vector<const PointCloudState*>& states,
                  const std::vector<const JointAction*>& actions,
                  bool trainable) const override {
    StateActionBatch sab = make_state_action_batch(states, actions, gcfg_);
    return forward_features(tape, sab.geometry,
                            tape.constant(sab.geometry.node_features),
                            trainable);
  }

  ad::Var forward_replaced(ad::Tape& tape,
                           const std::vector<const PointCloudState*>& states,
                           const std::vector<const JointAction*>& actions,
                           std::size_t agent, ad::Var live_actions,
                           bool trainable) const override {
    StateActionBatch sab = make_state_action_batch(states, actions, gcfg_);
    if (agent >= sab.num_agents) {
      throw std::invalid_argument("forward_replaced: invalid agent index");
    }
    const std::vector<std::size_t> rows = sab.agent_rows(agent);
    ad::Tensor base = sab.actions;
    for (std::size_t r : rows) {
      for (std::size_t c = 0; c < 3; ++c) base.at(r, c) = 0.0;
    }
    ad::Var actions_full =
        ad::add(tape.constant(std::move(base)),
                ad::scatter_add_rows(live_actions, rows,
                                     sab.geometry.total_vertices()));
    ad::Var norms = ad::l2_norm_rows(actions_full);
    ad::Var features = ad::concat(
        {tape.constant(sab.velocity_part), actions_full, norms}, 1);
    return forward_features(tape, sab.geometry, features, trainable);
  }

  double value(const PointCloudState& s, const JointAction& a) const override {
    ad::Tape tape;
    std::vector<const PointCloudState*> ss{&s};
    std::vector<const JointAction*> as{&a};
    return forward(tape, ss, as, false).value().data[0];
  }

  // Q of an arbitrary prebuilt graph (property tests transform graphs).
  double value_graph(const EuclideanGraph& graph) const {
    std::vector<const EuclideanGraph*> ptrs{&graph};
    GraphBatch batch = make_graph_batch(ptrs);
    ad::Tape tape;
    return forward_features(tape, batch, tape.constant(batch.node_features),
                            false)
        .value()
        .data[0];
  }

  const GraphConfig& graph_config() const { return gcfg_; }
  const SegnnConfig& config() const { return cfg_; }

 private:
  SegnnConfig cfg_;
  GraphConfig gcfg_;
  std::uint64_t init_seed_;
  ad::ParameterMap params_;
  std::vector<E3MPLayer> layers_;
  ad::Parameter* w_out_ = nullptr;
  ad::Parameter* b_out_ = nullptr;
};

class SegnnActor : public ActorNetwork {
 public:
  SegnnActor(SegnnConfig cfg, GraphConfig gcfg, double max_action,
             std::uint64_t init_seed)
      : cfg_(cfg),
        gcfg_(gcfg),
        max_action_(max_action),
        init_seed_(init_seed),
        readout_cg_({{cfg.hidden_vectors, {1, Parity::Odd}}},
                    {{1, {0, Parity::Even}}}, {{1, {1, Parity::Odd}}}) {
    Rng rng(init_seed);
    IrrepSpec in = observation_feature_spec();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      layers_.emplace_back("actor.layer" + std::to_string(l), in,
                           entity_attribute_spec(), edge_attribute_spec(),
                           cfg.hidden_scalars, cfg.hidden_vectors, params_, rng);
      in = layers_.back().out_spec();
    }
    w_out_ = &params_.create("actor.readout.w",
                             init_cg_weights(readout_cg_, rng));
  }

  ad::ParameterMap& params() override { return params_; }
  const ad::ParameterMap& params() const override { return params_; }
  std::string architecture() const override { return "segnn"; }
  bool supports_variable_entities() const override { return true; }

  std::unique_ptr<ActorNetwork> clone() const override {
    auto copy = std::make_unique<SegnnActor>(cfg_, gcfg_, max_action_, init_seed_);
    copy->params_.copy_values_from(params_);
    return copy;
  }

  // Equivariant readout: linear combination of the self vertex's degree-1
  // channels (a CG product with the constant scalar 1), then norm clipping.
  ad::Var forward_batch(ad::Tape& tape, const GraphBatch& batch,
                        bool trainable) const {
    if (batch.self_rows.size() != batch.num_graphs) {
      throw std::invalid_argument("SegnnActor: batch lacks self vertices");
    }
    ad::Var features = tape.constant(batch.node_features);
    for (const auto& layer : layers_) {
      features = layer.forward(tape, batch, features, trainable);
    }
    ad::Var self_rows = ad::gather_rows(features, batch.self_rows);
    ad::Var vecs = ad::slice(self_rows, 1, cfg_.hidden_scalars,
                             3 * cfg_.hidden_vectors);
    ad::Var w = trainable ? tape.leaf(*w_out_) : tape.constant(w_out_->value);
    ad::Var out = ad::cg_product_rows(readout_cg_, vecs,
                                      ones_column(tape, batch.num_graphs), w);
    return ad::clip_rows_by_norm(out, max_action_);
  }

  ad::Var forward(ad::Tape& tape,
                  const std::vector<const Observation*>& observations,
                  bool trainable) const override {
    GraphBatch batch = make_observation_batch(observations, gcfg_);
    return forward_batch(tape, batch, trainable);
  }

  Vec3 act(const Observation& obs) const override {
    ad::Tape tape;
    std::vector<const Observation*> ptrs{&obs};
    ad::Var out = forward(tape, ptrs, false);
    return Vec3(out.value().at(0, 0), out.value().at(0, 1),
                out.value().at(0, 2));
  }

  // Action for an arbitrary prebuilt observation graph.
  Vec3 act_graph(const EuclideanGraph& graph, std::size_t self_vertex) const {
    std::vector<const EuclideanGraph*> ptrs{&graph};
    std::vector<std::size_t> selves{self_vertex};
    GraphBatch batch = make_graph_batch(ptrs, &selves);
    ad::Tape tape;
    ad::Var out = forward_batch(tape, batch, false);
    return Vec3(out.value().at(0, 0), out.value().at(0, 1),
                out.value().at(0, 2));
  }

  double max_action() const { return max_action_; }
  const GraphConfig& graph_config() const { return gcfg_; }
  const SegnnConfig& config() const { return cfg_; }

 private:
  SegnnConfig cfg_;
  GraphConfig gcfg_;
  double max_action_;
  std::uint64_t init_seed_;
  CGProduct readout_cg_;
  ad::ParameterMap params_;
  std::vector<E3MPLayer> layers_;
  ad::Parameter* w_out_ = nullptr;
};

// ---------------------------------------------------------------------------
// MLP baseline (fixed input dimension, no symmetry guarantee)

class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& prefix, std::vector<std::size_t> dims,
      ad::ParameterMap& params, Rng& rng) {
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      const double s = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
      ad::Tensor w({dims[l], dims[l + 1]});
      for (double& x : w.data) x = rng.uniform(-s, s);
      ws_.push_back(&params.create(prefix + ".w" + std::to_string(l), std::move(w)));
      bs_.push_back(&params.create(prefix + ".b" + std::to_string(l),
                                   ad::Tensor({1, dims[l + 1]})));
    }
  }

  ad::Var forward(ad::Tape& tape, ad::Var x, bool trainable) const {
    const std::size_t rows = x.value().shape[0];
    ad::Var ones = ones_column(tape, rows);
    for (std::size_t l = 0; l < ws_.size(); ++l) {
      ad::Var w = trainable ? tape.leaf(*ws_[l]) : tape.constant(ws_[l]->value);
      ad::Var b = trainable ? tape.leaf(*bs_[l]) : tape.constant(bs_[l]->value);
      x = ad::add(ad::matmul(x, w), ad::matmul(ones, b));
      if (l + 1 < ws_.size()) x = ad::relu(x);
    }
    return x;
  }

 private:
  std::vector<ad::Parameter*> ws_;
  std::vector<ad::Parameter*> bs_;
};

// Flat layouts: per entity [rel_pos(3), velocity(3), type(2)].
inline std::size_t observation_flat_dim(std::size_t num_entities) {
  return 8 * num_entities;
}
inline std::size_t state_action_flat_dim(std::size_t num_entities,
                                         std::size_t num_agents) {
  return 8 * num_entities + 3 * num_agents;
}

inline void flatten_observation_into(const Observation& o, double* out) {
  std::size_t k = 0;
  for (const ObservedEntity& e : o.entities) {
    for (int c = 0; c < 3; ++c) out[k++] = e.rel_position[c];
    for (int c = 0; c < 3; ++c) out[k++] = e.velocity[c];
    out[k++] = e.type == EntityType::Agent ? 1.0 : 0.0;
    out[k++] = e.type == EntityType::Landmark ? 1.0 : 0.0;
  }
}

inline void flatten_state_into(const PointCloudState& s, double* out) {
  std::size_t k = 0;
  for (const Entity& e : s.entities) {
    for (int c = 0; c < 3; ++c) out[k++] = e.position[c];
    for (int c = 0; c < 3; ++c) out[k++] = e.velocity[c];
    out[k++] = e.type == EntityType::Agent ? 1.0 : 0.0;
    out[k++] = e.type == EntityType::Landmark ? 1.0 : 0.0;
  }
}

struct MlpConfig {
  std::size_t hidden = 128;
  std::size_t depth = 2;  // hidden layers
};

class MlpActor : public ActorNetwork {
 public:
  MlpActor(std::size_t num_entities, MlpConfig cfg, double max_action,
           std::uint64_t init_seed)
      : num_entities_(num_entities),
        cfg_(cfg),
        max_action_(max_action),
        init_seed_(init_seed) {
    Rng rng(init_seed);
    std::vector<std::size_t> dims{observation_flat_dim(num_entities)};
    for (std::size_t i = 0; i < cfg.depth; ++i) dims.push_back(cfg.hidden);
    dims.push_back(2);  // planar output, z is padded with zero
    net_ = Mlp("actor", dims, params_, rng);
  }

  ad::ParameterMap& params() override { return params_; }
  const ad::ParameterMap& params() const override { return params_; }
  std::string architecture() const override { return "mlp"; }
  bool supports_variable_entities() const override { return false; }

  std::unique_ptr<ActorNetwork> clone() const override {
    auto copy = std::make_unique<MlpActor>(num_entities_, cfg_, max_action_,
                                           init_seed_);
    copy->params_.copy_values_from(params_);
    return copy;
  }

  ad::Var forward(ad::Tape& tape,
                  const std::vector<const Observation*>& observations,
                  bool trainable) const override {
    const std::size_t dim = observation_flat_dim(num_entities_);
    ad::Tensor input({observations.size(), dim});
    for (std::size_t i = 0; i < observations.size(); ++i) {
      if (observations[i]->entities.size() != num_entities_) {
        throw IncompatibleArchitecture(
            "MLP actor has a fixed input for " +
            std::to_string(num_entities_) + " entities, observation has " +
            std::to_string(observations[i]->entities.size()));
      }
      flatten_observation_into(*observations[i], input.data.data() + i * dim);
    }
    ad::Var xy = net_.forward(tape, tape.constant(std::move(input)), trainable);
    ad::Var z = tape.constant(ad::Tensor({observations.size(), 1}));
    return ad::clip_rows_by_norm(ad::concat({xy, z}, 1), max_action_);
  }

  Vec3 act(const Observation& obs) const override {
    ad::Tape tape;
    std::vector<const Observation*> ptrs{&obs};
    ad::Var out = forward(tape, ptrs, false);
    return Vec3(out.value().at(0, 0), out.value().at(0, 1),
                out.value().at(0, 2));
  }

 private:
  std::size_t num_entities_;
  MlpConfig cfg_;
  double max_action_;
  std::uint64_t init_seed_;
  ad::ParameterMap params_;
  Mlp net_;
};

class MlpCritic : public CriticNetwork {
 public:
  MlpCritic(std::size_t num_entities, std::size_t num_agents, MlpConfig cfg,
            std::uint64_t init_seed)
      : num_entities_(num_entities),
        num_agents_(num_agents),
        cfg_(cfg),
        init_seed_(init_seed) {
    Rng rng(init_seed);
    std::vector<std::size_t> dims{state_action_flat_dim(num_entities, num_agents)};
    for (std::size_t i = 0; i < cfg.depth; ++i) dims.push_back(cfg.hidden);
    dims.push_back(1);
    net_ = Mlp("critic", dims, params_, rng);
  }

  ad::ParameterMap& params() override { return params_; }
  const ad::ParameterMap& params() const override { return params_; }
  std::string architecture() const override { return "mlp"; }

  std::unique_ptr<CriticNetwork> clone() const override {
    auto copy = std::make_unique<MlpCritic>(num_entities_, num_agents_, cfg_,
                                            init_seed_);
    copy->params_.copy_values_from(params_);
    return copy;
  }

  ad::Var forward(ad::Tape& tape,
                  const std::vector<const PointCloudState*>& states,
                  const std::vector<const JointAction*>& actions,
                  bool trainable) const override {
    return net_.forward(tape, tape.constant(flat_input(states, actions)),
                        trainable);
  }

  ad::Var forward_replaced(ad::Tape& tape,
                           const std::vector<const PointCloudState*>& states,
                           const std::vector<const JointAction*>& actions,
                           std::size_t agent, ad::Var live_actions,
                           bool trainable) const override {
    if (agent >= num_agents_) {
      throw std::invalid_argument("forward_replaced: invalid agent index");
    }
    ad::Tensor base = flat_input(states, actions);
    const std::size_t dim = base.shape[1];
    const std::size_t col = 8 * num_entities_ + 3 * agent;
    for (std::size_t r = 0; r < base.shape[0]; ++r) {
      for (std::size_t c = 0; c < 3; ++c) base.at(r, col + c) = 0.0;
    }
    ad::Var base_var = tape.constant(std::move(base));
    std::vector<ad::Var> parts;
    parts.push_back(ad::slice(base_var, 1, 0, col));
    parts.push_back(live_actions);
    if (col + 3 < dim) {
      parts.push_back(ad::slice(base_var, 1, col + 3, dim - col - 3));
    }
    return net_.forward(tape, ad::concat(parts, 1), trainable);
  }

  double value(const PointCloudState& s, const JointAction& a) const override {
    ad::Tape tape;
    std::vector<const PointCloudState*> ss{&s};
    std::vector<const JointAction*> as{&a};
    return forward(tape, ss, as, false).value().data[0];
  }

 private:
  ad::Tensor flat_input(const std::vector<const PointCloudState*>& states,
                        const std::vector<const JointAction*>& actions) const {
    const std::size_t dim = state_action_flat_dim(num_entities_, num_agents_);
    ad::Tensor input({states.size(), dim});
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (states[i]->size() != num_entities_ ||
          actions[i]->size() != num_agents_) {
        throw IncompatibleArchitecture(
            "MLP critic has a fixed input for " +
            std::to_string(num_entities_) + " entities");
      }
      double* row = input.data.data() + i * dim;
      flatten_state_into(*states[i], row);
      std::size_t k = 8 * num_entities_;
      for (const Vec3& a : *actions[i]) {
        for (int c = 0; c < 3; ++c) row[k++] = a[c];
      }
    }
    return input;
  }

  std::size_t num_entities_;
  std::size_t num_agents_;
  MlpConfig cfg_;
  std::uint64_t init_seed_;
  ad::ParameterMap params_;
  Mlp net_;
};

// ---------------------------------------------------------------------------
// Flat GCN critic stub: the same message-passing skeleton on flat features
// with no relative-position geometry, so no E(3) guarantee. Kept as a
// comparison baseline only.

class GcnCritic : public CriticNetwork {
 public:
  GcnCritic(std::size_t num_agents, std::size_t hidden, GraphConfig gcfg,
            std::uint64_t init_seed)
      : num_agents_(num_agents), hidden_(hidden), gcfg_(gcfg),
        init_seed_(init_seed) {
    Rng rng(init_seed);
    // Per-vertex input: position(3), velocity(3), action(3), type(2).
    self_ = Mlp("gcn.self", {11, hidden}, params_, rng);
    nbr_ = Mlp("gcn.nbr", {11, hidden}, params_, rng);
    head_ = Mlp("gcn.head", {hidden, hidden, 1}, params_, rng);
  }

  ad::ParameterMap& params() override { return params_; }
  const ad::ParameterMap& params() const override { return params_; }
  std::string architecture() const override { return "gcn"; }

  std::unique_ptr<CriticNetwork> clone() const override {
    auto copy = std::make_unique<GcnCritic>(num_agents_, hidden_, gcfg_,
                                            init_seed_);
    copy->params_.copy_values_from(params_);
    return copy;
  }

  ad::Var forward(ad::Tape& tape,
                  const std::vector<const PointCloudState*>& states,
                  const std::vector<const JointAction*>& actions,
                  bool trainable) const override {
    StateActionBatch sab = make_state_action_batch(states, actions, gcfg_);
    const GraphBatch& g = sab.geometry;
    const std::size_t v = g.total_vertices();
    ad::Tensor input({v, 11});
    for (std::size_t r = 0; r < v; ++r) {
      std::size_t k = 0;
      // absolute positions enter directly: deliberately not E(3)-invariant
      const std::size_t gi = g.graph_of_vertex[r];
      const std::size_t local = r - g.vertex_offset[gi];
      const Entity& e = states[gi]->entities[local];
      for (int c = 0; c < 3; ++c) input.at(r, k++) = e.position[c];
      for (int c = 0; c < 3; ++c) input.at(r, k++) = e.velocity[c];
      for (int c = 0; c < 3; ++c) input.at(r, k++) = sab.actions.at(r, c);
      input.at(r, k++) = g.node_attributes.at(r, 0);
      input.at(r, k++) = g.node_attributes.at(r, 1);
    }
    ad::Var x = tape.constant(std::move(input));
    ad::Var own = self_.forward(tape, x, trainable);
    ad::Var agg = ad::scale_rows(
        ad::scatter_add_rows(ad::gather_rows(x, g.edge_src), g.edge_dst, v),
        g.in_degree_inv);
    ad::Var h = ad::relu(ad::add(own, nbr_.forward(tape, agg, trainable)));
    ad::Var pooled = ad::scale_rows(
        ad::scatter_add_rows(h, g.graph_of_vertex, g.num_graphs),
        g.graph_size_inv);
    return head_.forward(tape, pooled, trainable);
  }

  ad::Var forward_replaced(ad::Tape&, const std::vector<const PointCloudState*>&,
                           const std::vector<const JointAction*>&, std::size_t,
                           ad::Var, bool) const override {
    throw IncompatibleArchitecture(
        "GCN critic is a comparison stub and does not drive actor updates");
  }

  double value(const PointCloudState& s, const JointAction& a) const override {
    ad::Tape tape;
    std::vector<const PointCloudState*> ss{&s};
    std::vector<const JointAction*> as{&a};
    return forward(tape, ss, as, false).value().data[0];
  }

 private:
  std::size_t num_agents_;
  std::size_t hidden_;
  GraphConfig gcfg_;
  std::uint64_t init_seed_;
  ad::ParameterMap params_;
  Mlp self_, nbr_, head_;
};

}  // namespace e3marl
