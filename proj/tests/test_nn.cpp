#include <catch2/catch_amalgamated.hpp>

#include "e3marl/nn.hpp"
#include "test_helpers.hpp"

using namespace e3marl;
using e3marl::testing::max_abs_diff;

namespace {

PointCloudState random_moving_state(std::size_t n, Rng& rng) {
  PointCloudState s = nav_reset(n, rng.next_u64());
  for (std::size_t i = 0; i < n; ++i) {
    s.entities[i].velocity =
        Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0);
  }
  return s;
}

JointAction random_planar_action(std::size_t n, Rng& rng) {
  JointAction a(n, Vec3::Zero());
  for (auto& v : a) v = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
  return a;
}

void set_all_params(ad::ParameterMap& params, double value) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::fill(params[i].value.data.begin(), params[i].value.data.end(), value);
  }
}

// Central-difference check over every parameter in the map.
double map_fd_error(ad::ParameterMap& params,
                    const std::function<double(bool)>& loss_fn) {
  params.zero_grad();
  loss_fn(true);
  std::vector<std::vector<double>> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.push_back(params[i].grad.data);
  }
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t k = 0; k < params[i].value.data.size(); ++k) {
      const double orig = params[i].value.data[k];
      params[i].value.data[k] = orig + h;
      const double lp = loss_fn(false);
      params[i].value.data[k] = orig - h;
      const double lm = loss_fn(false);
      params[i].value.data[k] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = grads[i][k];
      worst = std::max(worst, std::abs(g - fd) /
                                  std::max({std::abs(g), std::abs(fd), 1.0}));
    }
  }
  return worst;
}

const SegnnConfig kSmall{2, 8, 2};

}  // namespace

TEST_CASE("gated nonlinearity zero input and isotropy") {
  ad::Tape tape;
  ad::Var zero = tape.constant(ad::Tensor({2, 4 + 2 + 6}));
  ad::Var out = ad::gated_nonlinearity_rows(zero, 4, 2);
  for (double v : out.value().data) CHECK(v == 0.0);

  // scaling is isotropic: the output vector keeps the input direction
  Rng rng(3);
  ad::Tensor in({1, 4 + 2 + 6});
  for (double& v : in.data) v = rng.uniform(-2, 2);
  ad::Var y = ad::gated_nonlinearity_rows(tape.constant(in), 4, 2);
  for (int c = 0; c < 2; ++c) {
    Vec3 vin(in.data[6 + 3 * c], in.data[7 + 3 * c], in.data[8 + 3 * c]);
    Vec3 vout(y.value().at(0, 4 + 3 * c), y.value().at(0, 5 + 3 * c),
              y.value().at(0, 6 + 3 * c));
    CHECK(max_abs_diff(vout.normalized(), vin.normalized()) < 1e-12);
  }
}

TEST_CASE("gated nonlinearity equivariance") {
  Rng rng(5);
  IrrepSpec gated{{4, {0, Parity::Even}},
                  {2, {0, Parity::Even}},
                  {2, {1, Parity::Odd}}};
  IrrepSpec out_spec{{4, {0, Parity::Even}}, {2, {1, Parity::Odd}}};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    SteerableVector v = e3marl::testing::random_steerable(gated, rng);
    GroupElement g = random_element(rng);
    ad::Tape tape;
    auto run = [&](const SteerableVector& sv) {
      ad::Tensor t({1, sv.spec.dim()});
      for (std::size_t c = 0; c < sv.spec.dim(); ++c) t.data[c] = sv.data[c];
      ad::Var y = ad::gated_nonlinearity_rows(tape.constant(std::move(t)), 4, 2);
      SteerableVector out = SteerableVector::zero(out_spec);
      for (std::size_t c = 0; c < out_spec.dim(); ++c) {
        out.data[c] = y.value().at(0, c);
      }
      return out;
    };
    SteerableVector lhs = run(transform_steerable(v, g));
    SteerableVector rhs = transform_steerable(run(v), g);
    worst = std::max(worst, max_abs_diff(lhs.data, rhs.data));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("gradients of the steerable ops match finite differences") {
  Rng rng(7);
  IrrepSpec a_spec{{2, {0, Parity::Even}}, {2, {1, Parity::Odd}}};
  IrrepSpec b_spec{{1, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  IrrepSpec out_spec{{3, {0, Parity::Even}},
                     {2, {1, Parity::Odd}},
                     {1, {1, Parity::Even}}};
  CGProduct cg(a_spec, b_spec, out_spec);

  ad::ParameterMap params;
  auto& pa = params.create("a", ad::Tensor({4, a_spec.dim()}));
  auto& pb = params.create("b", ad::Tensor({4, b_spec.dim()}));
  auto& pw = params.create("w", ad::Tensor({cg.weight_count()}));
  for (double& v : pa.value.data) v = rng.uniform(-1, 1);
  for (double& v : pb.value.data) v = rng.uniform(-1, 1);
  for (double& v : pw.value.data) v = rng.uniform(-1, 1);

  ad::Tensor proj({4, out_spec.dim()});
  for (double& v : proj.data) v = rng.uniform(-1, 1);

  auto loss_fn = [&](bool record) {
    ad::Tape tape;
    ad::Var out = ad::cg_product_rows(cg, tape.leaf(pa), tape.leaf(pb),
                                      tape.leaf(pw));
    ad::Var loss = ad::sum(ad::multiply(out, tape.constant(proj)));
    if (record) tape.backward(loss);
    return loss.value().data[0];
  };
  CHECK(map_fd_error(params, loss_fn) < 1e-5);

  // gate
  ad::ParameterMap gparams;
  auto& gx = gparams.create("x", ad::Tensor({3, 4 + 2 + 6}));
  for (double& v : gx.value.data) v = rng.uniform(-2, 2);
  ad::Tensor gproj({3, 4 + 6});
  for (double& v : gproj.data) v = rng.uniform(-1, 1);
  auto gate_loss = [&](bool record) {
    ad::Tape tape;
    ad::Var y = ad::gated_nonlinearity_rows(tape.leaf(gx), 4, 2);
    ad::Var loss = ad::sum(ad::multiply(y, tape.constant(gproj)));
    if (record) tape.backward(loss);
    return loss.value().data[0];
  };
  CHECK(map_fd_error(gparams, gate_loss) < 1e-5);

  // norm clipping, rows on both branches
  ad::ParameterMap cparams;
  auto& cx = cparams.create("x", ad::Tensor({2, 3}, {0.2, -0.1, 0.0,  // inside
                                                     2.0, -1.0, 0.5}));  // clipped
  ad::Tensor cproj({2, 3});
  for (double& v : cproj.data) v = rng.uniform(-1, 1);
  auto clip_loss = [&](bool record) {
    ad::Tape tape;
    ad::Var y = ad::clip_rows_by_norm(tape.leaf(cx), 1.0);
    ad::Var loss = ad::sum(ad::multiply(y, tape.constant(cproj)));
    if (record) tape.backward(loss);
    return loss.value().data[0];
  };
  CHECK(map_fd_error(cparams, clip_loss) < 1e-5);
}

TEST_CASE("e3mp on a single vertex without edges stays finite") {
  ad::ParameterMap params;
  Rng rng(11);
  E3MPLayer layer("layer", observation_feature_spec(), entity_attribute_spec(),
                  edge_attribute_spec(), 8, 2, params, rng);
  EuclideanGraph g;
  g.feature_spec = observation_feature_spec();
  g.attribute_spec = entity_attribute_spec();
  g.edge_spec = edge_attribute_spec();
  g.positions.push_back(Vec3(0.3, -0.2, 0));
  Eigen::VectorXd f(4);
  f << 0.1, 0.2, 0.0, std::sqrt(0.05 + 1e-12);
  g.node_features.push_back(f);
  Eigen::VectorXd a(2);
  a << 1, 0;
  g.node_attributes.push_back(a);
  EuclideanGraph out = e3mp_forward(layer, g);
  REQUIRE(out.node_features.size() == 1);
  CHECK(out.node_features[0].allFinite());
  CHECK(out.feature_spec == layer.out_spec());
}

TEST_CASE("e3mp forward is E(3)-equivariant") {
  ad::ParameterMap params;
  Rng rng(13);
  E3MPLayer layer("layer", state_action_feature_spec(),
                  entity_attribute_spec(), edge_attribute_spec(), 8, 2, params,
                  rng);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    JointAction a = random_planar_action(3, rng);
    EuclideanGraph graph = build_state_action_graph(s, a);
    GroupElement g = random_element(rng);
    EuclideanGraph lhs = e3mp_forward(layer, apply_group(g, graph));
    EuclideanGraph rhs = apply_group(g, e3mp_forward(layer, graph));
    for (std::size_t v = 0; v < graph.num_vertices(); ++v) {
      worst = std::max(worst,
                       max_abs_diff(lhs.node_features[v], rhs.node_features[v]));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("translating all positions leaves e3mp features unchanged") {
  ad::ParameterMap params;
  Rng rng(17);
  E3MPLayer layer("layer", state_action_feature_spec(),
                  entity_attribute_spec(), edge_attribute_spec(), 8, 2, params,
                  rng);
  PointCloudState s = random_moving_state(3, rng);
  JointAction a = random_planar_action(3, rng);
  EuclideanGraph graph = build_state_action_graph(s, a);
  EuclideanGraph moved = apply_group(translation(Vec3(5, -2, 7)), graph);
  EuclideanGraph out1 = e3mp_forward(layer, graph);
  EuclideanGraph out2 = e3mp_forward(layer, moved);
  double worst = 0.0;
  for (std::size_t v = 0; v < graph.num_vertices(); ++v) {
    worst = std::max(worst,
                     max_abs_diff(out1.node_features[v], out2.node_features[v]));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("segnn critic is E(3)-invariant") {
  SegnnCritic critic(kSmall, GraphConfig{}, 19);
  Rng rng(21);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    JointAction a = random_planar_action(3, rng);
    EuclideanGraph graph = build_state_action_graph(s, a);
    const double q = critic.value_graph(graph);
    const double qg = critic.value_graph(apply_group(random_element(rng), graph));
    worst = std::max(worst, std::abs(q - qg));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("zero-weight critic returns its bias") {
  SegnnCritic critic(kSmall, GraphConfig{}, 23);
  set_all_params(critic.params(), 0.0);
  critic.params().at("critic.readout.b").value.data[0] = 0.7;
  Rng rng(25);
  for (int k = 0; k < 5; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    JointAction a = random_planar_action(3, rng);
    CHECK(critic.value(s, a) == Catch::Approx(0.7).margin(1e-15));
  }
}

TEST_CASE("critic is invariant to swapping identically-typed vertices") {
  SegnnCritic critic(kSmall, GraphConfig{}, 27);
  Rng rng(29);
  PointCloudState s = random_moving_state(3, rng);
  JointAction a = random_planar_action(3, rng);
  const double q = critic.value(s, a);

  PointCloudState swapped = s;
  std::swap(swapped.entities[0], swapped.entities[1]);
  JointAction aswapped = a;
  std::swap(aswapped[0], aswapped[1]);
  CHECK(std::abs(critic.value(swapped, aswapped) - q) < 1e-12);
}

TEST_CASE("segnn actor equivariance and translation invariance") {
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 31);
  Rng rng(33);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    GroupElement g = random_element(rng, true, 0.0);
    const std::size_t i = k % 3;
    Observation o = nav_observe(s, i);
    Vec3 lhs = actor.act(apply_group(g, o));
    Vec3 rhs = g.apply_vector(actor.act(o));
    worst = std::max(worst, max_abs_diff(lhs, rhs));
  }
  CHECK(worst < 1e-9);

  // translations of the state do not reach the observation at all
  PointCloudState s = random_moving_state(3, rng);
  PointCloudState t = apply_group(translation(Vec3(4, 4, 0)), s);
  CHECK(max_abs_diff(actor.act(nav_observe(s, 0)),
                     actor.act(nav_observe(t, 0))) < 1e-12);
}

TEST_CASE("zero-weight actor outputs the zero action") {
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 35);
  set_all_params(actor.params(), 0.0);
  Rng rng(37);
  PointCloudState s = random_moving_state(3, rng);
  CHECK(actor.act(nav_observe(s, 1)).norm() == 0.0);
}

TEST_CASE("planar inputs give exactly planar actions") {
  // Reflection equivariance pins the z component to a fixed point of
  // diag(1,1,-1), which is 0.
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 39);
  Rng rng(41);
  for (int k = 0; k < 20; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    Vec3 a = actor.act(nav_observe(s, k % 3));
    CHECK(std::abs(a.z()) < 1e-12);
    CHECK(a.norm() <= 1.0 + 1e-12);
  }
}

TEST_CASE("actor norm clipping caps the action magnitude") {
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 43);
  // inflate weights so the raw output exceeds the cap
  for (std::size_t i = 0; i < actor.params().size(); ++i) {
    for (double& v : actor.params()[i].value.data) v *= 20.0;
  }
  Rng rng(45);
  bool saw_clip = false;
  for (int k = 0; k < 10; ++k) {
    PointCloudState s = random_moving_state(3, rng);
    Vec3 a = actor.act(nav_observe(s, 0));
    CHECK(a.norm() <= 1.0 + 1e-12);
    if (a.norm() > 1.0 - 1e-9) saw_clip = true;
  }
  CHECK(saw_clip);
}

TEST_CASE("mlp defaults and identity passthrough") {
  CHECK(MlpConfig{}.hidden == 128);

  ad::ParameterMap params;
  Rng rng(47);
  Mlp net("m", {3, 3}, params, rng);
  // single layer, identity weights, zero bias
  auto& w = params.at("m.w0");
  std::fill(w.value.data.begin(), w.value.data.end(), 0.0);
  for (int i = 0; i < 3; ++i) w.value.at(i, i) = 1.0;
  ad::Tape tape;
  ad::Tensor in({2, 3}, {1, 2, 3, 4, 5, 6});
  ad::Var out = net.forward(tape, tape.constant(in), false);
  CHECK(out.value().data == in.data);
}

TEST_CASE("mlp actor rejects mismatched entity counts") {
  MlpActor actor(6, MlpConfig{}, 1.0, 49);
  CHECK_FALSE(actor.supports_variable_entities());
  Rng rng(51);
  PointCloudState s4 = random_moving_state(4, rng);  // 8 entities
  CHECK_THROWS_AS(actor.act(nav_observe(s4, 0)), IncompatibleArchitecture);
  PointCloudState s3 = random_moving_state(3, rng);
  CHECK(actor.act(nav_observe(s3, 0)).allFinite());
}

TEST_CASE("critic loss gradients pass the finite-difference check") {
  SegnnCritic critic(kSmall, GraphConfig{}, 53);
  Rng rng(55);
  std::vector<PointCloudState> states;
  std::vector<JointAction> actions;
  std::vector<double> targets;
  for (int b = 0; b < 2; ++b) {
    states.push_back(random_moving_state(3, rng));
    actions.push_back(random_planar_action(3, rng));
    targets.push_back(rng.uniform(-2, 0));
  }
  std::vector<const PointCloudState*> sp{&states[0], &states[1]};
  std::vector<const JointAction*> ap{&actions[0], &actions[1]};

  auto loss_fn = [&](bool record) {
    ad::Tape tape;
    ad::Var q = critic.forward(tape, sp, ap, true);
    ad::Var y = tape.constant(ad::Tensor({2, 1}, {targets[0], targets[1]}));
    ad::Var d = ad::sub(q, y);
    ad::Var loss = ad::mean(ad::multiply(d, d));
    if (record) tape.backward(loss);
    return loss.value().data[0];
  };
  CHECK(map_fd_error(critic.params(), loss_fn) < 1e-5);
}

TEST_CASE("actor loss gradients pass the finite-difference check") {
  SegnnCritic critic(kSmall, GraphConfig{}, 57);
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 59);
  Rng rng(61);
  std::vector<PointCloudState> states;
  std::vector<JointAction> actions;
  std::vector<Observation> obs;
  for (int b = 0; b < 2; ++b) {
    states.push_back(random_moving_state(3, rng));
    actions.push_back(random_planar_action(3, rng));
    obs.push_back(nav_observe(states[b], 0));
  }
  std::vector<const PointCloudState*> sp{&states[0], &states[1]};
  std::vector<const JointAction*> ap{&actions[0], &actions[1]};
  std::vector<const Observation*> op{&obs[0], &obs[1]};

  auto loss_fn = [&](bool record) {
    ad::Tape tape;
    ad::Var live = actor.forward(tape, op, true);
    ad::Var q = critic.forward_replaced(tape, sp, ap, 0, live, false);
    ad::Var loss = ad::scale(ad::mean(q), -1.0);
    if (record) tape.backward(loss);
    return loss.value().data[0];
  };
  CHECK(map_fd_error(actor.params(), loss_fn) < 1e-5);
}

TEST_CASE("policy gradient is identical on group-transformed inputs") {
  SegnnCritic critic(kSmall, GraphConfig{}, 63);
  SegnnActor actor(kSmall, GraphConfig{}, 1.0, 65);
  Rng rng(67);

  const std::size_t n = 3, batch = 4;
  std::vector<PointCloudState> states;
  std::vector<JointAction> actions;
  for (std::size_t b = 0; b < batch; ++b) {
    states.push_back(random_moving_state(n, rng));
    actions.push_back(random_planar_action(n, rng));
  }

  auto actor_grads = [&](const std::vector<PointCloudState>& ss,
                         const std::vector<JointAction>& aa) {
    actor.params().zero_grad();
    std::vector<const PointCloudState*> sp;
    std::vector<const JointAction*> ap;
    for (std::size_t b = 0; b < batch; ++b) {
      sp.push_back(&ss[b]);
      ap.push_back(&aa[b]);
    }
    ad::Tape tape;
    ad::Var total;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Observation> obs;
      std::vector<const Observation*> op;
      obs.reserve(batch);
      for (std::size_t b = 0; b < batch; ++b) obs.push_back(nav_observe(ss[b], i));
      for (const auto& o : obs) op.push_back(&o);
      ad::Var live = actor.forward(tape, op, true);
      ad::Var q = critic.forward_replaced(tape, sp, ap, i, live, false);
      ad::Var part = ad::scale(ad::mean(q), -1.0);
      total = total.valid() ? ad::add(total, part) : part;
    }
    tape.backward(total);
    std::vector<double> flat;
    for (std::size_t i = 0; i < actor.params().size(); ++i) {
      for (double g : actor.params()[i].grad.data) flat.push_back(g);
    }
    return flat;
  };

  std::vector<double> base = actor_grads(states, actions);
  double worst = 0.0;
  for (int k = 0; k < 10; ++k) {
    GroupElement g = random_element(rng);
    std::vector<PointCloudState> ts;
    std::vector<JointAction> ta;
    for (std::size_t b = 0; b < batch; ++b) {
      ts.push_back(apply_group(g, states[b]));
      ta.push_back(apply_group(g, actions[b]));
    }
    std::vector<double> got = actor_grads(ts, ta);
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst = std::max(worst, std::abs(base[i] - got[i]));
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("gcn critic runs but is not rotation invariant") {
  GcnCritic critic(3, 16, GraphConfig{}, 69);
  Rng rng(71);
  PointCloudState s = random_moving_state(3, rng);
  JointAction a = random_planar_action(3, rng);
  const double q = critic.value(s, a);
  CHECK(std::isfinite(q));
  double max_dev = 0.0;
  for (int k = 0; k < 10; ++k) {
    GroupElement g = random_rotation(rng);
    max_dev = std::max(
        max_dev,
        std::abs(critic.value(apply_group(g, s), apply_group(g, a)) - q));
  }
  CHECK(max_dev > 1e-6);  // generic weights break invariance
}
