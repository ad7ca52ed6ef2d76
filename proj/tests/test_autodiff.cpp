#include <catch2/catch_amalgamated.hpp>
#include <cstring>
#include <functional>
#include <sstream>

#include "e3marl/autodiff.hpp"
#include "e3marl/rng.hpp"

using namespace e3marl;
using namespace e3marl::ad;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, for ops with kinks or cusps there.
Tensor random_tensor_away_from_zero(std::vector<std::size_t> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data) {
    const double m = rng.uniform(0.1, 2.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// Central-difference oracle: builds the loss twice per perturbed entry and
// compares the analytic gradient of every parameter, step 1e-6.
using LossBuilder = std::function<Var(Tape&, std::vector<Var>&)>;

double max_rel_grad_error(std::vector<Parameter>& params,
                          const LossBuilder& build) {
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (auto& p : params) leaves.push_back(tape.leaf(p));
    return build(tape, leaves).value().data[0];
  };

  {
    Tape tape;
    std::vector<Var> leaves;
    for (auto& p : params) {
      p.zero_grad();
      leaves.push_back(tape.leaf(p));
    }
    tape.backward(build(tape, leaves));
  }

  const double h = 1e-6;
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + h;
      const double lp = eval();
      p.value.data[i] = orig - h;
      const double lm = eval();
      p.value.data[i] = orig;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = p.grad.data[i];
      const double rel =
          std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), 1.0});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Projects a tensor output to a scalar that is sensitive to every entry.
Var project(Tape& tape, Var y, Rng& rng) {
  Tensor proj(y.value().shape);
  for (double& v : proj.data) v = rng.uniform(-1, 1);
  return sum(multiply(y, tape.constant(std::move(proj))));
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var id2 = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var m = matmul(a, id2);
  CHECK(m.value().data == std::vector<double>{1, 2, 3, 4});

  Var s = sum(tape.constant(Tensor({1, 3}, {1, 2, 3})));
  CHECK(s.value().data[0] == 6.0);

  Var x = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Var sc = scatter_add_rows(x, {0, 0}, 1);
  CHECK(sc.value().data == std::vector<double>{5, 7, 9});

  Var mn = mean(tape.constant(Tensor({2, 2}, {1, 2, 3, 4})));
  CHECK(mn.value().data[0] == 2.5);
}

TEST_CASE("shape errors report both shapes") {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({3, 3}));
  CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2x3]") &&
                                   Catch::Matchers::ContainsSubstring("[3x3]"));
  Var c = tape.constant(Tensor({4, 2}));
  CHECK_THROWS_AS(matmul(a, c), std::invalid_argument);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Parameter p("p", Tensor({2, 2}, {1, 2, 3, 4}));
  Var v = tape.leaf(p);
  CHECK_THROWS_AS(tape.backward(v), std::invalid_argument);
}

TEST_CASE("d(x*x)/dx at 3 is 6") {
  Parameter x("x", Tensor({1, 1}, {3.0}));
  Tape tape;
  Var xv = tape.leaf(x);
  Var loss = sum(multiply(xv, xv));
  tape.backward(loss);
  CHECK(x.grad.data[0] == Catch::Approx(6.0).margin(1e-14));
}

TEST_CASE("gradient of sum(A B) with respect to A") {
  Rng rng(3);
  Parameter a("a", random_tensor({3, 4}, rng));
  Tensor b = random_tensor({4, 2}, rng);
  Tape tape;
  Var loss = sum(matmul(tape.leaf(a), tape.constant(b)));
  tape.backward(loss);
  // d/dA sum(A B) = ones * B^T: entry (i, j) is the sum of row j of B.
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double expect = b.at(j, 0) + b.at(j, 1);
      CHECK(a.grad.at(i, j) == Catch::Approx(expect).margin(1e-12));
    }
  }
}

TEST_CASE("finite-difference oracle for every registered op") {
  Rng rng(101);
  const int kInstances = 20;
  const double kTol = 1e-5;

  auto check_unary = [&](const char* name, bool away_from_zero, auto apply) {
    double worst = 0.0;
    for (int k = 0; k < kInstances; ++k) {
      std::vector<Parameter> params;
      params.emplace_back("x", away_from_zero
                                   ? random_tensor_away_from_zero({3, 4}, rng)
                                   : random_tensor({3, 4}, rng));
      const std::uint64_t proj_seed = rng.next_u64();
      LossBuilder build = [&apply, proj_seed](Tape& t,
                                              std::vector<Var>& leaves) {
        Rng proj(proj_seed);  // same projection on every re-evaluation
        return project(t, apply(t, leaves[0]), proj);
      };
      worst = std::max(worst, max_rel_grad_error(params, build));
    }
    INFO(name);
    CHECK(worst < kTol);
  };

  check_unary("relu", true, [](Tape&, Var x) { return relu(x); });
  check_unary("tanh", false, [](Tape&, Var x) { return ad::tanh(x); });
  check_unary("sigmoid", false, [](Tape&, Var x) { return sigmoid(x); });
  check_unary("l2_norm_rows", true,
              [](Tape&, Var x) { return l2_norm_rows(x); });
  check_unary("scale", false, [](Tape&, Var x) { return scale(x, -1.7); });
  check_unary("sum", false, [](Tape&, Var x) { return sum(x); });
  check_unary("mean", false, [](Tape&, Var x) { return mean(x); });
  check_unary("slice_rows", false,
              [](Tape&, Var x) { return slice(x, 0, 1, 2); });
  check_unary("slice_cols", false,
              [](Tape&, Var x) { return slice(x, 1, 1, 2); });
  check_unary("reshape", false,
              [](Tape&, Var x) { return reshape(x, {4, 3}); });
  check_unary("gather_rows", false, [](Tape&, Var x) {
    return gather_rows(x, {2, 0, 0, 1});
  });
  check_unary("scatter_add_rows", false, [](Tape&, Var x) {
    return scatter_add_rows(x, {1, 4, 1}, 5);
  });
  check_unary("scale_rows", false, [](Tape&, Var x) {
    return scale_rows(x, {0.5, -2.0, 3.0});
  });

  auto check_binary = [&](const char* name, std::vector<std::size_t> bshape,
                          auto apply) {
    double worst = 0.0;
    for (int k = 0; k < kInstances; ++k) {
      std::vector<Parameter> params;
      params.emplace_back("a", random_tensor({3, 4}, rng));
      params.emplace_back("b", random_tensor(bshape, rng));
      const std::uint64_t proj_seed = rng.next_u64();
      LossBuilder build = [&apply, proj_seed](Tape& t,
                                              std::vector<Var>& leaves) {
        Rng proj(proj_seed);
        return project(t, apply(t, leaves[0], leaves[1]), proj);
      };
      worst = std::max(worst, max_rel_grad_error(params, build));
    }
    INFO(name);
    CHECK(worst < kTol);
  };

  check_binary("add", {3, 4}, [](Tape&, Var a, Var b) { return add(a, b); });
  check_binary("sub", {3, 4}, [](Tape&, Var a, Var b) { return sub(a, b); });
  check_binary("multiply", {3, 4},
               [](Tape&, Var a, Var b) { return multiply(a, b); });
  check_binary("concat_rows", {3, 4},
               [](Tape&, Var a, Var b) { return concat({a, b}, 0); });
  check_binary("concat_cols", {3, 4},
               [](Tape&, Var a, Var b) { return concat({a, b}, 1); });
  check_binary("matmul", {4, 2},
               [](Tape&, Var a, Var b) { return matmul(a, b); });
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(5);
  Tensor init = random_tensor({2, 3}, rng);
  Tensor c1 = random_tensor({2, 3}, rng);
  Tensor c2 = random_tensor({2, 3}, rng);

  auto grads_of = [&](bool combined) {
    Parameter p("p", init);
    Tape tape;
    Var x = tape.leaf(p);
    Var l1 = sum(multiply(x, tape.constant(c1)));
    Var l2 = sum(multiply(ad::tanh(x), tape.constant(c2)));
    if (combined) {
      tape.backward(add(l1, l2));
    } else {
      tape.backward(l1);
      tape.backward(l2);
    }
    return p.grad.data;
  };

  auto ga = grads_of(false);
  auto gb = grads_of(true);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    CHECK(ga[i] == Catch::Approx(gb[i]).margin(1e-12));
  }
}

TEST_CASE("gather and scatter_add are adjoint") {
  Rng rng(7);
  std::vector<std::size_t> idx = {3, 1, 1, 0};
  Tensor x = random_tensor({4, 2}, rng);  // rows to scatter
  Tensor y = random_tensor({5, 2}, rng);  // target-space vector

  Tape tape;
  Var sx = scatter_add_rows(tape.constant(x), idx, 5);
  Var gy = gather_rows(tape.constant(y), idx);

  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i)
    lhs += sx.value().data[i] * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i)
    rhs += x.data[i] * gy.value().data[i];
  CHECK(lhs == Catch::Approx(rhs).margin(1e-12));
}

TEST_CASE("repeated backward accumulates into parameters") {
  Parameter x("x", Tensor({1, 1}, {2.0}));
  Tape tape;
  Var loss = sum(multiply(tape.leaf(x), tape.leaf(x)));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad.data[0] == Catch::Approx(8.0).margin(1e-14));
  x.zero_grad();
  CHECK(x.grad.data[0] == 0.0);
}

TEST_CASE("checkpoint round-trip is exact") {
  ParameterMap params;
  Rng rng(11);
  params.create("layer0.weight", random_tensor({4, 3}, rng, -10, 10));
  params.create("layer0.bias", Tensor({1, 3}, {1e-300, -0.0, M_PI}));
  params.create("head.w", random_tensor({3, 1}, rng, -1e6, 1e6));

  std::ostringstream os;
  params.save(os);

  ParameterMap loaded;
  loaded.create("layer0.weight", Tensor({4, 3}));
  loaded.create("layer0.bias", Tensor({1, 3}));
  loaded.create("head.w", Tensor({3, 1}));
  std::istringstream is(os.str());
  loaded.load(is);

  for (std::size_t i = 0; i < params.size(); ++i) {
    REQUIRE(loaded[i].value.data.size() == params[i].value.data.size());
    for (std::size_t k = 0; k < params[i].value.data.size(); ++k) {
      // bit-exact, including signed zero
      CHECK(std::memcmp(&loaded[i].value.data[k], &params[i].value.data[k],
                        sizeof(double)) == 0);
    }
  }
}

TEST_CASE("soft update with tau=1 copies the online network") {
  ParameterMap online, target;
  Rng rng(13);
  online.create("w", random_tensor({2, 2}, rng));
  target.create("w", random_tensor({2, 2}, rng));
  target.soft_update_from(online, 1.0);
  CHECK(target.at("w").value.data == online.at("w").value.data);

  // tau = 0.25 interpolates.
  Tensor before = target.at("w").value;
  online.at("w").value.data = {1, 1, 1, 1};
  target.soft_update_from(online, 0.25);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(target.at("w").value.data[i] ==
          Catch::Approx(0.25 * 1.0 + 0.75 * before.data[i]));
  }
}

TEST_CASE("sgd with zero learning rate leaves parameters unchanged") {
  ParameterMap params;
  Rng rng(17);
  params.create("w", random_tensor({3, 3}, rng));
  Tensor before = params.at("w").value;
  SgdMomentum opt(0.0, 0.9);
  for (int i = 0; i < 5; ++i) {
    for (double& g : params.at("w").grad.data) g = rng.uniform(-1, 1);
    opt.step(params);
  }
  CHECK(params.at("w").value.data == before.data);
}

TEST_CASE("target-net forwards recorded as constants do not get gradients") {
  Parameter p("p", Tensor({1, 1}, {2.0}));
  Tape tape;
  Var online = tape.leaf(p);
  Var frozen = tape.constant(p.value);
  Var loss = sum(multiply(online, frozen));
  tape.backward(loss);
  CHECK(p.grad.data[0] == Catch::Approx(2.0));  // only the online path
}
