#include <catch2/catch_amalgamated.hpp>

#include "e3marl/group.hpp"
#include "test_helpers.hpp"

using namespace e3marl;
using e3marl::testing::max_abs_diff;
using e3marl::testing::random_steerable;

TEST_CASE("rotation_from_euler identity and quarter turn") {
  GroupElement id = rotation_from_euler(0, 0, 0);
  CHECK(max_abs_diff(id.rotation, Mat3::Identity()) == 0.0);
  CHECK(id.translation.norm() == 0.0);

  GroupElement qz = rotation_from_euler(0, 0, M_PI / 2);
  Vec3 y = qz.apply_vector(Vec3(1, 0, 0));
  CHECK(max_abs_diff(y, Vec3(0, 1, 0)) < 1e-15);
}

TEST_CASE("rotation_from_euler produces proper rotations") {
  Rng rng(7);
  for (int k = 0; k < 100; ++k) {
    GroupElement g = rotation_from_euler(rng.uniform(-10, 10),
                                         rng.uniform(-10, 10),
                                         rng.uniform(-10, 10));
    CHECK(max_abs_diff(g.rotation.transpose() * g.rotation, Mat3::Identity()) <
          1e-12);
    CHECK(std::abs(g.rotation.determinant() - 1.0) < 1e-12);
  }
}

TEST_CASE("rotation_from_euler rejects non-finite angles") {
  CHECK_THROWS_AS(rotation_from_euler(std::nan(""), 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(rotation_from_euler(0, INFINITY, 0), std::invalid_argument);
}

TEST_CASE("reflection_xy flips z and is an involution") {
  GroupElement s = reflection_xy();
  CHECK(max_abs_diff(s.apply_vector(Vec3(0, 0, 1)), Vec3(0, 0, -1)) == 0.0);
  CHECK(s.det() == -1.0);
  GroupElement ss = compose(s, s);
  CHECK(max_abs_diff(ss.rotation, Mat3::Identity()) == 0.0);
}

TEST_CASE("composition and inverse") {
  Rng rng(11);
  for (int k = 0; k < 20; ++k) {
    GroupElement g1 = random_element(rng);
    GroupElement g2 = random_element(rng);
    GroupElement g = compose(g1, g2);
    Vec3 x(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    CHECK(max_abs_diff(g.apply_point(x), g1.apply_point(g2.apply_point(x))) <
          1e-12);
    GroupElement gi = compose(g, g.inverse());
    CHECK(max_abs_diff(gi.rotation, Mat3::Identity()) < 1e-12);
    CHECK(gi.translation.norm() < 1e-12);
    CHECK(is_valid_group_element(g, 1e-12));
  }
}

TEST_CASE("irrep matrices match the parity table") {
  GroupElement s = reflection_xy();
  CHECK(irrep_matrix({0, Parity::Even}, s)(0, 0) == 1.0);
  CHECK(irrep_matrix({0, Parity::Odd}, s)(0, 0) == -1.0);
  Eigen::MatrixXd d1o = irrep_matrix({1, Parity::Odd}, s);
  CHECK(max_abs_diff(d1o, Eigen::MatrixXd(Vec3(1, 1, -1).asDiagonal())) == 0.0);
  // det(R) * R, computed by hand for the xy-reflection.
  Eigen::MatrixXd d1e = irrep_matrix({1, Parity::Even}, s);
  CHECK(max_abs_diff(d1e, Eigen::MatrixXd(Vec3(-1, -1, 1).asDiagonal())) == 0.0);

  CHECK_THROWS_AS(irrep_matrix({2, Parity::Even}, s), std::invalid_argument);
}

TEST_CASE("representation property D(g1 g2) = D(g1) D(g2)") {
  Rng rng(13);
  const Irrep irreps[] = {{0, Parity::Even},
                          {0, Parity::Odd},
                          {1, Parity::Odd},
                          {1, Parity::Even}};
  for (int k = 0; k < 50; ++k) {
    GroupElement g1 = random_element(rng);
    GroupElement g2 = random_element(rng);
    GroupElement g12 = compose(g1, g2);
    for (const Irrep& ir : irreps) {
      Eigen::MatrixXd lhs = irrep_matrix(ir, g12);
      Eigen::MatrixXd rhs = irrep_matrix(ir, g1) * irrep_matrix(ir, g2);
      CHECK(max_abs_diff(lhs, rhs) < 1e-10);
    }
  }
}

TEST_CASE("transform_steerable basics") {
  IrrepSpec scalar{{1, {0, Parity::Even}}};
  SteerableVector v{scalar, Eigen::VectorXd::Constant(1, 4.5)};
  Rng rng(17);
  for (int k = 0; k < 10; ++k) {
    SteerableVector w = transform_steerable(v, random_element(rng));
    CHECK(w.data[0] == 4.5);
    CHECK(w.spec == scalar);
  }

  IrrepSpec vec{{1, {1, Parity::Odd}}};
  SteerableVector e1{vec, Eigen::VectorXd::Zero(3)};
  e1.data[0] = 1.0;
  SteerableVector r = transform_steerable(e1, rotation_z(M_PI / 2));
  CHECK(max_abs_diff(r.data, Eigen::Vector3d(0, 1, 0)) < 1e-15);
}

TEST_CASE("transform_steerable is a per-block isometry under rotations") {
  IrrepSpec spec{{2, {0, Parity::Even}},
                 {3, {1, Parity::Odd}},
                 {1, {1, Parity::Even}},
                 {1, {0, Parity::Odd}}};
  REQUIRE(spec.dim() == 2 + 9 + 3 + 1);
  Rng rng(19);
  for (int k = 0; k < 50; ++k) {
    SteerableVector v = random_steerable(spec, rng);
    GroupElement g = random_rotation(rng);
    SteerableVector w = transform_steerable(v, g);
    std::size_t off = 2;
    for (int c = 0; c < 4; ++c) {  // the four degree-1 channels
      double nv = v.data.segment<3>(off).norm();
      double nw = w.data.segment<3>(off).norm();
      CHECK(std::abs(nv - nw) < 1e-12);
      off += 3;
    }
  }
}

TEST_CASE("spherical harmonics l<=1, component convention") {
  SteerableVector a = spherical_harmonics_l1(Vec3(0, 0, 5));
  CHECK(a.data[0] == 1.0);
  CHECK(max_abs_diff(a.data.segment<3>(1), Vec3(0, 0, 1)) == 0.0);

  SteerableVector b = spherical_harmonics_l1(Vec3(3, 4, 0));
  CHECK(max_abs_diff(b.data.segment<3>(1), Vec3(0.6, 0.8, 0)) < 1e-15);

  CHECK_THROWS_AS(spherical_harmonics_l1(Vec3::Zero()), std::domain_error);
}

TEST_CASE("spherical harmonics depend only on direction") {
  Rng rng(23);
  for (int k = 0; k < 20; ++k) {
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.norm() < 1e-3) continue;
    SteerableVector s1 = spherical_harmonics_l1(d);
    SteerableVector s2 = spherical_harmonics_l1(d * rng.uniform(0.1, 50.0));
    CHECK(max_abs_diff(s1.data, s2.data) < 1e-12);
  }
}

TEST_CASE("spherical harmonics equivariance") {
  Rng rng(29);
  for (int k = 0; k < 100; ++k) {
    Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    if (d.norm() < 1e-3) continue;
    GroupElement g = random_element(rng, true, 0.0);
    SteerableVector lhs = spherical_harmonics_l1(g.rotation * d);
    SteerableVector rhs = transform_steerable(spherical_harmonics_l1(d), g);
    CHECK(max_abs_diff(lhs.data, rhs.data) < 1e-12);
  }
}

TEST_CASE("cg product realizes dot and cross") {
  IrrepSpec v1o{{1, {1, Parity::Odd}}};
  SteerableVector ex{v1o, Eigen::Vector3d(1, 0, 0)};
  SteerableVector ey{v1o, Eigen::Vector3d(0, 1, 0)};

  IrrepSpec scal{{1, {0, Parity::Even}}};
  const double one[] = {1.0};
  SteerableVector dot = cg_tensor_product(ex, ey, scal, {one, 1});
  CHECK(dot.data[0] == 0.0);

  IrrepSpec v1e{{1, {1, Parity::Even}}};
  SteerableVector cross = cg_tensor_product(ex, ey, v1e, {one, 1});
  CHECK(max_abs_diff(cross.data, Vec3(0, 0, 1)) == 0.0);
}

TEST_CASE("cg product rejects invalid paths") {
  IrrepSpec v1o{{1, {1, Parity::Odd}}};
  IrrepSpec v1odd_out{{1, {1, Parity::Odd}}};
  // 1o x 1o -> 1o violates parity selection (cross output is even).
  CHECK_THROWS_AS(
      CGProduct(v1o, v1o, v1odd_out, std::vector<CGPath>{{0, 0, 0}}),
      std::invalid_argument);
  // 0e x 0e -> 1e violates the degree rule.
  IrrepSpec s0{{1, {0, Parity::Even}}};
  IrrepSpec v1e{{1, {1, Parity::Even}}};
  CHECK_THROWS_AS(CGProduct(s0, s0, v1e, std::vector<CGPath>{{0, 0, 0}}),
                  std::invalid_argument);
}

TEST_CASE("cg product equivariance over all allowed paths") {
  IrrepSpec a_spec{{2, {0, Parity::Even}},
                   {1, {0, Parity::Odd}},
                   {2, {1, Parity::Odd}}};
  IrrepSpec b_spec{{1, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  IrrepSpec out_spec{{2, {0, Parity::Even}},
                     {1, {0, Parity::Odd}},
                     {2, {1, Parity::Odd}},
                     {2, {1, Parity::Even}}};
  CGProduct cg(a_spec, b_spec, out_spec);
  REQUIRE(cg.weight_count() > 0);

  Rng rng(31);
  std::vector<double> w(cg.weight_count());
  double max_err = 0.0;
  for (int k = 0; k < 100; ++k) {
    for (double& x : w) x = rng.uniform(-1, 1);
    SteerableVector a = random_steerable(a_spec, rng);
    SteerableVector b = random_steerable(b_spec, rng);
    GroupElement g = random_element(rng);  // includes reflections
    SteerableVector lhs =
        cg.apply(transform_steerable(a, g), transform_steerable(b, g), w);
    SteerableVector rhs = transform_steerable(cg.apply(a, b, w), g);
    max_err = std::max(max_err, max_abs_diff(lhs.data, rhs.data));
  }
  CHECK(max_err < 1e-10);
}

TEST_CASE("cg product is bilinear") {
  IrrepSpec a_spec{{1, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  IrrepSpec b_spec{{1, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  IrrepSpec out_spec{{2, {0, Parity::Even}}, {1, {1, Parity::Odd}}};
  CGProduct cg(a_spec, b_spec, out_spec);
  Rng rng(37);
  std::vector<double> w(cg.weight_count());
  for (double& x : w) x = rng.uniform(-1, 1);
  SteerableVector a1 = random_steerable(a_spec, rng);
  SteerableVector a2 = random_steerable(a_spec, rng);
  SteerableVector b = random_steerable(b_spec, rng);
  const double c = 1.75;

  SteerableVector sum{a_spec, a1.data + c * a2.data};
  SteerableVector lhs = cg.apply(sum, b, w);
  SteerableVector r1 = cg.apply(a1, b, w);
  SteerableVector r2 = cg.apply(a2, b, w);
  CHECK(max_abs_diff(lhs.data, r1.data + c * r2.data) < 1e-12);
}

TEST_CASE("irrep spec layout is deterministic") {
  IrrepSpec spec{{2, {0, Parity::Even}}, {3, {1, Parity::Odd}}};
  CHECK(spec.dim() == 11);
  CHECK(spec.block_offset(0) == 0);
  CHECK(spec.block_offset(1) == 2);
  CHECK(spec.to_string() == "2x0e + 3x1o");
}
