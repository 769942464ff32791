#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "stochins/adapted.hpp"
#include "stochins/rng.hpp"
#include "stochins/tree.hpp"

using namespace stochins;

TEST_CASE("tree construction") {
  const NoiseTree one = build_tree(1, 1.0);
  CHECK(one.brownian(1, 0) == doctest::Approx(-1.0));
  CHECK(one.brownian(1, 1) == doctest::Approx(1.0));

  const NoiseTree two = build_tree(2, 1.0);
  std::vector<double> leaves;
  for (int k = 0; k < 4; ++k) leaves.push_back(two.brownian(2, k));
  std::sort(leaves.begin(), leaves.end());
  CHECK(leaves[0] == doctest::Approx(-std::sqrt(2.0)));
  CHECK(leaves[1] == doctest::Approx(0.0));
  CHECK(leaves[2] == doctest::Approx(0.0));
  CHECK(leaves[3] == doctest::Approx(std::sqrt(2.0)));

  CHECK(build_tree(3, 1.0).total_nodes() == 15);
  CHECK_THROWS_AS(build_tree(0, 1.0), ValidationError);
  CHECK_THROWS_AS(build_tree(21, 1.0), ValidationError);
  CHECK_THROWS_AS(build_tree(4, 0.0), ValidationError);
}

TEST_CASE("conditional expectation is the exact martingale contraction") {
  const NoiseTree tree = build_tree(5, 2.0);
  const AdaptedField w = brownian_process(tree);
  for (int n = 0; n < tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      CHECK(conditional_expectation(tree, w, n, k)(0) == tree.brownian(n, k));

  AdaptedField constant(1, tree.num_steps + 1);
  for (auto& lvl : constant.data) lvl.setConstant(4.25);
  CHECK(conditional_expectation(tree, constant, 2, 1)(0) == 4.25);

  // E[W^2 at level 1 | root] = dt + W(root)^2 on the one-step unit tree.
  const NoiseTree unit = build_tree(1, 1.0);
  AdaptedField wsq(1, 2);
  for (int n = 0; n <= 1; ++n)
    for (std::int64_t k = 0; k < unit.nodes_at(n); ++k)
      wsq.level(n)(0, k) = unit.brownian(n, k) * unit.brownian(n, k);
  CHECK(conditional_expectation(tree, wsq, 0, 0)(0) == doctest::Approx(1.0));

  CHECK_THROWS_AS(conditional_expectation(tree, w, tree.num_steps, 0), ShapeError);
}

TEST_CASE("expectation over levels") {
  // Dyadic step (sqrt(dt) = 0.5): every node value is exactly representable
  // and the symmetric cancellation is exact, not just to roundoff.
  const NoiseTree dyadic = build_tree(4, 1.0);
  CHECK(expectation(dyadic, brownian_process(dyadic), 4)(0) == 0.0);

  const NoiseTree tree = build_tree(4, 2.0);
  const AdaptedField w = brownian_process(tree);
  CHECK(std::abs(expectation(tree, w, tree.num_steps)(0)) <= 1e-16);

  AdaptedField wsq(1, tree.num_steps + 1);
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      wsq.level(n)(0, k) = tree.brownian(n, k) * tree.brownian(n, k);
  CHECK(expectation(tree, wsq, tree.num_steps)(0) ==
        doctest::Approx(2.0).epsilon(1e-14));

  AdaptedField constant(1, 3);
  for (auto& lvl : constant.data) lvl.setConstant(-1.5);
  CHECK(expectation(tree, constant, 2)(0) == -1.5);

  CHECK_THROWS_AS(expectation(tree, w, 99), ShapeError);
}

TEST_CASE("tower property") {
  const NoiseTree tree = build_tree(6, 1.5);
  const CounterRng rng(19);
  AdaptedField x(1, tree.num_steps + 1);
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      x.level(n)(0, k) = rng.normal(42, (std::uint64_t(n) << 32) | k);

  for (int n = 0; n < tree.num_steps; ++n) {
    AdaptedField contracted(1, n + 1);
    contracted.level(n) = conditional_expectation_level(tree, x, n);
    const double via_contraction = expectation(tree, contracted, n)(0);
    const double direct = expectation(tree, x, n + 1)(0);
    CHECK(std::abs(via_contraction - direct) <= 1e-14 * (std::abs(direct) + 1.0));
  }
}

TEST_CASE("ito integral") {
  const NoiseTree tree = build_tree(6, 1.0);

  AdaptedField ones(1, tree.num_steps);
  for (auto& lvl : ones.data) lvl.setOnes();
  const Eigen::MatrixXd walk = ito_integral(tree, ones);
  for (std::int64_t leaf = 0; leaf < tree.nodes_at(tree.num_steps); ++leaf)
    CHECK(walk(0, leaf) == doctest::Approx(tree.brownian(tree.num_steps, leaf)));

  AdaptedField zeros(1, tree.num_steps);
  CHECK(ito_integral(tree, zeros).cwiseAbs().maxCoeff() == 0.0);

  AdaptedField stub(1, 2);
  CHECK_THROWS_AS(ito_integral(tree, stub), ShapeError);
}

TEST_CASE("scalar process debug export") {
  const NoiseTree tree = build_tree(3, 1.0);
  const std::string csv = scalar_process_csv(brownian_process(tree));
  // Header plus one row per node.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + tree.total_nodes());
  CHECK(csv.rfind("level,offset,value", 0) == 0);

  AdaptedField vector_valued(2, 2);
  CHECK_THROWS_AS(scalar_process_csv(vector_valued), ShapeError);
}

TEST_CASE("ito isometry holds to roundoff") {
  const NoiseTree tree = build_tree(8, 2.0);
  const CounterRng rng(5);
  AdaptedField z(1, tree.num_steps);
  for (int n = 0; n < tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      z.level(n)(0, k) = rng.normal(7, (std::uint64_t(n) << 32) | k);

  const Eigen::MatrixXd integral = ito_integral(tree, z);
  AdaptedField integral_field(1, tree.num_steps + 1);
  integral_field.level(tree.num_steps) = integral;
  AdaptedField integral_sq(1, tree.num_steps + 1);
  integral_sq.level(tree.num_steps) = integral.cwiseProduct(integral);
  const double lhs = expectation(tree, integral_sq, tree.num_steps)(0);

  double rhs = 0.0;
  for (int n = 0; n < tree.num_steps; ++n) {
    AdaptedField sq(1, n + 1);
    sq.level(n) = z.level(n).cwiseProduct(z.level(n));
    rhs += tree.dt * expectation(tree, sq, n)(0);
  }
  CHECK(std::abs(lhs - rhs) <= 1e-13 * (std::abs(lhs) + std::abs(rhs)));
}
