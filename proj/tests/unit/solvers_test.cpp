#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "stochins/rng.hpp"
#include "stochins/solvers.hpp"
#include "test_helpers.hpp"

using namespace stochins;
using stochins::testing::constant_field;
using stochins::testing::random_potentials;

namespace {

std::shared_ptr<AdaptedField> random_source(const Mesh& mesh, const NoiseTree& tree,
                                            const CounterRng& rng,
                                            std::uint64_t stream) {
  return random_adapted(mesh, tree, rng, stream, tree.num_steps, 1.0);
}

Eigen::MatrixXd random_terminal(const Mesh& mesh, const NoiseTree& tree,
                                const CounterRng& rng, std::uint64_t stream) {
  Eigen::MatrixXd t(mesh.n_total(), tree.nodes_at(tree.num_steps));
  std::uint64_t c = 0;
  for (Eigen::Index k = 0; k < t.cols(); ++k)
    for (int i = 0; i < mesh.n_total(); ++i) t(i, k) = rng.normal(stream, c++);
  return t;
}

}  // namespace

TEST_CASE("zero data gives zero solutions") {
  const Mesh mesh = build_interval_mesh(8, 1.0);
  const NoiseTree tree = build_tree(5, 1.0);
  const auto fwd = solve_forward(mesh, tree, Potentials::none(), nullptr, nullptr,
                                 BulkSurfaceField(mesh));
  for (const auto& lvl : fwd.state.data) CHECK(lvl.cwiseAbs().maxCoeff() == 0.0);

  const Eigen::MatrixXd zero_terminal =
      Eigen::MatrixXd::Zero(mesh.n_total(), tree.nodes_at(tree.num_steps));
  const auto bwd =
      solve_backward(mesh, tree, Potentials::none(), nullptr, zero_terminal);
  for (const auto& lvl : bwd.state.data) CHECK(lvl.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& lvl : bwd.martingale.data) CHECK(lvl.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("spatially constant noise reproduces the Brownian path exactly") {
  for (const Mesh& mesh :
       {build_interval_mesh(8, 1.0), build_annulus_mesh(3, 4, 1.0, 2.0)}) {
    const NoiseTree tree = build_tree(8, 1.0);
    auto ones = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
    for (auto& lvl : ones->data) lvl.setOnes();

    const auto fwd = solve_forward(mesh, tree, Potentials::none(), nullptr, ones,
                                   BulkSurfaceField(mesh));
    double err = 0.0;
    for (int n = 0; n <= tree.num_steps; ++n)
      for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
        err = std::max(err, (fwd.state.level(n).col(k).array() - tree.brownian(n, k))
                                .abs()
                                .maxCoeff());
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("terminal Brownian datum gives z = W and unit martingale exactly") {
  const Mesh mesh = build_interval_mesh(8, 1.0);
  const NoiseTree tree = build_tree(8, 1.0);
  Eigen::MatrixXd terminal(mesh.n_total(), tree.nodes_at(tree.num_steps));
  for (std::int64_t k = 0; k < terminal.cols(); ++k)
    terminal.col(k).setConstant(tree.brownian(tree.num_steps, k));

  const auto bwd = solve_backward(mesh, tree, Potentials::none(), nullptr, terminal);
  double err_state = 0.0, err_mart = 0.0;
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      err_state = std::max(
          err_state,
          (bwd.state.level(n).col(k).array() - tree.brownian(n, k)).abs().maxCoeff());
  for (int n = 0; n < tree.num_steps; ++n)
    err_mart = std::max(err_mart,
                        (bwd.martingale.level(n).array() - 1.0).abs().maxCoeff());
  CHECK(err_state <= 1e-12);
  CHECK(err_mart <= 1e-12);
}

TEST_CASE("exact duality pairing for random data") {
  const CounterRng rng(23);
  int trial = 0;
  for (int cells : {8, 12}) {
    for (int steps : {5, 6}) {
      const Mesh mesh = build_interval_mesh(cells, 1.0);
      const NoiseTree tree = build_tree(steps, 1.0);
      const std::uint64_t base = 1000 * ++trial;

      const Potentials pot = random_potentials(mesh, tree, rng, base, 2.0);
      const auto f = random_source(mesh, tree, rng, base + 10);
      const auto g = random_source(mesh, tree, rng, base + 11);
      const auto big_f = random_source(mesh, tree, rng, base + 12);
      const BulkSurfaceField y0 = random_field(mesh, rng, base + 13);
      const Eigen::MatrixXd terminal = random_terminal(mesh, tree, rng, base + 14);

      const auto fwd = solve_forward(mesh, tree, pot, f, g, y0);
      const auto bwd = solve_backward(mesh, tree, pot.negated(), big_f, terminal);
      const DualityCheck check = duality_residual(mesh, tree, fwd, bwd);
      CHECK(check.relative <= 1e-10);
    }
  }
}

TEST_CASE("exact duality pairing on the annulus") {
  const Mesh mesh = build_annulus_mesh(4, 6, 1.0, 2.0);
  const NoiseTree tree = build_tree(5, 1.0);
  const CounterRng rng(27);
  const Potentials pot = random_potentials(mesh, tree, rng, 41, 1.5);
  const auto f = random_source(mesh, tree, rng, 50);
  const auto g = random_source(mesh, tree, rng, 51);
  const auto big_f = random_source(mesh, tree, rng, 52);
  const BulkSurfaceField y0 = random_field(mesh, rng, 53);
  const Eigen::MatrixXd terminal = random_terminal(mesh, tree, rng, 54);

  const auto fwd = solve_forward(mesh, tree, pot, f, g, y0);
  const auto bwd = solve_backward(mesh, tree, pot.negated(), big_f, terminal);
  CHECK(duality_residual(mesh, tree, fwd, bwd).relative <= 1e-10);
}

TEST_CASE("pairing is conserved without sources") {
  const Mesh mesh = build_annulus_mesh(3, 6, 1.0, 2.0);
  const NoiseTree tree = build_tree(6, 0.7);
  const CounterRng rng(29);
  const Potentials pot = random_potentials(mesh, tree, rng, 77, 1.5);

  const BulkSurfaceField y0 = random_field(mesh, rng, 80);
  const Eigen::MatrixXd terminal = random_terminal(mesh, tree, rng, 81);
  const auto fwd = solve_forward(mesh, tree, pot, nullptr, nullptr, y0);
  const auto bwd = solve_backward(mesh, tree, pot.negated(), nullptr, terminal);

  const double t_end = expectation_pairing(mesh, tree, fwd.state, bwd.state,
                                           tree.num_steps);
  const double t_zero = inner_product(
      mesh, BulkSurfaceField(mesh, fwd.state.level(0).col(0)),
      BulkSurfaceField(mesh, bwd.state.level(0).col(0)));
  CHECK(std::abs(t_end - t_zero) <= 1e-12 * (std::abs(t_end) + std::abs(t_zero)));
}

TEST_CASE("duality pairing rejects mismatched potentials") {
  const Mesh mesh = build_interval_mesh(6, 1.0);
  const NoiseTree tree = build_tree(4, 1.0);
  const Potentials pot = Potentials::constants(0.5, 0.25, 0.0, 0.0);
  const auto fwd =
      solve_forward(mesh, tree, pot, nullptr, nullptr, constant_field(mesh, 1.0));
  const Eigen::MatrixXd terminal =
      Eigen::MatrixXd::Ones(mesh.n_total(), tree.nodes_at(tree.num_steps));
  const auto bwd = solve_backward(mesh, tree, pot, nullptr, terminal);
  CHECK_THROWS_AS(duality_residual(mesh, tree, fwd, bwd), Error);
}

TEST_CASE("discrete forward energy estimate") {
  const Mesh mesh = build_interval_mesh(10, 1.0);
  const NoiseTree tree = build_tree(8, 1.0);
  const CounterRng rng(31);
  const Potentials pot = random_potentials(mesh, tree, rng, 500, 1.8);
  const BulkSurfaceField y0 = random_field(mesh, rng, 510);
  const auto fwd = solve_forward(mesh, tree, pot, nullptr, nullptr, y0);

  const double r1 = std::max(pot.drift.max_abs_interior(mesh),
                             pot.drift.max_abs_boundary(mesh));
  const double r2 = std::max(pot.diffusion.max_abs_interior(mesh),
                             pot.diffusion.max_abs_boundary(mesh));
  const double growth =
      (1.0 + tree.dt * r1) * (1.0 + tree.dt * r1) + tree.dt * r2 * r2;
  const double base = inner_product(mesh, y0, y0);
  double bound = base;
  for (int n = 1; n <= tree.num_steps; ++n) {
    bound *= growth;
    double mean_sq = 0.0;
    const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k) {
      const Eigen::VectorXd col = fwd.state.level(n).col(k);
      mean_sq += p * col.dot(mesh.packed_weight.cwiseProduct(col));
    }
    CHECK(mean_sq <= bound * (1.0 + 1e-10));
  }
}

TEST_CASE("discrete backward energy estimate is stable under refinement") {
  const NoiseTree tree = build_tree(6, 1.0);
  const CounterRng rng(37);
  double previous = 0.0;
  int level = 0;
  for (int cells : {8, 16, 32}) {
    const Mesh mesh = build_interval_mesh(cells, 1.0);
    const Potentials pot = Potentials::constants(0.8, 0.5, -0.3, 0.2);
    // Smooth data held fixed across refinements.
    BulkSurfaceField shape(mesh);
    for (int i = 0; i < mesh.n_interior(); ++i)
      shape.values(i) = std::sin(std::numbers::pi * mesh.interior_coord0(i));
    auto source = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
    for (int n = 0; n < tree.num_steps; ++n)
      source->level(n).colwise() = shape.values;
    Eigen::MatrixXd terminal(mesh.n_total(), tree.nodes_at(tree.num_steps));
    for (std::int64_t k = 0; k < terminal.cols(); ++k)
      terminal.col(k) = shape.values * tree.brownian(tree.num_steps, k);

    const auto bwd = solve_backward(mesh, tree, pot, source, terminal);

    double sup_state = 0.0, mart_energy = 0.0;
    for (int n = 0; n <= tree.num_steps; ++n) {
      double mean_sq = 0.0;
      const double p = 1.0 / static_cast<double>(tree.nodes_at(n));
      for (std::int64_t k = 0; k < tree.nodes_at(n); ++k) {
        const Eigen::VectorXd col = bwd.state.level(n).col(k);
        mean_sq += p * col.dot(mesh.packed_weight.cwiseProduct(col));
      }
      sup_state = std::max(sup_state, mean_sq);
    }
    for (int n = 0; n < tree.num_steps; ++n)
      mart_energy +=
          tree.dt * expectation_pairing(mesh, tree, bwd.martingale, bwd.martingale, n);

    double terminal_sq = 0.0;
    const double p = 1.0 / static_cast<double>(tree.nodes_at(tree.num_steps));
    for (std::int64_t k = 0; k < terminal.cols(); ++k)
      terminal_sq += p * terminal.col(k).dot(mesh.packed_weight.cwiseProduct(terminal.col(k)));
    double source_sq = 0.0;
    for (int n = 0; n < tree.num_steps; ++n)
      source_sq += tree.dt * expectation_pairing(mesh, tree, *source, *source, n);

    const double constant = (sup_state + mart_energy) / (terminal_sq + source_sq);
    if (level > 0) {
      CHECK(constant <= 1.5 * previous);
      CHECK(previous <= 1.5 * constant);
    }
    previous = constant;
    ++level;
  }
}

TEST_CASE("deterministic manufactured solution converges at second order") {
  // Exact field y = e^{-t}(x + sin(pi x)); its second derivative vanishes at
  // both endpoints, so the one-sided boundary flux stencil stays second-order.
  const double horizon = 0.5;
  const int steps = 50000;
  const auto exact = [](double t, double x) {
    return std::exp(-t) * (x + std::sin(std::numbers::pi * x));
  };
  const auto exact_dx = [](double t, double x) {
    return std::exp(-t) * (1.0 + std::numbers::pi * std::cos(std::numbers::pi * x));
  };

  double previous_error = 0.0;
  for (int cells : {8, 16}) {
    const Mesh mesh = build_interval_mesh(cells, 1.0);
    const auto source = [&](int, double t) {
      Eigen::VectorXd f(mesh.n_total());
      const double pi = std::numbers::pi;
      for (int i = 0; i < mesh.n_interior(); ++i) {
        const double x = mesh.interior_coord0(i);
        // f = y_t - y_xx
        f(i) = std::exp(-t) * (-(x + std::sin(pi * x)) + pi * pi * std::sin(pi * x));
      }
      // Boundary: f_Gamma = y_t + dnu y  (Laplace-Beltrami vanishes in 1d;
      // the outward normal derivative is -y_x at x = 0 and +y_x at x = 1).
      f(mesh.n_interior() + 0) = -exact(t, 0.0) - exact_dx(t, 0.0);
      f(mesh.n_interior() + 1) = -exact(t, 1.0) + exact_dx(t, 1.0);
      return f;
    };
    BulkSurfaceField init(mesh);
    for (int i = 0; i < mesh.n_interior(); ++i)
      init.values(i) = exact(0.0, mesh.interior_coord0(i));
    init.values(mesh.n_interior() + 0) = exact(0.0, 0.0);
    init.values(mesh.n_interior() + 1) = exact(0.0, 1.0);

    const Eigen::MatrixXd path = solve_forward_deterministic(
        mesh, steps, horizon, Potentials::none(), source, init);

    const double dt = horizon / steps;
    double err_sq = 0.0;
    for (int n = 0; n <= steps; n += 25) {
      const double t = n * dt;
      Eigen::VectorXd diff(mesh.n_total());
      for (int i = 0; i < mesh.n_interior(); ++i)
        diff(i) = path(i, n) - exact(t, mesh.interior_coord0(i));
      diff(mesh.n_interior() + 0) = path(mesh.n_interior() + 0, n) - exact(t, 0.0);
      diff(mesh.n_interior() + 1) = path(mesh.n_interior() + 1, n) - exact(t, 1.0);
      err_sq += 25 * dt * diff.dot(mesh.packed_weight.cwiseProduct(diff));
    }
    const double err = std::sqrt(err_sq);
    if (previous_error > 0.0) {
      const double ratio = previous_error / err;
      CHECK(ratio > 3.2);
      CHECK(ratio < 4.8);
    }
    previous_error = err;
  }
}

TEST_CASE("solution export formats") {
  const Mesh mesh = build_interval_mesh(4, 1.0);
  const NoiseTree tree = build_tree(3, 1.0);
  auto ones = std::make_shared<AdaptedField>(mesh.n_total(), tree.num_steps);
  for (auto& lvl : ones->data) lvl.setOnes();
  const auto fwd = solve_forward(mesh, tree, Potentials::none(), nullptr, ones,
                                 BulkSurfaceField(mesh));

  const std::string csv = adapted_field_csv(tree, fwd.state);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + tree.total_nodes());
  CHECK(csv.rfind("level,offset,node_index,v0", 0) == 0);

  const std::string json = level_norms_json(mesh, tree, fwd.state);
  CHECK(json.find("mean_sq_norm") != std::string::npos);
}

TEST_CASE("deterministic path solver validates its restrictions") {
  const Mesh mesh = build_interval_mesh(8, 1.0);
  CHECK_THROWS_AS(solve_forward_deterministic(mesh, 10, 1.0,
                                              Potentials::constants(0.0, 1.0, 0.0, 0.0),
                                              nullptr, BulkSurfaceField(mesh)),
                  ValidationError);
  CHECK_THROWS_AS(
      solve_forward_deterministic(mesh, 0, 1.0, Potentials::none(), nullptr,
                                  BulkSurfaceField(mesh)),
      ValidationError);
}
