#include <doctest.h>

#include <cmath>
#include <memory>

#include "stochins/cascade.hpp"
#include "stochins/rng.hpp"
#include "test_helpers.hpp"

using namespace stochins;
using stochins::testing::bump_field;
using stochins::testing::damped_source;
using stochins::testing::random_potentials;
using stochins::testing::reference_problem;

namespace {

ControlTriple random_controls(const InsensitizationProblem& p, const CounterRng& rng,
                              std::uint64_t stream) {
  ControlTriple c;
  c.drift = *random_adapted(*p.mesh, *p.tree, rng, stream, p.tree->num_steps, 1.0);
  c.diffusion =
      *random_adapted(*p.mesh, *p.tree, rng, stream + 1, p.tree->num_steps, 1.0);
  return c;
}

}  // namespace

TEST_CASE("problem validation") {
  InsensitizationProblem p = reference_problem(16, 6);
  CHECK(p.validate().empty());

  SUBCASE("G1 outside the overlap is a hard error") {
    p.carleman_core = interval_region(*p.mesh, 0.1, 0.2);
    CHECK_THROWS_WITH_AS(p.validate(), doctest::Contains("G1"), ValidationError);
  }
  SUBCASE("empty G1 is a hard error") {
    p.carleman_core.weights.setZero();
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }
  SUBCASE("disjoint control and observation regions") {
    p.observation_interior = interval_region(*p.mesh, 0.8, 0.95);
    CHECK_THROWS_AS(p.validate(), ValidationError);
    // Exploration flag: allowed once G1 sits inside G0 alone, with a warning.
    p.carleman_core = interval_region(*p.mesh, 0.45, 0.65);
    const auto warnings = p.validate(true);
    REQUIRE(!warnings.empty());
    // The cascade still runs; no claim is made about the outcome.
    const CascadeSolution sol = solve_cascade(p, nullptr);
    CHECK(std::isfinite(sol.backward_initial().cwiseAbs().maxCoeff()));
    // G1 outside G0 stays a hard error even under the flag.
    p.carleman_core = interval_region(*p.mesh, 0.75, 0.78);
    CHECK_THROWS_AS(p.validate(true), ValidationError);
  }
  SUBCASE("functional start time range") {
    p.functional_start = 1.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
  }
  SUBCASE("source at t = 0 makes the weighted norm infinite") {
    auto src = std::make_shared<AdaptedField>(p.mesh->n_total(), p.tree->num_steps);
    for (auto& lvl : src->data) lvl.setOnes();
    p.source = src;
    const auto warnings = p.validate();
    REQUIRE(warnings.size() == 1);
    CHECK(weighted_source_norm(p).finite == false);
  }
}

TEST_CASE("zero data cascade is identically zero") {
  const InsensitizationProblem p = reference_problem(8, 5);
  const CascadeSolution sol = solve_cascade(p, nullptr);
  CHECK(sol.backward_initial().cwiseAbs().maxCoeff() == 0.0);
  CHECK(observation_energy(p, sol.forward) == 0.0);
  // Terminal condition of the backward state is assembled, not solved.
  CHECK(sol.backward.state.level(p.tree->num_steps).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("observed source produces a nonzero free response") {
  InsensitizationProblem p = reference_problem(16, 8, 1.0, 1.0);
  const CascadeSolution sol = solve_cascade(p, nullptr);
  const double z0 = std::sqrt(packed_dot(*p.mesh, sol.backward_initial(),
                                         sol.backward_initial()));
  CHECK(z0 > 0.0);
  CHECK(observation_energy(p, sol.forward) > 0.0);
}

TEST_CASE("cascade is jointly linear in sources, controls and initial data") {
  InsensitizationProblem p = reference_problem(8, 6, 1.0, 1.0);
  const CounterRng rng(101);
  p.initial = random_field(*p.mesh, rng, 7);
  const ControlTriple controls = random_controls(p, rng, 200);

  const CascadeSolution base = solve_cascade(p, &controls);

  const double a = -2.5;
  InsensitizationProblem scaled = p;
  auto src = std::make_shared<AdaptedField>(*p.source);
  for (auto& lvl : src->data) lvl *= a;
  scaled.source = src;
  scaled.initial.values *= a;
  ControlTriple scaled_controls = controls;
  for (auto& lvl : scaled_controls.drift.data) lvl *= a;
  for (auto& lvl : scaled_controls.diffusion.data) lvl *= a;

  const CascadeSolution scaled_sol = solve_cascade(scaled, &scaled_controls);
  const Eigen::VectorXd diff = scaled_sol.backward_initial() - a * base.backward_initial();
  CHECK(diff.cwiseAbs().maxCoeff() <=
        1e-12 * (1.0 + base.backward_initial().cwiseAbs().maxCoeff() * std::abs(a)));
}

TEST_CASE("cascade superposition across distinct input sets") {
  InsensitizationProblem base = reference_problem(8, 6, 1.0, 1.0);
  const CounterRng rng(111);

  InsensitizationProblem other = base;
  auto src = std::make_shared<AdaptedField>(
      *random_adapted(*base.mesh, *base.tree, rng, 900, base.tree->num_steps, 1.0));
  other.source = src;
  other.initial = random_field(*base.mesh, rng, 901);
  const ControlTriple ca = random_controls(base, rng, 910);
  const ControlTriple cb = random_controls(base, rng, 920);

  InsensitizationProblem combined = base;
  auto sum_src = std::make_shared<AdaptedField>(*base.source);
  for (int n = 0; n < base.tree->num_steps; ++n)
    sum_src->level(n) += src->level(n);
  combined.source = sum_src;
  combined.initial.values = base.initial.values + other.initial.values;
  ControlTriple cc = ca;
  for (int n = 0; n < base.tree->num_steps; ++n) {
    cc.drift.level(n) += cb.drift.level(n);
    cc.diffusion.level(n) += cb.diffusion.level(n);
  }

  const Eigen::VectorXd za = solve_cascade(base, &ca).backward_initial();
  const Eigen::VectorXd zb = solve_cascade(other, &cb).backward_initial();
  const Eigen::VectorXd zc = solve_cascade(combined, &cc).backward_initial();
  CHECK((zc - (za + zb)).cwiseAbs().maxCoeff() <=
        1e-12 * (1.0 + za.cwiseAbs().maxCoeff() + zb.cwiseAbs().maxCoeff()));
}

TEST_CASE("observed energy quadrature") {
  // Constant state 1, observation region of quadrature measure 0.3, no
  // boundary observation: Phi = 0.5 * T * 0.3 = 0.15.
  auto mesh = std::make_shared<Mesh>(build_interval_mesh(10, 1.0));
  auto tree = std::make_shared<NoiseTree>(build_tree(5, 1.0));
  InsensitizationProblem p;
  p.mesh = mesh;
  p.tree = tree;
  p.observation_interior = interval_region(*mesh, 0.25, 0.55);
  REQUIRE(p.observation_interior.measure(*mesh) == doctest::Approx(0.3));
  p.observation_boundary = interval_boundary_region(*mesh, false, false);
  p.control_region = interval_region(*mesh, 0.0, 1.0);
  p.carleman_core = interval_region(*mesh, 0.45, 0.55);
  p.initial = BulkSurfaceField(*mesh);

  ForwardSolution ones;
  ones.state = AdaptedField(mesh->n_total(), tree->num_steps + 1);
  for (auto& lvl : ones.state.data) lvl.setOnes();
  CHECK(observation_energy(p, ones) == doctest::Approx(0.15));

  // Phi >= 0 on random states.
  const CounterRng rng(11);
  ForwardSolution random_state;
  random_state.state = AdaptedField(mesh->n_total(), tree->num_steps + 1);
  for (int n = 0; n <= tree->num_steps; ++n)
    for (std::int64_t k = 0; k < tree->nodes_at(n); ++k)
      random_state.state.level(n).col(k) = random_field(*mesh, rng, 900 + n).values;
  CHECK(observation_energy(p, random_state) >= 0.0);
}

TEST_CASE("empty observation regions force a vanishing backward state") {
  InsensitizationProblem p = reference_problem(8, 5, 1.0, 1.0);
  p.observation_interior.weights.setZero();
  p.observation_boundary.weights.setZero();
  const CascadeSolution sol = solve_cascade(p, nullptr);
  for (const auto& lvl : sol.backward.state.data)
    CHECK(lvl.cwiseAbs().maxCoeff() == 0.0);
  CHECK(observation_energy(p, sol.forward) == 0.0);
}

TEST_CASE("derivative identity: finite difference equals duality pairing") {
  const CounterRng rng(301);
  int stream = 0;
  for (int trial = 0; trial < 4; ++trial) {
    InsensitizationProblem p = reference_problem(8, 6, 1.0, 1.0);
    p.potentials = random_potentials(*p.mesh, *p.tree, rng, 5000 + 10 * trial, 1.5);
    const ControlTriple controls = random_controls(p, rng, 6000 + 10 * trial);
    const BulkSurfaceField dir = random_field(*p.mesh, rng, 7000 + ++stream);

    for (int tau = 1; tau <= 2; ++tau) {
      const DerivativeCheck check =
          initial_perturbation_derivative(p, &controls, dir, tau, {});
      CHECK(std::abs(check.fd - check.duality) <= 1e-9 * check.scale);
    }
  }
}

TEST_CASE("derivative identity is exact for any finite-difference step") {
  InsensitizationProblem p = reference_problem(8, 6, 1.0, 1.0);
  const CounterRng rng(302);
  const ControlTriple controls = random_controls(p, rng, 50);
  const BulkSurfaceField dir = random_field(*p.mesh, rng, 51);
  for (double delta : {1e-4, 0.1, 0.7}) {
    DerivativeOptions opt;
    opt.delta = delta;
    const DerivativeCheck check =
        initial_perturbation_derivative(p, &controls, dir, 1, opt);
    CHECK(std::abs(check.fd - check.duality) <= 1e-9 * check.scale);
  }
}

TEST_CASE("derivative scales linearly without renormalization") {
  InsensitizationProblem p = reference_problem(8, 5, 1.0, 1.0);
  const CounterRng rng(303);
  BulkSurfaceField dir = random_field(*p.mesh, rng, 60);
  DerivativeOptions opt;
  opt.renormalize = false;
  const DerivativeCheck base = initial_perturbation_derivative(p, nullptr, dir, 1, opt);
  const double c = 3.25;
  dir.values *= c;
  const DerivativeCheck scaled = initial_perturbation_derivative(p, nullptr, dir, 1, opt);
  CHECK(std::abs(scaled.duality - c * base.duality) <=
        1e-12 * (std::abs(scaled.duality) + std::abs(base.duality) + 1.0));
}

TEST_CASE("insensitized problem has vanishing derivative") {
  // Zero sources, zero initial data, zero controls: z(0) = 0 exactly and the
  // central difference vanishes identically.
  const InsensitizationProblem p = reference_problem(8, 5);
  const CounterRng rng(304);
  const BulkSurfaceField dir = random_field(*p.mesh, rng, 70);
  const DerivativeCheck check = initial_perturbation_derivative(p, nullptr, dir, 1, {});
  CHECK(check.duality == 0.0);
  CHECK(check.fd == 0.0);

  CHECK_THROWS_AS(
      initial_perturbation_derivative(p, nullptr, BulkSurfaceField(*p.mesh), 1, {}),
      ValidationError);
}

TEST_CASE("delayed functional start keeps the identity exact") {
  // The modified energy counting only t >= t0 admits nonzero initial data;
  // the derivative identity stays exact because the backward source carries
  // the same time mask.
  InsensitizationProblem p = reference_problem(8, 6, 1.0, 1.0);
  p.functional_start = 0.5;
  const CounterRng rng(401);
  p.initial = random_field(*p.mesh, rng, 1);
  const ControlTriple controls = random_controls(p, rng, 10);
  const BulkSurfaceField dir = random_field(*p.mesh, rng, 2);
  for (int tau = 1; tau <= 2; ++tau) {
    const DerivativeCheck check =
        initial_perturbation_derivative(p, &controls, dir, tau, {});
    CHECK(std::abs(check.fd - check.duality) <= 1e-9 * check.scale);
  }

  // Energy counts only the active levels.
  ForwardSolution ones;
  ones.state = AdaptedField(p.mesh->n_total(), p.tree->num_steps + 1);
  for (auto& lvl : ones.state.data) lvl.setOnes();
  const double full = [&] {
    InsensitizationProblem q = p;
    q.functional_start = 0.0;
    return observation_energy(q, ones);
  }();
  CHECK(observation_energy(p, ones) == doctest::Approx(0.5 * full));
}

TEST_CASE("adjoint pair: zero datum, linearity, positivity") {
  InsensitizationProblem p = reference_problem(8, 6);
  const auto zero = solve_adjoint(p, BulkSurfaceField(*p.mesh));
  for (const auto& lvl : zero.p.state.data) CHECK(lvl.cwiseAbs().maxCoeff() == 0.0);

  const CounterRng rng(305);
  const BulkSurfaceField q0a = random_field(*p.mesh, rng, 80);
  const BulkSurfaceField q0b = random_field(*p.mesh, rng, 81);
  const double a = 1.7, b = -0.4;
  BulkSurfaceField combo(*p.mesh);
  combo.values = a * q0a.values + b * q0b.values;
  const auto sa = solve_adjoint(p, q0a);
  const auto sb = solve_adjoint(p, q0b);
  const auto sc = solve_adjoint(p, combo);
  const Eigen::VectorXd diff = sc.p.state.level(0).col(0) -
                               (a * sa.p.state.level(0).col(0) +
                                b * sb.p.state.level(0).col(0));
  CHECK(diff.cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + sc.p.state.level(0).col(0).cwiseAbs().maxCoeff()));

  // With zero potentials and a nonnegative initial mode, the backward state
  // accumulates the observation of a nonnegative forward state, and the
  // implicit smoother preserves positivity: <p(t), q(t)> stays nonnegative.
  InsensitizationProblem sym = reference_problem(8, 6);
  sym.potentials = Potentials::none();
  const BulkSurfaceField mode = bump_field(*sym.mesh, 0.5, 0.25, 1.0);
  const auto adj = solve_adjoint(sym, mode);
  CHECK(adj.p.state.level(1).minCoeff() >= -1e-12);
  const double pairing = expectation_pairing(*sym.mesh, *sym.tree, adj.p.state,
                                             adj.q.state, 1);
  CHECK(pairing > 0.0);
}
