// Microbenchmarks for the hot paths: tree sweeps, one Gramian application,
// and a weighted-estimate evaluation.

#include <benchmark/benchmark.h>

#include <memory>

#include "stochins/carleman.hpp"
#include "stochins/hum.hpp"
#include "stochins/rng.hpp"

using namespace stochins;

namespace {

InsensitizationProblem make_problem(int cells, int steps) {
  auto mesh = std::make_shared<Mesh>(build_interval_mesh(cells, 1.0));
  auto tree = std::make_shared<NoiseTree>(build_tree(steps, 1.0));
  InsensitizationProblem p;
  p.mesh = mesh;
  p.tree = tree;
  p.potentials = Potentials::constants(0.5, 0.3, -0.2, 0.4);
  p.control_region = interval_region(*mesh, 0.3, 0.7);
  p.observation_interior = interval_region(*mesh, 0.5, 0.9);
  p.observation_boundary = interval_boundary_region(*mesh, false, true);
  p.carleman_core = mask_intersection(
      interval_region(*mesh, 0.45, 0.65),
      mask_intersection(p.control_region, p.observation_interior));
  p.initial = BulkSurfaceField(*mesh);
  return p;
}

void ForwardSweep(benchmark::State& state) {
  const int steps = static_cast<int>(state.range(0));
  const InsensitizationProblem p = make_problem(16, steps);
  auto ones = std::make_shared<AdaptedField>(p.mesh->n_total(), steps);
  for (auto& lvl : ones->data) lvl.setOnes();
  for (auto _ : state) {
    auto sol = solve_forward(*p.mesh, *p.tree, p.potentials, nullptr, ones, p.initial);
    benchmark::DoNotOptimize(sol.state.level(steps));
  }
  state.SetComplexityN(p.tree->total_nodes());
}
BENCHMARK(ForwardSweep)->Arg(8)->Arg(10)->Arg(12)->Complexity();

void CascadePair(benchmark::State& state) {
  const InsensitizationProblem p = make_problem(16, static_cast<int>(state.range(0)));
  const CounterRng rng(1);
  const BulkSurfaceField q0 = random_unit_field(*p.mesh, rng, 0);
  for (auto _ : state) {
    auto adj = solve_adjoint(p, q0);
    benchmark::DoNotOptimize(adj.p.state.level(0));
  }
}
BENCHMARK(CascadePair)->Arg(8)->Arg(10);

void GramianApply(benchmark::State& state) {
  const InsensitizationProblem p = make_problem(16, 10);
  const CounterRng rng(2);
  const BulkSurfaceField q0 = random_unit_field(*p.mesh, rng, 0);
  for (auto _ : state) {
    auto out = gramian_apply(p, q0);
    benchmark::DoNotOptimize(out.values);
  }
}
BENCHMARK(GramianApply);

void CoupledRatio(benchmark::State& state) {
  const InsensitizationProblem p = make_problem(16, 10);
  CarlemanParams params;
  params.core = p.carleman_core;
  params.profile = build_weight_profile(*p.mesh, params.core, 0.2);
  params.profile_peak = 0.2;
  params.observability_weight = default_observability_weight(2.0, 1.5, 0.2, 1.0);
  const CounterRng rng(3);
  const AdjointSolution adj = solve_adjoint(p, random_unit_field(*p.mesh, rng, 0));
  for (auto _ : state) {
    auto r = carleman_ratio(CarlemanKind::Coupled, p, adj, params);
    benchmark::DoNotOptimize(r.ratio);
  }
}
BENCHMARK(CoupledRatio);

}  // namespace

BENCHMARK_MAIN();
