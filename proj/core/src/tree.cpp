#include "stochins/tree.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace stochins {

double NoiseTree::brownian(int level, std::int64_t offset) const {
  if (level < 0 || level > num_steps)
    throw ShapeError("NoiseTree::brownian: level out of range");
  if (offset < 0 || offset >= nodes_at(level))
    throw ShapeError("NoiseTree::brownian: offset out of range");
  const int plus = std::popcount(static_cast<std::uint64_t>(offset));
  return sqrt_dt * (2 * plus - level);
}

NoiseTree build_tree(int steps, double horizon) {
  if (steps < 1)
    throw ValidationError("build_tree: need at least one time step");
  if (steps > 20)
    throw ValidationError("build_tree: tree too large, steps = " +
                          std::to_string(steps) + " exceeds the cap of 20");
  if (!(horizon > 0.0))
    throw ValidationError("build_tree: horizon must be positive");
  NoiseTree tree;
  tree.num_steps = steps;
  tree.horizon = horizon;
  tree.dt = horizon / steps;
  tree.sqrt_dt = std::sqrt(tree.dt);
  return tree;
}

}  // namespace stochins
