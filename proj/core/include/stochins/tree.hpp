#pragma once

// Binomial tree of Brownian increments: the discrete filtration.
//
// Level n holds 2^n nodes. The children of node (n, k) are (n+1, 2k) for the
// -sqrt(dt) move and (n+1, 2k+1) for the +sqrt(dt) move, each with probability
// one half. Increments of +-sqrt(dt) match the first two moments of the
// Brownian increment exactly, so conditional expectations, expectations and
// the Ito isometry hold on the tree to floating-point roundoff rather than up
// to sampling error.

#include <cstdint>

#include "stochins/errors.hpp"

namespace stochins {

class NoiseTree {
public:
  int num_steps = 0;     // M
  double horizon = 0.0;  // T
  double dt = 0.0;
  double sqrt_dt = 0.0;

  std::int64_t nodes_at(int level) const { return std::int64_t{1} << level; }
  std::int64_t total_nodes() const {
    return (std::int64_t{1} << (num_steps + 1)) - 1;
  }
  double time_at(int level) const { return level * dt; }

  // Brownian value at a node: sqrt(dt) * (#plus moves - #minus moves) along
  // the path encoded by the offset bits.
  double brownian(int level, std::int64_t offset) const;

  // Increment sign of the move into node (level, offset), +1 or -1.
  static int arrival_sign(std::int64_t offset) { return (offset & 1) ? +1 : -1; }
};

// Guarded construction: 1 <= steps <= 20 (the tree has 2^(M+1)-1 nodes).
NoiseTree build_tree(int steps, double horizon);

}  // namespace stochins
