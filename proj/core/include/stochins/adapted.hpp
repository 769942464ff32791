#pragma once

// Adapted processes on the noise tree.
//
// An AdaptedField stores one value vector per tree node, level-major: entry
// (n, k) is column k of a dim x 2^n matrix. Adaptedness is structural - a
// value is indexed by its node and nothing else, so it cannot depend on the
// future of the path.
//
// State processes occupy levels 0..M, integrands and sources levels 0..M-1.

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "stochins/errors.hpp"
#include "stochins/tree.hpp"

namespace stochins {

class AdaptedField {
public:
  AdaptedField() = default;

  // Zero-initialized field with the given component count per node.
  AdaptedField(int dim, int num_levels) {
    data.reserve(num_levels);
    for (int n = 0; n < num_levels; ++n)
      data.emplace_back(Eigen::MatrixXd::Zero(dim, std::int64_t{1} << n));
  }

  int dim() const { return data.empty() ? 0 : static_cast<int>(data[0].rows()); }
  int num_levels() const { return static_cast<int>(data.size()); }

  Eigen::MatrixXd& level(int n) { return data[check(n)]; }
  const Eigen::MatrixXd& level(int n) const { return data[check(n)]; }

  std::vector<Eigen::MatrixXd> data;

private:
  int check(int n) const {
    if (n < 0 || n >= num_levels())
      throw ShapeError("AdaptedField: level " + std::to_string(n) +
                       " out of range (have " + std::to_string(num_levels()) + ")");
    return n;
  }
};

// E[ X_{n+1} | node (n, offset) ] = (value at child+ + value at child-) / 2.
Eigen::VectorXd conditional_expectation(const NoiseTree& tree,
                                        const AdaptedField& process, int level,
                                        std::int64_t offset);

// Same contraction applied to the whole level at once: 2^(n+1) -> 2^n columns.
Eigen::MatrixXd conditional_expectation_level(const NoiseTree& tree,
                                              const AdaptedField& process,
                                              int level);

// Probability-weighted (uniform 2^-n) sum over the nodes of a level.
Eigen::VectorXd expectation(const NoiseTree& tree, const AdaptedField& process,
                            int level);

// Per leaf path: sum_n integrand(node_n) * dW_n. The integrand must be defined
// on levels 0..M-1. Result is dim x 2^M, column k = value along leaf path k.
Eigen::MatrixXd ito_integral(const NoiseTree& tree, const AdaptedField& integrand);

// The Brownian path itself as a scalar adapted process (levels 0..M).
AdaptedField brownian_process(const NoiseTree& tree);

// Debug export of a scalar adapted process: one (level, offset, value) row
// per node.
std::string scalar_process_csv(const AdaptedField& process);

}  // namespace stochins
