#include "stochins/adapted.hpp"

#include <cstdio>
#include <sstream>

namespace stochins {

Eigen::VectorXd conditional_expectation(const NoiseTree& tree,
                                        const AdaptedField& process, int level,
                                        std::int64_t offset) {
  if (level < 0 || level >= tree.num_steps)
    throw ShapeError("conditional_expectation: level out of range");
  if (process.num_levels() <= level + 1)
    throw ShapeError("conditional_expectation: process not defined at level " +
                     std::to_string(level + 1));
  if (offset < 0 || offset >= tree.nodes_at(level))
    throw ShapeError("conditional_expectation: offset out of range");
  const Eigen::MatrixXd& next = process.level(level + 1);
  return 0.5 * (next.col(2 * offset) + next.col(2 * offset + 1));
}

Eigen::MatrixXd conditional_expectation_level(const NoiseTree& tree,
                                              const AdaptedField& process,
                                              int level) {
  if (level < 0 || level >= tree.num_steps)
    throw ShapeError("conditional_expectation_level: level out of range");
  if (process.num_levels() <= level + 1)
    throw ShapeError("conditional_expectation_level: process not defined at level " +
                     std::to_string(level + 1));
  const Eigen::MatrixXd& next = process.level(level + 1);
  const std::int64_t cols = tree.nodes_at(level);
  Eigen::MatrixXd out(next.rows(), cols);
  for (std::int64_t k = 0; k < cols; ++k)
    out.col(k) = 0.5 * (next.col(2 * k) + next.col(2 * k + 1));
  return out;
}

Eigen::VectorXd expectation(const NoiseTree& tree, const AdaptedField& process,
                            int level) {
  if (level < 0 || level > tree.num_steps || level >= process.num_levels())
    throw ShapeError("expectation: level out of range");
  const Eigen::MatrixXd& values = process.level(level);
  const double p = 1.0 / static_cast<double>(tree.nodes_at(level));
  // Fixed summation order keeps results independent of any parallel caller.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(values.rows());
  for (std::int64_t k = 0; k < values.cols(); ++k) sum += values.col(k);
  return p * sum;
}

Eigen::MatrixXd ito_integral(const NoiseTree& tree, const AdaptedField& integrand) {
  if (integrand.num_levels() < tree.num_steps)
    throw ShapeError("ito_integral: integrand not defined on all visited nodes "
                     "(need levels 0.." + std::to_string(tree.num_steps - 1) + ")");
  const int dim = integrand.dim();
  const std::int64_t leaves = tree.nodes_at(tree.num_steps);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim, leaves);
  for (std::int64_t leaf = 0; leaf < leaves; ++leaf) {
    for (int n = 0; n < tree.num_steps; ++n) {
      // Node visited at level n along this leaf path, and the sign of the
      // increment taken when leaving it.
      const std::int64_t node = leaf >> (tree.num_steps - n);
      const std::int64_t child = leaf >> (tree.num_steps - n - 1);
      const double dw = NoiseTree::arrival_sign(child) * tree.sqrt_dt;
      out.col(leaf) += integrand.level(n).col(node) * dw;
    }
  }
  return out;
}

AdaptedField brownian_process(const NoiseTree& tree) {
  AdaptedField w(1, tree.num_steps + 1);
  for (int n = 0; n <= tree.num_steps; ++n)
    for (std::int64_t k = 0; k < tree.nodes_at(n); ++k)
      w.level(n)(0, k) = tree.brownian(n, k);
  return w;
}

std::string scalar_process_csv(const AdaptedField& process) {
  if (process.dim() != 1)
    throw ShapeError("scalar_process_csv: process is not scalar");
  std::ostringstream out;
  out << "level,offset,value\n";
  char buf[64];
  for (int n = 0; n < process.num_levels(); ++n) {
    const Eigen::MatrixXd& lvl = process.level(n);
    for (Eigen::Index k = 0; k < lvl.cols(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", lvl(0, k));
      out << n << "," << k << "," << buf << "\n";
    }
  }
  return out.str();
}

}  // namespace stochins
