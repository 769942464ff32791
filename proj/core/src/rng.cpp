#include "stochins/rng.hpp"

#include <cmath>
#include <numbers>

namespace stochins {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
  return splitmix(splitmix(splitmix(seed_) ^ stream) ^ counter);
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
  // 53 significant bits, offset to stay inside the open interval.
  return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double CounterRng::symmetric(std::uint64_t stream, std::uint64_t counter) const {
  return 2.0 * uniform(stream, counter) - 1.0;
}

double CounterRng::normal(std::uint64_t stream, std::uint64_t counter) const {
  const double u1 = uniform(stream, 2 * counter);
  const double u2 = uniform(stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

BulkSurfaceField random_field(const Mesh& mesh, const CounterRng& rng,
                              std::uint64_t stream) {
  BulkSurfaceField f(mesh);
  for (int i = 0; i < mesh.n_total(); ++i) f.values(i) = rng.normal(stream, i);
  return f;
}

BulkSurfaceField random_unit_field(const Mesh& mesh, const CounterRng& rng,
                                   std::uint64_t stream) {
  BulkSurfaceField f = random_field(mesh, rng, stream);
  const double n = norm_h(mesh, f);
  if (n > 0.0) f.values /= n;
  return f;
}

std::shared_ptr<AdaptedField> random_adapted(const Mesh& mesh, const NoiseTree& tree,
                                             const CounterRng& rng,
                                             std::uint64_t stream, int num_levels,
                                             double bound) {
  auto field = std::make_shared<AdaptedField>(mesh.n_total(), num_levels);
  std::uint64_t counter = 0;
  for (int n = 0; n < num_levels; ++n) {
    Eigen::MatrixXd& lvl = field->level(n);
    for (Eigen::Index k = 0; k < lvl.cols(); ++k)
      for (int i = 0; i < mesh.n_total(); ++i)
        lvl(i, k) = bound * rng.symmetric(stream, counter++);
  }
  (void)tree;
  return field;
}

}  // namespace stochins
