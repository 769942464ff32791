#pragma once

// Counter-based randomness: every draw is a pure function of
// (seed, stream, counter), so sampling is reproducible independently of
// evaluation order and thread count. One experiment seed fans out into
// streams for potentials, initial-data samples, verification directions, ...

#include <cstdint>
#include <memory>

#include "stochins/adapted.hpp"
#include "stochins/mesh.hpp"
#include "stochins/tree.hpp"

namespace stochins {

class CounterRng {
public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const;
  double uniform(std::uint64_t stream, std::uint64_t counter) const;    // (0,1)
  double symmetric(std::uint64_t stream, std::uint64_t counter) const;  // (-1,1)
  double normal(std::uint64_t stream, std::uint64_t counter) const;     // N(0,1)

  std::uint64_t seed() const { return seed_; }

private:
  std::uint64_t seed_ = 0;
};

// Independent standard normals at every node.
BulkSurfaceField random_field(const Mesh& mesh, const CounterRng& rng,
                              std::uint64_t stream);

// Same, scaled to unit quadrature norm.
BulkSurfaceField random_unit_field(const Mesh& mesh, const CounterRng& rng,
                                   std::uint64_t stream);

// Adapted field with iid uniform values in [-bound, bound] on every node of
// levels 0..num_levels-1.
std::shared_ptr<AdaptedField> random_adapted(const Mesh& mesh, const NoiseTree& tree,
                                             const CounterRng& rng,
                                             std::uint64_t stream, int num_levels,
                                             double bound);

}  // namespace stochins
