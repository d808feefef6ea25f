#pragma once

#include "frepa/rng.hpp"
#include "frepa/tensor.hpp"

#include <cstdint>
#include <vector>

namespace frepa {

/// Procedural texture in [0, 1]: a few oriented sinusoidal gratings spanning
/// low to high spatial frequencies plus hard-edged disks and lines.
Tensor synthetic_texture(Index size, Index channels, CounterRng& rng);

/// `count` textures, image i drawn from CounterRng(seed, {synthetic, i}).
std::vector<Tensor> synthetic_dataset(Index count, Index size, std::uint64_t seed, Index channels = 1);

}  // namespace frepa
