#pragma once

#include "frepa/rng.hpp"
#include "frepa/tensor.hpp"

namespace frepa {

/// Image-domain ridge strength: Gaussian pre-smoothing (sigma = 1 px,
/// replicate borders), central-difference Hessian, largest |eigenvalue|,
/// min-max normalized. Multi-channel inputs are reduced to their channel
/// mean first. Output is [1, H, W]; a constant input gives all zeros.
Tensor hessian_response(const Tensor& image, double sigma = 1.0);

/// Appends the response as the last channel.
Tensor augment_input(const Tensor& corrupted, const Tensor& response);

/// Applies dihedral transform `k` in [0, 8): rotation by k % 4 quarter
/// turns counter-clockwise after an optional horizontal flip (k >= 4).
Tensor dihedral_transform(const Tensor& image, int k);

/// Uniform draw over the eight dihedral transforms of a square image.
Tensor random_flip_rotate(const Tensor& image, CounterRng& rng);

}  // namespace frepa
