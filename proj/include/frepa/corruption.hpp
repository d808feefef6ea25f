#pragma once

#include "frepa/rng.hpp"
#include "frepa/spectral.hpp"
#include "frepa/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace frepa {

/// How masked spatial patches are filled.
enum class FillMode {
  histogram,  ///< Gaussian noise with the patch's own mean and variance
  zero,       ///< plain zero fill (ablation)
};

struct CorruptionConfig {
  Index freq_patch = 16;
  Index spatial_patch = 32;
  double dc_ratio = 0.2;
  double sigma_ratio = 0.002;
  double mask_ratio = 0.7;
  double branch_prob = 0.5;
  FillMode fill = FillMode::histogram;

  /// Volume defaults: 16^3 spatial patches.
  static CorruptionConfig for_volumes() {
    CorruptionConfig c;
    c.spatial_patch = 16;
    return c;
  }

  void validate() const;
};

enum class Branch { frequency, spatial };
enum class MaskDomain { frequency, spatial };

std::string to_string(Branch b);
std::string to_string(FillMode f);
Branch branch_from_string(const std::string& s);
FillMode fill_from_string(const std::string& s);

/// Boolean field over the patch grid (true = masked), row-major.
struct PatchMask {
  Shape grid;
  Index patch = 0;
  MaskDomain domain = MaskDomain::spatial;
  std::vector<std::uint8_t> masked;

  Index patch_count() const { return static_cast<Index>(masked.size()); }
  Index masked_count() const;
  /// Pixel-level expansion over `spatial` (1 where the covering patch is masked).
  std::vector<std::uint8_t> pixel_mask(const Shape& spatial) const;
};

/// Generator position at the start of a corruption and the number of draws
/// it consumed. `CounterRng::from_state(key, counter)` replays it.
struct SeedTrace {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;
  std::uint64_t draws = 0;
};

struct CorruptionOutput {
  Tensor corrupted;
  Branch branch = Branch::frequency;
  PatchMask mask;
  SeedTrace seed_trace;
  double imag_residue = 0.0;  ///< frequency branch: discarded imaginary part, pre-clip
  double mean_drift = 0.0;    ///< frequency branch: |mean(pre-clip) - mean(input)|
};

/// Cut-off distance d_c = dc_ratio * min(spatial).
double cutoff_distance(const Shape& spatial, const CorruptionConfig& config);

/// Masking probability 1 - exp(-d^2 / d_c^2).
double mask_probability(double distance, double cutoff);

/// Distance of every frequency patch from the patch holding the DC bin,
/// measured in bins (patch * grid offset).
std::vector<double> freq_patch_distances(const Shape& spatial, Index patch);

/// Point-reflected partner of every frequency patch about the DC patch.
std::vector<Index> freq_patch_partners(const Shape& spatial, Index patch);

/// Patch grid of `spatial`; every dim must be divisible by `patch`.
Shape patch_grid(const Shape& spatial, Index patch);

/// Independent Bernoulli draw per conjugate patch pair, row-major order.
PatchMask sample_freq_mask(const Shape& spatial, const CorruptionConfig& config, CounterRng& rng);

/// sigma = sigma_ratio * max |f| over one channel of a spectrum.
template <typename Scalar>
double perturbation_sigma(const BasicSpectrum<Scalar>& spectrum, Index channel, const CorruptionConfig& config);

/// Adds Hermitian, distance-attenuated Gaussian noise; the DC bin is untouched.
/// One unit-noise field is drawn and scaled by each channel's sigma.
template <typename Scalar>
BasicSpectrum<Scalar> low_freq_perturbation(const BasicSpectrum<Scalar>& spectrum, const CorruptionConfig& config,
                                            CounterRng& rng);

/// Mask (zero) sampled high-frequency patches, perturb, invert, clip.
CorruptionOutput freq_dual_masking(const Tensor& image, const CorruptionConfig& config, CounterRng& rng);

/// Replace a uniformly chosen mask_ratio fraction of spatial patches.
CorruptionOutput histeq_spatial_masking(const Tensor& image, const CorruptionConfig& config, CounterRng& rng);

enum class BranchPolicy { automatic, frequency, spatial };

/// One Bernoulli(branch_prob) draw, then the chosen branch. A forced policy
/// still consumes the branch draw so streams line up across policies.
CorruptionOutput corrupt(const Tensor& image, const CorruptionConfig& config, CounterRng& rng,
                         BranchPolicy policy = BranchPolicy::automatic);

}  // namespace frepa
