#pragma once

#include "frepa/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace frepa {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;  ///< max |analytic - numeric| / max(|analytic|, |numeric|)
  Index checked = 0;           ///< coordinates above the magnitude threshold
};

enum class Precision { f32, f64 };

struct GradcheckOptions {
  Precision precision = Precision::f64;
  Index size = 16;
  Index channels = 1;
  double step = 1e-6;
  double min_magnitude = 1e-6;   ///< coordinates with smaller |gradient| are skipped
  Index coords_per_tensor = 16;  ///< sampled coordinates per model parameter tensor

  /// Step 1e-3 and threshold 1e-5, evaluated in single precision.
  static GradcheckOptions single() {
    GradcheckOptions o;
    o.precision = Precision::f32;
    o.step = 1e-3;
    o.min_magnitude = 1e-5;
    return o;
  }
};

/// Central finite differences against the analytic gradients of every loss
/// term and of the end-to-end model loss (per parameter tensor) on random
/// inputs drawn from `seed`. Relative error is elementwise.
std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed, const GradcheckOptions& options = {});

}  // namespace frepa
