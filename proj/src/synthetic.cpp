#include "frepa/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace frepa {

Tensor synthetic_texture(Index size, Index channels, CounterRng& rng) {
  if (size < 4 || channels < 1) throw Error("synthetic_texture: size >= 4 and channels >= 1 required");
  using Plane = Eigen::ArrayXXd;
  const double two_pi = 2.0 * std::numbers::pi;
  const Eigen::ArrayXd coord = Eigen::ArrayXd::LinSpaced(size, 0.0, static_cast<double>(size - 1));
  const Plane ys = coord.replicate(1, size);
  const Plane xs = coord.transpose().replicate(size, 1);

  Plane field = Plane::Zero(size, size);
  const int gratings = 2 + static_cast<int>(rng.below(3));
  for (int g = 0; g < gratings; ++g) {
    const double freq = 0.02 + 0.33 * rng.uniform();  // cycles per pixel
    const double theta = std::numbers::pi * rng.uniform();
    const double phase = two_pi * rng.uniform();
    const double amp = 0.3 + 0.7 * rng.uniform();
    field += amp * (two_pi * freq * (std::cos(theta) * xs + std::sin(theta) * ys) + phase).sin();
  }
  const int disks = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < disks; ++k) {
    const double cy = size * rng.uniform(), cx = size * rng.uniform();
    const double r = size * (0.05 + 0.2 * rng.uniform());
    const double level = 4.0 * rng.uniform() - 2.0;
    field = (((ys - cy).square() + (xs - cx).square()) <= r * r).select(field + level, field);
  }
  const int lines = 1 + static_cast<int>(rng.below(3));
  for (int k = 0; k < lines; ++k) {
    const double theta = std::numbers::pi * rng.uniform();
    const double offset = size * rng.uniform();
    const double width = 0.5 + 1.5 * rng.uniform();
    const double level = 4.0 * rng.uniform() - 2.0;
    const Plane dist = (std::cos(theta) * xs + std::sin(theta) * ys - offset).abs();
    field = (dist <= width).select(field + level, field);
  }

  const double lo = field.minCoeff(), hi = field.maxCoeff();
  const Plane unit = hi > lo ? Plane((field - lo) / (hi - lo)) : Plane(Plane::Zero(size, size));

  Tensor out({channels, size, size});
  for (Index c = 0; c < channels; ++c) {
    const double gain = channels == 1 ? 1.0 : 0.8 + 0.2 * rng.uniform();
    out.plane(c) = (unit * gain).matrix().cast<float>();
  }
  return out;
}

std::vector<Tensor> synthetic_dataset(Index count, Index size, std::uint64_t seed, Index channels) {
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    CounterRng rng(seed, {static_cast<std::uint64_t>(Stream::synthetic), static_cast<std::uint64_t>(i)});
    out.push_back(synthetic_texture(size, channels, rng));
  }
  return out;
}

}  // namespace frepa
