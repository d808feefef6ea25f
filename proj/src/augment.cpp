#include "frepa/augment.hpp"

#include <algorithm>
#include <cmath>

namespace frepa {

namespace {

// Dense replicate-border Gaussian smoothing operator (n x n).
Eigen::MatrixXd gaussian_operator(Index n, double sigma) {
  const Index radius = static_cast<Index>(std::ceil(3.0 * sigma));
  Eigen::ArrayXd taps(2 * radius + 1);
  for (Index k = -radius; k <= radius; ++k) taps[k + radius] = std::exp(-0.5 * double(k * k) / (sigma * sigma));
  taps /= taps.sum();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index k = -radius; k <= radius; ++k) g(i, std::clamp<Index>(i + k, 0, n - 1)) += taps[k + radius];
  return g;
}

}  // namespace

Tensor hessian_response(const Tensor& image, double sigma) {
  if (image.rank() != 3) throw Error("hessian_response expects [C, H, W], got " + shape_string(image.shape()));
  const Index h = image.shape()[1], w = image.shape()[2];
  const Eigen::MatrixXd lum = channel_mean(image).plane(0).cast<double>();
  const Eigen::MatrixXd s = gaussian_operator(h, sigma) * lum * gaussian_operator(w, sigma).transpose();

  auto at = [&](Index y, Index x) { return s(std::clamp<Index>(y, 0, h - 1), std::clamp<Index>(x, 0, w - 1)); };
  Eigen::MatrixXd r(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const double c = s(y, x);
      const double hxx = at(y, x + 1) - 2.0 * c + at(y, x - 1);
      const double hyy = at(y + 1, x) - 2.0 * c + at(y - 1, x);
      const double hxy = 0.25 * (at(y + 1, x + 1) - at(y + 1, x - 1) - at(y - 1, x + 1) + at(y - 1, x - 1));
      const double half_diff = 0.5 * (hxx - hyy);
      r(y, x) = std::abs(0.5 * (hxx + hyy)) + std::sqrt(half_diff * half_diff + hxy * hxy);
    }

  Tensor out({1, h, w});
  const double lo = r.minCoeff(), hi = r.maxCoeff();
  const double scale = std::max(1.0, lum.cwiseAbs().maxCoeff());
  // Rounding noise of a flat image is not a ridge.
  if (hi - lo > 1e-10 * scale) out.plane(0) = ((r.array() - lo) / (hi - lo)).matrix().cast<float>();
  return out;
}

Tensor augment_input(const Tensor& corrupted, const Tensor& response) {
  if (response.channels() != 1) throw Error("augment_input expects a single-channel response");
  return concat_channels(corrupted, response);
}

Tensor dihedral_transform(const Tensor& image, int k) {
  if (image.rank() != 3 || image.shape()[1] != image.shape()[2])
    throw Error("dihedral transforms need a square [C, H, W] image, got " + shape_string(image.shape()));
  if (k < 0 || k >= 8) throw Error("dihedral index out of range");
  Tensor out(image.shape());
  for (Index c = 0; c < image.channels(); ++c) {
    Tensor::Plane p = image.plane(c);
    if (k >= 4) p = p.rowwise().reverse().eval();
    for (int r = 0; r < k % 4; ++r) p = p.transpose().colwise().reverse().eval();
    out.plane(c) = p;
  }
  return out;
}

Tensor random_flip_rotate(const Tensor& image, CounterRng& rng) {
  return dihedral_transform(image, static_cast<int>(rng.below(8)));
}

}  // namespace frepa
