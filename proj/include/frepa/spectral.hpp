#pragma once

#include "frepa/tensor.hpp"

#include <complex>
#include <vector>

namespace frepa {

/// Centered DFT of a tensor, one spectrum per channel. The zero-frequency
/// bin of every channel sits at (floor(D/2),) floor(H/2), floor(W/2).
template <typename Scalar_>
class BasicSpectrum {
 public:
  using Scalar = Scalar_;
  using Complex = std::complex<Scalar>;
  using Array = Eigen::Array<Complex, Eigen::Dynamic, 1>;
  using ChannelMap = Eigen::Map<Array>;
  using ConstChannelMap = Eigen::Map<const Array>;

  BasicSpectrum() = default;
  explicit BasicSpectrum(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_size(shape_))) {}
  BasicSpectrum(Shape shape, Array data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) throw Error("spectrum data does not match shape " + shape_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  Index channels() const { return shape_.front(); }
  Shape spatial_shape() const { return Shape(shape_.begin() + 1, shape_.end()); }
  Index spatial_size() const { return data_.size() / channels(); }

  Array& data() { return data_; }
  const Array& data() const { return data_; }
  ChannelMap channel(Index c) { return ChannelMap(data_.data() + c * spatial_size(), spatial_size()); }
  ConstChannelMap channel(Index c) const { return ConstChannelMap(data_.data() + c * spatial_size(), spatial_size()); }

 private:
  Shape shape_;
  Array data_;
};

using Spectrum = BasicSpectrum<float>;

/// Linear index of the centered zero-frequency bin.
Index spectrum_center_index(const Shape& spatial);

/// Linear index of the point reflection of `index` about the spectrum center
/// (the bin holding the complex conjugate for a real signal).
Index conjugate_index(const Shape& spatial, Index index);

/// Precomputed conjugate partner of every bin.
std::vector<Index> conjugate_map(const Shape& spatial);

/// Centered forward transform (DC moved to the middle). Computed in double
/// precision and rounded to `Scalar` on output.
template <typename Scalar>
BasicSpectrum<Scalar> fft_centered(const BasicTensor<Scalar>& image);

template <typename Scalar>
struct InverseTransform {
  BasicTensor<Scalar> image;
  double imag_residue = 0.0;  ///< max |Im| discarded when taking the real part
};

/// Inverse of fft_centered. Fails when the discarded imaginary part exceeds
/// `max_residue` (a non-Hermitian spectrum).
template <typename Scalar>
InverseTransform<Scalar> ifft_centered(const BasicSpectrum<Scalar>& spectrum, double max_residue = 1e-3);

/// Euclidean distance (in bins) from each coordinate to the spectrum center.
/// Returned with a leading unit axis: [1, spatial...].
TensorD radial_distance_map(const Shape& spatial);

enum class FilterKind { low_pass, high_pass };

/// Radially symmetric transfer over a centered spectrum.
struct FilterSpec {
  FilterKind kind = FilterKind::low_pass;
  double cutoff = 0.0;
  Shape spatial;
  Eigen::ArrayXd transfer;
};

/// low_pass: exp(-d^2 / cutoff^2); high_pass: 1 - low_pass. An infinite
/// cutoff yields the all-pass (low) / all-stop (high) limit.
FilterSpec make_exponential_filter(const Shape& spatial, double cutoff, FilterKind kind);

/// Wraps an arbitrary transfer field (used for band-pass differences).
FilterSpec make_custom_filter(const Shape& spatial, Eigen::ArrayXd transfer, FilterKind kind, double cutoff = 0.0);

/// ifft(fft(image) * transfer), per channel.
template <typename Scalar>
BasicTensor<Scalar> apply_filter(const BasicTensor<Scalar>& image, const FilterSpec& filter);

/// Cutoffs {0.1, ..., 0.5} * min(spatial) used by the hierarchical loss.
std::vector<double> hfl_cutoffs(const Shape& spatial);
std::vector<FilterSpec> make_hfl_bank(const Shape& spatial);

}  // namespace frepa
