#include "frepa/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <limits>

namespace frepa {

namespace {

using cplx = std::complex<double>;

void check_spatial(const Shape& spatial) {
  if (spatial.size() != 2 && spatial.size() != 3)
    throw Error("spectral operations need 2 or 3 spatial dims, got " + shape_string(spatial));
}

// Transforms every line of `buf` along each axis in turn. Forward output is
// written fftshift-ed; inverse input is read ifftshift-ed.
void transform_axes(std::vector<cplx>& buf, const Shape& spatial, bool forward) {
  thread_local Eigen::FFT<double> fft;
  const Shape strides = row_major_strides(spatial);
  std::vector<cplx> in, out;
  for (std::size_t axis = 0; axis < spatial.size(); ++axis) {
    const Index n = spatial[axis], s = strides[axis];
    const Index center = n / 2;
    const Index outer = static_cast<Index>(buf.size()) / (n * s);
    in.resize(static_cast<std::size_t>(n));
    out.resize(static_cast<std::size_t>(n));
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < s; ++i) {
        cplx* line = buf.data() + o * n * s + i;
        if (forward) {
          for (Index k = 0; k < n; ++k) in[k] = line[k * s];
          fft.fwd(out.data(), in.data(), n);
          for (Index k = 0; k < n; ++k) line[((k + center) % n) * s] = out[k];
        } else {
          for (Index k = 0; k < n; ++k) in[k] = line[((k + center) % n) * s];
          fft.inv(out.data(), in.data(), n);
          for (Index k = 0; k < n; ++k) line[k * s] = out[k];
        }
      }
  }
}

}  // namespace

Index spectrum_center_index(const Shape& spatial) {
  const Shape strides = row_major_strides(spatial);
  Index idx = 0;
  for (std::size_t a = 0; a < spatial.size(); ++a) idx += (spatial[a] / 2) * strides[a];
  return idx;
}

Index conjugate_index(const Shape& spatial, Index index) {
  const Shape strides = row_major_strides(spatial);
  Index out = 0;
  for (std::size_t a = 0; a < spatial.size(); ++a) {
    const Index n = spatial[a];
    const Index k = (index / strides[a]) % n;
    out += ((2 * (n / 2) - k + n) % n) * strides[a];
  }
  return out;
}

std::vector<Index> conjugate_map(const Shape& spatial) {
  std::vector<Index> map(static_cast<std::size_t>(shape_size(spatial)));
  for (Index i = 0; i < static_cast<Index>(map.size()); ++i) map[static_cast<std::size_t>(i)] = conjugate_index(spatial, i);
  return map;
}

template <typename Scalar>
BasicSpectrum<Scalar> fft_centered(const BasicTensor<Scalar>& image) {
  const Shape spatial = image.spatial_shape();
  check_spatial(spatial);
  for (Index d : spatial)
    if (d < 4) throw Error("fft_centered requires every spatial dim >= 4, got " + shape_string(image.shape()));
  if (!image.all_finite()) throw Error("fft_centered: non-finite input");

  BasicSpectrum<Scalar> out(image.shape());
  std::vector<cplx> buf(static_cast<std::size_t>(image.spatial_size()));
  for (Index c = 0; c < image.channels(); ++c) {
    const auto src = image.channel(c);
    for (Index i = 0; i < src.size(); ++i) buf[static_cast<std::size_t>(i)] = cplx(static_cast<double>(src[i]), 0.0);
    transform_axes(buf, spatial, true);
    auto dst = out.channel(c);
    for (Index i = 0; i < dst.size(); ++i) dst[i] = std::complex<Scalar>(buf[static_cast<std::size_t>(i)]);
  }
  return out;
}

template <typename Scalar>
InverseTransform<Scalar> ifft_centered(const BasicSpectrum<Scalar>& spectrum, double max_residue) {
  const Shape spatial = spectrum.spatial_shape();
  check_spatial(spatial);
  InverseTransform<Scalar> result{BasicTensor<Scalar>(spectrum.shape()), 0.0};
  std::vector<cplx> buf(static_cast<std::size_t>(spectrum.spatial_size()));
  for (Index c = 0; c < spectrum.channels(); ++c) {
    const auto src = spectrum.channel(c);
    for (Index i = 0; i < src.size(); ++i) buf[static_cast<std::size_t>(i)] = cplx(src[i]);
    transform_axes(buf, spatial, false);
    auto dst = result.image.channel(c);
    for (Index i = 0; i < dst.size(); ++i) {
      const cplx v = buf[static_cast<std::size_t>(i)];
      dst[i] = static_cast<Scalar>(v.real());
      result.imag_residue = std::max(result.imag_residue, std::abs(v.imag()));
    }
  }
  if (!(result.imag_residue <= max_residue))
    throw Error("ifft_centered: imaginary residue " + std::to_string(result.imag_residue) +
                " exceeds tolerance (spectrum is not Hermitian)");
  return result;
}

TensorD radial_distance_map(const Shape& spatial) {
  check_spatial(spatial);
  Shape shape{1};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  TensorD out(shape);
  const Shape strides = row_major_strides(spatial);
  for (Index i = 0; i < out.size(); ++i) {
    double d2 = 0.0;
    for (std::size_t a = 0; a < spatial.size(); ++a) {
      const double off = static_cast<double>((i / strides[a]) % spatial[a] - spatial[a] / 2);
      d2 += off * off;
    }
    out.data()[i] = std::sqrt(d2);
  }
  return out;
}

FilterSpec make_exponential_filter(const Shape& spatial, double cutoff, FilterKind kind) {
  if (!(cutoff > 0.0)) throw Error("filter cutoff must be positive");
  const Eigen::ArrayXd d = radial_distance_map(spatial).data();
  Eigen::ArrayXd low = std::isinf(cutoff) ? Eigen::ArrayXd::Ones(d.size()).eval()
                                          : (-(d.square()) / (cutoff * cutoff)).exp().eval();
  return FilterSpec{kind, cutoff, spatial, kind == FilterKind::low_pass ? low : (1.0 - low).eval()};
}

FilterSpec make_custom_filter(const Shape& spatial, Eigen::ArrayXd transfer, FilterKind kind, double cutoff) {
  if (transfer.size() != shape_size(spatial)) throw Error("filter transfer does not match " + shape_string(spatial));
  return FilterSpec{kind, cutoff, spatial, std::move(transfer)};
}

template <typename Scalar>
BasicTensor<Scalar> apply_filter(const BasicTensor<Scalar>& image, const FilterSpec& filter) {
  if (image.spatial_shape() != filter.spatial)
    throw Error("filter shape " + shape_string(filter.spatial) + " does not match image " + shape_string(image.shape()));
  const Shape spatial = filter.spatial;
  check_spatial(spatial);
  BasicTensor<Scalar> out(image.shape());
  std::vector<cplx> buf(static_cast<std::size_t>(image.spatial_size()));
  for (Index c = 0; c < image.channels(); ++c) {
    const auto src = image.channel(c);
    for (Index i = 0; i < src.size(); ++i) buf[static_cast<std::size_t>(i)] = cplx(static_cast<double>(src[i]), 0.0);
    transform_axes(buf, spatial, true);
    for (Index i = 0; i < src.size(); ++i) buf[static_cast<std::size_t>(i)] *= filter.transfer[i];
    transform_axes(buf, spatial, false);
    auto dst = out.channel(c);
    for (Index i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(buf[static_cast<std::size_t>(i)].real());
  }
  return out;
}

std::vector<double> hfl_cutoffs(const Shape& spatial) {
  const double m = static_cast<double>(*std::min_element(spatial.begin(), spatial.end()));
  return {0.1 * m, 0.2 * m, 0.3 * m, 0.4 * m, 0.5 * m};
}

std::vector<FilterSpec> make_hfl_bank(const Shape& spatial) {
  std::vector<FilterSpec> bank;
  for (double c : hfl_cutoffs(spatial)) bank.push_back(make_exponential_filter(spatial, c, FilterKind::high_pass));
  return bank;
}

template BasicSpectrum<float> fft_centered(const BasicTensor<float>&);
template BasicSpectrum<double> fft_centered(const BasicTensor<double>&);
template InverseTransform<float> ifft_centered(const BasicSpectrum<float>&, double);
template InverseTransform<double> ifft_centered(const BasicSpectrum<double>&, double);
template BasicTensor<float> apply_filter(const BasicTensor<float>&, const FilterSpec&);
template BasicTensor<double> apply_filter(const BasicTensor<double>&, const FilterSpec&);

}  // namespace frepa
