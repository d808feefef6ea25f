#include "doctest.h"
#include "oracles.hpp"

#include "frepa/spectral.hpp"

using namespace frepa;

namespace {

double max_abs(const Spectrum::Array& a) { return a.abs().maxCoeff(); }

}  // namespace

TEST_CASE("centered FFT agrees with the direct DFT on every size 4..16") {
  for (Index h = 4; h <= 16; ++h)
    for (Index w = 4; w <= 16; ++w) {
      const TensorD x = oracle::random_image<double>({1, h, w}, static_cast<std::uint64_t>(h * 31 + w));
      const auto f = fft_centered(x);
      const auto ref = oracle::direct_dft_centered(std::vector<double>(x.data().begin(), x.data().end()), h, w);
      double worst = 0.0;
      for (Index i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(f.data()[i] - ref[static_cast<std::size_t>(i)]));
      INFO("size " << h << "x" << w);
      REQUIRE(worst < 1e-5);
    }
}

TEST_CASE("round trip and Parseval") {
  for (const Shape& shape : {Shape{1, 64, 64}, Shape{3, 33, 20}, Shape{2, 8, 10, 6}}) {
    const Tensor x = oracle::random_image(shape, 7);
    const Spectrum f = fft_centered(x);
    const auto inv = ifft_centered(f);
    CHECK(max_abs_diff(inv.image, x) < 1e-6);
    CHECK(inv.imag_residue < 1e-6);

    const double n = static_cast<double>(x.spatial_size());
    const double energy = x.data().cast<double>().square().sum();
    const double spectral = f.data().abs2().cast<double>().sum() / n;
    CHECK(std::abs(energy - spectral) / energy < 1e-6);
  }
}

TEST_CASE("constant image concentrates at DC") {
  const Shape spatial{12, 9};
  const Tensor x = Tensor::constant({1, 12, 9}, 0.75f);
  const Spectrum f = fft_centered(x);
  const Index dc = spectrum_center_index(spatial);
  CHECK(dc == 6 * 9 + 4);
  CHECK(f.data()[dc].real() == doctest::Approx(0.75 * 12 * 9));
  Spectrum::Array rest = f.data();
  rest[dc] = 0;
  CHECK(max_abs(rest) < 1e-4);
}

TEST_CASE("impulse has a flat magnitude spectrum") {
  Tensor x({1, 16, 16});
  x(0, 3, 11) = 2.0f;
  const Spectrum f = fft_centered(x);
  CHECK((f.data().abs() - 2.0f).abs().maxCoeff() < 1e-5f);
}

TEST_CASE("real input gives a Hermitian spectrum") {
  for (const Shape& spatial : {Shape{16, 16}, Shape{15, 10}, Shape{6, 7, 8}}) {
    Shape shape{1};
    shape.insert(shape.end(), spatial.begin(), spatial.end());
    const Tensor x = oracle::random_image(shape, 3);
    const Spectrum f = fft_centered(x);
    const auto partner = conjugate_map(spatial);
    double worst = 0.0;
    for (Index i = 0; i < f.spatial_size(); ++i) {
      const Index j = partner[static_cast<std::size_t>(i)];
      worst = std::max(worst, static_cast<double>(std::abs(f.data()[i] - std::conj(f.data()[j]))));
      CHECK(conjugate_index(spatial, j) == i);
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("non-Hermitian spectra are rejected by the inverse") {
  Spectrum f({1, 8, 8});
  f.data()[5] = {1.0f, 0.0f};
  CHECK_THROWS_AS(ifft_centered(f), Error);
  const auto loose = ifft_centered(f, 1.0);
  CHECK(loose.imag_residue > 1e-3);
}

TEST_CASE("degenerate inputs") {
  CHECK_THROWS_AS(fft_centered(Tensor({1, 3, 8})), Error);
  CHECK_THROWS_AS(fft_centered(Tensor({1, 64})), Error);
  Tensor nan({1, 8, 8});
  nan.data()[0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(fft_centered(nan), Error);
}

TEST_CASE("radial distance map") {
  const TensorD d = radial_distance_map({512, 512});
  CHECK(d(0, 256, 256) == 0.0);
  CHECK(d(0, 256, 261) == doctest::Approx(5.0));
  CHECK(d(0, 251, 256) == doctest::Approx(5.0));
  CHECK(d(0, 0, 0) == doctest::Approx(362.0387).epsilon(1e-6));
  const TensorD odd = radial_distance_map({5, 5});
  CHECK(odd(0, 2, 2) == 0.0);
  CHECK(odd(0, 0, 4) == doctest::Approx(std::sqrt(8.0)));
  const TensorD vol = radial_distance_map({4, 4, 4});
  CHECK(vol.shape() == Shape{1, 4, 4, 4});
  CHECK(vol.data()[spectrum_center_index({4, 4, 4})] == 0.0);
}

TEST_CASE("exponential filters") {
  const Shape spatial{64, 64};
  const FilterSpec low = make_exponential_filter(spatial, 10.0, FilterKind::low_pass);
  const FilterSpec high = make_exponential_filter(spatial, 10.0, FilterKind::high_pass);
  const TensorD d = radial_distance_map(spatial);
  CHECK(low.transfer[spectrum_center_index(spatial)] == 1.0);
  CHECK(low.transfer[32 * 64 + 42] == doctest::Approx(std::exp(-1.0)));
  CHECK((low.transfer + high.transfer - 1.0).abs().maxCoeff() < 1e-15);
  for (Index i = 0; i < d.size(); ++i)
    for (Index j : {Index{0}, Index{100}, Index{2000}})
      if (d.data()[i] <= d.data()[j]) REQUIRE(low.transfer[i] >= low.transfer[j]);
  CHECK_THROWS_AS(make_exponential_filter(spatial, 0.0, FilterKind::low_pass), Error);
  CHECK_THROWS_AS(make_exponential_filter(spatial, -1.0, FilterKind::high_pass), Error);
}

TEST_CASE("HFL bank cutoffs") {
  const auto c = hfl_cutoffs({512, 512});
  REQUIRE(c.size() == 5);
  const double expected[] = {51.2, 102.4, 153.6, 204.8, 256.0};
  for (std::size_t i = 0; i < 5; ++i) CHECK(c[i] == doctest::Approx(expected[i]));
  CHECK(hfl_cutoffs({64, 32})[0] == doctest::Approx(3.2));
  const auto bank = make_hfl_bank({32, 32});
  REQUIRE(bank.size() == 5);
  for (const auto& f : bank) {
    CHECK(f.kind == FilterKind::high_pass);
    CHECK(f.transfer[spectrum_center_index({32, 32})] == 0.0);
  }
}

TEST_CASE("filter application properties") {
  const Shape spatial{32, 24};
  const TensorD x = oracle::random_image<double>({2, 32, 24}, 21);
  const TensorD y = oracle::random_image<double>({2, 32, 24}, 22);

  SUBCASE("infinite cutoff low pass is the identity") {
    const auto f = make_exponential_filter(spatial, std::numeric_limits<double>::infinity(), FilterKind::low_pass);
    CHECK(max_abs_diff(apply_filter(x, f), x) < 1e-12);
    const auto g = make_exponential_filter(spatial, std::numeric_limits<double>::infinity(), FilterKind::high_pass);
    CHECK(apply_filter(x, g).data().abs().maxCoeff() < 1e-12);
  }
  SUBCASE("high pass of a constant vanishes") {
    const auto f = make_exponential_filter(spatial, 4.0, FilterKind::high_pass);
    CHECK(apply_filter(TensorD::constant({1, 32, 24}, 3.5), f).data().abs().maxCoeff() < 1e-12);
  }
  SUBCASE("low plus high reconstructs the input") {
    const auto l = make_exponential_filter(spatial, 5.0, FilterKind::low_pass);
    const auto h = make_exponential_filter(spatial, 5.0, FilterKind::high_pass);
    TensorD sum = apply_filter(x, l);
    sum.data() += apply_filter(x, h).data();
    CHECK(max_abs_diff(sum, x) < 1e-12);
  }
  SUBCASE("linearity") {
    const auto h = make_exponential_filter(spatial, 3.0, FilterKind::high_pass);
    TensorD combo = x;
    combo.data() = 2.0 * x.data() - 0.5 * y.data();
    TensorD expect = apply_filter(x, h);
    expect.data() = 2.0 * expect.data() - 0.5 * apply_filter(y, h).data();
    CHECK(max_abs_diff(apply_filter(combo, h), expect) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    const auto h = make_exponential_filter({16, 16}, 3.0, FilterKind::high_pass);
    CHECK_THROWS_AS(apply_filter(x, h), Error);
    CHECK_THROWS_AS(make_custom_filter(spatial, Eigen::ArrayXd::Ones(3), FilterKind::low_pass), Error);
  }
}

TEST_CASE("volumes transform along all three axes") {
  const TensorD x = oracle::random_image<double>({1, 4, 5, 6}, 8);
  const auto f = fft_centered(x);
  // direct 3D DFT at a few bins
  const Shape spatial{4, 5, 6};
  const Shape strides = row_major_strides(spatial);
  for (Index bin : {Index{0}, Index{37}, Index{119}, spectrum_center_index(spatial)}) {
    const Index u = bin / strides[0], v = (bin / strides[1]) % 5, w = bin % 6;
    std::complex<double> acc = 0.0;
    for (Index a = 0; a < 4; ++a)
      for (Index b = 0; b < 5; ++b)
        for (Index c = 0; c < 6; ++c) {
          const double phase = -2.0 * std::numbers::pi *
                                ((u - 2) * a / 4.0 + (v - 2) * b / 5.0 + (w - 3) * c / 6.0);
          acc += x.data()[(a * 5 + b) * 6 + c] * std::polar(1.0, phase);
        }
    CHECK(std::abs(f.data()[bin] - acc) < 1e-10);
  }
}
