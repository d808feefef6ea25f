#include "frepa/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace frepa {

void CorruptionConfig::validate() const {
  if (freq_patch < 1 || spatial_patch < 1) throw Error("patch sizes must be positive");
  if (!(dc_ratio > 0.0)) throw Error("dc_ratio must be positive");
  if (!(sigma_ratio >= 0.0)) throw Error("sigma_ratio must be non-negative");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw Error("mask_ratio must lie in (0, 1)");
  if (!(branch_prob >= 0.0 && branch_prob <= 1.0)) throw Error("branch_prob must lie in [0, 1]");
}

std::string to_string(Branch b) { return b == Branch::frequency ? "frequency" : "spatial"; }
std::string to_string(FillMode f) { return f == FillMode::histogram ? "histogram" : "zero"; }

Branch branch_from_string(const std::string& s) {
  if (s == "frequency" || s == "freq") return Branch::frequency;
  if (s == "spatial") return Branch::spatial;
  throw Error("unknown branch '" + s + "'");
}

FillMode fill_from_string(const std::string& s) {
  if (s == "histogram") return FillMode::histogram;
  if (s == "zero") return FillMode::zero;
  throw Error("unknown fill mode '" + s + "'");
}

Index PatchMask::masked_count() const { return std::count(masked.begin(), masked.end(), std::uint8_t{1}); }

std::vector<std::uint8_t> PatchMask::pixel_mask(const Shape& spatial) const {
  const Shape strides = row_major_strides(spatial);
  const Shape gstrides = row_major_strides(grid);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(shape_size(spatial)));
  for (Index i = 0; i < static_cast<Index>(out.size()); ++i) {
    Index q = 0;
    for (std::size_t a = 0; a < spatial.size(); ++a) q += ((i / strides[a]) % spatial[a] / patch) * gstrides[a];
    out[static_cast<std::size_t>(i)] = masked[static_cast<std::size_t>(q)];
  }
  return out;
}

double cutoff_distance(const Shape& spatial, const CorruptionConfig& config) {
  return config.dc_ratio * static_cast<double>(*std::min_element(spatial.begin(), spatial.end()));
}

double mask_probability(double distance, double cutoff) {
  if (std::isinf(cutoff)) return 0.0;
  return 1.0 - std::exp(-(distance * distance) / (cutoff * cutoff));
}

Shape patch_grid(const Shape& spatial, Index patch) {
  Shape grid;
  for (Index n : spatial) {
    if (n % patch != 0)
      throw Error("spatial shape " + shape_string(spatial) + " is not divisible by patch size " + std::to_string(patch));
    grid.push_back(n / patch);
  }
  return grid;
}

namespace {

// Offset of each grid coordinate from the patch holding the DC bin.
std::vector<Shape> grid_offsets(const Shape& spatial, Index patch) {
  const Shape grid = patch_grid(spatial, patch);
  const Shape gstrides = row_major_strides(grid);
  std::vector<Shape> offsets(static_cast<std::size_t>(shape_size(grid)), Shape(grid.size()));
  for (Index q = 0; q < static_cast<Index>(offsets.size()); ++q)
    for (std::size_t a = 0; a < grid.size(); ++a)
      offsets[static_cast<std::size_t>(q)][a] = (q / gstrides[a]) % grid[a] - (spatial[a] / 2) / patch;
  return offsets;
}

}  // namespace

std::vector<double> freq_patch_distances(const Shape& spatial, Index patch) {
  std::vector<double> d;
  for (const Shape& off : grid_offsets(spatial, patch)) {
    double s = 0.0;
    for (Index o : off) s += static_cast<double>(o * o);
    d.push_back(static_cast<double>(patch) * std::sqrt(s));
  }
  return d;
}

std::vector<Index> freq_patch_partners(const Shape& spatial, Index patch) {
  const Shape grid = patch_grid(spatial, patch);
  const Shape gstrides = row_major_strides(grid);
  std::vector<Index> partners;
  for (const Shape& off : grid_offsets(spatial, patch)) {
    Index q = 0;
    for (std::size_t a = 0; a < grid.size(); ++a) {
      const Index center = (spatial[a] / 2) / patch;
      q += (((center - off[a]) % grid[a] + grid[a]) % grid[a]) * gstrides[a];
    }
    partners.push_back(q);
  }
  return partners;
}

PatchMask sample_freq_mask(const Shape& spatial, const CorruptionConfig& config, CounterRng& rng) {
  PatchMask mask;
  mask.grid = patch_grid(spatial, config.freq_patch);
  mask.patch = config.freq_patch;
  mask.domain = MaskDomain::frequency;
  mask.masked.assign(static_cast<std::size_t>(shape_size(mask.grid)), 0);

  const double dc = cutoff_distance(spatial, config);
  const auto distances = freq_patch_distances(spatial, config.freq_patch);
  const auto partners = freq_patch_partners(spatial, config.freq_patch);
  for (std::size_t q = 0; q < mask.masked.size(); ++q) {
    const auto partner = static_cast<std::size_t>(partners[q]);
    if (partner < q) continue;  // decided together with its partner
    const bool m = rng.uniform() < mask_probability(distances[q], dc);
    mask.masked[q] = mask.masked[partner] = m;
  }
  return mask;
}

template <typename Scalar>
double perturbation_sigma(const BasicSpectrum<Scalar>& spectrum, Index channel, const CorruptionConfig& config) {
  return config.sigma_ratio * static_cast<double>(spectrum.channel(channel).abs().maxCoeff());
}

template <typename Scalar>
BasicSpectrum<Scalar> low_freq_perturbation(const BasicSpectrum<Scalar>& spectrum, const CorruptionConfig& config,
                                            CounterRng& rng) {
  using Complex = std::complex<Scalar>;
  const Shape spatial = spectrum.spatial_shape();
  const double dc = cutoff_distance(spatial, config);
  const Eigen::ArrayXd attenuation = std::isinf(dc)
                                         ? Eigen::ArrayXd::Ones(spectrum.spatial_size()).eval()
                                         : (-radial_distance_map(spatial).data().square() / (dc * dc)).exp().eval();
  const auto partners = conjugate_map(spatial);
  const Index center = spectrum_center_index(spatial);

  // Unit-sigma Hermitian field; draws in row-major order of the canonical bin.
  std::vector<std::complex<double>> noise(static_cast<std::size_t>(spectrum.spatial_size()));
  for (Index i = 0; i < spectrum.spatial_size(); ++i) {
    const Index j = partners[static_cast<std::size_t>(i)];
    if (i == center || j < i) continue;
    const double a = attenuation[i];
    if (j == i) {
      noise[static_cast<std::size_t>(i)] = {a * rng.normal(), 0.0};
    } else {
      const double re = a * rng.normal() / std::numbers::sqrt2;
      const double im = a * rng.normal() / std::numbers::sqrt2;
      noise[static_cast<std::size_t>(i)] = {re, im};
      noise[static_cast<std::size_t>(j)] = {re, -im};
    }
  }

  BasicSpectrum<Scalar> out = spectrum;
  for (Index c = 0; c < spectrum.channels(); ++c) {
    const double sigma = perturbation_sigma(spectrum, c, config);
    auto ch = out.channel(c);
    for (Index i = 0; i < ch.size(); ++i)
      ch[i] += Complex(static_cast<Scalar>(sigma * noise[static_cast<std::size_t>(i)].real()),
                       static_cast<Scalar>(sigma * noise[static_cast<std::size_t>(i)].imag()));
  }
  return out;
}

CorruptionOutput freq_dual_masking(const Tensor& image, const CorruptionConfig& config, CounterRng& rng) {
  const Shape spatial = image.spatial_shape();
  config.validate();
  CorruptionOutput out;
  out.branch = Branch::frequency;
  out.seed_trace = {rng.key(), rng.counter(), 0};

  BasicSpectrum<double> spectrum = fft_centered(image.cast<double>());
  out.mask = sample_freq_mask(spatial, config, rng);

  const std::vector<std::uint8_t> bins = out.mask.pixel_mask(spatial);
  const auto partners = conjugate_map(spatial);
  for (Index c = 0; c < spectrum.channels(); ++c) {
    auto ch = spectrum.channel(c);
    for (Index i = 0; i < ch.size(); ++i)
      if (bins[static_cast<std::size_t>(i)] || bins[static_cast<std::size_t>(partners[static_cast<std::size_t>(i)])])
        ch[i] = 0.0;
  }
  spectrum = low_freq_perturbation(spectrum, config, rng);

  const InverseTransform<double> inv = ifft_centered(spectrum);
  out.imag_residue = inv.imag_residue;
  out.mean_drift = std::abs(inv.image.data().mean() - mean_value(image));
  out.corrupted = Tensor(image.shape(), inv.image.data().max(0.0).min(1.0).cast<float>());
  out.seed_trace.draws = rng.counter() - out.seed_trace.counter;
  return out;
}

CorruptionOutput histeq_spatial_masking(const Tensor& image, const CorruptionConfig& config, CounterRng& rng) {
  const Shape spatial = image.spatial_shape();
  config.validate();
  CorruptionOutput out;
  out.branch = Branch::spatial;
  out.seed_trace = {rng.key(), rng.counter(), 0};

  PatchMask& mask = out.mask;
  mask.grid = patch_grid(spatial, config.spatial_patch);
  mask.patch = config.spatial_patch;
  mask.domain = MaskDomain::spatial;
  const Index n = shape_size(mask.grid);
  mask.masked.assign(static_cast<std::size_t>(n), 0);

  // Partial Fisher-Yates: the first k entries are a uniform k-subset.
  const Index k = std::clamp<Index>(std::llround(config.mask_ratio * static_cast<double>(n)), 0, n);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  for (Index i = 0; i < k; ++i) mask.masked[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;

  // Pixels of each patch in row-major order.
  const Shape strides = row_major_strides(spatial);
  const Shape gstrides = row_major_strides(mask.grid);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(n));
  for (Index i = 0; i < image.spatial_size(); ++i) {
    Index q = 0;
    for (std::size_t a = 0; a < spatial.size(); ++a) q += ((i / strides[a]) % spatial[a] / mask.patch) * gstrides[a];
    if (mask.masked[static_cast<std::size_t>(q)]) members[static_cast<std::size_t>(q)].push_back(i);
  }

  out.corrupted = image;
  const Index channels = image.channels();
  std::vector<double> mean(static_cast<std::size_t>(channels)), sd(static_cast<std::size_t>(channels));
  for (Index q = 0; q < n; ++q) {
    const auto& pix = members[static_cast<std::size_t>(q)];
    if (pix.empty()) continue;
    for (Index c = 0; c < channels; ++c) {
      const auto ch = image.channel(c);
      double s = 0.0, s2 = 0.0;
      for (Index i : pix) s += ch[i];
      const double m = s / static_cast<double>(pix.size());
      for (Index i : pix) s2 += (ch[i] - m) * (ch[i] - m);
      mean[static_cast<std::size_t>(c)] = m;
      sd[static_cast<std::size_t>(c)] = std::sqrt(s2 / static_cast<double>(pix.size()));
    }
    for (Index i : pix) {
      const double z = config.fill == FillMode::histogram ? rng.normal() : 0.0;
      for (Index c = 0; c < channels; ++c) {
        const double v = config.fill == FillMode::histogram
                             ? mean[static_cast<std::size_t>(c)] + sd[static_cast<std::size_t>(c)] * z
                             : 0.0;
        out.corrupted.channel(c)[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  out.seed_trace.draws = rng.counter() - out.seed_trace.counter;
  return out;
}

CorruptionOutput corrupt(const Tensor& image, const CorruptionConfig& config, CounterRng& rng, BranchPolicy policy) {
  const SeedTrace start{rng.key(), rng.counter(), 0};
  const bool freq_draw = rng.uniform() < config.branch_prob;
  const bool freq = policy == BranchPolicy::automatic ? freq_draw : policy == BranchPolicy::frequency;
  CorruptionOutput out = freq ? freq_dual_masking(image, config, rng) : histeq_spatial_masking(image, config, rng);
  out.seed_trace = start;
  out.seed_trace.draws = rng.counter() - start.counter;
  return out;
}

template double perturbation_sigma(const BasicSpectrum<float>&, Index, const CorruptionConfig&);
template double perturbation_sigma(const BasicSpectrum<double>&, Index, const CorruptionConfig&);
template BasicSpectrum<float> low_freq_perturbation(const BasicSpectrum<float>&, const CorruptionConfig&, CounterRng&);
template BasicSpectrum<double> low_freq_perturbation(const BasicSpectrum<double>&, const CorruptionConfig&, CounterRng&);

}  // namespace frepa
