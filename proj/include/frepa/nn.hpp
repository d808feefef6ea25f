#pragma once

#include "frepa/rng.hpp"
#include "frepa/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace frepa {

/// 3x3 convolution with replicate padding, optional nearest 2x upsampling in
/// front and a leaky activation behind. Weight columns are ordered
/// (in_channel, ky, kx), so the row-major storage is [out, in, 3, 3].
template <typename Scalar>
struct ConvLayer {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::string name;
  Index in_channels = 0;
  Index out_channels = 0;
  Index stride = 1;
  bool upsample = false;
  bool activation = true;
  Matrix weight;
  Vector bias;

  Index fan_in() const { return in_channels * 9; }
};

template <typename Scalar>
using ConvStack = std::vector<ConvLayer<Scalar>>;

/// Encoder (3 stride-2 convs, Cin -> 8 -> 16 -> 32) and decoder (4 convs,
/// 32 -> 16 -> 8 -> 8 -> Cout, upsampling in front of the first three, last
/// layer linear). The same structure holds gradients and optimizer moments.
template <typename Scalar>
struct ModelParams {
  ConvStack<Scalar> encoder;
  ConvStack<Scalar> decoder;
  double negative_slope = 0.01;
  std::uint64_t seed = 0;

  Index in_channels() const { return encoder.front().in_channels; }
  Index out_channels() const { return decoder.back().out_channels; }
  Index embedding_channels() const { return encoder.back().out_channels; }
};

inline constexpr double kLeakySlope = 0.01;

template <typename Scalar>
ModelParams<Scalar> init_model(Index in_channels, Index out_channels, std::uint64_t seed,
                               double negative_slope = kLeakySlope);

/// Four-layer decoder from `in_channels` to `out_channels`; the first
/// `upsamples` layers double the resolution. Weights drawn from `rng`.
template <typename Scalar>
ConvStack<Scalar> make_decoder(Index in_channels, Index out_channels, int upsamples, CounterRng& rng,
                               const std::string& prefix = "dec");

/// Same structure, all values zero.
template <typename Scalar>
ConvStack<Scalar> zeros_like(const ConvStack<Scalar>& stack);
template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& params);

template <typename To, typename From>
ConvStack<To> cast_stack(const ConvStack<From>& stack);
template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params);

/// FNV-1a over the parameter bytes, in layer order.
template <typename Scalar>
std::uint64_t checksum(const ConvStack<Scalar>& stack);
template <typename Scalar>
std::uint64_t checksum(const ModelParams<Scalar>& params);

template <typename Scalar>
struct LayerCache {
  BasicTensor<Scalar> input;  ///< after upsampling
  BasicTensor<Scalar> pre;    ///< pre-activation output
};

template <typename Scalar>
struct StackCache {
  Shape input_shape;
  std::vector<LayerCache<Scalar>> layers;
};

template <typename Scalar>
struct ForwardCache {
  StackCache<Scalar> encoder;
  StackCache<Scalar> decoder;  ///< empty for encoder-only passes
};

template <typename Scalar>
struct ForwardResult {
  BasicTensor<Scalar> embedding;
  BasicTensor<Scalar> reconstruction;  ///< empty for encoder-only passes
  ForwardCache<Scalar> cache;
};

template <typename Scalar>
struct BackwardResult {
  ModelParams<Scalar> grads;
  BasicTensor<Scalar> input_grad;
};

template <typename Scalar>
BasicTensor<Scalar> stack_forward(const ConvStack<Scalar>& stack, double negative_slope,
                                  const BasicTensor<Scalar>& input, StackCache<Scalar>* cache);

/// Accumulates parameter gradients into `grads` and returns d(input).
template <typename Scalar>
BasicTensor<Scalar> stack_backward(const ConvStack<Scalar>& stack, double negative_slope,
                                   const StackCache<Scalar>& cache, const BasicTensor<Scalar>& d_output,
                                   ConvStack<Scalar>& grads);

/// Full pass; input spatial dims must be divisible by 8.
template <typename Scalar>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& params, const BasicTensor<Scalar>& input);

/// Encoder-only pass (reconstruction and decoder cache left empty).
template <typename Scalar>
ForwardResult<Scalar> encode(const ModelParams<Scalar>& params, const BasicTensor<Scalar>& input);

/// Gradients of <d_reconstruction, recon> + <d_embedding, embedding>. Either
/// cotangent may be empty (treated as zero); a non-empty d_reconstruction
/// requires a full-pass cache.
template <typename Scalar>
BackwardResult<Scalar> backward(const ModelParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                                const BasicTensor<Scalar>& d_reconstruction, const BasicTensor<Scalar>& d_embedding);

/// Visits matching (name, value, other) parameter arrays of two
/// identically-structured models.
template <typename Scalar, typename Fn>
void for_each_parameter(ModelParams<Scalar>& a, const ModelParams<Scalar>& b, Fn&& fn) {
  auto visit = [&](ConvStack<Scalar>& sa, const ConvStack<Scalar>& sb) {
    for (std::size_t i = 0; i < sa.size(); ++i) {
      fn(sa[i].name + ".weight", sa[i].weight.array(), sb[i].weight.array());
      fn(sa[i].name + ".bias", sa[i].bias.array(), sb[i].bias.array());
    }
  };
  visit(a.encoder, b.encoder);
  visit(a.decoder, b.decoder);
}

}  // namespace frepa
