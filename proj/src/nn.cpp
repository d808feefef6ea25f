#include "frepa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace frepa {

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
ConvLayer<Scalar> make_layer(std::string name, Index in, Index out, Index stride, bool upsample, bool activation,
                             CounterRng& rng) {
  ConvLayer<Scalar> l;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  l.stride = stride;
  l.upsample = upsample;
  l.activation = activation;
  l.weight.resize(out, in * 9);
  const double bound = std::sqrt(6.0 / static_cast<double>(l.fan_in()));
  for (Index i = 0; i < l.weight.size(); ++i)
    l.weight.data()[i] = static_cast<Scalar>((2.0 * rng.uniform() - 1.0) * bound);
  l.bias = ConvLayer<Scalar>::Vector::Zero(out);
  return l;
}

template <typename Scalar>
BasicTensor<Scalar> upsample2x(const BasicTensor<Scalar>& x) {
  const Index c = x.channels(), h = x.shape()[1], w = x.shape()[2];
  BasicTensor<Scalar> out({c, 2 * h, 2 * w});
  for (Index k = 0; k < c; ++k)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index i = 0; i < 2 * w; ++i) out(k, y, i) = x(k, y / 2, i / 2);
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> upsample2x_adjoint(const BasicTensor<Scalar>& g) {
  const Index c = g.channels(), h = g.shape()[1] / 2, w = g.shape()[2] / 2;
  BasicTensor<Scalar> out({c, h, w});
  for (Index k = 0; k < c; ++k)
    for (Index y = 0; y < 2 * h; ++y)
      for (Index i = 0; i < 2 * w; ++i) out(k, y / 2, i / 2) += g(k, y, i);
  return out;
}

Index out_dim(Index n, Index stride) { return (n + stride - 1) / stride; }

// Clamped source column of every (kx, ox) tap, laid out kx-major.
inline std::vector<Index> clamped_taps(Index w, Index ow, Index stride) {
  std::vector<Index> taps(static_cast<std::size_t>(3 * ow));
  for (Index kx = 0; kx < 3; ++kx)
    for (Index ox = 0; ox < ow; ++ox)
      taps[static_cast<std::size_t>(kx * ow + ox)] = std::clamp<Index>(stride * ox + kx - 1, 0, w - 1);
  return taps;
}

// (C * 9) x (OH * OW) patch matrix; taps outside the image are clamped.
template <typename Scalar>
RowMatrix<Scalar> im2col(const BasicTensor<Scalar>& x, Index stride) {
  const Index c = x.channels(), h = x.shape()[1], w = x.shape()[2];
  const Index oh = out_dim(h, stride), ow = out_dim(w, stride);
  const auto taps = clamped_taps(w, ow, stride);
  RowMatrix<Scalar> cols(c * 9, oh * ow);
  for (Index k = 0; k < c; ++k)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        Scalar* row = cols.row((k * 3 + ky) * 3 + kx).data();
        const Index* tx = taps.data() + kx * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index y = std::clamp<Index>(stride * oy + ky - 1, 0, h - 1);
          const Scalar* src = x.data().data() + (k * h + y) * w;
          Scalar* dst = row + oy * ow;
          for (Index ox = 0; ox < ow; ++ox) dst[ox] = src[tx[ox]];
        }
      }
  return cols;
}

template <typename Scalar>
BasicTensor<Scalar> col2im(const RowMatrix<Scalar>& cols, const Shape& shape, Index stride) {
  const Index c = shape[0], h = shape[1], w = shape[2];
  const Index oh = out_dim(h, stride), ow = out_dim(w, stride);
  const auto taps = clamped_taps(w, ow, stride);
  BasicTensor<Scalar> x(shape);
  for (Index k = 0; k < c; ++k)
    for (Index ky = 0; ky < 3; ++ky)
      for (Index kx = 0; kx < 3; ++kx) {
        const Scalar* row = cols.row((k * 3 + ky) * 3 + kx).data();
        const Index* tx = taps.data() + kx * ow;
        for (Index oy = 0; oy < oh; ++oy) {
          const Index y = std::clamp<Index>(stride * oy + ky - 1, 0, h - 1);
          Scalar* dst = x.data().data() + (k * h + y) * w;
          const Scalar* src = row + oy * ow;
          for (Index ox = 0; ox < ow; ++ox) dst[tx[ox]] += src[ox];
        }
      }
  return x;
}

template <typename Scalar>
void check_input(const ConvLayer<Scalar>& l, const BasicTensor<Scalar>& x) {
  if (x.rank() != 3 || x.channels() != l.in_channels)
    throw Error("layer " + l.name + " expects " + std::to_string(l.in_channels) + " input channels, got " +
                shape_string(x.shape()));
}

template <typename Scalar>
void fnv_bytes(std::uint64_t& h, const Scalar* data, Index n) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < static_cast<std::size_t>(n) * sizeof(Scalar); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> init_model(Index in_channels, Index out_channels, std::uint64_t seed, double negative_slope) {
  if (in_channels < 1 || out_channels < 1) throw Error("model channels must be >= 1");
  CounterRng rng(seed, {static_cast<std::uint64_t>(Stream::init)});
  ModelParams<Scalar> p;
  p.seed = seed;
  p.negative_slope = negative_slope;
  p.encoder.push_back(make_layer<Scalar>("enc0", in_channels, 8, 2, false, true, rng));
  p.encoder.push_back(make_layer<Scalar>("enc1", 8, 16, 2, false, true, rng));
  p.encoder.push_back(make_layer<Scalar>("enc2", 16, 32, 2, false, true, rng));
  p.decoder = make_decoder<Scalar>(32, out_channels, 3, rng);
  return p;
}

template <typename Scalar>
ConvStack<Scalar> make_decoder(Index in_channels, Index out_channels, int upsamples, CounterRng& rng,
                               const std::string& prefix) {
  if (upsamples < 0 || upsamples > 4) throw Error("decoder supports 0..4 upsampling layers");
  const Index widths[] = {in_channels, 16, 8, 8, out_channels};
  ConvStack<Scalar> stack;
  for (int i = 0; i < 4; ++i)
    stack.push_back(make_layer<Scalar>(prefix + std::to_string(i), widths[i], widths[i + 1], 1, i < upsamples, i < 3, rng));
  return stack;
}

template <typename Scalar>
ConvStack<Scalar> zeros_like(const ConvStack<Scalar>& stack) {
  ConvStack<Scalar> out = stack;
  for (auto& l : out) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return out;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& params) {
  ModelParams<Scalar> out = params;
  out.encoder = zeros_like(params.encoder);
  out.decoder = zeros_like(params.decoder);
  return out;
}

template <typename To, typename From>
ConvStack<To> cast_stack(const ConvStack<From>& stack) {
  ConvStack<To> out;
  for (const auto& l : stack) {
    ConvLayer<To> c;
    c.name = l.name;
    c.in_channels = l.in_channels;
    c.out_channels = l.out_channels;
    c.stride = l.stride;
    c.upsample = l.upsample;
    c.activation = l.activation;
    c.weight = l.weight.template cast<To>();
    c.bias = l.bias.template cast<To>();
    out.push_back(std::move(c));
  }
  return out;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params) {
  return {cast_stack<To>(params.encoder), cast_stack<To>(params.decoder), params.negative_slope, params.seed};
}

template <typename Scalar>
std::uint64_t checksum(const ConvStack<Scalar>& stack) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : stack) {
    fnv_bytes(h, l.weight.data(), l.weight.size());
    fnv_bytes(h, l.bias.data(), l.bias.size());
  }
  return h;
}

template <typename Scalar>
std::uint64_t checksum(const ModelParams<Scalar>& params) {
  return checksum(params.encoder) ^ (checksum(params.decoder) * 0x9e3779b97f4a7c15ULL);
}

template <typename Scalar>
BasicTensor<Scalar> stack_forward(const ConvStack<Scalar>& stack, double negative_slope,
                                  const BasicTensor<Scalar>& input, StackCache<Scalar>* cache) {
  if (cache) {
    cache->input_shape = input.shape();
    cache->layers.clear();
  }
  const auto slope = static_cast<Scalar>(negative_slope);
  BasicTensor<Scalar> x = input;
  for (const auto& l : stack) {
    check_input(l, x);
    if (l.upsample) x = upsample2x(x);
    const Index oh = out_dim(x.shape()[1], l.stride), ow = out_dim(x.shape()[2], l.stride);
    BasicTensor<Scalar> pre({l.out_channels, oh, ow});
    Eigen::Map<RowMatrix<Scalar>> pre_m(pre.data().data(), l.out_channels, oh * ow);
    pre_m.noalias() = l.weight * im2col(x, l.stride);
    pre_m.colwise() += l.bias;
    BasicTensor<Scalar> y = pre;
    if (l.activation) y.data() = (pre.data() > Scalar(0)).select(pre.data(), slope * pre.data());
    if (cache) cache->layers.push_back({std::move(x), std::move(pre)});
    x = std::move(y);
  }
  return x;
}

template <typename Scalar>
BasicTensor<Scalar> stack_backward(const ConvStack<Scalar>& stack, double negative_slope,
                                   const StackCache<Scalar>& cache, const BasicTensor<Scalar>& d_output,
                                   ConvStack<Scalar>& grads) {
  if (cache.layers.size() != stack.size() || grads.size() != stack.size())
    throw Error("backward: cache does not match the layer stack");
  if (d_output.shape() != cache.layers.back().pre.shape())
    throw Error("backward: cotangent shape " + shape_string(d_output.shape()) + " does not match output " +
                shape_string(cache.layers.back().pre.shape()));
  const auto slope = static_cast<Scalar>(negative_slope);
  BasicTensor<Scalar> d = d_output;
  for (std::size_t i = stack.size(); i-- > 0;) {
    const auto& l = stack[i];
    const auto& lc = cache.layers[i];
    if (l.activation) d.data() = (lc.pre.data() > Scalar(0)).select(d.data(), slope * d.data());
    const Index pixels = lc.pre.spatial_size();
    Eigen::Map<const RowMatrix<Scalar>> d_m(d.data().data(), l.out_channels, pixels);
    const RowMatrix<Scalar> cols = im2col(lc.input, l.stride);
    grads[i].weight.noalias() += d_m * cols.transpose();
    grads[i].bias += d_m.rowwise().sum();
    const RowMatrix<Scalar> d_cols = l.weight.transpose() * d_m;
    d = col2im(d_cols, lc.input.shape(), l.stride);
    if (l.upsample) d = upsample2x_adjoint(d);
  }
  if (d.shape() != cache.input_shape) throw Error("backward: input shape mismatch");
  return d;
}

template <typename Scalar>
ForwardResult<Scalar> encode(const ModelParams<Scalar>& params, const BasicTensor<Scalar>& input) {
  if (input.rank() != 3 || input.shape()[1] % 8 != 0 || input.shape()[2] % 8 != 0)
    throw Error("model input must be [C, H, W] with H, W divisible by 8, got " + shape_string(input.shape()));
  ForwardResult<Scalar> r;
  r.embedding = stack_forward(params.encoder, params.negative_slope, input, &r.cache.encoder);
  return r;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const ModelParams<Scalar>& params, const BasicTensor<Scalar>& input) {
  ForwardResult<Scalar> r = encode(params, input);
  r.reconstruction = stack_forward(params.decoder, params.negative_slope, r.embedding, &r.cache.decoder);
  return r;
}

template <typename Scalar>
BackwardResult<Scalar> backward(const ModelParams<Scalar>& params, const ForwardCache<Scalar>& cache,
                                const BasicTensor<Scalar>& d_reconstruction, const BasicTensor<Scalar>& d_embedding) {
  if (cache.encoder.layers.size() != params.encoder.size()) throw Error("backward: cache does not match the model");
  BackwardResult<Scalar> r{zeros_like(params), {}};
  const Shape embed_shape = cache.encoder.layers.back().pre.shape();
  BasicTensor<Scalar> d_embed(embed_shape);
  if (!d_reconstruction.empty()) {
    if (cache.decoder.layers.empty()) throw Error("backward: reconstruction cotangent given for an encoder-only cache");
    d_embed = stack_backward(params.decoder, params.negative_slope, cache.decoder, d_reconstruction, r.grads.decoder);
  }
  if (!d_embedding.empty()) {
    if (d_embedding.shape() != embed_shape) throw Error("backward: embedding cotangent shape mismatch");
    d_embed.data() += d_embedding.data();
  }
  r.input_grad = stack_backward(params.encoder, params.negative_slope, cache.encoder, d_embed, r.grads.encoder);
  return r;
}

#define FREPA_INSTANTIATE_NN(S)                                                                                    \
  template ModelParams<S> init_model<S>(Index, Index, std::uint64_t, double);                                      \
  template ConvStack<S> make_decoder<S>(Index, Index, int, CounterRng&, const std::string&);                       \
  template ConvStack<S> zeros_like(const ConvStack<S>&);                                                           \
  template ModelParams<S> zeros_like(const ModelParams<S>&);                                                       \
  template std::uint64_t checksum(const ConvStack<S>&);                                                            \
  template std::uint64_t checksum(const ModelParams<S>&);                                                          \
  template BasicTensor<S> stack_forward(const ConvStack<S>&, double, const BasicTensor<S>&, StackCache<S>*);       \
  template BasicTensor<S> stack_backward(const ConvStack<S>&, double, const StackCache<S>&, const BasicTensor<S>&, \
                                         ConvStack<S>&);                                                           \
  template ForwardResult<S> encode(const ModelParams<S>&, const BasicTensor<S>&);                                  \
  template ForwardResult<S> forward(const ModelParams<S>&, const BasicTensor<S>&);                                 \
  template BackwardResult<S> backward(const ModelParams<S>&, const ForwardCache<S>&, const BasicTensor<S>&,        \
                                      const BasicTensor<S>&);

FREPA_INSTANTIATE_NN(float)
FREPA_INSTANTIATE_NN(double)

template ConvStack<double> cast_stack<double, float>(const ConvStack<float>&);
template ConvStack<float> cast_stack<float, double>(const ConvStack<double>&);
template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

#undef FREPA_INSTANTIATE_NN

}  // namespace frepa
