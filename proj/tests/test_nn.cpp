#include "doctest.h"
#include "oracles.hpp"

#include "frepa/nn.hpp"

using namespace frepa;

namespace {

template <typename Scalar>
ConvLayer<Scalar> single_layer(Index in, Index out, Index stride, bool activation, std::uint64_t seed) {
  CounterRng rng(seed);
  ConvLayer<Scalar> l;
  l.name = "conv";
  l.in_channels = in;
  l.out_channels = out;
  l.stride = stride;
  l.activation = activation;
  l.weight = ConvLayer<Scalar>::Matrix::NullaryExpr(out, in * 9, [&] { return static_cast<Scalar>(rng.uniform() - 0.5); });
  l.bias = ConvLayer<Scalar>::Vector::NullaryExpr(out, [&] { return static_cast<Scalar>(rng.uniform() - 0.5); });
  return l;
}

double dot(const TensorD& a, const TensorD& b) { return (a.data() * b.data()).sum(); }

}  // namespace

TEST_CASE("convolution matches the naive replicate-padded oracle") {
  for (Index stride : {1, 2})
    for (const auto& [h, w] : {std::pair<Index, Index>{8, 8}, {7, 10}, {5, 3}}) {
      const ConvLayer<double> l = single_layer<double>(3, 4, stride, false, static_cast<std::uint64_t>(h * w + stride));
      const TensorD x = oracle::random_image<double>({3, h, w}, 7, -1.0, 1.0);
      const TensorD y = stack_forward<double>({l}, kLeakySlope, x, nullptr);
      const auto ref = oracle::naive_conv3x3(std::vector<double>(x.data().begin(), x.data().end()), 3, h, w,
                                             std::vector<double>(l.weight.data(), l.weight.data() + l.weight.size()),
                                             std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size()), 4,
                                             stride);
      REQUIRE(y.size() == static_cast<Index>(ref.size()));
      for (Index i = 0; i < y.size(); ++i) REQUIRE(y.data()[i] == doctest::Approx(ref[static_cast<std::size_t>(i)]).epsilon(1e-12));
    }
}

TEST_CASE("model shapes") {
  const auto p = init_model<float>(4, 3, 1);
  REQUIRE(p.encoder.size() == 3);
  REQUIRE(p.decoder.size() == 4);
  CHECK(p.in_channels() == 4);
  CHECK(p.out_channels() == 3);
  CHECK(p.embedding_channels() == 32);
  const auto r = forward(p, oracle::random_image({4, 64, 48}, 2));
  CHECK(r.embedding.shape() == Shape{32, 8, 6});
  CHECK(r.reconstruction.shape() == Shape{3, 64, 48});
  CHECK(encode(p, oracle::random_image({4, 16, 16}, 2)).reconstruction.empty());
  CHECK_THROWS_AS(forward(p, Tensor({4, 60, 64})), Error);
  CHECK_THROWS_AS(forward(p, Tensor({3, 64, 64})), Error);
  CHECK(!p.decoder.back().activation);
  CHECK(p.decoder[2].upsample);
  CHECK(!p.decoder[3].upsample);
}

TEST_CASE("initialization") {
  const auto p = init_model<double>(2, 1, 11);
  auto check_stack = [](const ConvStack<double>& s) {
    for (const auto& l : s) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.fan_in()));
      CHECK(l.weight.cwiseAbs().maxCoeff() <= bound);
      CHECK(l.weight.cwiseAbs().maxCoeff() > 0.5 * bound);
      CHECK(l.bias.isZero(0.0));
    }
  };
  check_stack(p.encoder);
  check_stack(p.decoder);
  CHECK(checksum(init_model<double>(2, 1, 11)) == checksum(p));
  CHECK(checksum(init_model<double>(2, 1, 12)) != checksum(p));
  const auto f = init_model<float>(2, 1, 11);
  CHECK(checksum(cast_params<float>(p)) == checksum(f));
}

TEST_CASE("zero input gives zero output") {
  const auto p = init_model<float>(2, 2, 3);
  const auto r = forward(p, Tensor({2, 32, 32}));
  CHECK(r.embedding.data().abs().maxCoeff() == 0.0f);
  CHECK(r.reconstruction.data().abs().maxCoeff() == 0.0f);
}

TEST_CASE("unit slope makes the network linear") {
  const auto p = init_model<double>(2, 1, 4, 1.0);
  const TensorD a = oracle::random_image<double>({2, 16, 16}, 1, -1.0, 1.0);
  const TensorD b = oracle::random_image<double>({2, 16, 16}, 2, -1.0, 1.0);
  TensorD mix = a;
  mix.data() = 2.0 * a.data() - 3.0 * b.data();
  TensorD expect = forward(p, a).reconstruction;
  expect.data() = 2.0 * expect.data() - 3.0 * forward(p, b).reconstruction.data();
  CHECK(max_abs_diff(forward(p, mix).reconstruction, expect) < 1e-10);
}

TEST_CASE("backward of a linear convolution is its adjoint") {
  for (Index stride : {1, 2}) {
    ConvLayer<double> l = single_layer<double>(3, 5, stride, false, 9);
    l.bias.setZero();
    ConvStack<double> stack{l};
    const TensorD x = oracle::random_image<double>({3, 9, 11}, 3, -1.0, 1.0);
    StackCache<double> cache;
    const TensorD y = stack_forward(stack, kLeakySlope, x, &cache);
    const TensorD g = oracle::random_image<double>(y.shape(), 4, -1.0, 1.0);
    ConvStack<double> grads = zeros_like(stack);
    const TensorD xt = stack_backward(stack, kLeakySlope, cache, g, grads);
    CHECK(dot(y, g) == doctest::Approx(dot(x, xt)).epsilon(1e-12));
  }
}

TEST_CASE("zero cotangents give zero gradients") {
  const auto p = init_model<double>(2, 1, 5);
  const auto r = forward(p, oracle::random_image<double>({2, 16, 16}, 5));
  const auto b = backward(p, r.cache, TensorD(r.reconstruction.shape()), TensorD(r.embedding.shape()));
  CHECK(checksum(b.grads) == checksum(zeros_like(p)));
  CHECK(b.input_grad.data().abs().maxCoeff() == 0.0);
  const auto e = encode(p, oracle::random_image<double>({2, 16, 16}, 5));
  CHECK_THROWS_AS(backward(p, e.cache, r.reconstruction, TensorD{}), Error);
}

TEST_CASE("parameter and input gradients agree with central differences") {
  auto p = init_model<double>(2, 1, 6);
  for (auto* s : {&p.encoder, &p.decoder})
    for (auto& l : *s) l.bias.setConstant(0.05);
  TensorD x = oracle::random_image<double>({2, 16, 16}, 6, -1.0, 1.0);
  const auto r0 = forward(p, x);
  const TensorD wr = oracle::random_image<double>(r0.reconstruction.shape(), 7, -1.0, 1.0);
  const TensorD we = oracle::random_image<double>(r0.embedding.shape(), 8, -1.0, 1.0);
  auto objective = [&] {
    const auto r = forward(p, x);
    return dot(r.reconstruction, wr) + dot(r.embedding, we);
  };
  const auto b = backward(p, r0.cache, wr, we);

  auto grads = b.grads;
  for_each_parameter(p, grads, [&](const std::string& name, auto value, const auto& grad) {
    const Index n = value.size();
    for (Index k = 0; k < std::min<Index>(n, 12); ++k) {
      const Index i = (k * 7919) % n;
      const double saved = value(i);
      value(i) = saved + 1e-6;
      const double up = objective();
      value(i) = saved - 1e-6;
      const double down = objective();
      value(i) = saved;
      INFO(name << "[" << i << "]");
      CHECK((up - down) / 2e-6 == doctest::Approx(grad(i)).epsilon(1e-5).scale(1e-3));
    }
  });
  for (Index i = 0; i < x.size(); i += 37) {
    const double numeric = oracle::central_difference(x.data(), i, 1e-6, objective);
    CHECK(numeric == doctest::Approx(b.input_grad.data()[i]).epsilon(1e-5).scale(1e-3));
  }
}

TEST_CASE("forward passes are deterministic") {
  const auto p = init_model<float>(3, 2, 7);
  const Tensor x = oracle::random_image({3, 32, 32}, 9);
  const auto a = forward(p, x), b = forward(p, x);
  CHECK(a.reconstruction == b.reconstruction);
  CHECK(a.embedding == b.embedding);
}
