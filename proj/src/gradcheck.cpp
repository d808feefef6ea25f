#include "frepa/gradcheck.hpp"

#include "frepa/corruption.hpp"
#include "frepa/losses.hpp"
#include "frepa/nn.hpp"
#include "frepa/rng.hpp"
#include "frepa/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace frepa {

namespace {

template <typename Scalar>
BasicTensor<Scalar> random_tensor(const Shape& shape, CounterRng& rng, double lo = 0.0, double hi = 1.0) {
  BasicTensor<Scalar> t(shape);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<Scalar>(lo + (hi - lo) * rng.uniform());
  return t;
}

// Compares `analytic` against central differences of `f` over the listed
// coordinates of `x`, perturbing x in place.
template <typename Vec>
GradcheckEntry compare(const std::string& name, Vec&& x, const Eigen::ArrayXd& analytic,
                       const std::vector<Index>& coords, const GradcheckOptions& o, const std::function<double()>& f) {
  GradcheckEntry e{name, 0.0, 0};
  for (Index i : coords) {
    const auto saved = x[i];
    x[i] = saved + static_cast<decltype(saved)>(o.step);
    const double up = f();
    const double h_up = static_cast<double>(x[i]) - static_cast<double>(saved);
    x[i] = saved - static_cast<decltype(saved)>(o.step);
    const double down = f();
    const double h_down = static_cast<double>(saved) - static_cast<double>(x[i]);
    x[i] = saved;
    const double numeric = (up - down) / (h_up + h_down);
    const double scale = std::max(std::abs(numeric), std::abs(analytic[i]));
    if (scale <= o.min_magnitude) continue;
    ++e.checked;
    e.max_rel_error = std::max(e.max_rel_error, std::abs(numeric - analytic[i]) / scale);
  }
  return e;
}

std::vector<Index> all_coords(Index n) {
  std::vector<Index> c(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = i;
  return c;
}

std::vector<Index> sample_coords(Index n, Index k, CounterRng& rng) {
  if (n <= k) return all_coords(n);
  std::vector<Index> c;
  for (Index i = 0; i < k; ++i) c.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(n))));
  return c;
}

template <typename Scalar>
Eigen::ArrayXd as_double(const BasicTensor<Scalar>& t) {
  return t.data().template cast<double>();
}

template <typename Scalar>
std::vector<GradcheckEntry> gradcheck_impl(std::uint64_t seed, const GradcheckOptions& o) {
  using T = BasicTensor<Scalar>;
  CounterRng rng(seed, {0x67726164ULL});
  const Shape shape{o.channels, o.size, o.size};
  const Shape spatial{o.size, o.size};
  std::vector<GradcheckEntry> out;

  T pred = random_tensor<Scalar>(shape, rng);
  const T target = random_tensor<Scalar>(shape, rng);
  const std::vector<FilterSpec> bank = make_hfl_bank(spatial);
  auto& p = pred.data();
  const auto coords = all_coords(pred.size());

  out.push_back(compare("loss.rmse", p, as_double(loss_rmse(pred, target).grad), coords, o,
                        [&] { return loss_rmse(pred, target).value; }));

  CorruptionConfig mcfg;
  mcfg.spatial_patch = std::max<Index>(1, o.size / 4);
  const PatchMask mask = histeq_spatial_masking(Tensor(shape), mcfg, rng).mask;
  out.push_back(compare("loss.rmse_masked", p, as_double(loss_rmse(pred, target, &mask).grad), coords, o,
                        [&] { return loss_rmse(pred, target, &mask).value; }));
  out.push_back(compare("loss.grad", p, as_double(loss_grad(pred, target).grad), coords, o,
                        [&] { return loss_grad(pred, target).value; }));
  out.push_back(compare("loss.hfl", p, as_double(loss_hfl(pred, target, bank).grad), coords, o,
                        [&] { return loss_hfl(pred, target, bank).value; }));

  const Shape eshape{8, 2, 2};
  T e1 = random_tensor<Scalar>(eshape, rng, -2.0, 2.0), e2 = random_tensor<Scalar>(eshape, rng, -2.0, 2.0);
  const PairLoss<Scalar> js = loss_consistency(e1, e2);
  out.push_back(compare("loss.consistency.e1", e1.data(), as_double(js.grad1), all_coords(e1.size()), o,
                        [&] { return loss_consistency(e1, e2).value; }));
  out.push_back(compare("loss.consistency.e2", e2.data(), as_double(js.grad2), all_coords(e2.size()), o,
                        [&] { return loss_consistency(e1, e2).value; }));

  const LossWeights weights;
  out.push_back(compare("loss.total", p, as_double(loss_total(pred, target, &mask, &e1, &e2, weights, bank).d_pred),
                        coords, o, [&] { return loss_total(pred, target, &mask, &e1, &e2, weights, bank).total; }));

  // End to end: two views through the model, reconstruction of view 1 against
  // the target plus consistency between the two embeddings.
  ModelParams<Scalar> params = init_model<Scalar>(o.channels + 1, o.channels, seed);
  const T in1 = random_tensor<Scalar>({o.channels + 1, o.size, o.size}, rng);
  const T in2 = random_tensor<Scalar>({o.channels + 1, o.size, o.size}, rng);
  auto model_loss = [&] {
    const ForwardResult<Scalar> f1 = forward(params, in1);
    const ForwardResult<Scalar> f2 = encode(params, in2);
    return loss_total(f1.reconstruction, target, &mask, &f1.embedding, &f2.embedding, weights, bank).total;
  };
  const ForwardResult<Scalar> f1 = forward(params, in1);
  const ForwardResult<Scalar> f2 = encode(params, in2);
  const LossBundle<Scalar> lb = loss_total(f1.reconstruction, target, &mask, &f1.embedding, &f2.embedding, weights, bank);
  BackwardResult<Scalar> b1 = backward(params, f1.cache, lb.d_pred, lb.d_embed1);
  const BackwardResult<Scalar> b2 = backward(params, f2.cache, T(), lb.d_embed2);
  for (std::size_t i = 0; i < b1.grads.encoder.size(); ++i) {
    b1.grads.encoder[i].weight += b2.grads.encoder[i].weight;
    b1.grads.encoder[i].bias += b2.grads.encoder[i].bias;
  }
  for_each_parameter(params, b1.grads, [&](const std::string& name, auto value, auto grad) {
    const Eigen::ArrayXd analytic =
        Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>(grad.data(), grad.size()).template cast<double>();
    Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>> x(value.data(), value.size());
    out.push_back(compare("model." + name, x, analytic, sample_coords(x.size(), o.coords_per_tensor, rng), o,
                          model_loss));
  });
  return out;
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck(std::uint64_t seed, const GradcheckOptions& o) {
  return o.precision == Precision::f32 ? gradcheck_impl<float>(seed, o) : gradcheck_impl<double>(seed, o);
}

}  // namespace frepa
