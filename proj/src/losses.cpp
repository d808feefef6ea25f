#include "frepa/losses.hpp"

#include <cmath>

namespace frepa {

namespace {

template <typename Scalar>
void require_same_shape(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape())
    throw Error(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

Eigen::ArrayXd smooth_abs(const Eigen::ArrayXd& t) {
  return (t.square() + kAbsEpsilon * kAbsEpsilon).sqrt() - kAbsEpsilon;
}

Eigen::ArrayXd smooth_abs_derivative(const Eigen::ArrayXd& t) {
  return t / (t.square() + kAbsEpsilon * kAbsEpsilon).sqrt();
}

// Forward difference along `axis` (of the full shape) with a zero last slice.
Eigen::ArrayXd forward_diff(const Eigen::ArrayXd& x, const Shape& shape, std::size_t axis) {
  const Shape strides = row_major_strides(shape);
  const Index n = shape[axis], s = strides[axis];
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(x.size());
  for (Index i = 0; i < x.size(); ++i)
    if ((i / s) % n + 1 < n) out[i] = x[i + s] - x[i];
  return out;
}

// Adjoint of forward_diff.
Eigen::ArrayXd forward_diff_adjoint(const Eigen::ArrayXd& g, const Shape& shape, std::size_t axis) {
  const Shape strides = row_major_strides(shape);
  const Index n = shape[axis], s = strides[axis];
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(g.size());
  for (Index i = 0; i < g.size(); ++i) {
    const Index k = (i / s) % n;
    if (k + 1 < n) out[i] -= g[i];
    if (k > 0) out[i] += g[i - s];
  }
  return out;
}

template <typename Scalar>
BasicTensor<Scalar> to_tensor(const Shape& shape, const Eigen::ArrayXd& values) {
  return BasicTensor<Scalar>(shape, values.cast<Scalar>());
}

}  // namespace

template <typename Scalar>
LossTerm<Scalar> loss_rmse(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target, const PatchMask* mask) {
  require_same_shape(pred, target, "loss_rmse");
  Eigen::ArrayXd r = pred.data().template cast<double>() - target.data().template cast<double>();
  double count = static_cast<double>(r.size());
  if (mask) {
    const auto pixels = mask->pixel_mask(pred.spatial_shape());
    const Index plane = pred.spatial_size();
    Index selected = 0;
    for (Index i = 0; i < r.size(); ++i)
      if (pixels[static_cast<std::size_t>(i % plane)]) ++selected;
      else r[i] = 0.0;
    if (selected == 0) throw Error("no masked pixels");
    count = static_cast<double>(selected);
  }
  const double value = std::sqrt(r.square().sum() / count);
  return {value, to_tensor<Scalar>(pred.shape(), r / (count * std::max(value, kRmseFloor)))};
}

template <typename Scalar>
LossTerm<Scalar> loss_grad(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target) {
  require_same_shape(pred, target, "loss_grad");
  const Shape& shape = pred.shape();
  const Eigen::ArrayXd r = pred.data().template cast<double>() - target.data().template cast<double>();
  const double n = static_cast<double>(r.size());
  double value = 0.0;
  Eigen::ArrayXd grad = Eigen::ArrayXd::Zero(r.size());
  for (std::size_t axis = 1; axis < shape.size(); ++axis) {
    const Eigen::ArrayXd t = forward_diff(r, shape, axis);
    value += smooth_abs(t).sum() / n;
    grad += forward_diff_adjoint(smooth_abs_derivative(t), shape, axis) / n;
  }
  return {value, to_tensor<Scalar>(shape, grad)};
}

template <typename Scalar>
LossTerm<Scalar> loss_hfl(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target,
                          const std::vector<FilterSpec>& bank) {
  require_same_shape(pred, target, "loss_hfl");
  if (bank.size() != 5) throw Error("loss_hfl needs a bank of 5 filters, got " + std::to_string(bank.size()));
  const TensorD r(pred.shape(), pred.data().template cast<double>() - target.data().template cast<double>());
  const double n = static_cast<double>(r.size());
  const double levels = static_cast<double>(bank.size());
  const Index channels = r.channels();
  const BasicSpectrum<double> spectrum = fft_centered(r);
  BasicSpectrum<double> back(spectrum.shape());
  double value = 0.0;
  for (const FilterSpec& f : bank) {
    if (f.transfer.size() != r.spatial_size()) throw Error("loss_hfl: filter built for another size");
    BasicSpectrum<double> filtered_spec = spectrum;
    for (Index c = 0; c < channels; ++c) filtered_spec.channel(c) *= f.transfer;
    const TensorD filtered = ifft_centered(filtered_spec).image;
    value += smooth_abs(filtered.data()).sum() / (n * levels);
    // Real radially symmetric transfers are self-adjoint.
    BasicSpectrum<double> d = fft_centered(TensorD(r.shape(), smooth_abs_derivative(filtered.data())));
    for (Index c = 0; c < channels; ++c) back.channel(c) += d.channel(c) * f.transfer;
  }
  const Eigen::ArrayXd grad = ifft_centered(back).image.data() / (n * levels);
  return {value, to_tensor<Scalar>(pred.shape(), grad)};
}

template <typename Scalar>
PairLoss<Scalar> loss_consistency(const BasicTensor<Scalar>& e1, const BasicTensor<Scalar>& e2) {
  require_same_shape(e1, e2, "loss_consistency");
  const Index channels = e1.channels();
  const double positions = static_cast<double>(e1.spatial_size());

  auto pooled_softmax = [&](const BasicTensor<Scalar>& e) {
    Eigen::ArrayXd z(channels);
    for (Index c = 0; c < channels; ++c) z[c] = e.channel(c).template cast<double>().mean();
    Eigen::ArrayXd p = (z - z.maxCoeff()).exp();
    return (p / p.sum()).eval();
  };
  const Eigen::ArrayXd p = pooled_softmax(e1), q = pooled_softmax(e2);
  const Eigen::ArrayXd m = 0.5 * (p + q);

  auto kl_terms = [&](const Eigen::ArrayXd& a) {
    Eigen::ArrayXd t(channels);
    for (Index i = 0; i < channels; ++i) t[i] = a[i] > 0.0 ? a[i] * std::log(a[i] / m[i]) : 0.0;
    return t;
  };
  const double value = std::max(0.0, 0.5 * kl_terms(p).sum() + 0.5 * kl_terms(q).sum());

  // dJS/dp_i = 0.5 * log(p_i / m_i); then through softmax and mean pooling.
  auto backprop = [&](const Eigen::ArrayXd& a, const Shape& shape) {
    Eigen::ArrayXd g(channels);
    for (Index i = 0; i < channels; ++i) g[i] = a[i] > 0.0 ? 0.5 * std::log(a[i] / m[i]) : 0.0;
    const Eigen::ArrayXd dz = a * (g - (a * g).sum());
    BasicTensor<Scalar> out(shape);
    for (Index c = 0; c < channels; ++c) out.channel(c).setConstant(static_cast<Scalar>(dz[c] / positions));
    return out;
  };
  return {value, backprop(p, e1.shape()), backprop(q, e2.shape())};
}

template <typename Scalar>
LossBundle<Scalar> loss_total(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target,
                              const PatchMask* mask, const BasicTensor<Scalar>* e1, const BasicTensor<Scalar>* e2,
                              const LossWeights& weights, const std::vector<FilterSpec>& bank) {
  LossBundle<Scalar> out;
  const LossTerm<Scalar> rmse = loss_rmse(pred, target, mask);
  out.rmse = rmse.value;
  Eigen::ArrayXd d = rmse.grad.data().template cast<double>();
  if (weights.lambda1 != 0.0) {
    const LossTerm<Scalar> g = loss_grad(pred, target);
    out.grad = g.value;
    d += weights.lambda1 * g.grad.data().template cast<double>();
  }
  if (weights.lambda2 != 0.0) {
    const LossTerm<Scalar> h = loss_hfl(pred, target, bank);
    out.hfl = h.value;
    d += weights.lambda2 * h.grad.data().template cast<double>();
  }
  if (e1 && e2) {
    PairLoss<Scalar> c = loss_consistency(*e1, *e2);
    out.consistency = c.value;
    c.grad1.data() *= static_cast<Scalar>(weights.lambda3);
    c.grad2.data() *= static_cast<Scalar>(weights.lambda3);
    out.d_embed1 = std::move(c.grad1);
    out.d_embed2 = std::move(c.grad2);
  }
  out.total = out.rmse + weights.lambda1 * out.grad + weights.lambda2 * out.hfl + weights.lambda3 * out.consistency;
  out.d_pred = to_tensor<Scalar>(pred.shape(), d);
  return out;
}

#define FREPA_INSTANTIATE_LOSSES(S)                                                                              \
  template LossTerm<S> loss_rmse(const BasicTensor<S>&, const BasicTensor<S>&, const PatchMask*);                \
  template LossTerm<S> loss_grad(const BasicTensor<S>&, const BasicTensor<S>&);                                  \
  template LossTerm<S> loss_hfl(const BasicTensor<S>&, const BasicTensor<S>&, const std::vector<FilterSpec>&);   \
  template PairLoss<S> loss_consistency(const BasicTensor<S>&, const BasicTensor<S>&);                           \
  template LossBundle<S> loss_total(const BasicTensor<S>&, const BasicTensor<S>&, const PatchMask*,              \
                                    const BasicTensor<S>*, const BasicTensor<S>*, const LossWeights&,            \
                                    const std::vector<FilterSpec>&);

FREPA_INSTANTIATE_LOSSES(float)
FREPA_INSTANTIATE_LOSSES(double)

#undef FREPA_INSTANTIATE_LOSSES

}  // namespace frepa
