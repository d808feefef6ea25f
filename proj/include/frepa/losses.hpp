#pragma once

#include "frepa/corruption.hpp"
#include "frepa/spectral.hpp"
#include "frepa/tensor.hpp"

#include <vector>

namespace frepa {

/// Scalar loss value and its gradient w.r.t. the first argument.
template <typename Scalar>
struct LossTerm {
  double value = 0.0;
  BasicTensor<Scalar> grad;
};

/// JS consistency value with gradients for both embeddings.
template <typename Scalar>
struct PairLoss {
  double value = 0.0;
  BasicTensor<Scalar> grad1;
  BasicTensor<Scalar> grad2;
};

struct LossWeights {
  double lambda1 = 1.0;  ///< gradient loss
  double lambda2 = 1.0;  ///< hierarchical frequency-to-spatial loss
  double lambda3 = 0.5;  ///< embedding consistency
};

template <typename Scalar>
struct LossBundle {
  double rmse = 0.0;
  double grad = 0.0;
  double hfl = 0.0;
  double consistency = 0.0;
  double total = 0.0;
  BasicTensor<Scalar> d_pred;
  BasicTensor<Scalar> d_embed1;  ///< empty when no embeddings were given
  BasicTensor<Scalar> d_embed2;
};

/// Smoothing constant of the absolute value, |t| ~ sqrt(t^2 + eps^2) - eps.
inline constexpr double kAbsEpsilon = 1e-6;
/// Floor on the RMSE value in its gradient denominator.
inline constexpr double kRmseFloor = 1e-8;

/// Root mean squared error, over the masked patches only when `mask` is given.
template <typename Scalar>
LossTerm<Scalar> loss_rmse(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target,
                           const PatchMask* mask = nullptr);

/// Mean smoothed-absolute difference of forward-difference image gradients,
/// summed over spatial axes.
template <typename Scalar>
LossTerm<Scalar> loss_grad(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target);

/// Average over a bank of five high-pass filters of the mean smoothed-absolute
/// difference of the filtered images.
template <typename Scalar>
LossTerm<Scalar> loss_hfl(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target,
                          const std::vector<FilterSpec>& bank);

/// Jensen-Shannon divergence (natural log) between the channel softmax of
/// the spatially pooled embeddings.
template <typename Scalar>
PairLoss<Scalar> loss_consistency(const BasicTensor<Scalar>& e1, const BasicTensor<Scalar>& e2);

/// rmse + lambda1 * grad + lambda2 * hfl + lambda3 * consistency. The
/// consistency term is skipped when either embedding pointer is null.
template <typename Scalar>
LossBundle<Scalar> loss_total(const BasicTensor<Scalar>& pred, const BasicTensor<Scalar>& target,
                              const PatchMask* mask, const BasicTensor<Scalar>* e1, const BasicTensor<Scalar>* e2,
                              const LossWeights& weights, const std::vector<FilterSpec>& bank);

}  // namespace frepa
