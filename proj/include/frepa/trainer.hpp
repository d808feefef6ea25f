#pragma once

#include "frepa/corruption.hpp"
#include "frepa/losses.hpp"
#include "frepa/nn.hpp"
#include "frepa/rng.hpp"
#include "frepa/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace frepa {

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  Index batch_size = 8;
  Index epochs = 1;
  std::uint64_t seed = 0;
  LossWeights weights;
  CorruptionConfig corruption;
  bool consistency_two_views = true;
  /// Append the Hessian response of the raw image; false feeds a zero channel
  /// so input width stays fixed.
  bool hessian_channel = true;
  bool flip_rotate = true;
  Index max_steps = 0;  ///< 0: run all epochs
  Index checkpoint_every = 0;

  void validate() const;
};

/// Spatial-branch only, zero-filled patches, RMSE only, no Hessian channel,
/// single view.
TrainConfig mae_style(TrainConfig base);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const TrainConfig& c);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Adam

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamHyper adam_hyper(const TrainConfig& c) {
  return {c.learning_rate, c.adam_beta1, c.adam_beta2, c.adam_eps};
}

/// First/second moments (same layout as the parameters) and step count.
template <typename Scalar>
struct StackOptState {
  ConvStack<Scalar> m;
  ConvStack<Scalar> v;
  std::int64_t step = 0;
};

template <typename Scalar>
struct OptState {
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;
  std::int64_t step = 0;
};

template <typename Scalar>
StackOptState<Scalar> init_opt_state(const ConvStack<Scalar>& params);
template <typename Scalar>
OptState<Scalar> init_opt_state(const ModelParams<Scalar>& params);

/// Bias-corrected Adam update in place. Non-finite gradients are rejected
/// with the offending parameter's name before anything is modified.
template <typename Scalar>
void adam_step(ConvStack<Scalar>& params, const ConvStack<Scalar>& grads, StackOptState<Scalar>& state,
               const AdamHyper& hyper);
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, OptState<Scalar>& state,
               const AdamHyper& hyper);

// ---------------------------------------------------------------------------
// Training

struct StepMetrics {
  Index step = 0;
  double l_rmse = 0.0;
  double l_grad = 0.0;
  double l_hfl = 0.0;
  double l_con = 0.0;
  double l_total = 0.0;
  Index frequency = 0;  ///< view-1 branch counts in the batch
  Index spatial = 0;
  double embed_cotangent = 0.0;  ///< max |dL/d(embedding)| over the batch
};

nlohmann::json to_json(const StepMetrics& m);

/// Builds the network input: corrupted image plus the Hessian (or zero) channel.
Tensor network_input(const Tensor& corrupted, const Tensor& raw, bool hessian_channel);

/// One optimizer step over `batch`. Sample i draws its two views from
/// rng.fork(2 i) and rng.fork(2 i + 1); gradients are averaged in index order.
StepMetrics train_step(ModelParams<float>& params, OptState<float>& state, std::span<const Tensor> batch,
                       const CounterRng& rng, const TrainConfig& config, int jobs = 1);

struct Checkpoint {
  ModelParams<float> params;
  OptState<float> opt;
  Index step = 0;
};

Checkpoint initial_checkpoint(Index image_channels, const TrainConfig& config);

struct PretrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(const Checkpoint&)> on_checkpoint;  ///< every checkpoint_every steps
};

Index steps_per_epoch(Index dataset_size, const TrainConfig& config);
Index total_steps(Index dataset_size, const TrainConfig& config);

/// Epoch loop with seeded shuffling and dihedral augmentation. Every random
/// choice is keyed by (seed, step or epoch, position), so resuming from any
/// checkpoint reproduces the uninterrupted run exactly.
Checkpoint pretrain(const std::vector<Tensor>& dataset, const TrainConfig& config, const PretrainHooks& hooks = {},
                    const Checkpoint* resume = nullptr, int jobs = 1);

/// Checkpoint directory: one FRPT per tensor plus index.json.
void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& dir);

}  // namespace frepa
