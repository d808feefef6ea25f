#pragma once

#include "frepa/nn.hpp"
#include "frepa/spectral.hpp"
#include "frepa/tensor.hpp"
#include "frepa/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace frepa {

/// Low, medium and high frequency bands as differences of exponential
/// low-pass transfers, so the three transfers sum to one at every bin.
struct BandSpec {
  Shape spatial;
  double low_cutoff = 0.0;
  double high_cutoff = 0.0;
  FilterSpec low;
  FilterSpec medium;
  FilterSpec high;
};

/// Band edges at low_ratio and high_ratio times min(spatial).
BandSpec make_band_spec(const Shape& spatial, double low_ratio = 0.15, double high_ratio = 0.35);

struct BandRho {
  double low = 0.0;
  double medium = 0.0;
  double high = 0.0;
};

/// Per band: 1 - RMSE between the band-filtered reconstruction and raw image.
BandRho band_similarity(const Tensor& recon, const Tensor& raw, const BandSpec& bands);

/// Frozen feature extractor seen by the probe.
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual Tensor embed(const Tensor& image) const = 0;
  virtual std::uint64_t checksum() const = 0;
};

/// Encoder half of a trained model. Raw images get the same extra input
/// channel the model was trained with.
class ModelEncoder final : public Encoder {
 public:
  ModelEncoder(ModelParams<float> params, bool hessian_channel)
      : params_(std::move(params)), hessian_channel_(hessian_channel) {}

  Tensor embed(const Tensor& image) const override;
  std::uint64_t checksum() const override { return frepa::checksum(params_.encoder); }
  const ModelParams<float>& params() const { return params_; }

 private:
  ModelParams<float> params_;
  bool hessian_channel_;
};

struct ProbeConfig {
  Index steps = 1500;
  Index batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct ProbeDecoder {
  ConvStack<float> layers;
  double negative_slope = kLeakySlope;
};

/// Fresh four-layer decoder trained with MSE against the raw images on top
/// of the frozen encoder. Throws if the encoder checksum changes or the
/// loss becomes non-finite.
ProbeDecoder train_probe_decoder(const Encoder& encoder, const std::vector<Tensor>& dataset, const ProbeConfig& config,
                                 int jobs = 1);

Tensor probe_reconstruct(const Encoder& encoder, const ProbeDecoder& decoder, const Tensor& image);

struct ProbeReport {
  std::uint64_t encoder_hash = 0;
  std::uint64_t config_hash = 0;  ///< pretraining config, 0 if unknown
  std::uint64_t probe_seed = 0;
  std::uint64_t pretrain_seed = 0;
  BandRho mean;
  std::vector<BandRho> per_image;
  double recon_rmse = 0.0;  ///< mean full-band reconstruction RMSE
};

ProbeReport evaluate_probe(const Encoder& encoder, const ProbeDecoder& decoder, const std::vector<Tensor>& images,
                           const BandSpec& bands, int jobs = 1);

nlohmann::json to_json(const ProbeReport& r);
nlohmann::json to_json(const BandRho& r);

/// For each cutoff, every image high-pass filtered and min-max renormalized
/// to [0, 1]. Result is indexed [cutoff][image]. Cutoff 0 removes the DC bin
/// only.
std::vector<std::vector<Tensor>> highpass_robustness_set(const std::vector<Tensor>& dataset,
                                                         const std::vector<double>& cutoffs);

struct PairedProbeReport {
  ProbeReport frepa;
  ProbeReport mae_style;
  BandRho delta;  ///< frepa minus mae_style
};

nlohmann::json to_json(const PairedProbeReport& r);

/// Probes two already trained encoders on the same data with the same probe
/// seed.
PairedProbeReport compare_encoders(const Encoder& frepa, const Encoder& mae_style, const std::vector<Tensor>& train,
                                   const std::vector<Tensor>& heldout, const ProbeConfig& probe, int jobs = 1);

/// Pretrains with `config` and with mae_style(config), then compares the two
/// encoders.
PairedProbeReport compare_pretrainings(const std::vector<Tensor>& train, const std::vector<Tensor>& heldout,
                                       const TrainConfig& config, const ProbeConfig& probe, int jobs = 1);

}  // namespace frepa
