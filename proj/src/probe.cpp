#include "frepa/probe.hpp"

#include "frepa/parallel.hpp"

#include <cmath>
#include <numeric>

namespace frepa {

using nlohmann::json;

BandSpec make_band_spec(const Shape& spatial, double low_ratio, double high_ratio) {
  if (!(low_ratio > 0.0 && low_ratio < high_ratio)) throw Error("band ratios must satisfy 0 < low < high");
  const double m = static_cast<double>(*std::min_element(spatial.begin(), spatial.end()));
  BandSpec b;
  b.spatial = spatial;
  b.low_cutoff = low_ratio * m;
  b.high_cutoff = high_ratio * m;
  const FilterSpec l1 = make_exponential_filter(spatial, b.low_cutoff, FilterKind::low_pass);
  const FilterSpec l2 = make_exponential_filter(spatial, b.high_cutoff, FilterKind::low_pass);
  b.low = l1;
  b.medium = make_custom_filter(spatial, l2.transfer - l1.transfer, FilterKind::low_pass, b.high_cutoff);
  b.high = make_custom_filter(spatial, 1.0 - l2.transfer, FilterKind::high_pass, b.high_cutoff);
  return b;
}

namespace {

double rmse(const TensorD& a, const TensorD& b) { return std::sqrt((a.data() - b.data()).square().mean()); }

}  // namespace

BandRho band_similarity(const Tensor& recon, const Tensor& raw, const BandSpec& bands) {
  if (recon.shape() != raw.shape()) throw Error("band_similarity: shape mismatch");
  if (recon.spatial_shape() != bands.spatial) throw Error("band_similarity: band spec built for another size");
  const TensorD x = recon.cast<double>(), y = raw.cast<double>();
  auto rho = [&](const FilterSpec& f) { return 1.0 - rmse(apply_filter(x, f), apply_filter(y, f)); };
  return {rho(bands.low), rho(bands.medium), rho(bands.high)};
}

Tensor ModelEncoder::embed(const Tensor& image) const {
  return encode(params_, network_input(image, image, hessian_channel_)).embedding;
}

namespace {

int upsample_count(const Shape& image, const Shape& embedding) {
  if (image.size() != embedding.size()) throw Error("probe: embedding rank differs from image rank");
  int count = -1;
  for (std::size_t i = 1; i < image.size(); ++i) {
    int k = 0;
    Index e = embedding[i];
    while (e < image[i] && k < 4) e *= 2, ++k;
    if (e != image[i]) throw Error("probe: image size is not a power-of-two multiple of the embedding size");
    if (count >= 0 && count != k) throw Error("probe: anisotropic embedding scale");
    count = k;
  }
  return count;
}

struct ProbeSample {
  ConvStack<float> grads;
  double loss = 0.0;
};

}  // namespace

ProbeDecoder train_probe_decoder(const Encoder& encoder, const std::vector<Tensor>& dataset, const ProbeConfig& config,
                                 int jobs) {
  if (dataset.empty()) throw Error("train_probe_decoder: empty dataset");
  if (config.batch_size < 1 || config.steps < 0) throw Error("train_probe_decoder: invalid config");
  const std::uint64_t before = encoder.checksum();

  const auto n = static_cast<Index>(dataset.size());
  std::vector<Tensor> embeddings(dataset.size());
  parallel_for(n, jobs, [&](Index i) {
    embeddings[static_cast<std::size_t>(i)] = encoder.embed(dataset[static_cast<std::size_t>(i)]);
  });

  const Tensor& e0 = embeddings.front();
  CounterRng init(config.seed, {static_cast<std::uint64_t>(Stream::probe), 0});
  ProbeDecoder dec;
  dec.layers = make_decoder<float>(e0.channels(), dataset.front().channels(),
                                   upsample_count(dataset.front().shape(), e0.shape()), init, "probe");
  StackOptState<float> opt = init_opt_state(dec.layers);
  const AdamHyper hyper{config.learning_rate, 0.9, 0.999, 1e-8};

  std::vector<Index> order(static_cast<std::size_t>(n));
  Index order_epoch = -1;
  const Index per_epoch = (n + config.batch_size - 1) / config.batch_size;
  for (Index step = 0; step < config.steps; ++step) {
    const Index epoch = step / per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), Index{0});
      CounterRng shuffle(config.seed, {static_cast<std::uint64_t>(Stream::probe), 1, static_cast<std::uint64_t>(epoch)});
      for (Index i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffle.below(static_cast<std::uint64_t>(i + 1)))]);
      order_epoch = epoch;
    }
    const Index first = (step % per_epoch) * config.batch_size;
    const Index count = std::min(first + config.batch_size, n) - first;
    std::vector<ProbeSample> samples(static_cast<std::size_t>(count));
    parallel_for(count, jobs, [&](Index b) {
      const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(first + b)]);
      StackCache<float> cache;
      const Tensor recon = stack_forward(dec.layers, dec.negative_slope, embeddings[idx], &cache);
      const auto diff = (recon.data() - dataset[idx].data()).eval();
      ProbeSample& s = samples[static_cast<std::size_t>(b)];
      s.loss = diff.cast<double>().square().mean();
      const Tensor d_out(recon.shape(), diff * (2.0f / static_cast<float>(diff.size())));
      s.grads = zeros_like(dec.layers);
      stack_backward(dec.layers, dec.negative_slope, cache, d_out, s.grads);
    });
    ConvStack<float> grads = zeros_like(dec.layers);
    const float scale = 1.0f / static_cast<float>(count);
    double loss = 0.0;
    for (const ProbeSample& s : samples) {
      for (std::size_t l = 0; l < grads.size(); ++l) {
        grads[l].weight += scale * s.grads[l].weight;
        grads[l].bias += scale * s.grads[l].bias;
      }
      loss += s.loss;
    }
    if (!std::isfinite(loss)) throw Error("probe decoder loss became non-finite at step " + std::to_string(step + 1));
    adam_step(dec.layers, grads, opt, hyper);
  }

  if (encoder.checksum() != before) throw Error("encoder parameters changed during probing");
  return dec;
}

Tensor probe_reconstruct(const Encoder& encoder, const ProbeDecoder& decoder, const Tensor& image) {
  return stack_forward<float>(decoder.layers, decoder.negative_slope, encoder.embed(image), nullptr);
}

ProbeReport evaluate_probe(const Encoder& encoder, const ProbeDecoder& decoder, const std::vector<Tensor>& images,
                           const BandSpec& bands, int jobs) {
  ProbeReport r;
  r.encoder_hash = encoder.checksum();
  r.per_image.resize(images.size());
  std::vector<double> errors(images.size());
  parallel_for(static_cast<Index>(images.size()), jobs, [&](Index i) {
    const auto k = static_cast<std::size_t>(i);
    const Tensor recon = probe_reconstruct(encoder, decoder, images[k]);
    r.per_image[k] = band_similarity(recon, images[k], bands);
    errors[k] = rmse(recon.cast<double>(), images[k].cast<double>());
  });
  for (std::size_t k = 0; k < images.size(); ++k) {
    const double w = 1.0 / static_cast<double>(images.size());
    r.mean.low += w * r.per_image[k].low;
    r.mean.medium += w * r.per_image[k].medium;
    r.mean.high += w * r.per_image[k].high;
    r.recon_rmse += w * errors[k];
  }
  return r;
}

json to_json(const BandRho& r) { return json{{"low", r.low}, {"medium", r.medium}, {"high", r.high}}; }

json to_json(const ProbeReport& r) {
  json per_image = json::array();
  for (const BandRho& b : r.per_image) per_image.push_back(to_json(b));
  return json{{"encoder_hash", hex64(r.encoder_hash)},
              {"config_hash", hex64(r.config_hash)},
              {"seeds", {{"probe", r.probe_seed}, {"pretrain", r.pretrain_seed}}},
              {"per_band", to_json(r.mean)},
              {"recon_rmse", r.recon_rmse},
              {"per_image", per_image}};
}

json to_json(const PairedProbeReport& r) {
  return json{{"frepa", to_json(r.frepa)}, {"mae_style", to_json(r.mae_style)}, {"delta", to_json(r.delta)}};
}

std::vector<std::vector<Tensor>> highpass_robustness_set(const std::vector<Tensor>& dataset,
                                                         const std::vector<double>& cutoffs) {
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    if (!(cutoffs[i] >= 0.0)) throw Error("robustness cutoffs must be non-negative");
    if (i > 0 && !(cutoffs[i] > cutoffs[i - 1])) throw Error("robustness cutoffs must be strictly increasing");
  }
  std::vector<std::vector<Tensor>> out;
  for (double cutoff : cutoffs) {
    std::vector<Tensor> level;
    for (const Tensor& image : dataset) {
      const Shape spatial = image.spatial_shape();
      FilterSpec filter;
      if (cutoff == 0.0) {
        Eigen::ArrayXd transfer = Eigen::ArrayXd::Ones(shape_size(spatial));
        transfer[spectrum_center_index(spatial)] = 0.0;
        filter = make_custom_filter(spatial, std::move(transfer), FilterKind::high_pass, 0.0);
      } else {
        filter = make_exponential_filter(spatial, cutoff, FilterKind::high_pass);
      }
      TensorD filtered = apply_filter(image.cast<double>(), filter);
      const double lo = filtered.data().minCoeff(), hi = filtered.data().maxCoeff();
      if (hi > lo)
        filtered.data() = (filtered.data() - lo) / (hi - lo);
      else
        filtered.data().setZero();
      level.push_back(filtered.cast<float>());
    }
    out.push_back(std::move(level));
  }
  return out;
}

PairedProbeReport compare_encoders(const Encoder& frepa, const Encoder& mae_style, const std::vector<Tensor>& train,
                                   const std::vector<Tensor>& heldout, const ProbeConfig& probe, int jobs) {
  if (heldout.empty()) throw Error("compare_encoders: empty held-out set");
  const BandSpec bands = make_band_spec(heldout.front().spatial_shape());
  PairedProbeReport r;
  r.frepa = evaluate_probe(frepa, train_probe_decoder(frepa, train, probe, jobs), heldout, bands, jobs);
  r.mae_style = evaluate_probe(mae_style, train_probe_decoder(mae_style, train, probe, jobs), heldout, bands, jobs);
  r.frepa.probe_seed = r.mae_style.probe_seed = probe.seed;
  r.delta = {r.frepa.mean.low - r.mae_style.mean.low, r.frepa.mean.medium - r.mae_style.mean.medium,
             r.frepa.mean.high - r.mae_style.mean.high};
  return r;
}

PairedProbeReport compare_pretrainings(const std::vector<Tensor>& train, const std::vector<Tensor>& heldout,
                                       const TrainConfig& config, const ProbeConfig& probe, int jobs) {
  const TrainConfig ablated = mae_style(config);
  const Checkpoint a = pretrain(train, config, {}, nullptr, jobs);
  const Checkpoint b = pretrain(train, ablated, {}, nullptr, jobs);
  PairedProbeReport r = compare_encoders(ModelEncoder(a.params, config.hessian_channel),
                                         ModelEncoder(b.params, ablated.hessian_channel), train, heldout, probe, jobs);
  r.frepa.config_hash = config_hash(config);
  r.mae_style.config_hash = config_hash(ablated);
  r.frepa.pretrain_seed = config.seed;
  r.mae_style.pretrain_seed = ablated.seed;
  return r;
}

}  // namespace frepa
