#include "frepa/trainer.hpp"

#include "frepa/augment.hpp"
#include "frepa/parallel.hpp"
#include "frepa/tensorio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

namespace frepa {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  if (epochs < 0) throw Error("epochs must be >= 0");
  if (weights.lambda1 < 0.0 || weights.lambda2 < 0.0 || weights.lambda3 < 0.0)
    throw Error("loss weights must be non-negative");
  corruption.validate();
}

TrainConfig mae_style(TrainConfig base) {
  base.corruption.branch_prob = 0.0;
  base.corruption.fill = FillMode::zero;
  base.weights = {0.0, 0.0, 0.0};
  base.consistency_two_views = false;
  base.hessian_channel = false;
  return base;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const char* where) {
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw Error(std::string("unknown ") + where + " field '" + k + "'");
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"seed", c.seed},
           {"weights", {{"lambda1", c.weights.lambda1}, {"lambda2", c.weights.lambda2}, {"lambda3", c.weights.lambda3}}},
           {"corruption",
            {{"freq_patch", c.corruption.freq_patch},
             {"spatial_patch", c.corruption.spatial_patch},
             {"dc_ratio", c.corruption.dc_ratio},
             {"sigma_ratio", c.corruption.sigma_ratio},
             {"mask_ratio", c.corruption.mask_ratio},
             {"branch_prob", c.corruption.branch_prob},
             {"fill", to_string(c.corruption.fill)}}},
           {"consistency_two_views", c.consistency_two_views},
           {"hessian_channel", c.hessian_channel},
           {"flip_rotate", c.flip_rotate},
           {"max_steps", c.max_steps},
           {"checkpoint_every", c.checkpoint_every}};
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j,
                 {"learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "batch_size", "epochs", "seed", "weights",
                  "corruption", "consistency_two_views", "hessian_channel", "flip_rotate", "max_steps",
                  "checkpoint_every"},
                 "config");
  read_field(j, "learning_rate", c.learning_rate);
  read_field(j, "adam_beta1", c.adam_beta1);
  read_field(j, "adam_beta2", c.adam_beta2);
  read_field(j, "adam_eps", c.adam_eps);
  read_field(j, "batch_size", c.batch_size);
  read_field(j, "epochs", c.epochs);
  read_field(j, "seed", c.seed);
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    reject_unknown(w, {"lambda1", "lambda2", "lambda3"}, "weights");
    read_field(w, "lambda1", c.weights.lambda1);
    read_field(w, "lambda2", c.weights.lambda2);
    read_field(w, "lambda3", c.weights.lambda3);
  }
  if (j.contains("corruption")) {
    const json& k = j.at("corruption");
    reject_unknown(k, {"freq_patch", "spatial_patch", "dc_ratio", "sigma_ratio", "mask_ratio", "branch_prob", "fill"},
                   "corruption");
    read_field(k, "freq_patch", c.corruption.freq_patch);
    read_field(k, "spatial_patch", c.corruption.spatial_patch);
    read_field(k, "dc_ratio", c.corruption.dc_ratio);
    read_field(k, "sigma_ratio", c.corruption.sigma_ratio);
    read_field(k, "mask_ratio", c.corruption.mask_ratio);
    read_field(k, "branch_prob", c.corruption.branch_prob);
    if (k.contains("fill")) c.corruption.fill = fill_from_string(k.at("fill").get<std::string>());
  }
  read_field(j, "consistency_two_views", c.consistency_two_views);
  read_field(j, "hessian_channel", c.hessian_channel);
  read_field(j, "flip_rotate", c.flip_rotate);
  read_field(j, "max_steps", c.max_steps);
  read_field(j, "checkpoint_every", c.checkpoint_every);
}

std::uint64_t config_hash(const TrainConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : json(c).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Adam

template <typename Scalar>
StackOptState<Scalar> init_opt_state(const ConvStack<Scalar>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

template <typename Scalar>
OptState<Scalar> init_opt_state(const ModelParams<Scalar>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

namespace {

template <typename Scalar>
void check_finite(const ConvStack<Scalar>& grads) {
  for (const auto& g : grads) {
    if (!g.weight.allFinite()) throw Error("non-finite gradient in " + g.name + ".weight");
    if (!g.bias.allFinite()) throw Error("non-finite gradient in " + g.name + ".bias");
  }
}

template <typename Scalar>
void adam_update(ConvStack<Scalar>& params, const ConvStack<Scalar>& grads, ConvStack<Scalar>& m,
                 ConvStack<Scalar>& v, std::int64_t step, const AdamHyper& h) {
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  const auto b1 = static_cast<Scalar>(h.beta1), b2 = static_cast<Scalar>(h.beta2);
  const auto lr = static_cast<Scalar>(h.learning_rate / c1);
  const auto inv_sqrt_c2 = static_cast<Scalar>(1.0 / std::sqrt(c2));
  const auto eps = static_cast<Scalar>(h.eps);
  auto update = [&](auto p, auto g, auto mm, auto vv) {
    mm = b1 * mm + (Scalar(1) - b1) * g;
    vv = b2 * vv + (Scalar(1) - b2) * g.square();
    p -= lr * mm / ((vv.sqrt() * inv_sqrt_c2) + eps);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    update(params[i].weight.array(), grads[i].weight.array(), m[i].weight.array(), v[i].weight.array());
    update(params[i].bias.array(), grads[i].bias.array(), m[i].bias.array(), v[i].bias.array());
  }
}

}  // namespace

template <typename Scalar>
void adam_step(ConvStack<Scalar>& params, const ConvStack<Scalar>& grads, StackOptState<Scalar>& state,
               const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size()) throw Error("adam_step: structure mismatch");
  check_finite(grads);
  ++state.step;
  adam_update(params, grads, state.m, state.v, state.step, hyper);
}

template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, OptState<Scalar>& state,
               const AdamHyper& hyper) {
  if (grads.encoder.size() != params.encoder.size() || grads.decoder.size() != params.decoder.size())
    throw Error("adam_step: structure mismatch");
  check_finite(grads.encoder);
  check_finite(grads.decoder);
  ++state.step;
  adam_update(params.encoder, grads.encoder, state.m.encoder, state.v.encoder, state.step, hyper);
  adam_update(params.decoder, grads.decoder, state.m.decoder, state.v.decoder, state.step, hyper);
}

template StackOptState<float> init_opt_state(const ConvStack<float>&);
template StackOptState<double> init_opt_state(const ConvStack<double>&);
template OptState<float> init_opt_state(const ModelParams<float>&);
template OptState<double> init_opt_state(const ModelParams<double>&);
template void adam_step(ConvStack<float>&, const ConvStack<float>&, StackOptState<float>&, const AdamHyper&);
template void adam_step(ConvStack<double>&, const ConvStack<double>&, StackOptState<double>&, const AdamHyper&);
template void adam_step(ModelParams<float>&, const ModelParams<float>&, OptState<float>&, const AdamHyper&);
template void adam_step(ModelParams<double>&, const ModelParams<double>&, OptState<double>&, const AdamHyper&);

// ---------------------------------------------------------------------------
// Training

json to_json(const StepMetrics& m) {
  return json{{"step", m.step},     {"l_rmse", m.l_rmse},   {"l_grad", m.l_grad},
              {"l_hfl", m.l_hfl},   {"l_con", m.l_con},     {"l_total", m.l_total},
              {"branch", {{"frequency", m.frequency}, {"spatial", m.spatial}}}};
}

Tensor network_input(const Tensor& corrupted, const Tensor& raw, bool hessian_channel) {
  Shape shape = raw.shape();
  shape[0] = 1;
  return augment_input(corrupted, hessian_channel ? hessian_response(raw) : Tensor(shape));
}

namespace {

struct SampleResult {
  ModelParams<float> grads;
  LossBundle<float> loss;
  Branch branch = Branch::frequency;
};

template <typename Scalar>
void accumulate(ConvStack<Scalar>& into, const ConvStack<Scalar>& from, Scalar scale) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    into[i].weight += scale * from[i].weight;
    into[i].bias += scale * from[i].bias;
  }
}

SampleResult sample_gradients(const ModelParams<float>& params, const Tensor& raw, const CounterRng& rng1,
                              const CounterRng& rng2, const TrainConfig& config, const std::vector<FilterSpec>& bank) {
  CounterRng r1 = rng1, r2 = rng2;
  const Tensor response = config.hessian_channel ? hessian_response(raw) : Tensor();
  auto input_for = [&](const Tensor& corrupted) {
    if (config.hessian_channel) return augment_input(corrupted, response);
    Shape shape = raw.shape();
    shape[0] = 1;
    return augment_input(corrupted, Tensor(shape));
  };

  const CorruptionOutput view1 = corrupt(raw, config.corruption, r1);
  ForwardResult<float> f1 = forward(params, input_for(view1.corrupted));
  const PatchMask* mask = view1.branch == Branch::spatial ? &view1.mask : nullptr;

  SampleResult out;
  out.branch = view1.branch;
  if (config.consistency_two_views && config.weights.lambda3 != 0.0) {
    const CorruptionOutput view2 = corrupt(raw, config.corruption, r2);
    ForwardResult<float> f2 = encode(params, input_for(view2.corrupted));
    out.loss = loss_total(f1.reconstruction, raw, mask, &f1.embedding, &f2.embedding, config.weights, bank);
    BackwardResult<float> b1 = backward(params, f1.cache, out.loss.d_pred, out.loss.d_embed1);
    BackwardResult<float> b2 = backward(params, f2.cache, Tensor(), out.loss.d_embed2);
    accumulate(b1.grads.encoder, b2.grads.encoder, 1.0f);
    out.grads = std::move(b1.grads);
  } else {
    out.loss = loss_total<float>(f1.reconstruction, raw, mask, nullptr, nullptr, config.weights, bank);
    out.grads = backward(params, f1.cache, out.loss.d_pred, Tensor()).grads;
  }
  return out;
}

}  // namespace

StepMetrics train_step(ModelParams<float>& params, OptState<float>& state, std::span<const Tensor> batch,
                       const CounterRng& rng, const TrainConfig& config, int jobs) {
  if (batch.empty()) throw Error("train_step: empty batch");
  const Shape shape = batch.front().shape();
  for (const Tensor& t : batch)
    if (t.shape() != shape) throw Error("train_step: batch images must share one shape");
  const std::vector<FilterSpec> bank = make_hfl_bank(batch.front().spatial_shape());

  const auto n = static_cast<Index>(batch.size());
  std::vector<SampleResult> results(static_cast<std::size_t>(n));
  parallel_for(n, jobs, [&](Index i) {
    results[static_cast<std::size_t>(i)] = sample_gradients(params, batch[static_cast<std::size_t>(i)],
                                                            rng.fork(static_cast<std::uint64_t>(2 * i)),
                                                            rng.fork(static_cast<std::uint64_t>(2 * i + 1)), config, bank);
  });

  StepMetrics metrics;
  metrics.step = state.step + 1;
  ModelParams<float> grads = zeros_like(params);
  const float scale = 1.0f / static_cast<float>(n);
  for (const SampleResult& r : results) {
    accumulate(grads.encoder, r.grads.encoder, scale);
    accumulate(grads.decoder, r.grads.decoder, scale);
    metrics.l_rmse += r.loss.rmse / static_cast<double>(n);
    metrics.l_grad += r.loss.grad / static_cast<double>(n);
    metrics.l_hfl += r.loss.hfl / static_cast<double>(n);
    metrics.l_con += r.loss.consistency / static_cast<double>(n);
    metrics.l_total += r.loss.total / static_cast<double>(n);
    (r.branch == Branch::frequency ? metrics.frequency : metrics.spatial) += 1;
    if (!r.loss.d_embed1.empty())
      metrics.embed_cotangent = std::max<double>(metrics.embed_cotangent, r.loss.d_embed1.data().abs().maxCoeff());
  }
  if (!std::isfinite(metrics.l_total)) throw Error("non-finite training loss at step " + std::to_string(metrics.step));
  adam_step(params, grads, state, adam_hyper(config));
  return metrics;
}

Checkpoint initial_checkpoint(Index image_channels, const TrainConfig& config) {
  Checkpoint c;
  c.params = init_model<float>(image_channels + 1, image_channels, config.seed);
  c.opt = init_opt_state(c.params);
  return c;
}

Index steps_per_epoch(Index dataset_size, const TrainConfig& config) {
  return (dataset_size + config.batch_size - 1) / config.batch_size;
}

Index total_steps(Index dataset_size, const TrainConfig& config) {
  const Index all = config.epochs * steps_per_epoch(dataset_size, config);
  return config.max_steps > 0 ? std::min(all, config.max_steps) : all;
}

Checkpoint pretrain(const std::vector<Tensor>& dataset, const TrainConfig& config, const PretrainHooks& hooks,
                    const Checkpoint* resume, int jobs) {
  config.validate();
  if (dataset.empty()) throw Error("pretrain: empty dataset");
  Checkpoint state = resume ? *resume : initial_checkpoint(dataset.front().channels(), config);
  const auto n = static_cast<Index>(dataset.size());
  const Index per_epoch = steps_per_epoch(n, config);
  const Index total = total_steps(n, config);

  std::vector<Index> order(static_cast<std::size_t>(n));
  Index order_epoch = -1;
  std::vector<Tensor> batch;
  for (Index step = state.step; step < total; ++step) {
    const Index epoch = step / per_epoch;
    if (epoch != order_epoch) {
      std::iota(order.begin(), order.end(), Index{0});
      CounterRng shuffle(config.seed, {static_cast<std::uint64_t>(Stream::shuffle), static_cast<std::uint64_t>(epoch)});
      for (Index i = n - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(shuffle.below(static_cast<std::uint64_t>(i + 1)))]);
      order_epoch = epoch;
    }
    const Index first = (step % per_epoch) * config.batch_size;
    const Index last = std::min(first + config.batch_size, n);
    batch.clear();
    for (Index pos = first; pos < last; ++pos) {
      const Tensor& img = dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])];
      if (config.flip_rotate) {
        CounterRng aug(config.seed, {static_cast<std::uint64_t>(Stream::flip_rotate), static_cast<std::uint64_t>(epoch),
                                     static_cast<std::uint64_t>(pos)});
        batch.push_back(random_flip_rotate(img, aug));
      } else {
        batch.push_back(img);
      }
    }
    const CounterRng rng(config.seed, {static_cast<std::uint64_t>(Stream::corrupt), static_cast<std::uint64_t>(step)});
    StepMetrics m = train_step(state.params, state.opt, batch, rng, config, jobs);
    m.step = step + 1;
    state.step = step + 1;
    if (hooks.on_step) hooks.on_step(m);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && state.step % config.checkpoint_every == 0)
      hooks.on_checkpoint(state);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoint files

namespace {

Tensor weight_tensor(const ConvLayer<float>& l) {
  return Tensor({l.out_channels, l.in_channels, 3, 3},
                Eigen::Map<const Tensor::Array>(l.weight.data(), l.weight.size()));
}

Tensor bias_tensor(const ConvLayer<float>& l) {
  return Tensor({l.out_channels}, Eigen::Map<const Tensor::Array>(l.bias.data(), l.bias.size()));
}

json write_stack(const std::filesystem::path& dir, const ConvStack<float>& stack, const std::string& stage,
                 const std::string& prefix) {
  json layers = json::array();
  for (const auto& l : stack) {
    const std::string wfile = prefix + l.name + ".weight.frpt", bfile = prefix + l.name + ".bias.frpt";
    write_tensor(dir / wfile, weight_tensor(l));
    write_tensor(dir / bfile, bias_tensor(l));
    layers.push_back({{"name", l.name},
                      {"stage", stage},
                      {"in_channels", l.in_channels},
                      {"out_channels", l.out_channels},
                      {"stride", l.stride},
                      {"upsample", l.upsample},
                      {"activation", l.activation},
                      {"weight", {{"file", wfile}, {"shape", weight_tensor(l).shape()}}},
                      {"bias", {{"file", bfile}, {"shape", bias_tensor(l).shape()}}}});
  }
  return layers;
}

ConvStack<float> read_stack(const std::filesystem::path& dir, const json& layers, const std::string& stage) {
  ConvStack<float> stack;
  for (const auto& j : layers) {
    if (j.at("stage") != stage) continue;
    ConvLayer<float> l;
    l.name = j.at("name").get<std::string>();
    l.in_channels = j.at("in_channels").get<Index>();
    l.out_channels = j.at("out_channels").get<Index>();
    l.stride = j.at("stride").get<Index>();
    l.upsample = j.at("upsample").get<bool>();
    l.activation = j.at("activation").get<bool>();
    const Tensor w = read_tensor(dir / j.at("weight").at("file").get<std::string>());
    const Tensor b = read_tensor(dir / j.at("bias").at("file").get<std::string>());
    if (w.shape() != Shape{l.out_channels, l.in_channels, 3, 3} || b.shape() != Shape{l.out_channels})
      throw Error(dir.string() + ": tensor shapes of layer " + l.name + " do not match the index");
    l.weight = Eigen::Map<const ConvLayer<float>::Matrix>(w.data().data(), l.out_channels, l.in_channels * 9);
    l.bias = Eigen::Map<const ConvLayer<float>::Vector>(b.data().data(), l.out_channels);
    stack.push_back(std::move(l));
  }
  return stack;
}

ModelParams<float> read_model(const std::filesystem::path& dir, const json& layers, const std::string& prefix_unused,
                              double slope, std::uint64_t seed) {
  (void)prefix_unused;
  return {read_stack(dir, layers, "encoder"), read_stack(dir, layers, "decoder"), slope, seed};
}

json write_model(const std::filesystem::path& dir, const ModelParams<float>& p, const std::string& prefix) {
  json layers = write_stack(dir, p.encoder, "encoder", prefix);
  for (auto& l : write_stack(dir, p.decoder, "decoder", prefix)) layers.push_back(std::move(l));
  return layers;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  json index{{"format", "frpt-checkpoint/1"},
             {"seed", ckpt.params.seed},
             {"step", ckpt.step},
             {"negative_slope", ckpt.params.negative_slope},
             {"layers", write_model(dir, ckpt.params, "")},
             {"adam",
              {{"step", ckpt.opt.step},
               {"m", write_model(dir, ckpt.opt.m, "adam_m.")},
               {"v", write_model(dir, ckpt.opt.v, "adam_v.")}}}};
  std::ofstream out(dir / "index.json");
  if (!out) throw Error("cannot write " + (dir / "index.json").string());
  out << index.dump(2) << '\n';
}

Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw Error("cannot open checkpoint index " + (dir / "index.json").string());
  json index;
  try {
    in >> index;
    Checkpoint c;
    const double slope = index.at("negative_slope").get<double>();
    const auto seed = index.at("seed").get<std::uint64_t>();
    c.step = index.at("step").get<Index>();
    c.params = read_model(dir, index.at("layers"), "", slope, seed);
    if (index.contains("adam")) {
      const json& a = index.at("adam");
      c.opt.step = a.at("step").get<std::int64_t>();
      c.opt.m = read_model(dir, a.at("m"), "", slope, seed);
      c.opt.v = read_model(dir, a.at("v"), "", slope, seed);
    } else {
      c.opt = init_opt_state(c.params);
    }
    return c;
  } catch (const json::exception& e) {
    throw Error((dir / "index.json").string() + ": " + e.what());
  }
}

}  // namespace frepa
