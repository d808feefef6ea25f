#include "frepa/cli.hpp"

#include "frepa/corruption.hpp"
#include "frepa/gradcheck.hpp"
#include "frepa/parallel.hpp"
#include "frepa/probe.hpp"
#include "frepa/spectral.hpp"
#include "frepa/synthetic.hpp"
#include "frepa/tensorio.hpp"
#include "frepa/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace frepa {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Failed numerical gate; mapped to the data-error exit code.
struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int effective_jobs(int requested) {
  const char* env = std::getenv("FREPA_NO_PARALLEL");
  if (env && std::string(env) == "1") return 1;
  return std::max(1, requested);
}

std::string numbered(Index i, const char* ext = ".frpt") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04lld%s", static_cast<long long>(i), ext);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// Provenance record written once per run.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string started = utc_now();
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  json to_json() const {
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return json{{"command", command},     {"argv", argv},       {"config_hash", hex64(config_hash)},
                {"seed", seed},           {"inputs", inputs},   {"outputs", outputs},
                {"tool_version", kToolVersion},
                {"wall_clock", {{"started_utc", started}, {"seconds", seconds}}}};
  }

  void write(const fs::path& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
  }
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

TrainConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  try {
    return read_json(path).get<TrainConfig>();
  } catch (const json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

std::vector<Tensor> load_dataset(const fs::path& manifest, std::vector<ManifestEntry>* entries_out = nullptr) {
  if (!fs::exists(manifest)) throw Error("manifest not found: " + manifest.string());
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw Error(manifest.string() + ": no entries");
  std::vector<Tensor> data;
  for (const auto& e : entries) data.push_back(load_entry(e));
  if (entries_out) *entries_out = entries;
  return data;
}

std::vector<ManifestEntry> write_tensors(const fs::path& dir, const std::vector<Tensor>& tensors,
                                         const std::string& modality) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const fs::path p = dir / numbered(static_cast<Index>(i));
    write_tensor(p, tensors[i]);
    entries.push_back({p, modality, "none"});
  }
  write_manifest(dir / "manifest.json", entries);
  return entries;
}

json mask_json(const PatchMask& m) {
  std::vector<Index> masked;
  for (std::size_t i = 0; i < m.masked.size(); ++i)
    if (m.masked[i]) masked.push_back(static_cast<Index>(i));
  return json{{"domain", m.domain == MaskDomain::frequency ? "frequency" : "spatial"},
              {"grid", m.grid},
              {"patch", m.patch},
              {"masked", masked}};
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string manifest, out;
  Index size = 512;
  Index synthetic = 0;
  Index channels = 1;
  std::uint64_t seed = 0;
};

void run_preprocess(const PreprocessArgs& a, RunManifest& run) {
  std::vector<Tensor> images;
  if (a.synthetic > 0) {
    images = synthetic_dataset(a.synthetic, a.size, a.seed, a.channels);
  } else {
    if (a.manifest.empty()) throw CLI::ValidationError("preprocess", "either --manifest or --synthetic is required");
    run.inputs.push_back(a.manifest);
    for (const Tensor& t : load_dataset(a.manifest)) images.push_back(resize_pad(t, a.size));
  }
  write_tensors(a.out, images, a.synthetic > 0 ? "synthetic" : "image");
  run.seed = a.seed;
  run.outputs.push_back(a.out);
}

struct CorruptArgs {
  std::string in, out, config, branch = "auto";
  std::uint64_t seed = 0;
  int jobs = 1;
};

void run_corrupt(const CorruptArgs& a, RunManifest& run) {
  const TrainConfig cfg = load_config(a.config);
  cfg.corruption.validate();
  const BranchPolicy policy = a.branch == "freq"      ? BranchPolicy::frequency
                              : a.branch == "spatial" ? BranchPolicy::spatial
                                                      : BranchPolicy::automatic;
  const std::vector<Tensor> images = load_dataset(a.in);
  std::vector<CorruptionOutput> results(images.size());
  parallel_for(static_cast<Index>(images.size()), effective_jobs(a.jobs), [&](Index i) {
    CounterRng rng(a.seed, {static_cast<std::uint64_t>(Stream::corrupt), static_cast<std::uint64_t>(i)});
    results[static_cast<std::size_t>(i)] = corrupt(images[static_cast<std::size_t>(i)], cfg.corruption, rng, policy);
  });
  std::vector<Tensor> tensors;
  for (auto& r : results) tensors.push_back(r.corrupted);
  write_tensors(a.out, tensors, "corrupted");
  std::ofstream log(fs::path(a.out) / "corruption.jsonl");
  if (!log) throw Error("cannot write corruption.jsonl in " + a.out);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    log << json{{"index", i},
                {"branch", to_string(r.branch)},
                {"seed_trace", {{"key", r.seed_trace.key}, {"counter", r.seed_trace.counter}, {"draws", r.seed_trace.draws}}},
                {"mask", mask_json(r.mask)},
                {"imag_residue", r.imag_residue},
                {"mean_drift", r.mean_drift}}
               .dump()
        << '\n';
  }
  run.seed = a.seed;
  run.config_hash = config_hash(cfg);
  run.inputs.push_back(a.in);
  run.outputs.push_back(a.out);
}

struct FilterBankArgs {
  std::string out;
  Index height = 64, width = 0;
};

void run_filter_bank(const FilterBankArgs& a, RunManifest& run) {
  const Shape spatial{a.height, a.width > 0 ? a.width : a.height};
  fs::create_directories(a.out);
  auto dump = [&](const std::string& name, const FilterSpec& f) {
    write_tensor(fs::path(a.out) / (name + ".frpt"),
                 Tensor({1, spatial[0], spatial[1]}, f.transfer.cast<float>()));
    return json{{"file", name + ".frpt"}, {"kind", f.kind == FilterKind::low_pass ? "low_pass" : "high_pass"},
                {"cutoff", f.cutoff}};
  };
  json index{{"spatial", spatial}, {"hfl", json::array()}};
  const auto bank = make_hfl_bank(spatial);
  for (std::size_t k = 0; k < bank.size(); ++k) index["hfl"].push_back(dump("hfl_" + std::to_string(k), bank[k]));
  const BandSpec bands = make_band_spec(spatial);
  index["bands"] = {{"low", dump("band_low", bands.low)},
                    {"medium", dump("band_medium", bands.medium)},
                    {"high", dump("band_high", bands.high)}};
  std::ofstream(fs::path(a.out) / "filters.json") << index.dump(2) << '\n';
  run.outputs.push_back(a.out);
}

struct PretrainArgs {
  std::string manifest, config, out, resume;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  Index log_every = 100;
};

void run_pretrain(const PretrainArgs& a, RunManifest& run, std::ostream& err) {
  TrainConfig cfg = load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const std::vector<Tensor> data = load_dataset(a.manifest);
  const fs::path out(a.out);
  fs::create_directories(out);

  std::optional<Checkpoint> resume;
  std::vector<std::string> prior_metrics;
  if (!a.resume.empty()) {
    resume = read_checkpoint(a.resume);
    const fs::path log = fs::path(a.resume).parent_path() / "metrics.jsonl";
    std::ifstream in(log);
    std::string line;
    while (static_cast<Index>(prior_metrics.size()) < resume->step && std::getline(in, line))
      prior_metrics.push_back(line);
    if (static_cast<Index>(prior_metrics.size()) != resume->step)
      throw Error(log.string() + ": expected " + std::to_string(resume->step) + " metric lines before resume point");
    run.inputs.push_back(a.resume);
  }

  std::ofstream(out / "config.json") << json(cfg).dump(2) << '\n';
  std::ofstream metrics(out / "metrics.jsonl");
  if (!metrics) throw Error("cannot write " + (out / "metrics.jsonl").string());
  for (const auto& l : prior_metrics) metrics << l << '\n';

  const Index total = total_steps(static_cast<Index>(data.size()), cfg);
  PretrainHooks hooks;
  hooks.on_step = [&](const StepMetrics& m) {
    metrics << to_json(m).dump() << '\n';
    if (a.log_every > 0 && (m.step % a.log_every == 0 || m.step == total))
      err << "step " << m.step << "/" << total << " l_total " << m.l_total << '\n';
  };
  hooks.on_checkpoint = [&](const Checkpoint& c) {
    metrics.flush();
    char name[32];
    std::snprintf(name, sizeof name, "step_%06lld", static_cast<long long>(c.step));
    write_checkpoint(out / name, c);
  };
  const Checkpoint final_ckpt = pretrain(data, cfg, hooks, resume ? &*resume : nullptr, effective_jobs(a.jobs));
  metrics.flush();
  write_checkpoint(out / "final", final_ckpt);

  run.seed = cfg.seed;
  run.config_hash = config_hash(cfg);
  run.inputs.push_back(a.manifest);
  if (!a.config.empty()) run.inputs.push_back(a.config);
  run.outputs.push_back(a.out);
}

struct ProbeArgs {
  std::string encoder, manifest, train_manifest, out, hessian = "auto";
  std::uint64_t seed = 0;
  Index steps = 1500;
  Index batch_size = 8;
  double learning_rate = 1e-3;
  int jobs = 1;
};

void run_probe(const ProbeArgs& a, RunManifest& run) {
  const fs::path ckpt_dir(a.encoder);
  const Checkpoint ckpt = read_checkpoint(ckpt_dir);
  std::optional<TrainConfig> trained_with;
  for (const fs::path& p : {ckpt_dir / "config.json", ckpt_dir.parent_path() / "config.json"})
    if (fs::exists(p)) {
      trained_with = load_config(p.string());
      break;
    }
  const bool hessian = a.hessian == "on" || (a.hessian == "auto" && (!trained_with || trained_with->hessian_channel));

  const std::vector<Tensor> eval = load_dataset(a.manifest);
  const std::vector<Tensor> train = a.train_manifest.empty() ? eval : load_dataset(a.train_manifest);
  const ModelEncoder encoder(ckpt.params, hessian);
  const ProbeConfig pc{a.steps, a.batch_size, a.learning_rate, a.seed};
  const int jobs = effective_jobs(a.jobs);
  const ProbeDecoder dec = train_probe_decoder(encoder, train, pc, jobs);
  ProbeReport report = evaluate_probe(encoder, dec, eval, make_band_spec(eval.front().spatial_shape()), jobs);
  report.probe_seed = a.seed;
  if (trained_with) {
    report.config_hash = config_hash(*trained_with);
    report.pretrain_seed = trained_with->seed;
  }
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream(out) << to_json(report).dump(2) << '\n';

  run.seed = a.seed;
  run.config_hash = report.config_hash;
  run.inputs = {a.encoder, a.manifest};
  if (!a.train_manifest.empty()) run.inputs.push_back(a.train_manifest);
  run.outputs.push_back(a.out);
}

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string precision = "f64";
  Index size = 16;
  std::string out;
};

void run_gradcheck_cmd(const GradcheckArgs& a, RunManifest& run, std::ostream& out) {
  GradcheckOptions opt = a.precision == "f32" ? GradcheckOptions::single() : GradcheckOptions{};
  opt.size = a.size;
  const auto entries = run_gradcheck(a.seed, opt);
  double worst = 0.0;
  json report = json::array();
  out << std::left << std::setw(28) << "name" << std::setw(14) << "max_rel_err" << "checked\n";
  for (const auto& e : entries) {
    out << std::left << std::setw(28) << e.name << std::setw(14) << std::scientific << std::setprecision(3)
        << e.max_rel_error << std::defaultfloat << e.checked << '\n';
    report.push_back({{"name", e.name}, {"max_rel_error", e.max_rel_error}, {"checked", e.checked}});
    worst = std::max(worst, e.max_rel_error);
  }
  out << "worst " << std::scientific << worst << std::defaultfloat << (worst < 1e-3 ? " PASS" : " FAIL") << '\n';
  run.seed = a.seed;
  if (!a.out.empty()) {
    std::ofstream(a.out) << report.dump(2) << '\n';
    run.outputs.push_back(a.out);
  }
  if (!(worst < 1e-3)) throw CheckFailed("gradient check failed: worst relative error " + std::to_string(worst));
}

struct RobustnessArgs {
  std::string manifest, out;
  std::vector<double> cutoffs{0.0, 2.0, 4.0, 8.0, 16.0};
};

void run_robustness(const RobustnessArgs& a, RunManifest& run) {
  const std::vector<Tensor> images = load_dataset(a.manifest);
  const auto levels = highpass_robustness_set(images, a.cutoffs);
  json index = json::array();
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const std::string dir = "cutoff_" + std::to_string(k);
    write_tensors(fs::path(a.out) / dir, levels[k], "highpass");
    index.push_back({{"cutoff", a.cutoffs[k]}, {"manifest", dir + "/manifest.json"}});
  }
  std::ofstream(fs::path(a.out) / "levels.json") << index.dump(2) << '\n';
  run.inputs.push_back(a.manifest);
  run.outputs.push_back(a.out);
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-aware masked pretraining toolkit", "frepa"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  PreprocessArgs pre;
  auto* c_pre = app.add_subcommand("preprocess", "Normalize, resize and pad images to FRPT, or generate synthetic data");
  c_pre->add_option("--manifest", pre.manifest, "Input manifest (PNG or FRPT entries)");
  c_pre->add_option("--out", pre.out, "Output directory")->required();
  c_pre->add_option("--size", pre.size, "Target side length")->capture_default_str()->check(CLI::PositiveNumber);
  c_pre->add_option("--synthetic", pre.synthetic, "Generate this many synthetic textures instead of reading a manifest");
  c_pre->add_option("--channels", pre.channels, "Channels of synthetic textures")->capture_default_str();
  c_pre->add_option("--seed", pre.seed, "Seed for synthetic textures")->capture_default_str();

  CorruptArgs cor;
  auto* c_cor = app.add_subcommand("corrupt", "Corrupt every manifest entry once");
  c_cor->add_option("--in", cor.in, "Input manifest")->required();
  c_cor->add_option("--out", cor.out, "Output directory")->required();
  c_cor->add_option("--seed", cor.seed, "Random seed")->required();
  c_cor->add_option("--branch", cor.branch, "Branch policy")->check(CLI::IsMember({"auto", "freq", "spatial"}))
      ->capture_default_str();
  c_cor->add_option("--config", cor.config, "Training config JSON (corruption section is used)");
  c_cor->add_option("--jobs", cor.jobs, "Worker threads")->capture_default_str();

  FilterBankArgs fb;
  auto* c_fb = app.add_subcommand("filter-bank", "Dump the loss filter bank and probe bands as FRPT transfers");
  c_fb->add_option("--size", fb.height, "Spectrum height (and width unless --width)")->capture_default_str()
      ->check(CLI::Range(4, 8192));
  c_fb->add_option("--width", fb.width, "Spectrum width")->check(CLI::Range(4, 8192));
  c_fb->add_option("--out", fb.out, "Output directory")->required();

  PretrainArgs pt;
  auto* c_pt = app.add_subcommand("pretrain", "Run the pretraining loop");
  c_pt->add_option("--manifest", pt.manifest, "Training manifest")->required();
  c_pt->add_option("--config", pt.config, "Training config JSON");
  c_pt->add_option("--out", pt.out, "Output directory")->required();
  c_pt->add_option("--resume", pt.resume, "Checkpoint directory to resume from");
  c_pt->add_option("--seed", pt.seed, "Override the config seed");
  c_pt->add_option("--jobs", pt.jobs, "Worker threads")->capture_default_str();
  c_pt->add_option("--log-every", pt.log_every, "Progress line interval on stderr (0: silent)")->capture_default_str();

  ProbeArgs pr;
  auto* c_pr = app.add_subcommand("probe", "Train a probe decoder on a frozen encoder and report band similarity");
  c_pr->add_option("--encoder", pr.encoder, "Checkpoint directory")->required();
  c_pr->add_option("--manifest", pr.manifest, "Evaluation manifest")->required();
  c_pr->add_option("--train-manifest", pr.train_manifest, "Probe training manifest (default: evaluation manifest)");
  c_pr->add_option("--out", pr.out, "Report JSON path")->required();
  c_pr->add_option("--seed", pr.seed, "Probe seed")->capture_default_str();
  c_pr->add_option("--steps", pr.steps, "Probe decoder steps")->capture_default_str();
  c_pr->add_option("--batch-size", pr.batch_size, "Probe batch size")->capture_default_str();
  c_pr->add_option("--lr", pr.learning_rate, "Probe learning rate")->capture_default_str();
  c_pr->add_option("--hessian", pr.hessian, "Extra input channel: auto reads the run config")
      ->check(CLI::IsMember({"auto", "on", "off"}))
      ->capture_default_str();
  c_pr->add_option("--jobs", pr.jobs, "Worker threads")->capture_default_str();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  c_gc->add_option("--seed", gc.seed, "Random seed")->capture_default_str();
  c_gc->add_option("--size", gc.size, "Image side length (multiple of 8)")->capture_default_str()
      ->check(CLI::Range(8, 64));
  c_gc->add_option("--precision", gc.precision, "Arithmetic of the checked model and losses")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
  c_gc->add_option("--out", gc.out, "Optional JSON report path");

  RobustnessArgs rb;
  auto* c_rb = app.add_subcommand("robustness", "Build progressively high-passed copies of a dataset");
  c_rb->add_option("--manifest", rb.manifest, "Input manifest")->required();
  c_rb->add_option("--out", rb.out, "Output directory")->required();
  c_rb->add_option("--cutoffs", rb.cutoffs, "Increasing high-pass cutoffs in bins")->delimiter(',')
      ->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  RunManifest run;
  run.argv = args;
  fs::path manifest_path;
  bool manifest_to_err = false;
  try {
    if (*c_pre) {
      run.command = "preprocess";
      run_preprocess(pre, run);
      manifest_path = fs::path(pre.out) / "run_manifest.json";
    } else if (*c_cor) {
      run.command = "corrupt";
      run_corrupt(cor, run);
      manifest_path = fs::path(cor.out) / "run_manifest.json";
    } else if (*c_fb) {
      run.command = "filter-bank";
      run_filter_bank(fb, run);
      manifest_path = fs::path(fb.out) / "run_manifest.json";
    } else if (*c_pt) {
      run.command = "pretrain";
      run_pretrain(pt, run, err);
      manifest_path = fs::path(pt.out) / "run_manifest.json";
    } else if (*c_pr) {
      run.command = "probe";
      run_probe(pr, run);
      manifest_path = fs::path(pr.out + ".run_manifest.json");
    } else if (*c_gc) {
      run.command = "gradcheck";
      manifest_to_err = gc.out.empty();
      if (!manifest_to_err) manifest_path = fs::path(gc.out + ".run_manifest.json");
      try {
        run_gradcheck_cmd(gc, run, out);
      } catch (const CheckFailed&) {
        if (manifest_to_err)
          err << run.to_json().dump() << '\n';
        else
          run.write(manifest_path);
        throw;
      }
    } else if (*c_rb) {
      run.command = "robustness";
      run_robustness(rb, run);
      manifest_path = fs::path(rb.out) / "run_manifest.json";
    }
    if (manifest_to_err)
      err << run.to_json().dump() << '\n';
    else
      run.write(manifest_path);
    return 0;
  } catch (const CLI::ValidationError& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return 1;
  } catch (const CheckFailed& e) {
    err << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace frepa
