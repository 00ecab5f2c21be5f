// regiondiff: dataset synthesis, training, regional despeckling, evaluation
// and verification utilities.
//
// Exit codes: 0 success, 1 invalid invocation or configuration, 2 runtime
// failure (including a failed oracle-check).

#include "regiondiff/config.hpp"
#include "regiondiff/denoiser.hpp"
#include "regiondiff/io.hpp"
#include "regiondiff/metrics.hpp"
#include "regiondiff/noise_synth.hpp"
#include "regiondiff/regional.hpp"
#include "regiondiff/sampler.hpp"
#include "regiondiff/schedule.hpp"
#include "regiondiff/tiny_cnn.hpp"
#include "regiondiff/trainer.hpp"
#include "regiondiff/worker_pool.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace regiondiff;

namespace {

/// Bad flags, bad config, or a request that would clobber existing output.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flags shared by several subcommands. Each is optional so that only values
// given on the command line override the config file.
struct CommonFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps_T;
  std::optional<double> beta_start;
  std::optional<double> beta_end;
  bool overwrite = false;
};

struct SamplerFlags {
  std::optional<int> steps;
  std::optional<std::string> sampler;
  std::optional<double> eta;
  std::optional<std::string> variance;
};

struct RegionalFlags {
  std::optional<Index> window;
  std::optional<Index> stride;
  std::optional<int> workers;
};

void add_common(CLI::App* app, CommonFlags& f, bool with_overwrite = true) {
  app->add_option("--config", f.config, "JSON run configuration; flags override its values");
  app->add_option("--seed", f.seed, "Seed for every randomized path");
  app->add_option("--T", f.steps_T, "Diffusion steps T (default 1000)");
  app->add_option("--beta-start", f.beta_start, "First beta of the linear schedule (default 0.0001)");
  app->add_option("--beta-end", f.beta_end, "Last beta of the linear schedule (default 0.02)");
  if (with_overwrite) app->add_flag("--overwrite", f.overwrite, "Replace existing output files");
}

void add_sampler(CLI::App* app, SamplerFlags& f) {
  app->add_option("--steps", f.steps, "Reverse steps; must equal T for ddpm (default T)");
  app->add_option("--sampler", f.sampler, "Reverse sampler")->check(CLI::IsMember({"ddpm", "ddim"}));
  app->add_option("--eta", f.eta, "DDIM stochasticity in [0, 1] (default 0)");
  app->add_option("--variance", f.variance, "DDPM step variance")->check(CLI::IsMember({"beta", "posterior"}));
}

void add_regional(CLI::App* app, RegionalFlags& f) {
  app->add_option("--window", f.window, "Window side m (default 64)");
  app->add_option("--stride", f.stride, "Window stride n; m must be a multiple of n (default 16)");
  app->add_option("--workers", f.workers, "Parallel window evaluators (default: available cores)");
}

RunConfig build_config(const CommonFlags& c, const SamplerFlags* s = nullptr, const RegionalFlags* r = nullptr) {
  RunConfig cfg = c.config ? load_run_config(*c.config) : RunConfig{};
  if (c.seed) cfg.set_seed(*c.seed);
  if (c.steps_T) {
    cfg.schedule.steps = *c.steps_T;
    cfg.sampler.num_inference_steps = *c.steps_T;
  }
  if (c.beta_start) cfg.schedule.beta_start = *c.beta_start;
  if (c.beta_end) cfg.schedule.beta_end = *c.beta_end;
  if (s) {
    if (s->sampler) cfg.sampler.kind = parse_sampler_kind(*s->sampler);
    if (s->steps) cfg.sampler.num_inference_steps = *s->steps;
    if (s->eta) cfg.sampler.eta = *s->eta;
    if (s->variance) cfg.sampler.variance = parse_variance_choice(*s->variance);
  }
  if (r) {
    if (r->window) cfg.regional.window = *r->window;
    if (r->stride) cfg.regional.stride = *r->stride;
    if (r->workers) cfg.regional.workers = *r->workers;
  }
  cfg.validate();
  return cfg;
}

/// Relative output paths land in the output directory when one is set by the
/// environment or the config file.
fs::path output_path(const fs::path& out, const RunConfig& cfg) {
  if (out.is_absolute()) return out;
  const auto dir = resolve_output_dir(std::nullopt, cfg);
  return dir ? *dir / out : out;
}

void require_writable(const fs::path& path, bool overwrite) {
  if (!overwrite && fs::exists(path)) {
    throw UsageError("'" + path.string() + "' exists; pass --overwrite to replace it");
  }
}

std::optional<Rect> parse_roi(const std::optional<std::string>& text) {
  if (!text) return std::nullopt;
  Rect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(*text);
  if (!(in >> r.row >> c1 >> r.col >> c2 >> r.height >> c3 >> r.width) || c1 != ',' || c2 != ',' || c3 != ',') {
    throw UsageError("--roi expects row,col,height,width");
  }
  return r;
}

int worker_count(const RunConfig& cfg) {
  return cfg.regional.workers > 0 ? cfg.regional.workers : WorkerPool::default_workers();
}

// make-dataset -------------------------------------------------------------------

struct MakeDatasetArgs {
  CommonFlags common;
  std::string out_dir;
  int count = 100;
  Index height = 64;
  std::optional<Index> width;
  std::string kind = "gaussian";
  std::vector<double> sigmas{0.2};
  std::vector<int> looks{1};
  std::string format = "f32";
  std::optional<std::string> tile_manifest;
  Index patch = 64;
  std::optional<Index> patch_stride;
};

int run_make_dataset(const MakeDatasetArgs& a) {
  RunConfig cfg = build_config(a.common);
  const auto dir = resolve_output_dir(fs::path(a.out_dir), cfg);

  if (a.tile_manifest) {
    const DatasetManifest src = load_manifest(*a.tile_manifest);
    require_writable(*dir / "manifest.json", a.common.overwrite);
    const std::size_t n = tile_dataset(src, a.patch, a.patch_stride.value_or(a.patch), *dir, a.common.overwrite);
    std::cout << "wrote " << n << " patches to " << dir->string() << '\n';
    return 0;
  }

  if (a.count < 1 || a.height < 1 || a.width.value_or(a.height) < 1) throw UsageError("count and size must be >= 1");
  const DegradationKind kind = parse_degradation_kind(a.kind);
  std::vector<DegradationSpec> levels;
  if (kind == DegradationKind::gaussian_additive) {
    for (double s : a.sigmas) levels.push_back({kind, s, 1, 0});
  } else {
    for (int l : a.looks) levels.push_back({kind, 0.0, l, 0});
  }
  for (const DegradationSpec& d : levels) d.validate();
  require_writable(*dir / "manifest.json", a.common.overwrite);

  const std::string ext = "." + a.format;
  DatasetManifest manifest;
  manifest.base_dir = *dir;
  for (int i = 0; i < a.count; ++i) {
    Rng rng(mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i)));
    const ImageGrid<float> clean = make_texture<float>(a.height, a.width.value_or(a.height), rng);
    std::ostringstream stem;
    stem << std::setw(6) << std::setfill('0') << i;
    const fs::path clean_rel = fs::path("clean") / (stem.str() + ext);
    save_image(clean, *dir / clean_rel, std::nullopt, a.common.overwrite);
    for (std::size_t k = 0; k < levels.size(); ++k) {
      DegradationSpec spec = levels[k];
      spec.seed = mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(i) + 1 + (k << 32));
      const fs::path deg_rel = fs::path("degraded") / (stem.str() + "_" + std::to_string(k) + ext);
      save_image(degrade(clean, spec), *dir / deg_rel, std::nullopt, a.common.overwrite);
      manifest.entries.push_back({clean_rel, deg_rel, spec});
    }
  }
  save_manifest(manifest, *dir / "manifest.json", a.common.overwrite);
  std::cout << "wrote " << manifest.entries.size() << " pairs to " << dir->string() << '\n';
  return 0;
}

// train ----------------------------------------------------------------------------

struct TrainArgs {
  CommonFlags common;
  std::optional<std::string> manifest;
  std::string out;
  std::optional<std::string> init;
  std::optional<int> iterations;
  std::optional<double> lr;
  std::optional<Index> batch_size;
  int log_every = 100;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = build_config(a.common);
  if (a.iterations) cfg.training.num_iterations = *a.iterations;
  if (a.lr) cfg.training.learning_rate = *a.lr;
  if (a.batch_size) cfg.training.batch_size = *a.batch_size;
  if (a.manifest) cfg.dataset = *a.manifest;
  cfg.validate();
  if (!cfg.dataset) throw UsageError("train needs --manifest or a dataset entry in the config");
  const fs::path out = output_path(a.out, cfg);
  require_writable(out, a.common.overwrite);

  const DatasetManifest manifest = load_manifest(*cfg.dataset);
  if (manifest.entries.empty()) throw UsageError("manifest has no entries");
  std::vector<TrainingPair<float>> data;
  data.reserve(manifest.entries.size());
  for (const ManifestEntry& e : manifest.entries) {
    data.push_back({load_image<float>(manifest.resolve(e.clean)), load_image<float>(manifest.resolve(e.degraded))});
  }
  const Index channels = data.front().clean.channels();

  const NoiseSchedule s = cfg.schedule.build();
  TinyCnnDenoiser<float> model = a.init ? load_weights<float>(*a.init)
                                        : TinyCnnDenoiser<float>(TinyCnnShape{channels}, mix_seed(cfg.seed, 6));
  if (model.shape().channels != channels) throw UsageError("initial weights do not match the data channels");
  Trainer<float> trainer(model, s, cfg.training);
  Rng pick_rng(mix_seed(cfg.seed, 8));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);

  std::vector<TrainingPair<float>> batch;
  double running = 0.0;
  int window = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int it = 1; it <= cfg.training.num_iterations; ++it) {
    batch.clear();
    for (Index b = 0; b < cfg.training.batch_size; ++b) batch.push_back(data[pick(pick_rng)]);
    running += trainer.train_step(batch);
    ++window;
    if (a.log_every > 0 && (it % a.log_every == 0 || it == cfg.training.num_iterations)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << "iter " << it << " loss " << running / window << " elapsed_s " << secs << std::endl;
      running = 0.0;
      window = 0;
    }
  }
  save_weights(model, out, a.common.overwrite);
  std::cout << "saved weights to " << out.string() << '\n';
  return 0;
}

// despeckle ------------------------------------------------------------------------

struct DespeckleArgs {
  CommonFlags common;
  SamplerFlags sampler;
  RegionalFlags regional;
  std::string in;
  std::string out;
  std::optional<std::string> weights;
  std::string denoiser = "tiny_cnn";
  double mu0 = 0.0;
  double s0_sq = 1.0;
  std::optional<std::string> reference;
  std::optional<std::string> roi;
  bool quiet = false;
};

int run_despeckle(const DespeckleArgs& a) {
  RunConfig cfg = build_config(a.common, &a.sampler, &a.regional);
  const fs::path out = output_path(a.out, cfg);
  require_writable(out, a.common.overwrite);
  const std::optional<Rect> roi = parse_roi(a.roi);

  std::unique_ptr<Denoiser<float>> model;
  if (a.denoiser == "tiny_cnn") {
    if (!a.weights) throw UsageError("--weights is required for the tiny_cnn denoiser");
    model = std::make_unique<TinyCnnDenoiser<float>>(load_weights<float>(*a.weights));
  } else {
    model = std::make_unique<OracleGaussianDenoiser<float>>(OracleGaussianPrior{a.mu0, a.s0_sq});
  }

  const ImageGrid<float> noisy = load_image<float>(a.in);
  std::optional<ImageGrid<float>> reference;
  if (a.reference) {
    reference = load_image<float>(*a.reference);
    if (!reference->same_shape(noisy)) throw UsageError("--reference shape differs from --in");
  }
  const NoiseSchedule s = cfg.schedule.build();
  const int workers = worker_count(cfg);

  const ProgressFn progress = [&](int i, int n, int t) {
    if (!a.quiet) std::cerr << "step " << (i + 1) << '/' << n << " t=" << t << '\n';
  };
  const auto start = std::chrono::steady_clock::now();
  const ImageGrid<float> restored = regional_despeckle(noisy, *model, s, cfg.sampler, cfg.regional.window,
                                                       cfg.regional.stride, workers, progress);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_image(restored, out, std::nullopt, a.common.overwrite);
  std::cout << "wrote " << out.string() << " (" << restored.shape() << ", " << secs << " s)\n";

  if (reference) {
    EvaluateOptions opts;
    opts.roi = roi;
    opts.plan = plan_windows(noisy.height(), noisy.width(), cfg.regional.window, cfg.regional.stride);
    std::cout << evaluate(restored, &*reference, opts).to_text();
  }
  return 0;
}

// eval ----------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> restored;
  std::vector<std::string> reference;
  std::optional<std::string> roi;
  std::optional<Index> window;
  std::optional<std::string> out;
  bool overwrite = false;
};

int run_eval(const EvalArgs& a) {
  if (!a.reference.empty() && a.reference.size() != a.restored.size()) {
    throw UsageError("--reference must be given once per --restored image");
  }
  const std::optional<Rect> roi = parse_roi(a.roi);
  std::optional<fs::path> csv_path;
  if (a.out) {
    csv_path = output_path(*a.out, RunConfig{});
    require_writable(*csv_path, a.overwrite);
  }
  std::ostringstream csv;
  csv << MetricsReport::csv_header() << '\n';
  for (std::size_t i = 0; i < a.restored.size(); ++i) {
    const ImageGrid<float> img = load_image<float>(a.restored[i]);
    std::optional<ImageGrid<float>> ref;
    if (!a.reference.empty()) ref = load_image<float>(a.reference[i]);
    EvaluateOptions opts;
    opts.roi = roi;
    if (a.window) opts.plan = plan_windows(img.height(), img.width(), *a.window, *a.window);
    const MetricsReport report = evaluate(img, ref ? &*ref : nullptr, opts);
    std::cout << "image " << a.restored[i] << '\n' << report.to_text();
    csv << report.csv_row(a.restored[i]) << '\n';
  }
  if (csv_path) {
    if (csv_path->has_parent_path()) fs::create_directories(csv_path->parent_path());
    std::ofstream f(*csv_path, std::ios::trunc);
    f << csv.str();
    if (!f) throw IoError("cannot write '" + csv_path->string() + "'");
  }
  return 0;
}

// schedule-dump -------------------------------------------------------------------

struct ScheduleDumpArgs {
  CommonFlags common;
  std::optional<std::string> out;
};

int run_schedule_dump(const ScheduleDumpArgs& a) {
  RunConfig cfg = build_config(a.common);
  const std::string csv = cfg.schedule.build().to_csv();
  if (!a.out) {
    std::cout << csv;
    return 0;
  }
  const fs::path out = output_path(*a.out, cfg);
  require_writable(out, a.common.overwrite);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::trunc);
  f << csv;
  if (!f) throw IoError("cannot write '" + out.string() + "'");
  return 0;
}

// oracle-check --------------------------------------------------------------------

struct OracleCheckArgs {
  CommonFlags common;
  SamplerFlags sampler;
  Index chains = 1000;
  double mu0 = 0.3;
  double s0_sq = 0.04;
};

int run_oracle_check(const OracleCheckArgs& a) {
  RunConfig cfg = build_config(a.common, &a.sampler);
  if (a.chains < 2) throw UsageError("--chains must be >= 2");
  const NoiseSchedule s = cfg.schedule.build();
  const OracleGaussianDenoiser<double> oracle({a.mu0, a.s0_sq});

  // One pixel per chain; the oracle acts on every pixel independently.
  const ImageGrid<double> condition(1, a.chains, 1);
  const ImageGrid<double> out = sample(condition, oracle, s, cfg.sampler);

  const double n = static_cast<double>(a.chains);
  const double mean = out.array().mean();
  const double var = (out.array() - mean).square().sum() / (n - 1.0);
  const double se_mean = std::sqrt(a.s0_sq / n);
  const double se_var = a.s0_sq * std::sqrt(2.0 / (n - 1.0));
  const bool mean_ok = std::abs(mean - a.mu0) <= 3.0 * se_mean;
  const bool var_ok = std::abs(var - a.s0_sq) <= 3.0 * se_var;

  std::cout << std::setprecision(8);
  std::cout << "sampler " << to_string(cfg.sampler.kind) << " steps " << cfg.sampler.num_inference_steps << " T "
            << s.steps() << " chains " << a.chains << '\n';
  std::cout << "mean " << mean << " expected " << a.mu0 << " se " << se_mean << ' ' << (mean_ok ? "PASS" : "FAIL")
            << '\n';
  std::cout << "variance " << var << " expected " << a.s0_sq << " se " << se_var << ' '
            << (var_ok ? "PASS" : "FAIL") << '\n';
  std::cout << (mean_ok && var_ok ? "PASS" : "FAIL") << '\n';
  return mean_ok && var_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"regiondiff: regional conditional diffusion for speckle removal"};
  app.require_subcommand(1, 1);

  MakeDatasetArgs md;
  auto* make = app.add_subcommand("make-dataset", "Synthesize texture pairs, or tile an existing manifest");
  add_common(make, md.common);
  make->add_option("--out-dir", md.out_dir, "Directory for images and manifest.json")->required();
  make->add_option("--count", md.count, "Number of clean textures");
  make->add_option("--size", md.height, "Texture height (and width unless --width)");
  make->add_option("--width", md.width, "Texture width");
  make->add_option("--kind", md.kind, "Degradation")->check(CLI::IsMember({"gaussian", "gamma"}));
  make->add_option("--sigma", md.sigmas, "Gaussian noise levels; one degraded copy per level");
  make->add_option("--looks", md.looks, "Gamma speckle looks; one degraded copy per value");
  make->add_option("--format", md.format, "Image format")->check(CLI::IsMember({"f32", "png", "pgm"}));
  make->add_option("--tile-manifest", md.tile_manifest, "Cut the pairs of this manifest into patches instead");
  make->add_option("--patch", md.patch, "Patch side for --tile-manifest");
  make->add_option("--patch-stride", md.patch_stride, "Patch stride for --tile-manifest (default: patch)");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train the tiny_cnn noise estimator on a manifest");
  add_common(train, tr.common);
  train->add_option("--manifest", tr.manifest, "Dataset manifest (overrides the config's dataset)");
  train->add_option("--out", tr.out, "Weights file to write")->required();
  train->add_option("--init", tr.init, "Start from these weights");
  train->add_option("--iterations", tr.iterations, "Optimizer steps (default 1000)");
  train->add_option("--lr", tr.lr, "Adam learning rate (default 2e-5)");
  train->add_option("--batch-size", tr.batch_size, "Pairs per step (default 4)");
  train->add_option("--log-every", tr.log_every, "Print the mean loss every N iterations");

  DespeckleArgs de;
  auto* desp = app.add_subcommand("despeckle", "Restore an image of any size with overlapping windows");
  add_common(desp, de.common);
  add_sampler(desp, de.sampler);
  add_regional(desp, de.regional);
  desp->add_option("--in", de.in, "Degraded input image")->required();
  desp->add_option("--out", de.out, "Restored image to write")->required();
  desp->add_option("--weights", de.weights, "tiny_cnn weights file");
  desp->add_option("--denoiser", de.denoiser, "Noise estimator")
      ->check(CLI::IsMember({"tiny_cnn", "oracle_gaussian"}));
  desp->add_option("--mu0", de.mu0, "oracle_gaussian prior mean");
  desp->add_option("--s0-sq", de.s0_sq, "oracle_gaussian prior variance");
  desp->add_option("--reference", de.reference, "Clean image; prints a metric report when given");
  desp->add_option("--roi", de.roi, "ENL region row,col,height,width");
  desp->add_flag("--quiet", de.quiet, "Suppress per-timestep progress");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Metric report for restored images");
  eval->add_option("--restored", ev.restored, "Restored images")->required();
  eval->add_option("--reference", ev.reference, "Clean references, one per restored image");
  eval->add_option("--roi", ev.roi, "ENL region row,col,height,width");
  eval->add_option("--window", ev.window, "Window side for the seam ratio");
  eval->add_option("--out", ev.out, "CSV file with one row per image");
  eval->add_flag("--overwrite", ev.overwrite, "Replace an existing CSV");

  ScheduleDumpArgs sd;
  auto* dump = app.add_subcommand("schedule-dump", "Print the noise schedule as CSV");
  add_common(dump, sd.common);
  dump->add_option("--out", sd.out, "Write the CSV here instead of stdout");

  OracleCheckArgs oc;
  auto* oracle = app.add_subcommand("oracle-check", "Monte-Carlo check of the sampler against a Gaussian prior");
  add_common(oracle, oc.common, false);
  add_sampler(oracle, oc.sampler);
  oracle->add_option("--chains", oc.chains, "Independent chains");
  oracle->add_option("--t", oc.common.steps_T, "Diffusion steps T (alias of --T)");
  oracle->add_option("--mu0", oc.mu0, "Prior mean");
  oracle->add_option("--s0-sq", oc.s0_sq, "Prior variance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*make) return run_make_dataset(md);
    if (*train) return run_train(tr);
    if (*desp) return run_despeckle(de);
    if (*eval) return run_eval(ev);
    if (*dump) return run_schedule_dump(sd);
    if (*oracle) return run_oracle_check(oc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
