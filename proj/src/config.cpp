#include "regiondiff/config.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace regiondiff {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<std::string_view> known, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    bool found = false;
    for (std::string_view k : known) found = found || key == k;
    if (!found) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  sampler.seed = s;
  training.seed = s;
}

void RunConfig::validate() const {
  try {
    const NoiseSchedule s = schedule.build();
    sampler.validate(s);
    training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (regional.window < 1 || regional.stride < 1 || regional.window % regional.stride != 0) {
    throw ConfigError("regional: window must be a positive multiple of stride");
  }
  if (regional.workers < 0) throw ConfigError("regional: workers must be >= 0");
  if (dataset && !std::filesystem::exists(*dataset)) {
    throw ConfigError("dataset manifest '" + dataset->string() + "' does not exist");
  }
}

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(j, {"seed", "output_dir", "dataset", "schedule", "sampler", "regional", "training"}, "config");

  RunConfig cfg;
  try {
    cfg.set_seed(j.value("seed", std::uint64_t{0}));
    if (j.contains("output_dir")) cfg.output_dir = resolve(base_dir, j["output_dir"].get<std::string>());
    if (j.contains("dataset")) cfg.dataset = resolve(base_dir, j["dataset"].get<std::string>());
    if (j.contains("schedule")) {
      const json& s = j["schedule"];
      reject_unknown(s, {"T", "beta_start", "beta_end"}, "schedule");
      cfg.schedule.steps = s.value("T", cfg.schedule.steps);
      cfg.schedule.beta_start = s.value("beta_start", cfg.schedule.beta_start);
      cfg.schedule.beta_end = s.value("beta_end", cfg.schedule.beta_end);
    }
    cfg.sampler.num_inference_steps = cfg.schedule.steps;
    if (j.contains("sampler")) {
      const json& s = j["sampler"];
      reject_unknown(s, {"kind", "steps", "eta", "variance"}, "sampler");
      if (s.contains("kind")) cfg.sampler.kind = parse_sampler_kind(s["kind"].get<std::string>());
      cfg.sampler.num_inference_steps = s.value("steps", cfg.sampler.num_inference_steps);
      cfg.sampler.eta = s.value("eta", cfg.sampler.eta);
      if (s.contains("variance")) cfg.sampler.variance = parse_variance_choice(s["variance"].get<std::string>());
    }
    if (j.contains("regional")) {
      const json& r = j["regional"];
      reject_unknown(r, {"window", "stride", "workers"}, "regional");
      cfg.regional.window = r.value("window", cfg.regional.window);
      cfg.regional.stride = r.value("stride", cfg.regional.stride);
      cfg.regional.workers = r.value("workers", cfg.regional.workers);
    }
    if (j.contains("training")) {
      const json& t = j["training"];
      reject_unknown(t, {"lr", "batch_size", "iterations"}, "training");
      cfg.training.learning_rate = t.value("lr", cfg.training.learning_rate);
      cfg.training.batch_size = t.value("batch_size", cfg.training.batch_size);
      cfg.training.num_iterations = t.value("iterations", cfg.training.num_iterations);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), path.parent_path());
}

std::optional<std::filesystem::path> resolve_output_dir(const std::optional<std::filesystem::path>& flag,
                                                        const RunConfig& cfg) {
  if (flag) return flag;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return std::filesystem::path(env);
  return cfg.output_dir;
}

}  // namespace regiondiff
