#pragma once

// Pipeline configuration: one JSON document shared by every subcommand.
// Relative paths resolve against the config file's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/diffusion/trainer.hpp"
#include "hypersynth/unmix/autoencoder.hpp"
#include "hypersynth/unmix/bayes.hpp"
#include "hypersynth/unmix/least_squares.hpp"

namespace hypersynth::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

struct InputSpec {
  fs::path cube;
  std::string name;  // artifact directory name; defaults to the file stem
  // Optional ground truth for recovery reports.
  std::optional<fs::path> truth_endmembers;  // CSV
  std::optional<fs::path> truth_abundances;  // HSC
};

struct PatchOptions {
  std::size_t height = 16, width = 16;
  std::size_t stride_h = 8, stride_w = 8;
  bool isolate_methods = false;
};

struct TrainOptions {
  diffusion::TrainConfig train;
  std::size_t endmember_count = 3;
  std::size_t steps = 1000;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::optional<fs::path> manifest;  // defaults to the pooled set for endmember_count
  std::optional<fs::path> resume;
  std::string run_name;
};

struct SampleCmdOptions {
  std::optional<fs::path> checkpoint;
  std::size_t n = 8;
  std::size_t height = 16, width = 16;
  bool use_ema = true;
  bool project = false;
  bool cumulative_coefficient = false;
};

struct EvalOptions {
  std::optional<fs::path> generated;  // manifest
  std::optional<fs::path> reference;  // manifest
};

struct PipelineConfig {
  std::vector<InputSpec> inputs;
  std::vector<std::size_t> drop_bands;
  bool normalize = true;
  std::vector<std::string> methods;  // subset of {ls, dl, st}
  json method_configs = json::object();
  std::vector<std::size_t> endmember_counts{3, 4, 5};
  PatchOptions patches;
  TrainOptions training;
  SampleCmdOptions sampling;
  EvalOptions evaluation;
  fs::path output_dir = "out";
  std::uint64_t seed = 0;

  fs::path unmix_dir() const { return output_dir / "unmix"; }
  fs::path pool_dir() const { return output_dir / "pool"; }
  fs::path train_dir() const { return output_dir / "train" / training.run_name; }
  fs::path sample_dir() const { return output_dir / "sample"; }
  fs::path eval_dir() const { return output_dir / "eval"; }
  fs::path default_manifest(std::size_t p) const { return pool_dir() / ("p" + std::to_string(p)) / "manifest.json"; }
  fs::path final_checkpoint() const { return train_dir() / "final.ntb"; }

  void validate_unmix() const {
    if (inputs.empty()) throw ConfigError("config: \"inputs\" lists no cubes");
    if (methods.empty()) throw ConfigError("config: \"methods\" is empty; choose from ls, dl, st");
    if (endmember_counts.empty()) throw ConfigError("config: \"endmember_counts\" is empty");
    for (auto p : endmember_counts)
      if (p < 2) throw ConfigError("config: endmember counts must be >= 2");
  }
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

inline std::optional<fs::path> optional_path(const json& j, const char* key, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return resolve(base, j.at(key).get<std::string>());
}

template <class T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline unmix::LsConfig ls_config_from_json(const json& j, std::size_t p) {
  unmix::LsConfig c;
  c.endmember_count = p;
  detail::read_if(j, "xi", c.xi);
  detail::read_if(j, "gamma", c.gamma);
  detail::read_if(j, "max_outer_iters", c.max_outer_iters);
  detail::read_if(j, "inner_iters", c.inner_iters);
  detail::read_if(j, "tol", c.tol);
  if (j.value("abundance_init", std::string("fcls")) == "uniform") c.abundance_init = unmix::AbundanceInit::Uniform;
  c.validate();
  return c;
}

inline unmix::AeConfig ae_config_from_json(const json& j, std::size_t p, std::uint64_t seed) {
  unmix::AeConfig c;
  c.endmember_count = p;
  c.seed = seed;
  detail::read_if(j, "hidden_widths", c.hidden_widths);
  detail::read_if(j, "epochs", c.epochs);
  detail::read_if(j, "batch_size", c.batch_size);
  detail::read_if(j, "learning_rate", c.learning_rate);
  detail::read_if(j, "volume_weight", c.volume_weight);
  c.validate();
  return c;
}

inline unmix::StConfig st_config_from_json(const json& j, std::size_t p, std::uint64_t seed) {
  unmix::StConfig c;
  c.endmember_count = p;
  c.seed = seed;
  if (j.contains("noise_sigma")) {
    if (j.at("noise_sigma").is_null()) c.noise_sigma.reset();
    else c.noise_sigma = j.at("noise_sigma").get<double>();
  }
  detail::read_if(j, "dirichlet_alpha", c.dirichlet_alpha);
  detail::read_if(j, "n_samples", c.n_samples);
  detail::read_if(j, "burn_in", c.burn_in);
  c.validate();
  return c;
}

inline PipelineConfig parse_config(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  PipelineConfig c;
  try {
    detail::read_if(j, "seed", c.seed);
    if (j.contains("output_dir")) c.output_dir = detail::resolve(base_dir, j.at("output_dir").get<std::string>());
    else c.output_dir = base_dir / "out";
    for (const auto& in : j.value("inputs", json::array())) {
      InputSpec s;
      if (in.is_string()) {
        s.cube = detail::resolve(base_dir, in.get<std::string>());
      } else {
        s.cube = detail::resolve(base_dir, in.at("cube").get<std::string>());
        s.name = in.value("name", std::string());
        if (in.contains("truth_endmembers")) s.truth_endmembers = detail::resolve(base_dir, in.at("truth_endmembers").get<std::string>());
        if (in.contains("truth_abundances")) s.truth_abundances = detail::resolve(base_dir, in.at("truth_abundances").get<std::string>());
      }
      if (s.name.empty()) s.name = s.cube.stem().string();
      for (const auto& other : c.inputs)
        if (other.name == s.name) throw ConfigError("config: two inputs share the name '" + s.name + "'");
      c.inputs.push_back(std::move(s));
    }
    detail::read_if(j, "drop_bands", c.drop_bands);
    detail::read_if(j, "normalize", c.normalize);
    if (j.contains("methods")) {
      const auto& m = j.at("methods");
      if (m.is_array()) {
        c.methods = m.get<std::vector<std::string>>();
      } else if (m.is_object()) {
        for (const auto& [name, cfg] : m.items()) {
          c.methods.push_back(name);
          c.method_configs[name] = cfg;
        }
      } else {
        throw ConfigError("config: \"methods\" must be a list or an object");
      }
    }
    for (const auto& m : c.methods)
      if (m != "ls" && m != "dl" && m != "st") throw ConfigError("config: unknown unmixing method '" + m + "'");
    detail::read_if(j, "endmember_counts", c.endmember_counts);

    if (j.contains("patches")) {
      const auto& p = j.at("patches");
      if (p.contains("size")) {
        const auto s = p.at("size").get<std::vector<std::size_t>>();
        if (s.size() != 2) throw ConfigError("config: patches.size must be [h, w]");
        c.patches.height = s[0];
        c.patches.width = s[1];
      }
      if (p.contains("stride")) {
        const auto s = p.at("stride").get<std::vector<std::size_t>>();
        if (s.size() != 2) throw ConfigError("config: patches.stride must be [sh, sw]");
        c.patches.stride_h = s[0];
        c.patches.stride_w = s[1];
      }
      detail::read_if(p, "isolate_methods", c.patches.isolate_methods);
    }

    const json d = j.value("diffusion", json::object());
    json tc = d;
    for (const char* k : {"steps", "checkpoint_every", "manifest", "resume", "endmember_count", "run_name"}) tc.erase(k);
    if (!tc.contains("seed")) tc["seed"] = c.seed;
    detail::read_if(d, "endmember_count", c.training.endmember_count);
    if (!tc.contains("unet")) tc["unet"] = json::object();
    if (!tc["unet"].contains("in_channels")) tc["unet"]["in_channels"] = c.training.endmember_count;
    c.training.train = diffusion::train_config_from_json(tc);
    detail::read_if(d, "steps", c.training.steps);
    detail::read_if(d, "checkpoint_every", c.training.checkpoint_every);
    c.training.manifest = detail::optional_path(d, "manifest", base_dir);
    c.training.resume = detail::optional_path(d, "resume", base_dir);
    c.training.run_name = d.value("run_name", "p" + std::to_string(c.training.endmember_count));

    const json s = j.value("sample", json::object());
    c.sampling.checkpoint = detail::optional_path(s, "checkpoint", base_dir);
    detail::read_if(s, "n", c.sampling.n);
    if (s.contains("size")) {
      const auto sz = s.at("size").get<std::vector<std::size_t>>();
      if (sz.size() != 2) throw ConfigError("config: sample.size must be [h, w]");
      c.sampling.height = sz[0];
      c.sampling.width = sz[1];
    } else {
      c.sampling.height = c.patches.height;
      c.sampling.width = c.patches.width;
    }
    detail::read_if(s, "use_ema", c.sampling.use_ema);
    detail::read_if(s, "project", c.sampling.project);
    detail::read_if(s, "cumulative_coefficient", c.sampling.cumulative_coefficient);

    const json e = j.value("eval", json::object());
    c.evaluation.generated = detail::optional_path(e, "generated", base_dir);
    c.evaluation.reference = detail::optional_path(e, "reference", base_dir);
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  return c;
}

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& ex) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + ex.what());
  }
  return parse_config(j, fs::absolute(path).parent_path());
}

}  // namespace hypersynth::pipeline
