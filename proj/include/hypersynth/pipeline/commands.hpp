#pragma once

// The five pipeline stages. Each returns a JSON summary; artifacts land under
// PipelineConfig::output_dir and depend only on (config, seed).

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hypersynth/core/error.hpp"
#include "hypersynth/core/hsc_io.hpp"
#include "hypersynth/core/hsi.hpp"
#include "hypersynth/core/random.hpp"
#include "hypersynth/diffusion/checkpoint.hpp"
#include "hypersynth/diffusion/sampler.hpp"
#include "hypersynth/diffusion/trainer.hpp"
#include "hypersynth/eval/report.hpp"
#include "hypersynth/pipeline/artifacts.hpp"
#include "hypersynth/pipeline/config.hpp"
#include "hypersynth/unmix/autoencoder.hpp"
#include "hypersynth/unmix/bayes.hpp"
#include "hypersynth/unmix/least_squares.hpp"

namespace hypersynth::pipeline {

// Stream indices for derive_seed(master, .).
inline constexpr std::uint64_t kUnmixStream = 1000;
inline constexpr std::uint64_t kPoolStream = 2000;
inline constexpr std::uint64_t kSampleStream = 3000;
inline constexpr std::uint64_t kBatchStream = 1u << 20;

struct PreparedInput {
  HyperCube cube;
  std::optional<EndmemberMatrix> truth_endmembers;  // in the prepared cube's band space and scale
  std::optional<AbundanceStack> truth_abundances;
};

// Band removal and normalization; ground-truth endmembers go through the
// same band removal and per-band map (clamped to the unit box).
inline PreparedInput prepare_input(const PipelineConfig& cfg, const InputSpec& in) {
  HyperCube cube = load_cube(in.cube);
  if (!cfg.drop_bands.empty()) cube = drop_bands(cube, cfg.drop_bands);
  std::optional<BandScaling> scaling;
  if (cfg.normalize) {
    auto [normalized, sc] = normalize_cube_with_scaling(cube);
    cube = std::move(normalized);
    scaling = std::move(sc);
  }
  PreparedInput out{std::move(cube), std::nullopt, std::nullopt};
  if (in.truth_endmembers && in.truth_abundances) {
    Eigen::MatrixXd e = read_endmembers_csv(*in.truth_endmembers).signatures();
    if (!cfg.drop_bands.empty()) {
      std::vector<bool> drop(static_cast<std::size_t>(e.rows()), false);
      for (auto b : cfg.drop_bands)
        if (b < drop.size()) drop[b] = true;
      Eigen::MatrixXd kept(e.rows() - static_cast<Eigen::Index>(cfg.drop_bands.size()), e.cols());
      Eigen::Index r = 0;
      for (Eigen::Index b = 0; b < e.rows(); ++b)
        if (!drop[static_cast<std::size_t>(b)] && r < kept.rows()) kept.row(r++) = e.row(b);
      e = kept;
    }
    if (static_cast<std::size_t>(e.rows()) != out.cube.bands())
      throw ConfigError("truth endmembers for '" + in.name + "' have " + std::to_string(e.rows()) + " bands, cube has " +
                        std::to_string(out.cube.bands()));
    if (scaling) e = scaling->apply(e).cwiseMax(0.0).cwiseMin(1.0);
    out.truth_endmembers = EndmemberMatrix(std::move(e));
    out.truth_abundances = load_abundances(*in.truth_abundances);
  }
  return out;
}

inline unmix::UnmixResult run_unmixer(const PipelineConfig& cfg, const std::string& method, const HyperCube& cube,
                                      std::size_t p, std::uint64_t seed) {
  const json mc = cfg.method_configs.value(method, json::object());
  try {
    if (method == "ls") return unmix::alternating_minimize(cube, ls_config_from_json(mc, p));
    if (method == "dl") return unmix::ae_train(cube, ae_config_from_json(mc, p, seed)).result;
    return unmix::gibbs_unmix(cube, st_config_from_json(mc, p, seed));
  } catch (const json::exception& e) {
    throw ConfigError("config for method '" + method + "': " + e.what());
  }
}

inline std::string pair_dir_name(const std::string& method, std::size_t p) { return method + "_p" + std::to_string(p); }

inline json recovery_json(const eval::RecoveryReport& r) {
  eval::EvalReport er;
  er.recovery = r;
  return eval::to_json(er).at("recovery");
}

// Runs every (input, method, p) triple. A failing triple is recorded in the
// summary and the rest continue; the command fails only if all of them do.
inline json cmd_unmix(const PipelineConfig& cfg) {
  cfg.validate_unmix();
  fs::create_directories(cfg.unmix_dir());
  json runs = json::array();
  std::size_t ok = 0;
  int first_failure = 0;
  std::string first_message;
  for (std::size_t ii = 0; ii < cfg.inputs.size(); ++ii) {
    const auto& in = cfg.inputs[ii];
    const PreparedInput prepared = prepare_input(cfg, in);
    const HyperCube& cube = prepared.cube;
    const auto& truth_e = prepared.truth_endmembers;
    const auto& truth_a = prepared.truth_abundances;
    for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
      const auto& method = cfg.methods[mi];
      for (std::size_t p : cfg.endmember_counts) {
        const fs::path dir = cfg.unmix_dir() / in.name / pair_dir_name(method, p);
        json entry = {{"input", in.name}, {"method", method}, {"p", p}, {"dir", fs::relative(dir, cfg.unmix_dir()).generic_string()}};
        const std::uint64_t seed = derive_seed(cfg.seed, kUnmixStream + ii * 10000 + mi * 100 + p);
        try {
          const auto res = run_unmixer(cfg, method, cube, p, seed);
          fs::remove_all(dir);
          fs::create_directories(dir);
          save_abundances(res.abundances, dir / "abundances.hsc");
          write_endmembers_csv(res.endmembers, dir / "endmembers.csv");
          write_series_csv(dir / "trace.csv", "iteration,objective", res.objective_trace, 0);
          if (truth_e && truth_a && truth_e->count() == p) {
            const auto rep = eval::recovery_report(res.endmembers, res.abundances, *truth_e, *truth_a);
            write_json(dir / "recovery.json", recovery_json(rep));
            eval::write_recovery_csv(rep, dir / "recovery.csv");
            entry["max_sad_deg"] = *std::max_element(rep.sad_deg.begin(), rep.sad_deg.end());
            entry["abundance_rmse"] = rep.abundance_rmse;
          }
          entry["status"] = "ok";
          entry["abundances_crc32"] = file_checksum(dir / "abundances.hsc");
          ++ok;
        } catch (const ConfigError& e) {
          entry["status"] = "config_error";
          entry["error"] = e.what();
          if (!first_failure) first_failure = 2, first_message = e.what();
        } catch (const NumericalError& e) {
          entry["status"] = "numerical_error";
          entry["error"] = e.what();
          if (!first_failure) first_failure = 3, first_message = e.what();
        }
        runs.push_back(std::move(entry));
      }
    }
  }
  const json summary = {{"seed", cfg.seed}, {"runs", runs}};
  write_json(cfg.unmix_dir() / "summary.json", summary);
  if (ok == 0) {
    if (first_failure == 3) throw NumericalError("unmix: every run failed; first: " + first_message);
    throw ConfigError("unmix: every run failed; first: " + first_message);
  }
  return summary;
}

// Pools patches from all successful unmixing runs into per-p datasets
// (optionally per method too), shuffled by seed.
inline json cmd_pool(const PipelineConfig& cfg) {
  const fs::path summary_path = cfg.unmix_dir() / "summary.json";
  if (!fs::exists(summary_path)) throw ConfigError("pool: no unmixing results at '" + summary_path.string() + "'; run unmix first");
  const json summary = read_json(summary_path);

  struct Group {
    std::vector<Patch> patches;
    std::vector<std::string> methods;
  };
  std::map<std::string, Group> groups;
  for (const auto& run : summary.at("runs")) {
    if (run.at("status") != "ok") continue;
    const auto p = run.at("p").get<std::size_t>();
    if (std::find(cfg.endmember_counts.begin(), cfg.endmember_counts.end(), p) == cfg.endmember_counts.end()) continue;
    const std::string method = run.at("method");
    const std::string source = run.at("input").get<std::string>() + "/" + pair_dir_name(method, p);
    const auto stack = load_abundances(cfg.unmix_dir() / run.at("dir").get<std::string>() / "abundances.hsc");
    const std::string key = "p" + std::to_string(p) + (cfg.patches.isolate_methods ? "_" + method : "");
    auto& g = groups[key];
    for (auto& patch : extract_patches(stack, {cfg.patches.height, cfg.patches.width},
                                       {cfg.patches.stride_h, cfg.patches.stride_w}, source)) {
      g.patches.push_back(std::move(patch));
      g.methods.push_back(method);
    }
  }
  for (std::size_t p : cfg.endmember_counts) {
    bool found = false;
    for (const auto& [key, g] : groups)
      if (!g.patches.empty() && g.patches.front().channels == p) found = true;
    if (!found) throw ConfigError("pool: no abundance patches for p = " + std::to_string(p));
  }

  json out = json::array();
  for (auto& [key, g] : groups) {
    const std::size_t p = g.patches.front().channels;
    std::vector<std::size_t> order(g.patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, kPoolStream + p));
    std::shuffle(order.begin(), order.end(), rng);

    const fs::path dir = cfg.pool_dir() / key;
    fs::remove_all(dir);
    fs::create_directories(dir / "patches");
    json list = json::array();
    for (std::size_t i = 0; i < order.size(); ++i) {
      const Patch& patch = g.patches[order[i]];
      const std::string file = "patches/" + index_name(i, ".hsc");
      save_patch(patch, true, dir / file);
      list.push_back({{"file", file}, {"source_id", patch.source_id}, {"method", g.methods[order[i]]},
                      {"origin", {patch.row, patch.col}}});
    }
    const json manifest = {{"p", p},
                           {"patch_size", {cfg.patches.height, cfg.patches.width}},
                           {"count", list.size()},
                           {"seed", cfg.seed},
                           {"patches", list}};
    write_json(dir / "manifest.json", manifest);
    out.push_back({{"dataset", key}, {"p", p}, {"count", list.size()}, {"manifest", (dir / "manifest.json").string()}});
  }
  return {{"datasets", out}};
}

// Trains until the configured step budget; resumes from a checkpoint when
// asked. Batches are drawn from a per-step generator so a resumed run
// matches an uninterrupted one.
inline json cmd_train(const PipelineConfig& cfg) {
  const auto& opt = cfg.training;
  const fs::path manifest = opt.manifest.value_or(cfg.default_manifest(opt.endmember_count));
  if (!fs::exists(manifest)) throw ConfigError("train: manifest '" + manifest.string() + "' not found; run pool first");
  const std::string manifest_crc = file_checksum(manifest);
  const auto data = load_manifest_patches(manifest);
  if (data.empty()) throw ConfigError("train: manifest '" + manifest.string() + "' lists no patches");

  diffusion::TrainState st = [&] {
    if (!opt.resume) return diffusion::make_train_state(opt.train);
    auto loaded = diffusion::load_checkpoint(*opt.resume);
    if (nn::to_json(loaded.state.config.unet) != nn::to_json(diffusion::make_train_state(opt.train).config.unet))
      throw ConfigError("train: network config of '" + opt.resume->string() + "' differs from the configured network");
    return std::move(loaded.state);
  }();
  st.net.check_input(data.front().channels, data.front().height, data.front().width);

  const fs::path dir = cfg.train_dir();
  fs::create_directories(dir);
  std::vector<Patch> batch(st.config.batch_size);
  while (st.step < opt.steps) {
    std::mt19937_64 pick(derive_seed(st.config.seed, kBatchStream + st.step));
    std::uniform_int_distribution<std::size_t> idx(0, data.size() - 1);
    for (auto& b : batch) b = data[idx(pick)];
    diffusion::train_step(st, batch);
    if (opt.checkpoint_every > 0 && st.step % opt.checkpoint_every == 0)
      diffusion::save_checkpoint(st, dir / ("step_" + std::to_string(st.step) + ".ntb"), manifest_crc);
  }
  diffusion::save_checkpoint(st, cfg.final_checkpoint(), manifest_crc);
  write_series_csv(dir / "loss.csv", "step,loss", st.loss_history, 1);
  json j = {{"checkpoint", cfg.final_checkpoint().string()}, {"step", st.step}, {"manifest_crc32", manifest_crc}};
  if (!st.loss_history.empty()) j["last_loss"] = st.loss_history.back();
  return j;
}

inline json cmd_sample(const PipelineConfig& cfg) {
  const auto& opt = cfg.sampling;
  const fs::path ckpt = opt.checkpoint.value_or(cfg.final_checkpoint());
  if (!fs::exists(ckpt)) throw ConfigError("sample: checkpoint '" + ckpt.string() + "' not found; run train first");
  const auto loaded = diffusion::load_checkpoint(ckpt);
  const auto& st = loaded.state;
  st.net.check_input(st.net.config().in_channels, opt.height, opt.width);

  const fs::path dir = cfg.sample_dir();
  fs::remove_all(dir);
  if (opt.n == 0) return {{"count", 0}};

  diffusion::SampleOptions so;
  so.use_ema = opt.use_ema;
  so.project = opt.project;
  so.cumulative_coefficient = opt.cumulative_coefficient;
  so.allow_untrained = true;  // an explicitly supplied checkpoint is honoured even at step 0
  const auto res = diffusion::sample(st, opt.n, opt.height, opt.width, derive_seed(cfg.seed, kSampleStream), so);

  fs::create_directories(dir / "patches");
  fs::create_directories(dir / "previews");
  if (opt.project) fs::create_directories(dir / "projected");
  json raw = json::array(), proj = json::array(), previews = json::array();
  for (std::size_t i = 0; i < res.raw.size(); ++i) {
    const std::string file = "patches/" + index_name(i, ".hsc");
    save_patch(res.raw[i], false, dir / file);
    raw.push_back({{"file", file}, {"source_id", res.raw[i].source_id}});
    for (std::size_t k = 0; k < res.raw[i].channels; ++k) {
      const std::string pgm = "previews/" + index_name(i, ("_c" + std::to_string(k) + ".pgm").c_str());
      write_pgm(res.raw[i], k, dir / pgm);
      previews.push_back(pgm);
    }
    if (opt.project) {
      const std::string pfile = "projected/" + index_name(i, ".hsc");
      save_patch(res.projected[i], true, dir / pfile);
      proj.push_back({{"file", pfile}, {"source_id", res.projected[i].source_id}});
    }
  }
  json manifest = {{"count", res.raw.size()},
                   {"checkpoint_crc32", file_checksum(ckpt)},
                   {"checkpoint_step", st.step},
                   {"use_ema", opt.use_ema},
                   {"patches", raw},
                   {"previews", previews}};
  if (opt.project) manifest["projected"] = proj;
  write_json(dir / "manifest.json", manifest);
  return {{"count", res.raw.size()}, {"manifest", (dir / "manifest.json").string()}};
}

inline json cmd_eval(const PipelineConfig& cfg) {
  const fs::path gen = cfg.evaluation.generated.value_or(cfg.sample_dir() / "manifest.json");
  const fs::path ref = cfg.evaluation.reference.value_or(cfg.default_manifest(cfg.training.endmember_count));
  if (!fs::exists(gen)) throw ConfigError("eval: generated manifest '" + gen.string() + "' not found");
  if (!fs::exists(ref)) throw ConfigError("eval: reference manifest '" + ref.string() + "' not found");
  const auto generated = load_manifest_patches(gen);
  const auto reference = load_manifest_patches(ref);
  if (generated.empty() || reference.empty()) throw ConfigError("eval: generated and reference sets must be non-empty");

  const auto stats = eval::sample_statistics(generated, reference);
  eval::EvalReport rep;
  rep.samples = stats;
  json j = eval::to_json(rep);
  if (read_json(gen).contains("projected")) {
    const auto projected = load_manifest_patches(gen, "projected");
    const auto pst = eval::sample_statistics(projected, reference);
    j["projected_sum_violation"] = {{"median", pst.sum_violation_median}, {"max", pst.sum_violation_max}};
  }

  // Recovery against ground truth for any unmixing run that recorded it.
  const fs::path summary = cfg.unmix_dir() / "summary.json";
  if (fs::exists(summary)) {
    json recs = json::array();
    const json runs = read_json(summary).at("runs");
    for (const auto& run : runs) {
      const fs::path rj = cfg.unmix_dir() / run.at("dir").get<std::string>() / "recovery.json";
      if (run.at("status") == "ok" && fs::exists(rj))
        recs.push_back({{"input", run.at("input")}, {"method", run.at("method")}, {"p", run.at("p")}, {"report", read_json(rj)}});
    }
    if (!recs.empty()) j["recovery"] = recs;
  }
  fs::create_directories(cfg.eval_dir());
  write_json(cfg.eval_dir() / "report.json", j);
  return j;
}

}  // namespace hypersynth::pipeline
