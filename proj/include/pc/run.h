#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "pc/config.h"
#include "pc/trainer.h"

namespace pc {

/// Content hash of the library sources, fixed at configure time.
std::string code_hash();

/// Identity of a run. Equal manifests produce equal matrix.csv files.
struct RunManifest {
  std::string run_id;
  nlohmann::json config;
  std::string stream_hash;
  std::string code_hash;
  std::filesystem::path dir;

  nlohmann::json to_json() const;
};

struct RunOutputs {
  RunManifest manifest;
  StreamResult result;
  /// Largest absolute change of any param over the continual run.
  double max_param_change = 0.0;
};

struct RunOptions {
  /// Parent of the run directory; the run lands in `<root>/<run_id>` unless
  /// `exact_dir` is set.
  std::filesystem::path root = "runs";
  std::filesystem::path exact_dir;
  /// Stream cache directory; empty disables caching.
  std::filesystem::path stream_cache;
  bool regen = false;
  /// Write checkpoint and trainer state files.
  bool write_checkpoint = true;
};

std::string hex64(std::uint64_t value);
std::string make_run_id(const nlohmann::json& config, const std::string& stream_hash,
                        const std::string& code_hash);

/// Compiler, build flags and host facts that could influence numerics.
nlohmann::json environment_fingerprint();

/// Loss log as CSV: task,epoch,step,total,ce,orth,reg,match.
std::string loss_csv(const std::vector<StepLog>& log);

/// Shortest round-trip decimal form of `v`.
std::string format_real(double v);

/// Generates (or loads) the stream, warms up the backbone, trains the stream and
/// writes config.json, matrix.csv, loss.csv, metrics.json, env.json,
/// manifest.json and (optionally) checkpoint and trainer-state files.
RunOutputs run_experiment(RunConfig cfg, const RunOptions& options);

}  // namespace pc
