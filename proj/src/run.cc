#include "pc/run.h"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <thread>
#include <utility>

#include "pc/metrics.h"
#include "pc/serialize.h"
#include "pc/version.h"

namespace pc {

std::string code_hash() { return kCodeHash; }

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string make_run_id(const nlohmann::json& config, const std::string& stream_hash,
                        const std::string& code_hash) {
  const std::string material = config.dump() + "|" + stream_hash + "|" + code_hash;
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : material) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

nlohmann::json RunManifest::to_json() const {
  return {{"run_id", run_id},
          {"config", config},
          {"stream_hash", stream_hash},
          {"code_hash", code_hash},
          {"outputs",
           {{"config", "config.json"},
            {"matrix", "matrix.csv"},
            {"loss", "loss.csv"},
            {"metrics", "metrics.json"},
            {"environment", "env.json"},
            {"checkpoint", "checkpoint.bin"},
            {"trainer_state", "trainer_state.bin"}}}};
}

nlohmann::json environment_fingerprint() {
  return {{"compiler", kCompiler},
          {"build_type", kBuildType},
          {"cxx_flags", kCxxFlags},
          {"system", kSystemName},
          {"pointer_bits", sizeof(void*) * 8},
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"code_hash", kCodeHash}};
}

std::string loss_csv(const std::vector<StepLog>& log) {
  std::string out = "task,epoch,step,total,ce,orth,reg,match\n";
  for (const auto& s : log) {
    out += std::to_string(s.task) + "," + std::to_string(s.epoch) + "," + std::to_string(s.step) +
           "," + format_real(s.terms.total) + "," + format_real(s.terms.ce) + "," +
           format_real(s.terms.orth) + "," + format_real(s.terms.reg) + "," +
           format_real(s.terms.match) + "\n";
  }
  return out;
}

RunOutputs run_experiment(RunConfig cfg, const RunOptions& options) {
  cfg.resolve();
  const TaskStream stream = options.stream_cache.empty()
                                ? gen_stream(cfg.stream)
                                : load_or_generate(cfg.stream, options.stream_cache, options.regen);
  RunOutputs out;
  RunManifest& m = out.manifest;
  m.config = to_json(cfg);
  m.stream_hash = hex64(stream_hash(stream));
  m.code_hash = code_hash();
  m.run_id = make_run_id(m.config, m.stream_hash, m.code_hash);
  m.dir = options.exact_dir.empty() ? options.root / m.run_id : options.exact_dir;
  std::filesystem::create_directories(m.dir);

  ToyModel model(cfg.model, cfg.train.seed);
  pretrain_backbone(model, cfg.stream, cfg.train);
  std::vector<Tensor> initial;
  for (const Param* p : std::as_const(model).all_params()) initial.push_back(p->value);
  std::vector<NamedTensor> last_state;
  out.result = train_stream(model, stream, cfg.train, [&](std::size_t, const TrainerState& state) {
    if (options.write_checkpoint) last_state = state.inventory();
  });

  {
    const auto params = std::as_const(model).all_params();
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.max_param_change = std::max(out.max_param_change, max_abs_diff(initial[i], params[i]->value));
    }
  }

  const AccuracyMatrix& mat = out.result.matrix;
  const std::size_t T = mat.stages();
  nlohmann::json metrics = {{"unit", "fraction"},
                            {"stages", T},
                            {"average_accuracy", nlohmann::json::array()},
                            {"forgetting", nlohmann::json::array()},
                            {"task_agnostic_accuracy", out.result.task_agnostic_accuracy},
                            {"ema_updates", out.result.ema_updates},
                            {"max_param_change", out.max_param_change},
                            {"frozen_hash", hex64(out.result.frozen_hash_after)}};
  for (std::size_t t = 1; t <= T; ++t) {
    metrics["average_accuracy"].push_back(average_accuracy(mat, t));
    if (t >= 2) metrics["forgetting"].push_back(forgetting(mat, t));
  }
  if (out.result.has_unseen_domains) {
    metrics["unseen_domain_accuracy"] = out.result.unseen_domain_accuracy;
  }

  write_text(m.dir / "config.json", m.config.dump(2) + "\n");
  write_text(m.dir / "matrix.csv", to_csv(mat));
  write_text(m.dir / "loss.csv", loss_csv(out.result.loss_log));
  write_text(m.dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(m.dir / "env.json", environment_fingerprint().dump(2) + "\n");
  write_text(m.dir / "manifest.json", m.to_json().dump(2) + "\n");
  if (options.write_checkpoint) {
    save_checkpoint(model, m.dir / "checkpoint");
    write_archive(m.dir / "trainer_state.bin", last_state);
  }
  return out;
}

}  // namespace pc
