#include "pc/cli.h"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pc/battery.h"
#include "pc/config.h"
#include "pc/metrics.h"
#include "pc/run.h"
#include "pc/serialize.h"

namespace pc::cli {
namespace {

using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", fraction * 100.0);
  return buf;
}

// Flags shared by every command that builds a RunConfig.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string mode, stream;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, lambda, beta;
  std::optional<std::size_t> epochs, batch_size;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "Flat JSON config with dotted keys");
  cmd->add_option("--set", f.sets, "Override one config key (key=value); repeatable");
  cmd->add_option("--mode", f.mode, "Prompt pipeline")->check(CLI::IsMember(mode_names()));
  cmd->add_option("--stream", f.stream, "Stream preset")
      ->check(CLI::IsMember({"class_inc_default", "domain_inc_default", "task_agnostic_default"}));
  cmd->add_option("--seed", f.seed, "Run seed (overrides PC_SEED)");
  cmd->add_option("--lr", f.lr, "Learning rate");
  cmd->add_option("--lambda", f.lambda, "Orthogonality loss weight");
  cmd->add_option("--beta", f.beta, "Ensemble regularization weight");
  cmd->add_option("--epochs", f.epochs, "Epochs per task");
  cmd->add_option("--batch-size", f.batch_size, "Batch size (clipped to the task size)");
}

// Precedence: config file < PC_SEED < named flags < --set.
RunConfig build_config(const ConfigFlags& f) {
  RunConfig cfg = f.config_path.empty() ? RunConfig{} : load_config(f.config_path);
  if (!f.stream.empty()) set_key(cfg, "stream.preset", f.stream);
  if (const char* env = std::getenv("PC_SEED"); env != nullptr && *env != '\0') {
    std::uint64_t seed = 0;
    const std::string text = env;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), seed);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
      throw ConfigError("PC_SEED must be a nonnegative integer, got '" + text + "'");
    }
    cfg.seed = seed;
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.mode.empty()) set_key(cfg, "train.mode", f.mode);
  if (f.lr) set_key(cfg, "train.lr", *f.lr);
  if (f.lambda) set_key(cfg, "train.lambda", *f.lambda);
  if (f.beta) set_key(cfg, "train.beta", *f.beta);
  if (f.epochs) set_key(cfg, "train.epochs", *f.epochs);
  if (f.batch_size) set_key(cfg, "train.batch_size", *f.batch_size);
  for (const auto& s : f.sets) apply_override(cfg, s);
  cfg.resolve();
  return cfg;
}

void print_matrix(std::ostream& out, const AccuracyMatrix& m) {
  out << "accuracy matrix (%), row = after stage t, column = task j\n";
  for (std::size_t t = 1; t <= m.stages(); ++t) {
    out << "  t=" << t << ":";
    for (std::size_t j = 1; j <= t; ++j) out << " " << percent(m.at(t, j));
    out << "\n";
  }
}

json metrics_report(const AccuracyMatrix& m) {
  json r = {{"unit", "fraction"}, {"stages", m.stages()}, {"average_accuracy", json::array()},
            {"forgetting", json::array()}};
  for (std::size_t t = 1; t <= m.stages(); ++t) {
    r["average_accuracy"].push_back(average_accuracy(m, t));
    r["forgetting"].push_back(t >= 2 ? json(forgetting(m, t)) : json(nullptr));
  }
  return r;
}

int cmd_train(const ConfigFlags& flags, const std::string& out_root, const std::string& run_dir,
              const std::string& cache, bool regen, std::ostream& out) {
  const RunConfig cfg = build_config(flags);
  RunOptions opt;
  opt.root = out_root;
  opt.exact_dir = run_dir;
  opt.stream_cache = cache;
  opt.regen = regen;
  const RunOutputs r = run_experiment(cfg, opt);
  const AccuracyMatrix& m = r.result.matrix;
  const std::size_t T = m.stages();
  out << "run " << r.manifest.run_id << " (" << to_string(cfg.train.mode) << ", seed " << cfg.seed
      << ") -> " << r.manifest.dir.string() << "\n";
  print_matrix(out, m);
  out << "A_a(" << T << ") = " << percent(average_accuracy(m, T)) << "%\n";
  if (T >= 2) out << "F(" << T << ") = " << percent(forgetting(m, T)) << "%\n";
  out << "task-agnostic accuracy = " << percent(r.result.task_agnostic_accuracy) << "%\n";
  if (r.result.has_unseen_domains) {
    out << "unseen-domain accuracy = " << percent(r.result.unseen_domain_accuracy) << "%\n";
  }
  out << "max param change = " << format_real(r.max_param_change) << "\n";
  json report = {{"command", "train"},
                 {"run_id", r.manifest.run_id},
                 {"dir", r.manifest.dir.string()},
                 {"mode", to_string(cfg.train.mode)},
                 {"seed", cfg.seed},
                 {"average_accuracy", average_accuracy(m, T)},
                 {"forgetting", T >= 2 ? json(forgetting(m, T)) : json(nullptr)},
                 {"task_agnostic_accuracy", r.result.task_agnostic_accuracy},
                 {"max_param_change", r.max_param_change}};
  if (r.result.has_unseen_domains) report["unseen_domain_accuracy"] = r.result.unseen_domain_accuracy;
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_metrics(const std::string& path, std::ostream& out) {
  const AccuracyMatrix m = load_csv(path);
  out << "stage  A_a(%)   F(%)\n";
  for (std::size_t t = 1; t <= m.stages(); ++t) {
    char line[64];
    if (t >= 2) {
      std::snprintf(line, sizeof(line), "%5zu  %6s  %6s\n", t, percent(average_accuracy(m, t)).c_str(),
                    percent(forgetting(m, t)).c_str());
    } else {
      std::snprintf(line, sizeof(line), "%5zu  %6s  %6s\n", t, percent(average_accuracy(m, t)).c_str(), "-");
    }
    out << line;
  }
  json report = metrics_report(m);
  report["command"] = "metrics";
  report["input"] = path;
  out << report.dump() << "\n";
  return kExitOk;
}

struct GridPoint {
  std::string key;
  std::string value;
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); zero for a single run.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::optional<double> as_number(const std::string& s) {
  try {
    const json j = json::parse(s);
    if (j.is_number()) return j.get<double>();
  } catch (const json::parse_error&) {
  }
  return std::nullopt;
}

bool point_less(const GridPoint& a, const GridPoint& b) {
  if (a.key != b.key) return a.key < b.key;
  const auto na = as_number(a.value), nb = as_number(b.value);
  if (na && nb) return *na < *nb;
  return a.value < b.value;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_sweep(const ConfigFlags& flags, const std::vector<std::string>& grid_specs,
              const std::string& seeds_text, const std::string& out_dir, std::size_t threads,
              std::ostream& out) {
  const RunConfig base = build_config(flags);
  std::vector<GridPoint> points;
  for (const auto& spec : grid_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--grid expects key=v1,v2,..., got '" + spec + "'");
    const std::string key = spec.substr(0, eq);
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw UsageError("unknown config key '" + key + "' in --grid");
    }
    const auto values = split_list(spec.substr(eq + 1));
    if (values.empty()) throw UsageError("--grid " + key + " has no values");
    for (const auto& v : values) points.push_back({key, v});
  }
  if (points.empty()) throw UsageError("sweep needs at least one --grid entry");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_text)) {
    const auto n = as_number(s);
    if (!n || *n < 0 || std::floor(*n) != *n) throw UsageError("bad seed '" + s + "' in --seeds");
    seeds.push_back(static_cast<std::uint64_t>(*n));
  }
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  std::sort(points.begin(), points.end(), point_less);

  struct Job {
    std::size_t point;
    std::uint64_t seed;
    RunConfig cfg;
    std::filesystem::path dir;
    double aa = 0.0, f = 0.0;
    std::string run_id, error;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      apply_override(cfg, points[p].key + "=" + points[p].value);
      cfg.seed = seed;
      cfg.resolve();
      Job job{p, seed, cfg, {}, 0.0, 0.0, {}, {}};
      job.dir = std::filesystem::path(out_dir) / "runs" / (points[p].key + "=" + points[p].value) /
                ("seed" + std::to_string(seed));
      jobs.push_back(std::move(job));
    }
  }

  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, jobs.size()));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      Job& job = jobs[i];
      try {
        RunOptions opt;
        opt.exact_dir = job.dir;
        opt.write_checkpoint = false;
        const RunOutputs r = run_experiment(job.cfg, opt);
        const std::size_t T = r.result.matrix.stages();
        job.aa = average_accuracy(r.result.matrix, T);
        job.f = T >= 2 ? forgetting(r.result.matrix, T) : 0.0;
        job.run_id = r.manifest.run_id;
      } catch (const std::exception& e) {
        job.error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& job : jobs) {
    if (!job.error.empty()) throw std::runtime_error("sweep run " + job.dir.string() + " failed: " + job.error);
  }

  std::string runs_csv = "param,value,seed,run_id,average_accuracy,forgetting\n";
  for (const auto& job : jobs) {
    runs_csv += points[job.point].key + "," + points[job.point].value + "," + std::to_string(job.seed) +
                "," + job.run_id + "," + format_real(job.aa) + "," + format_real(job.f) + "\n";
  }
  std::string agg_csv = "param,value,runs,average_accuracy_mean,average_accuracy_std,forgetting_mean,forgetting_std\n";
  json rows = json::array();
  out << "param                      value      runs  A_a mean±std (%)   F mean±std (%)\n";
  for (std::size_t p = 0; p < points.size(); ++p) {
    std::vector<double> aa, f;
    for (const auto& job : jobs) {
      if (job.point != p) continue;
      aa.push_back(job.aa);
      f.push_back(job.f);
    }
    agg_csv += points[p].key + "," + points[p].value + "," + std::to_string(aa.size()) + "," +
               format_real(mean_of(aa)) + "," + format_real(std_of(aa)) + "," +
               format_real(mean_of(f)) + "," + format_real(std_of(f)) + "\n";
    rows.push_back({{"param", points[p].key},
                    {"value", points[p].value},
                    {"runs", aa.size()},
                    {"average_accuracy_mean", mean_of(aa)},
                    {"average_accuracy_std", std_of(aa)},
                    {"forgetting_mean", mean_of(f)},
                    {"forgetting_std", std_of(f)}});
    char line[160];
    std::snprintf(line, sizeof(line), "%-26s %-10s %4zu  %6s ± %-6s     %6s ± %-6s\n",
                  points[p].key.c_str(), points[p].value.c_str(), aa.size(),
                  percent(mean_of(aa)).c_str(), percent(std_of(aa)).c_str(),
                  percent(mean_of(f)).c_str(), percent(std_of(f)).c_str());
    out << line;
  }
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  write_text(dir / "sweep.csv", agg_csv);
  write_text(dir / "runs.csv", runs_csv);
  json report = {{"command", "sweep"}, {"runs", jobs.size()}, {"points", rows}, {"dir", out_dir}};
  write_text(dir / "sweep.json", report.dump(2) + "\n");
  out << report.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& flip, std::ostream& out) {
  const auto results = run_gradient_battery(seed, flip);
  json checks = json::array();
  std::size_t failed = 0;
  for (const auto& r : results) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-28s max rel err %.3e  tol %.0e  %s\n", r.name.c_str(),
                  r.max_rel_error, r.tolerance, r.passed ? "PASS" : "FAIL");
    out << line;
    if (!r.passed) ++failed;
    checks.push_back({{"name", r.name},
                      {"max_rel_error", r.max_rel_error},
                      {"tolerance", r.tolerance},
                      {"passed", r.passed}});
  }
  out << (failed == 0 ? "all " + std::to_string(results.size()) + " checks passed\n"
                      : std::to_string(failed) + " of " + std::to_string(results.size()) + " checks failed\n");
  json report = {{"command", "gradcheck"}, {"seed", seed}, {"checks", checks}, {"failed", failed}};
  out << report.dump() << "\n";
  return failed == 0 ? kExitOk : kExitFailure;
}

void append_rows(std::string& csv, std::size_t sample, std::size_t label, std::size_t block,
                 const char* quantity, const Tensor& t) {
  if (t.size() == 0) return;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    csv += std::to_string(sample) + "," + std::to_string(label) + "," + std::to_string(block) + "," +
           quantity + "," + std::to_string(r);
    for (std::size_t c = 0; c < t.cols(); ++c) csv += "," + format_real(t(r, c));
    csv += "\n";
  }
}

int cmd_export_prompts(const std::string& run_dir, const std::string& out_path, std::size_t limit,
                       std::ostream& out) {
  const std::filesystem::path dir(run_dir);
  const RunConfig cfg = parse_config(read_text(dir / "config.json"));
  ToyModel model(cfg.model, cfg.train.seed);
  load_checkpoint(model, dir / "checkpoint");
  const TaskStream stream = gen_stream(cfg.stream);
  const auto samples = gen_task_agnostic_eval(stream);
  const std::size_t n = limit == 0 ? samples.size() : std::min(limit, samples.size());

  std::string csv = "sample,label,block,quantity,row,values...\n";
  for (std::size_t i = 0; i < n; ++i) {
    Tape tape(false);
    ForwardTrace trace;
    forward_with_prompts(tape, model, samples[i].x, cfg.train.mode, std::nullopt, &trace);
    for (const auto& b : trace.blocks) {
      append_rows(csv, i, samples[i].y, b.block, "A", b.coefficients);
      append_rows(csv, i, samples[i].y, b.block, "P", b.prompts);
      append_rows(csv, i, samples[i].y, b.block, "S", b.weights);
    }
  }
  const std::filesystem::path target = out_path.empty() ? dir / "prompts.csv" : std::filesystem::path(out_path);
  write_text(target, csv);
  out << "exported prompts of " << n << " samples (" << to_string(cfg.train.mode) << ") -> "
      << target.string() << "\n";
  json report = {{"command", "export-prompts"}, {"samples", n}, {"output", target.string()},
                 {"mode", to_string(cfg.train.mode)}};
  out << report.dump() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-customization continual-learning engine", "promptcl"};
  app.require_subcommand(1);

  ConfigFlags train_flags;
  std::string out_root = "runs", run_dir, cache;
  bool regen = false;
  auto* train = app.add_subcommand("train", "Train a task stream and write a run directory");
  add_config_flags(train, train_flags);
  train->add_option("--out", out_root, "Parent directory of run directories");
  train->add_option("--run-dir", run_dir, "Exact run directory (default <out>/<run id>)");
  train->add_option("--cache", cache, "Stream cache directory");
  train->add_flag("--regen", regen, "Regenerate the cached stream");

  std::string csv_path;
  auto* metrics = app.add_subcommand("metrics", "Average accuracy and forgetting of an accuracy-matrix CSV");
  metrics->add_option("matrix", csv_path, "Accuracy matrix CSV")->required();

  ConfigFlags sweep_flags;
  std::vector<std::string> grid;
  std::string seeds = "1,2", sweep_out = "sweep";
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  auto* sweep = app.add_subcommand("sweep", "One-factor sweep aggregated over seeds");
  add_config_flags(sweep, sweep_flags);
  sweep->add_option("--grid", grid, "key=v1,v2,... ; repeatable")->required();
  sweep->add_option("--seeds", seeds, "Comma-separated seeds");
  sweep->add_option("--out", sweep_out, "Output directory");
  sweep->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::uint64_t gc_seed = 1;
  std::string flip;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient battery");
  gradcheck->add_option("--seed", gc_seed, "Seed of the random inputs");
  gradcheck->add_option("--inject-sign-flip", flip, "Negate one primitive's gradient")
      ->group("")
      ->check(CLI::IsMember(battery_primitives()));

  std::string export_dir, export_out;
  std::size_t export_limit = 0;
  auto* exporter = app.add_subcommand("export-prompts", "CSV of coefficients, prompts and weights per instance");
  exporter->add_option("--run-dir", export_dir, "Run directory written by train")->required();
  exporter->add_option("--out", export_out, "CSV path (default <run-dir>/prompts.csv)");
  exporter->add_option("--limit", export_limit, "Export at most this many samples (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, out_root, run_dir, cache, regen, out);
    if (*metrics) return cmd_metrics(csv_path, out);
    if (*sweep) return cmd_sweep(sweep_flags, grid, seeds, sweep_out, threads, out);
    if (*gradcheck) return cmd_gradcheck(gc_seed, flip, out);
    if (*exporter) return cmd_export_prompts(export_dir, export_out, export_limit, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) { return run(argc, argv, std::cout, std::cerr); }

}  // namespace pc::cli
