#pragma once
// Experiment plumbing: bootstrapped confidence intervals, aggregation of
// run logs into a summary table, JSONL/CSV/PGM writers, the flat key=value
// config format, and the sweep runner used by the CLI.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "afford/core.hpp"
#include "afford/trainer.hpp"

namespace afford::harness {

enum class BootstrapStat { mean, median };

struct BootstrapResult {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  BootstrapStat stat = BootstrapStat::mean;
  int reps = 0;
};

// Percentile bootstrap with type-7 quantile interpolation. The interval is
// widened if needed so lo <= point <= hi also holds on degenerate samples.
BootstrapResult bootstrap_ci(std::span<const double> values, int reps,
                             BootstrapStat stat, core::RngStream& rng,
                             double level);

struct SummaryRow {
  std::string method;
  std::string env;  // environment name, or "all" for the pooled cell
  std::int64_t checkpoint = 0;
  int seed_count = 0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ExperimentSummary {
  std::vector<SummaryRow> rows;
};

// Groups checkpoint success rates by (method, env, checkpoint), adds a
// pooled env="all" cell per (method, checkpoint), and attaches bootstrap
// CIs of the mean. Deterministic and permutation-invariant: cells are
// ordered canonically and each gets its own derived stream.
ExperimentSummary aggregate(std::span<const trainer::RunLog> logs,
                            int reps = 50000, double level = 0.95,
                            std::uint64_t seed = 0);

std::string method_name(trainer::Method m);
trainer::Method parse_method(const std::string& s);
std::string env_name(envs::EnvKind k);
envs::EnvKind parse_env(const std::string& s);

// "<method>_<env>_s<seed>", the per-run file stem.
std::string run_stem(const trainer::RunLog& log);

// 8-bit binary PGM; values clamped to [0,1] and quantized by round(255 v).
void write_pgm(const core::Grid2& img, const std::string& path);

// "<stem>.jsonl" (one object per interaction/checkpoint record), PGM dumps
// of the checkpoint maps, and a parameter file per checkpoint.
void write_run_outputs(const trainer::RunLog& log, const std::string& out_dir);

void write_summary_csv(const ExperimentSummary& summary,
                       const std::string& path);

// Convenience wrapper: per-run outputs for every log plus summary.csv.
void write_outputs(const ExperimentSummary& summary,
                   std::span<const trainer::RunLog> logs,
                   const std::string& out_dir);

// Reads back a "<stem>.jsonl" file into a RunLog carrying interaction
// records and checkpoint success rates (maps and parameters are not
// serialized to JSONL).
trainer::RunLog read_run_jsonl(const std::string& path);

// Everything the CLI can configure. `run` is the template run; sweeps vary
// method and seed. `overrides` holds explicit key=value settings (config
// file first, then flags) so they can be re-applied on top of each sweep
// job's method preset.
struct Options {
  trainer::RunConfig run;
  std::string out_dir = "out";
  int seeds = 5;
  std::vector<trainer::Method> sweep_methods = {
      trainer::Method::ida, trainer::Method::jsd_only,
      trainer::Method::greedy, trainer::Method::random,
      trainer::Method::where2act};
  int bootstrap_reps = 50000;
  double bootstrap_level = 0.95;
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Method-definitional parameter presets (applied before explicit keys):
// greedy runs one head with no bonuses; only ida evaluates pessimistically.
void apply_method_preset(Options& opt, trainer::Method m);

// Flat "key = value" lines, '#' comments, blank lines allowed. Returned in
// file order. Malformed lines throw.
std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::string& path);

// Applies one config key. Unknown keys and unparsable values throw.
void apply_kv(Options& opt, const std::string& key, const std::string& value);

// Resolves `overrides` into the options: picks the method (last explicit
// "method" wins), applies its preset, then the overrides in order, and
// aligns the environment seed with the run seed.
void finalize(Options& opt);

// One sweep job: fresh defaults, the method's preset, then the recorded
// overrides (except method/seed, which the sweep supplies).
trainer::RunConfig job_config(const Options& base, trainer::Method m,
                              std::uint64_t seed);

// Runs methods x seeds with a worker pool (capped by AFFORD_BANDIT_THREADS),
// writes per-run outputs from the workers and summary.csv after the join.
// Returns the logs in (method, seed) order.
std::vector<trainer::RunLog> run_sweep(const Options& opt);

}  // namespace afford::harness
