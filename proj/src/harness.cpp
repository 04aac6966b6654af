#include "afford/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <json.hpp>

namespace afford::harness {

namespace {

using nlohmann::json;

double vec_mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sorted_median(std::vector<double>& v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stat_of(std::span<const double> v, BootstrapStat stat,
               std::vector<double>& scratch) {
  if (stat == BootstrapStat::mean) return vec_mean(v);
  scratch.assign(v.begin(), v.end());
  return sorted_median(scratch);
}

// Linear-interpolation quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& s, double q) {
  const double pos = q * static_cast<double>(s.size() - 1);
  const std::size_t i = static_cast<std::size_t>(std::floor(pos));
  if (i + 1 >= s.size()) return s.back();
  const double frac = pos - static_cast<double>(i);
  return s[i] + frac * (s[i + 1] - s[i]);
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long r = 0;
  try {
    r = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad integer for " + key);
  return r;
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double r = 0.0;
  try {
    r = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key);
  }
  if (pos != v.size())
    throw std::invalid_argument("config: bad number for " + key);
  return r;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean for " + key);
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

json interaction_json(const trainer::InteractionRecord& r) {
  json j;
  j["t"] = r.step;
  j["kind"] = "interact";
  j["action"] = {r.action.q, r.action.row, r.action.col};
  j["outcome"] = r.outcome.b;
  if (r.loss >= 0.0)
    j["loss"] = r.loss;
  else
    j["loss"] = nullptr;
  j["success_rate"] = nullptr;
  return j;
}

json checkpoint_json(const trainer::CheckpointRecord& r) {
  json j;
  j["t"] = r.step;
  j["kind"] = "ckpt";
  j["action"] = nullptr;
  j["outcome"] = nullptr;
  j["loss"] = nullptr;
  j["success_rate"] = r.success_rate;
  return j;
}

unsigned worker_cap() {
  if (const char* env = std::getenv("AFFORD_BANDIT_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<unsigned>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1;
}

}  // namespace

BootstrapResult bootstrap_ci(std::span<const double> values, int reps,
                             BootstrapStat stat, core::RngStream& rng,
                             double level) {
  if (values.empty())
    throw std::invalid_argument("bootstrap_ci: empty sample");
  if (reps < 1) throw std::invalid_argument("bootstrap_ci: reps must be >= 1");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("bootstrap_ci: level outside (0, 1)");
  std::vector<double> scratch;
  BootstrapResult r;
  r.stat = stat;
  r.reps = reps;
  r.point = stat_of(values, stat, scratch);
  std::vector<double> stats(static_cast<std::size_t>(reps));
  std::vector<double> resample(values.size());
  for (int t = 0; t < reps; ++t) {
    for (auto& v : resample) v = values[core::uniform_index(rng, values.size())];
    stats[static_cast<std::size_t>(t)] = stat_of(resample, stat, scratch);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  r.lo = quantile_sorted(stats, alpha);
  r.hi = quantile_sorted(stats, 1.0 - alpha);
  r.lo = std::min(r.lo, r.point);
  r.hi = std::max(r.hi, r.point);
  return r;
}

ExperimentSummary aggregate(std::span<const trainer::RunLog> logs, int reps,
                            double level, std::uint64_t seed) {
  if (logs.empty()) throw std::invalid_argument("aggregate: no logs");
  for (const auto& log : logs)
    if (log.eval_checkpoints != logs.front().eval_checkpoints)
      throw std::invalid_argument(
          "aggregate: runs have different checkpoint schedules");
  std::map<std::tuple<std::string, std::string, std::int64_t>,
           std::vector<double>>
      cells;
  for (const auto& log : logs) {
    const std::string m = method_name(log.method);
    const std::string e = env_name(log.env_kind);
    for (const auto& ck : log.checkpoints) {
      cells[{m, e, ck.step}].push_back(ck.success_rate);
      cells[{m, "all", ck.step}].push_back(ck.success_rate);
    }
  }
  ExperimentSummary out;
  std::uint64_t cell_index = 0;
  for (auto& [key, values] : cells) {
    std::sort(values.begin(), values.end());
    core::RngStream rng(core::derive_seed(seed, cell_index++));
    const BootstrapResult ci =
        bootstrap_ci(values, reps, BootstrapStat::mean, rng, level);
    SummaryRow row;
    row.method = std::get<0>(key);
    row.env = std::get<1>(key);
    row.checkpoint = std::get<2>(key);
    row.seed_count = static_cast<int>(values.size());
    row.mean = ci.point;
    row.lo = ci.lo;
    row.hi = ci.hi;
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string method_name(trainer::Method m) {
  switch (m) {
    case trainer::Method::ida: return "ida";
    case trainer::Method::jsd_only: return "jsd_only";
    case trainer::Method::greedy: return "greedy";
    case trainer::Method::random: return "random";
    case trainer::Method::where2act: return "where2act";
  }
  throw std::invalid_argument("method_name: unknown method");
}

trainer::Method parse_method(const std::string& s) {
  if (s == "ida") return trainer::Method::ida;
  if (s == "jsd_only") return trainer::Method::jsd_only;
  if (s == "greedy") return trainer::Method::greedy;
  if (s == "random") return trainer::Method::random;
  if (s == "where2act") return trainer::Method::where2act;
  throw std::invalid_argument("unknown method: " + s);
}

std::string env_name(envs::EnvKind k) {
  return k == envs::EnvKind::shape_grasp ? "shape_grasp" : "drawer_toy";
}

envs::EnvKind parse_env(const std::string& s) {
  if (s == "shape_grasp") return envs::EnvKind::shape_grasp;
  if (s == "drawer_toy") return envs::EnvKind::drawer_toy;
  throw std::invalid_argument("unknown env: " + s);
}

std::string run_stem(const trainer::RunLog& log) {
  return method_name(log.method) + "_" + env_name(log.env_kind) + "_s" +
         std::to_string(log.seed);
}

void write_pgm(const core::Grid2& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open " + path);
  f << "P5\n" << img.w() << " " << img.h() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.w()));
  for (int y = 0; y < img.h(); ++y) {
    for (int x = 0; x < img.w(); ++x) {
      const double v = std::clamp(img.at(y, x), 0.0, 1.0);
      row[static_cast<std::size_t>(x)] =
          static_cast<unsigned char>(std::lround(255.0 * v));
    }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_pgm: write failed for " + path);
}

void write_run_outputs(const trainer::RunLog& log,
                       const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::string stem = out_dir + "/" + run_stem(log);
  {
    std::ofstream f(stem + ".jsonl", std::ios::binary);
    if (!f)
      throw std::runtime_error("write_run_outputs: cannot open " + stem +
                               ".jsonl");
    std::size_t ck = 0;
    for (const auto& rec : log.interactions) {
      f << interaction_json(rec).dump() << "\n";
      while (ck < log.checkpoints.size() &&
             log.checkpoints[ck].step == rec.step) {
        f << checkpoint_json(log.checkpoints[ck]).dump() << "\n";
        ++ck;
      }
    }
    if (!f)
      throw std::runtime_error("write_run_outputs: write failed for " + stem +
                               ".jsonl");
  }
  for (const auto& ckrec : log.checkpoints) {
    const std::string base = stem + "_ckpt" + std::to_string(ckrec.step);
    write_pgm(ckrec.mean_max, base + "_mean.pgm");
    write_pgm(ckrec.info_max, base + "_info.pgm");
    predictor::save_checkpoint(ckrec.params, base + ".ckpt");
  }
}

void write_summary_csv(const ExperimentSummary& summary,
                       const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_summary_csv: cannot open " + path);
  f << "method,env,checkpoint,seed_count,mean,lo,hi\n";
  char buf[128];
  for (const auto& r : summary.rows) {
    std::snprintf(buf, sizeof(buf), ",%lld,%d,%.6f,%.6f,%.6f\n",
                  static_cast<long long>(r.checkpoint), r.seed_count, r.mean,
                  r.lo, r.hi);
    f << r.method << "," << r.env << buf;
  }
  if (!f)
    throw std::runtime_error("write_summary_csv: write failed for " + path);
}

void write_outputs(const ExperimentSummary& summary,
                   std::span<const trainer::RunLog> logs,
                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (const auto& log : logs) write_run_outputs(log, out_dir);
  write_summary_csv(summary, out_dir + "/summary.csv");
}

trainer::RunLog read_run_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_run_jsonl: cannot open " + path);
  trainer::RunLog log;
  std::string line;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "interact") {
      trainer::InteractionRecord r;
      r.step = j.at("t").get<std::int64_t>();
      const auto& a = j.at("action");
      r.action.q = a.at(0).get<int>();
      r.action.row = a.at(1).get<int>();
      r.action.col = a.at(2).get<int>();
      r.outcome.b = j.at("outcome").get<int>();
      r.loss = j.at("loss").is_null() ? -1.0 : j.at("loss").get<double>();
      log.interactions.push_back(r);
    } else if (kind == "ckpt") {
      trainer::CheckpointRecord r;
      r.step = j.at("t").get<std::int64_t>();
      r.success_rate = j.at("success_rate").get<double>();
      log.checkpoints.push_back(std::move(r));
      log.eval_checkpoints.push_back(log.checkpoints.back().step);
    } else {
      throw std::runtime_error("read_run_jsonl: unknown record kind " + kind);
    }
  }
  return log;
}

void apply_method_preset(Options& opt, trainer::Method m) {
  opt.run.method = m;
  switch (m) {
    case trainer::Method::ida:
      opt.run.policy.c_expl = 0.3;
      opt.run.policy.c_eval = 0.1;
      break;
    case trainer::Method::greedy:
      opt.run.model.n_heads = 1;
      opt.run.policy.c_expl = 0.0;
      opt.run.policy.c_eval = 0.0;
      break;
    case trainer::Method::jsd_only:
    case trainer::Method::random:
    case trainer::Method::where2act:
      opt.run.policy.c_eval = 0.0;
      break;
  }
}

std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> kvs;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' on line " +
                                  std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw std::invalid_argument("config: empty key or value on line " +
                                  std::to_string(lineno));
    kvs.emplace_back(key, value);
  }
  return kvs;
}

void apply_kv(Options& opt, const std::string& key,
              const std::string& value) {
  auto& run = opt.run;
  if (key == "env") {
    run.env.kind = parse_env(value);
  } else if (key == "method") {
    run.method = parse_method(value);
  } else if (key == "methods") {
    std::vector<trainer::Method> ms;
    for (const auto& name : split_commas(value))
      ms.push_back(parse_method(name));
    if (ms.empty()) throw std::invalid_argument("config: empty methods list");
    opt.sweep_methods = std::move(ms);
  } else if (key == "seed") {
    run.seed = static_cast<std::uint64_t>(parse_int(key, value));
  } else if (key == "seeds") {
    opt.seeds = static_cast<int>(parse_int(key, value));
  } else if (key == "budget") {
    run.budget = parse_int(key, value);
  } else if (key == "warmup") {
    run.warmup = parse_int(key, value);
  } else if (key == "eval_checkpoints") {
    std::vector<std::int64_t> cks;
    for (const auto& item : split_commas(value))
      cks.push_back(parse_int(key, item));
    run.eval_checkpoints = std::move(cks);
  } else if (key == "eval_episodes") {
    run.eval_episodes = parse_int(key, value);
  } else if (key == "grid") {
    const int g = static_cast<int>(parse_int(key, value));
    run.env.height = run.env.width = g;
    run.model.height = run.model.width = g;
  } else if (key == "grid_h") {
    run.env.height = run.model.height = static_cast<int>(parse_int(key, value));
  } else if (key == "grid_w") {
    run.env.width = run.model.width = static_cast<int>(parse_int(key, value));
  } else if (key == "orientations") {
    run.env.orientations = run.model.orientations =
        static_cast<int>(parse_int(key, value));
  } else if (key == "arch") {
    if (value == "conv")
      run.model.arch = predictor::Arch::conv;
    else if (value == "tabular")
      run.model.arch = predictor::Arch::tabular;
    else
      throw std::invalid_argument("config: unknown arch " + value);
  } else if (key == "n_heads") {
    run.model.n_heads = static_cast<int>(parse_int(key, value));
  } else if (key == "learning_rate") {
    run.model.learning_rate = parse_real(key, value);
  } else if (key == "batch_size") {
    run.model.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "updates_per_interaction") {
    run.model.updates_per_interaction =
        static_cast<int>(parse_int(key, value));
  } else if (key == "conv_c1") {
    run.model.conv_c1 = static_cast<int>(parse_int(key, value));
  } else if (key == "conv_c2") {
    run.model.conv_c2 = static_cast<int>(parse_int(key, value));
  } else if (key == "conv_c3") {
    run.model.conv_c3 = static_cast<int>(parse_int(key, value));
  } else if (key == "init_scale") {
    run.model.init_scale = parse_real(key, value);
  } else if (key == "c_expl") {
    run.policy.c_expl = parse_real(key, value);
  } else if (key == "c_eval") {
    run.policy.c_eval = parse_real(key, value);
  } else if (key == "thompson") {
    run.policy.thompson = parse_bool(key, value);
  } else if (key == "boltzmann_temperature") {
    run.policy.boltzmann_temperature = parse_real(key, value);
  } else if (key == "random_fraction") {
    run.policy.random_fraction = parse_real(key, value);
  } else if (key == "p_hi") {
    run.env.p_hi = parse_real(key, value);
  } else if (key == "p_lo") {
    run.env.p_lo = parse_real(key, value);
  } else if (key == "band_lo") {
    run.env.band_lo = static_cast<int>(parse_int(key, value));
  } else if (key == "band_hi") {
    run.env.band_hi = static_cast<int>(parse_int(key, value));
  } else if (key == "n_objects") {
    run.env.n_objects = static_cast<int>(parse_int(key, value));
  } else if (key == "border") {
    run.env.border = static_cast<int>(parse_int(key, value));
  } else if (key == "drawer_p") {
    run.env.drawer_p = parse_real(key, value);
  } else if (key == "out_dir") {
    opt.out_dir = value;
  } else if (key == "bootstrap_reps") {
    opt.bootstrap_reps = static_cast<int>(parse_int(key, value));
  } else if (key == "bootstrap_level") {
    opt.bootstrap_level = parse_real(key, value);
  } else {
    throw std::invalid_argument("config: unknown key " + key);
  }
}

void finalize(Options& opt) {
  trainer::Method m = opt.run.method;
  for (const auto& [k, v] : opt.overrides)
    if (k == "method") m = parse_method(v);
  apply_method_preset(opt, m);
  for (const auto& [k, v] : opt.overrides) apply_kv(opt, k, v);
  opt.run.method = m;
  opt.run.env.seed = opt.run.seed;
}

trainer::RunConfig job_config(const Options& base, trainer::Method m,
                              std::uint64_t seed) {
  Options o;
  o.overrides = base.overrides;
  apply_method_preset(o, m);
  for (const auto& [k, v] : o.overrides)
    if (k != "method" && k != "seed") apply_kv(o, k, v);
  o.run.method = m;
  o.run.seed = seed;
  o.run.env.seed = seed;
  o.run.validate();
  return o.run;
}

std::vector<trainer::RunLog> run_sweep(const Options& opt) {
  if (opt.seeds < 1)
    throw std::invalid_argument("run_sweep: seeds must be >= 1");
  if (opt.sweep_methods.empty())
    throw std::invalid_argument("run_sweep: no methods");
  struct Job {
    trainer::Method method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto m : opt.sweep_methods)
    for (int s = 0; s < opt.seeds; ++s)
      jobs.push_back({m, opt.run.seed + static_cast<std::uint64_t>(s)});
  // Validate every job up front so a bad config fails before any work.
  for (const auto& job : jobs) job_config(opt, job.method, job.seed);

  std::filesystem::create_directories(opt.out_dir);
  std::vector<trainer::RunLog> logs(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  const unsigned workers = std::min<unsigned>(
      worker_cap(), static_cast<unsigned>(jobs.size()));
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        const trainer::RunConfig cfg =
            job_config(opt, jobs[i].method, jobs[i].seed);
        logs[i] = trainer::run(cfg);
        write_run_outputs(logs[i], opt.out_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const ExperimentSummary summary =
      aggregate(logs, opt.bootstrap_reps, opt.bootstrap_level, opt.run.seed);
  write_summary_csv(summary, opt.out_dir + "/summary.csv");
  return logs;
}

}  // namespace afford::harness
