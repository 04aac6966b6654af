// Command-line harness: train / sweep / eval / render-maps / verify.
// Exit codes: 0 success, 2 usage or configuration error, 1 other failures.

#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "afford/harness.hpp"
#include "afford/infogain.hpp"

namespace {

using afford::core::RngStream;
using afford::harness::Options;

using KvList = std::vector<std::pair<std::string, std::string>>;

// Every flag funnels into the same key=value pipeline as the config file,
// so precedence is simply application order: file first, flags second.
void add_common_flags(CLI::App* sub, KvList* kvs, std::string* config_path) {
  sub->add_option("--config", *config_path, "flat key=value config file");
  static const std::vector<std::pair<const char*, const char*>> kFlagKeys = {
      {"--env", "env"},
      {"--method", "method"},
      {"--methods", "methods"},
      {"--seed", "seed"},
      {"--seeds", "seeds"},
      {"--budget", "budget"},
      {"--warmup", "warmup"},
      {"--c-expl", "c_expl"},
      {"--c-eval", "c_eval"},
      {"--ensemble", "n_heads"},
      {"--grid", "grid"},
      {"--orientations", "orientations"},
      {"--arch", "arch"},
      {"--init-scale", "init_scale"},
      {"--eval-episodes", "eval_episodes"},
      {"--out", "out_dir"},
  };
  for (const auto& [flag, key] : kFlagKeys) {
    const std::string key_copy = key;
    sub->add_option_function<std::string>(
        flag,
        [kvs, key_copy](const std::string& v) {
          kvs->emplace_back(key_copy, v);
        },
        std::string("sets ") + key_copy);
  }
}

Options build_options(const std::string& config_path, const KvList& flags) {
  Options opt;
  if (!config_path.empty())
    opt.overrides = afford::harness::parse_config_file(config_path);
  opt.overrides.insert(opt.overrides.end(), flags.begin(), flags.end());
  afford::harness::finalize(opt);
  return opt;
}

int cmd_train(const Options& opt) {
  opt.run.validate();
  const afford::trainer::RunLog log = afford::trainer::run(opt.run);
  afford::harness::write_run_outputs(log, opt.out_dir);
  const auto summary = afford::harness::aggregate(
      std::vector<afford::trainer::RunLog>{log}, opt.bootstrap_reps,
      opt.bootstrap_level, opt.run.seed);
  afford::harness::write_summary_csv(summary, opt.out_dir + "/summary.csv");
  std::printf("run %s: %zu interactions, %zu checkpoints\n",
              afford::harness::run_stem(log).c_str(),
              log.interactions.size(), log.checkpoints.size());
  for (const auto& ck : log.checkpoints)
    std::printf("  ckpt %lld success_rate %.4f\n",
                static_cast<long long>(ck.step), ck.success_rate);
  std::printf("outputs in %s\n", opt.out_dir.c_str());
  return 0;
}

int cmd_sweep(const Options& opt) {
  const auto logs = afford::harness::run_sweep(opt);
  std::printf("sweep complete: %zu runs, summary in %s/summary.csv\n",
              logs.size(), opt.out_dir.c_str());
  return 0;
}

// Loads a parameter file and aligns the configured run with its shape.
afford::predictor::Ensemble load_and_align(Options& opt,
                                           const std::string& ckpt_path) {
  afford::predictor::Ensemble params =
      afford::predictor::load_checkpoint(ckpt_path);
  params.cfg.batch_size = opt.run.model.batch_size;
  params.cfg.updates_per_interaction = opt.run.model.updates_per_interaction;
  params.cfg.learning_rate = opt.run.model.learning_rate;
  opt.run.model = params.cfg;
  opt.run.env.height = params.cfg.height;
  opt.run.env.width = params.cfg.width;
  opt.run.env.orientations = params.cfg.orientations;
  return params;
}

int cmd_eval(Options& opt, const std::string& ckpt_path) {
  const auto params = load_and_align(opt, ckpt_path);
  opt.run.validate();
  const double rate = afford::trainer::evaluate(params, opt.run);
  std::printf("success_rate %.6f over %lld episodes\n", rate,
              static_cast<long long>(opt.run.eval_episodes));
  return 0;
}

int cmd_render_maps(Options& opt, const std::string& ckpt_path) {
  const auto params = load_and_align(opt, ckpt_path);
  opt.run.validate();
  const afford::envs::EnvState st = afford::trainer::render_scene(opt.run);
  const auto maps = afford::predictor::predict_all(params, st.scene);
  const auto mean =
      afford::core::max_over_orientations(afford::predictor::mean_map(maps).values());
  const auto info = afford::core::max_over_orientations(
      afford::infogain::normalize(afford::infogain::info_map(maps),
                                  st.scene.valid())
          .values);
  std::filesystem::create_directories(opt.out_dir);
  afford::harness::write_pgm(mean, opt.out_dir + "/render_mean.pgm");
  afford::harness::write_pgm(info, opt.out_dir + "/render_info.pgm");
  std::printf("wrote %s/render_mean.pgm and %s/render_info.pgm\n",
              opt.out_dir.c_str(), opt.out_dir.c_str());
  return 0;
}

bool verify_equivalence() {
  RngStream rng(12345);
  double max_diff = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int n = 1 + static_cast<int>(afford::core::uniform_index(rng, 8));
    std::vector<double> probs(static_cast<std::size_t>(n));
    for (auto& p : probs) p = afford::core::uniform_double(rng);
    const std::vector<double> prior(static_cast<std::size_t>(n), 1.0 / n);
    const double diff = std::fabs(
        afford::infogain::bayes_info_gain(probs, prior) -
        afford::infogain::jsd(probs));
    max_diff = std::max(max_diff, diff);
  }
  const bool pass = max_diff <= 1e-10;
  std::printf("oracle equivalence: %s (max |difference| = %.3e)\n",
              pass ? "PASS" : "FAIL", max_diff);
  return pass;
}

// Central-difference check of the batch gradient in double precision;
// reports the L2 relative error over all parameters.
bool verify_gradient(afford::predictor::Arch arch, const char* label) {
  namespace pred = afford::predictor;
  namespace core = afford::core;
  pred::ModelConfig cfg;
  cfg.arch = arch;
  cfg.height = 8;
  cfg.width = 8;
  cfg.orientations = 2;
  cfg.n_heads = 2;
  cfg.conv_c1 = 1;
  cfg.conv_c2 = 2;
  cfg.conv_c3 = 2;
  auto params = pred::init<double>(cfg, 99);
  // Check the derivative at a generic point: zero-initialized biases leave
  // some pre-activations exactly on the relu kink, where central differences
  // and the relu'(0) = 0 convention legitimately disagree.
  {
    RngStream jitter(core::derive_seed(1234, 8));
    for (auto& t : params.theta) t += 0.01 * core::gaussian(jitter);
  }

  RngStream rng(7);
  std::vector<core::Transition> batch;
  for (int i = 0; i < 6; ++i) {
    core::Grid2 h(8, 8, 0.5);
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x)
        h.at(y, x) = core::uniform_double(rng);
    core::Scene scene(std::move(h), core::Mask(8, 8, true));
    core::ActionSpec a{
        static_cast<int>(core::uniform_index(rng, 8)),
        static_cast<int>(core::uniform_index(rng, 8)),
        static_cast<int>(core::uniform_index(rng, 2))};
    core::Outcome o{static_cast<int>(core::uniform_index(rng, 2))};
    batch.push_back({scene, a, o, i});
  }

  const std::vector<double> g = pred::batch_gradient(params, batch);
  // Small enough that no probe crosses a relu kink at the jittered point;
  // double precision keeps central-difference roundoff near 1e-11.
  const double step = 1e-5;
  double num = 0.0, den_a = 0.0, den_b = 0.0;
  for (std::size_t i = 0; i < params.theta.size(); ++i) {
    const double orig = params.theta[i];
    params.theta[i] = orig + step;
    const double lp = pred::batch_loss(params, batch);
    params.theta[i] = orig - step;
    const double lm = pred::batch_loss(params, batch);
    params.theta[i] = orig;
    const double fd = (lp - lm) / (2.0 * step);
    num += (g[i] - fd) * (g[i] - fd);
    den_a += g[i] * g[i];
    den_b += fd * fd;
  }
  const double rel =
      std::sqrt(num) / std::max(1e-12, std::sqrt(std::max(den_a, den_b)));
  const bool pass = rel <= 1e-4;
  std::printf("gradient check (%s, %zu params): %s (rel error = %.3e)\n",
              label, params.theta.size(), pass ? "PASS" : "FAIL", rel);
  return pass;
}

int cmd_verify() {
  bool ok = verify_equivalence();
  ok = verify_gradient(afford::predictor::Arch::conv, "conv") && ok;
  ok = verify_gradient(afford::predictor::Arch::tabular, "tabular") && ok;
  std::printf("verify: %s\n", ok ? "PASS" : "FAIL");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"information-driven affordance discovery harness"};
  app.require_subcommand(1);

  std::string config_path;
  KvList flag_kvs;
  std::string ckpt_path;

  CLI::App* train = app.add_subcommand("train", "run one training run");
  add_common_flags(train, &flag_kvs, &config_path);

  CLI::App* sweep = app.add_subcommand("sweep", "run a methods x seeds matrix");
  add_common_flags(sweep, &flag_kvs, &config_path);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a parameter file");
  add_common_flags(eval, &flag_kvs, &config_path);
  eval->add_option("--ckpt", ckpt_path, "parameter file")->required();

  CLI::App* render =
      app.add_subcommand("render-maps", "dump mean/info maps as PGM");
  add_common_flags(render, &flag_kvs, &config_path);
  render->add_option("--ckpt", ckpt_path, "parameter file")->required();

  app.add_subcommand("verify",
                     "run the oracle-equivalence and gradient-check suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("verify")) return cmd_verify();
    Options opt = build_options(config_path, flag_kvs);
    if (app.got_subcommand(train)) return cmd_train(opt);
    if (app.got_subcommand(sweep)) return cmd_sweep(opt);
    if (app.got_subcommand(eval)) return cmd_eval(opt, ckpt_path);
    if (app.got_subcommand(render)) return cmd_render_maps(opt, ckpt_path);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
