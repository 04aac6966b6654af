#include "afford/trainer.hpp"

#include <algorithm>
#include <stdexcept>

#include "afford/infogain.hpp"

namespace afford::trainer {

namespace {

// Stream tags; each purpose owns an independent substream of the run seed.
enum : std::uint64_t {
  kTagInit = 1,
  kTagScene = 2,
  kTagOutcome = 3,
  kTagPolicy = 4,
  kTagTrain = 5,
  kTagEvalScene = 6,
  kTagEvalOutcome = 7,
  kTagRender = 8,
};

core::RngStream stream(std::uint64_t seed, std::uint64_t tag) {
  return core::RngStream(core::derive_seed(seed, tag));
}

core::RngStream eval_stream(std::uint64_t seed, std::uint64_t tag,
                            std::uint64_t salt) {
  return core::RngStream(
      core::derive_seed(core::derive_seed(seed, tag), salt));
}

core::ProbMap zero_map(const predictor::ModelConfig& m) {
  return core::ProbMap(core::Grid3(m.orientations, m.height, m.width, 0.0));
}

}  // namespace

void RunConfig::validate() const {
  env.validate();
  model.validate();
  policy.validate();
  if (budget < 1) throw std::invalid_argument("RunConfig: budget must be >= 1");
  if (warmup < 0 || warmup > budget)
    throw std::invalid_argument("RunConfig: need 0 <= warmup <= budget");
  if (eval_episodes < 1)
    throw std::invalid_argument("RunConfig: eval_episodes must be >= 1");
  for (std::size_t i = 0; i < eval_checkpoints.size(); ++i) {
    if (eval_checkpoints[i] < 1 || eval_checkpoints[i] > budget)
      throw std::invalid_argument("RunConfig: checkpoint outside budget");
    if (i > 0 && eval_checkpoints[i] <= eval_checkpoints[i - 1])
      throw std::invalid_argument("RunConfig: checkpoints must increase");
  }
  if (model.height != env.height || model.width != env.width ||
      model.orientations != env.orientations)
    throw std::invalid_argument("RunConfig: model and env shapes differ");
}

double effective_c_eval(const RunConfig& cfg) {
  return cfg.method == Method::ida ? cfg.policy.c_eval : 0.0;
}

double evaluate_with(const MapProvider& provider, const RunConfig& cfg,
                     std::uint64_t stream_salt) {
  cfg.validate();
  auto scene_rng = eval_stream(cfg.seed, kTagEvalScene, stream_salt);
  auto outcome_rng = eval_stream(cfg.seed, kTagEvalOutcome, stream_salt);
  const double c_eval = effective_c_eval(cfg);
  std::int64_t successes = 0;
  for (std::int64_t e = 0; e < cfg.eval_episodes; ++e) {
    envs::EnvState state = envs::reset(cfg.env, scene_rng);
    const std::vector<core::ProbMap> maps = provider(state);
    const core::ProbMap mean = predictor::mean_map(maps);
    const core::InfoMap info =
        infogain::normalize(infogain::info_map(maps), state.scene.valid());
    const policy::ScoreMap score = policy::eval_score(mean, info, c_eval);
    const core::ActionSpec a =
        policy::select_argmax(score, state.scene.valid());
    successes += envs::step(state, a, outcome_rng).b;
  }
  return static_cast<double>(successes) /
         static_cast<double>(cfg.eval_episodes);
}

double evaluate(const predictor::Ensemble& params, const RunConfig& cfg,
                std::uint64_t stream_salt) {
  return evaluate_with(
      [&params](const envs::EnvState& s) {
        return predictor::predict_all(params, s.scene);
      },
      cfg, stream_salt);
}

envs::EnvState render_scene(const RunConfig& cfg) {
  auto render_rng = stream(cfg.seed, kTagRender);
  return envs::reset(cfg.env, render_rng);
}

RunLog run(const RunConfig& cfg) {
  cfg.validate();
  auto scene_rng = stream(cfg.seed, kTagScene);
  auto outcome_rng = stream(cfg.seed, kTagOutcome);
  auto policy_rng = stream(cfg.seed, kTagPolicy);
  auto train_rng = stream(cfg.seed, kTagTrain);

  predictor::Ensemble params =
      predictor::init<float>(cfg.model, core::derive_seed(cfg.seed, kTagInit));
  core::ReplayBuffer buffer;

  RunLog log;
  log.method = cfg.method;
  log.env_kind = cfg.env.kind;
  log.seed = cfg.seed;
  log.eval_checkpoints = cfg.eval_checkpoints;

  const double switch_at = cfg.policy.random_fraction *
                           static_cast<double>(cfg.budget);

  for (std::int64_t step = 1; step <= cfg.budget; ++step) {
    envs::EnvState state = envs::reset(cfg.env, scene_rng);
    const core::Mask& valid = state.scene.valid();

    core::ActionSpec a;
    const bool in_warmup = step <= cfg.warmup;
    if (in_warmup || cfg.method == Method::random) {
      a = policy::sample_random(policy_rng, valid, cfg.model.orientations);
    } else if (cfg.method == Method::where2act &&
               static_cast<double>(step - 1) < switch_at) {
      a = policy::sample_random(policy_rng, valid, cfg.model.orientations);
    } else {
      const auto maps = predictor::predict_all(params, state.scene);
      log.action_forwards += 1;
      switch (cfg.method) {
        case Method::greedy: {
          policy::ScoreMap score{predictor::mean_map(maps).values()};
          a = policy::select_argmax(score, valid);
          break;
        }
        case Method::where2act: {
          a = policy::sample_boltzmann(policy_rng, predictor::mean_map(maps),
                                       valid,
                                       cfg.policy.boltzmann_temperature);
          break;
        }
        case Method::jsd_only: {
          const core::InfoMap info =
              infogain::normalize(infogain::info_map(maps), valid);
          a = policy::select_argmax(
              policy::explore_score(zero_map(cfg.model), info, 1.0), valid);
          break;
        }
        case Method::ida:
        default: {
          const core::InfoMap info =
              infogain::normalize(infogain::info_map(maps), valid);
          const core::ProbMap rhat =
              cfg.policy.thompson
                  ? maps[static_cast<std::size_t>(policy::sample_head(
                        policy_rng, cfg.model.n_heads))]
                  : predictor::mean_map(maps);
          a = policy::select_argmax(
              policy::explore_score(rhat, info, cfg.policy.c_expl), valid);
          break;
        }
      }
    }

    const core::Outcome outcome = envs::step(state, a, outcome_rng);
    log.env_steps += 1;
    buffer.push(core::Transition{state.scene, a, outcome, step});

    double loss_sum = 0.0;
    for (int u = 0; u < cfg.model.updates_per_interaction; ++u) {
      const auto batch = buffer.sample_batch(
          train_rng, static_cast<std::size_t>(cfg.model.batch_size));
      auto [next, loss] = predictor::train_step(std::move(params), batch);
      params = std::move(next);
      loss_sum += loss;
    }
    InteractionRecord rec;
    rec.step = step;
    rec.action = a;
    rec.outcome = outcome;
    rec.loss = cfg.model.updates_per_interaction > 0
                   ? loss_sum / cfg.model.updates_per_interaction
                   : -1.0;
    log.interactions.push_back(rec);

    if (std::find(cfg.eval_checkpoints.begin(), cfg.eval_checkpoints.end(),
                  step) != cfg.eval_checkpoints.end()) {
      CheckpointRecord ck;
      ck.step = step;
      ck.success_rate =
          evaluate(params, cfg, static_cast<std::uint64_t>(step));
      log.env_steps += cfg.eval_episodes;

      // Fixed render scene: the stream is re-derived at every checkpoint,
      // so the maps of successive checkpoints show the same scene.
      const envs::EnvState rs = render_scene(cfg);
      const auto maps = predictor::predict_all(params, rs.scene);
      ck.mean_max =
          core::max_over_orientations(predictor::mean_map(maps).values());
      ck.info_max = core::max_over_orientations(
          infogain::normalize(infogain::info_map(maps), rs.scene.valid())
              .values);
      ck.params = params;
      log.checkpoints.push_back(std::move(ck));
    }
  }
  return log;
}

}  // namespace afford::trainer
