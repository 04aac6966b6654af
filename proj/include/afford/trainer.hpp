#pragma once
// The online interact-update loop: reset a scene, pick an action by the
// configured method, observe the outcome, push it to the replay buffer,
// run a fixed number of gradient updates, and evaluate at checkpoints
// with the pessimistic rule. All randomness flows through streams derived
// from one run seed, with evaluation streams disjoint from training ones.

#include <cstdint>
#include <functional>
#include <vector>

#include "afford/core.hpp"
#include "afford/envs.hpp"
#include "afford/policy.hpp"
#include "afford/predictor.hpp"

namespace afford::trainer {

enum class Method { ida, jsd_only, greedy, random, where2act };

struct RunConfig {
  envs::EnvConfig env;
  predictor::ModelConfig model;
  policy::PolicyConfig policy;
  Method method = Method::ida;
  std::int64_t budget = 250;
  std::int64_t warmup = 10;
  std::vector<std::int64_t> eval_checkpoints = {25, 50, 100, 250};
  std::int64_t eval_episodes = 20;
  std::uint64_t seed = 0;
  void validate() const;
};

struct InteractionRecord {
  std::int64_t step = 0;  // 1-based
  core::ActionSpec action;
  core::Outcome outcome;
  // Mean pre-update loss over this interaction's gradient updates;<0 when
  // updates_per_interaction is 0 (serialized as null).
  double loss = -1.0;
};

struct CheckpointRecord {
  std::int64_t step = 0;
  double success_rate = 0.0;
  // Per-pixel maximum over orientations on a fixed render scene, for the
  // image dumps: ensemble mean and normalized information.
  core::Grid2 mean_max, info_max;
  predictor::Ensemble params;  // snapshot for checkpoint files
};

struct RunLog {
  Method method = Method::ida;
  envs::EnvKind env_kind = envs::EnvKind::shape_grasp;
  std::uint64_t seed = 0;
  std::vector<std::int64_t> eval_checkpoints;
  std::vector<InteractionRecord> interactions;
  std::vector<CheckpointRecord> checkpoints;
  // Total environment steps taken (training + evaluation) and the number
  // of predictor forward passes used to choose training actions.
  std::int64_t env_steps = 0;
  std::int64_t action_forwards = 0;
};

// Maps an evaluation scene to per-head probability maps. The default wraps
// the ensemble; tests substitute the environment's ground truth.
using MapProvider =
    std::function<std::vector<core::ProbMap>(const envs::EnvState&)>;

// The evaluation coefficient a method actually uses: only the information-
// driven method evaluates pessimistically; every baseline scores actions
// by the plain ensemble mean.
double effective_c_eval(const RunConfig& cfg);

// Pessimistic evaluation over eval_episodes fresh scenes: argmax of
// mean - c_eval * normalized info, one environment step per scene.
// `stream_salt` separates the evaluation streams of different checkpoints.
// Touches neither parameters nor buffer.
double evaluate_with(const MapProvider& provider, const RunConfig& cfg,
                     std::uint64_t stream_salt);

double evaluate(const predictor::Ensemble& params, const RunConfig& cfg,
                std::uint64_t stream_salt = 0);

// The fixed scene the checkpoint image dumps show; derived from the run
// seed alone, so it is identical at every checkpoint of a run.
envs::EnvState render_scene(const RunConfig& cfg);

RunLog run(const RunConfig& cfg);

}  // namespace afford::trainer
