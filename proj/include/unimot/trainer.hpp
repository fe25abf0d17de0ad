#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "unimot/checkpoint.hpp"
#include "unimot/data.hpp"
#include "unimot/errors.hpp"
#include "unimot/model.hpp"
#include "unimot/optim.hpp"

namespace unimot {

enum class LrSchedule { Cosine, Constant };

// One curriculum stage. The defaults and the presets below fix the published
// recipe: per-stage learning rate, schedule, warmup, clip norm, batch size,
// sample budget, and task mix; `i2t_discrete` is the stage-1 variant that
// feeds I2T images as discrete generation blocks instead of continuous slots.
struct StageConfig {
  std::string name = "stage1";
  double learning_rate = 5e-5;
  LrSchedule schedule = LrSchedule::Cosine;
  int64_t warmup_steps = 200;
  int64_t total_samples = 50000;
  int64_t batch_size = 32;
  double clip_norm = 1.0;
  MixSpec mix{{TaskKind::T2I, TaskKind::I2T, TaskKind::Edit}, {14, 2, 1}};
  RoutingPolicy policy{};
  bool i2t_discrete = true;
  TaskKind holdout_task = TaskKind::T2I;

  // Partial trailing batches are dropped; the schedule runs over full steps.
  int64_t total_steps() const { return total_samples / batch_size; }

  void validate() const {
    mix.validate();
    if (!(learning_rate > 0.0))
      throw ConfigError("stage " + name + ": learning rate must be positive");
    if (warmup_steps < 0)
      throw ConfigError("stage " + name + ": warmup must be >= 0");
    if (batch_size <= 0)
      throw ConfigError("stage " + name + ": batch size must be positive");
    if (!(clip_norm > 0.0))
      throw ConfigError("stage " + name + ": clip norm must be positive");
    if (total_steps() <= warmup_steps)
      throw ConfigError("stage " + name +
                        ": warmup must end before the step budget (" +
                        std::to_string(total_steps()) + " steps)");
  }
};

// Backbone pretraining: builds the "pre-trained MLLM" that the curriculum
// then freezes. Understanding-only data, so no generation tokens appear
// before the generation expert exists. Budget set by pilot runs, not by the
// published recipe.
inline StageConfig pretrain_config() {
  StageConfig c;
  c.name = "pretrain";
  c.learning_rate = 3e-4;
  c.schedule = LrSchedule::Cosine;
  c.warmup_steps = 100;
  c.total_samples = 24000;
  c.batch_size = 32;
  c.clip_norm = 1.0;
  c.mix = MixSpec{{TaskKind::I2T, TaskKind::TextOnly}, {2, 1}};
  c.i2t_discrete = false;
  c.holdout_task = TaskKind::I2T;
  return c;
}

inline StageConfig stage1_config() {
  StageConfig c;  // defaults are the stage-1 column
  return c;
}

inline StageConfig stage2_config() {
  StageConfig c;
  c.name = "stage2";
  c.learning_rate = 1.25e-5;
  c.schedule = LrSchedule::Cosine;
  c.warmup_steps = 200;
  c.total_samples = 10000;
  c.batch_size = 16;
  c.clip_norm = 1.0;
  c.mix = MixSpec{{TaskKind::T2I, TaskKind::I2T, TaskKind::Edit}, {7, 2, 1}};
  c.i2t_discrete = false;
  return c;
}

inline StageConfig stage3_config() {
  StageConfig c;
  c.name = "stage3";
  c.learning_rate = 1.25e-5;
  c.schedule = LrSchedule::Constant;
  c.warmup_steps = 10;
  c.total_samples = 5000;
  c.batch_size = 16;
  c.clip_norm = 0.1;
  c.mix = MixSpec{
      {TaskKind::T2I, TaskKind::Edit, TaskKind::I2T, TaskKind::TextOnly},
      {4, 3, 2, 1}};
  c.i2t_discrete = false;
  return c;
}

inline std::vector<StageConfig> standard_stages() {
  return {stage1_config(), stage2_config(), stage3_config()};
}

// True when the stage's data carries generation-routed tokens, so the model
// needs its generation expert before the stage starts.
inline bool stage_needs_generation(const StageConfig& sc) {
  for (TaskKind t : sc.mix.tasks)
    if (t == TaskKind::T2I || t == TaskKind::Edit) return true;
  return sc.i2t_discrete;
}

// Linear warmup from 0 to the base rate over `warmup_steps`, then either
// cosine decay reaching 0 at the stage's final step or a constant plateau.
inline double lr_at(int64_t step, const StageConfig& cfg) {
  if (step < 0) throw ConfigError("lr_at: step must be >= 0");
  const double lr = cfg.learning_rate;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return lr * double(step) / double(cfg.warmup_steps);
  if (cfg.schedule == LrSchedule::Constant) return lr;
  const int64_t total = cfg.total_steps();
  if (step >= total) return 0.0;
  const double progress =
      double(step - cfg.warmup_steps) / double(total - cfg.warmup_steps);
  return lr * 0.5 * (1.0 + std::cos(progress * std::numbers::pi));
}

inline constexpr const char* kMetricsHeader =
    "step,stage,lr,loss_total,loss_t2i,loss_i2t,loss_edit,loss_text";
inline constexpr const char* kHoldoutHeader = "step,stage,holdout_loss";

namespace detail {

inline std::string fmt_g(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.10g", v);
  return b;
}

}  // namespace detail

// Token-weighted mean NLL of a fixed batch; pure, no parameter updates.
template <class Real>
double eval_batch_loss(MoTParams<Real>& p,
                       const std::vector<MultimodalSequence>& seqs,
                       const RoutingPolicy& policy) {
  double total = 0.0;
  long count = 0;
  for (const auto& s : seqs) {
    Graph<Real> g;
    BoundModel<Real> b = bind_model(g, p, nullptr);
    auto tags = route_tokens(s, policy, p.cfg.vocab);
    auto fwd = forward_sequence(g, b, p, s, tags);
    auto nll = sequence_nll(g, fwd, p, s);
    total += nll.value;
    count += nll.count;
  }
  return count > 0 ? total / count : 0.0;
}

struct RunStageOptions {
  std::ostream* metrics = nullptr;      // per-step CSV rows
  std::ostream* holdout_log = nullptr;  // held-out loss CSV rows
  std::string checkpoint_path;          // written when the call returns, if set
  int64_t halt_after_steps = -1;        // <0 runs the stage to completion
  int64_t holdout_every = 100;
  int holdout_size = 32;
  bool write_header = true;  // off when appending stages to one CSV
};

struct StageSummary {
  int64_t steps_run = 0;
  bool completed = false;
  double initial_holdout = 0.0;
  double final_holdout = 0.0;
  std::vector<std::pair<int64_t, double>> holdout_curve;
};

namespace detail {

// Held-out items live at stream indices far past any training horizon, so
// their seeds never collide with training samples of the same stage.
constexpr uint64_t kHoldoutIndexBase = uint64_t(1) << 40;

}  // namespace detail

// Runs (or resumes) one stage: walks the ratio-mixed sample stream from the
// position recorded in `ts`, accumulates the token-mean NLL of each batch,
// backpropagates, and applies clipped AdamW under the stage's schedule.
// Logs one CSV row per step, tracks a fixed held-out batch, re-checks the
// frozen backbone at the end, and optionally saves a resumable checkpoint.
template <class Real>
StageSummary run_stage(const World& world, MoTParams<Real>& p,
                       OptimizerState<Real>& opt, TrainerState& ts,
                       const StageConfig& sc,
                       const RunStageOptions& opts = {}) {
  sc.validate();
  if (world.vocab.text_size != p.cfg.vocab.text_size ||
      world.vocab.sem_size != p.cfg.vocab.sem_size ||
      world.vocab.pix_size != p.cfg.vocab.pix_size)
    throw ConfigError("trainer: world and model vocabularies differ");
  if (ts.step_in_stage < 0 ||
      ts.samples_consumed != ts.step_in_stage * sc.batch_size)
    throw ConfigError(
        "trainer: state says " + std::to_string(ts.samples_consumed) +
        " samples over " + std::to_string(ts.step_in_stage) +
        " steps, which does not match batch size " +
        std::to_string(sc.batch_size));

  const int64_t total = sc.total_steps();
  const uint64_t stream_seed = derive_seed(ts.run_seed, ts.stage_index);
  MixStream stream(sc.mix, stream_seed);
  for (int64_t i = 0; i < ts.samples_consumed; i++) stream.next();

  std::vector<MultimodalSequence> holdout;
  holdout.reserve(size_t(opts.holdout_size));
  for (int i = 0; i < opts.holdout_size; i++)
    holdout.push_back(
        gen_sample(world, sc.holdout_task,
                   derive_seed(stream_seed, detail::kHoldoutIndexBase + i),
                   sc.i2t_discrete)
            .seq);

  GradSinks<Real> sinks = make_grad_sinks(p);
  auto frozen = take_frozen_snapshot(p);

  StageSummary sum;
  if (opts.write_header && ts.step_in_stage == 0) {
    if (opts.metrics) *opts.metrics << kMetricsHeader << '\n';
    if (opts.holdout_log) *opts.holdout_log << kHoldoutHeader << '\n';
  }
  auto log_holdout = [&]() {
    const double v = eval_batch_loss(p, holdout, sc.policy);
    sum.holdout_curve.emplace_back(ts.step_in_stage, v);
    if (opts.holdout_log)
      *opts.holdout_log << ts.step_in_stage << ',' << sc.name << ','
                        << detail::fmt_g(v) << '\n';
    return v;
  };
  sum.initial_holdout = log_holdout();

  while (ts.step_in_stage < total &&
         (opts.halt_after_steps < 0 || sum.steps_run < opts.halt_after_steps)) {
    Graph<Real> g;
    BoundModel<Real> b = bind_model(g, p, &sinks);
    std::vector<typename Graph<Real>::Id> parts;
    double task_nll[kNumTasks] = {};
    long task_count[kNumTasks] = {};
    long total_count = 0;
    for (int64_t i = 0; i < sc.batch_size; i++) {
      const MixStream::Item item = stream.next();
      const Sample smp =
          gen_sample(world, item.task, item.seed, sc.i2t_discrete);
      auto tags = route_tokens(smp.seq, sc.policy, world.vocab);
      auto fwd = forward_sequence(g, b, p, smp.seq, tags);
      auto nll = sequence_nll(g, fwd, p, smp.seq);
      parts.push_back(nll.node);
      task_nll[int(item.task)] += nll.value;
      task_count[int(item.task)] += nll.count;
      total_count += nll.count;
    }
    if (total_count == 0)
      throw ConfigError("trainer: batch carries no loss-bearing targets");
    const auto loss =
        g.scale(parts.size() == 1 ? parts[0] : g.sum_scalars(parts),
                Real(1.0 / double(total_count)));
    sinks.zero();
    g.backward(loss);
    const double lr = lr_at(ts.step_in_stage, sc);
    adamw_step(p, sinks, opt, lr, sc.clip_norm);

    if (opts.metrics) {
      double loss_total = 0.0;
      for (int t = 0; t < kNumTasks; t++) loss_total += task_nll[t];
      loss_total /= double(total_count);
      *opts.metrics << ts.step_in_stage << ',' << sc.name << ','
                    << detail::fmt_g(lr) << ',' << detail::fmt_g(loss_total);
      for (int t = 0; t < kNumTasks; t++) {
        *opts.metrics << ',';
        if (task_count[t] > 0)
          *opts.metrics << detail::fmt_g(task_nll[t] / double(task_count[t]));
      }
      *opts.metrics << '\n';
    }

    ts.step_in_stage++;
    ts.samples_consumed += sc.batch_size;
    sum.steps_run++;
    if (opts.holdout_every > 0 && ts.step_in_stage % opts.holdout_every == 0 &&
        ts.step_in_stage < total)
      log_holdout();
  }

  sum.completed = ts.step_in_stage >= total;
  if (p.backbone_frozen) assert_frozen(p, frozen);
  sum.final_holdout = log_holdout();
  if (!opts.checkpoint_path.empty())
    save_checkpoint(opts.checkpoint_path, p, &opt, &ts);
  return sum;
}

// Moves the trainer state to the next curriculum stage.
inline void advance_stage(TrainerState& ts) {
  ts.stage_index++;
  ts.step_in_stage = 0;
  ts.samples_consumed = 0;
}

}  // namespace unimot
