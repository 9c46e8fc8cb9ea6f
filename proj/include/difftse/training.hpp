#pragma once

#include "difftse/corpus.hpp"
#include "difftse/models.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace difftse {

struct TrainConfig {
  double lr = 1e-4;
  bool cosine_decay = false;  // anneal lr to 0 over `steps`
  double delta_T = 0.1;  // probability of drawing t = T
  double alpha = 1.0;    // weight of the SNR loss (multi-task)
  double beta = 1.0;     // weight of the score loss (multi-task)
  double ema_decay = 0.999;
  int batch_size = 16;
  int steps = 1000;
  double t_eps = kDefaultTimeEps;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_every = 0;  // 0: final checkpoint only
  int jobs = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Losses for one example (or a batch mean) and the time that was drawn.
struct LossReport {
  double score_loss = 0.0;
  double snr_loss = 0.0;
  double total = 0.0;
  double t_drawn = 0.0;
  bool was_terminal = false;
  bool aborted = false;
};

/// Step size for optimizer step `step` (1-based).
double learning_rate(const TrainConfig& cfg, long step);

/// t = T with probability delta_T, otherwise uniform on [t_eps, T).
double draw_time(const TrainConfig& cfg, const SdeParams& p, Rng& rng);

// Value-level loss forms, used to verify minimisers without a network.
/// |s + z / sigma(t)|^2.
double interior_loss_value(const SpecTensor& score, const SpecTensor& z, double t, const SdeParams& p);
/// |s + z / sigma(T) + e^{-gamma T} (x0 - y) / sigma(T)^2|^2.
double terminal_loss_value(const SpecTensor& score, const SpecTensor& z, const SpecTensor& x0,
                           const SpecTensor& y, const SdeParams& p);
/// The score that makes `terminal_loss_value` zero.
SpecTensor terminal_target(const SpecTensor& z, const SpecTensor& x0, const SpecTensor& y,
                           const SdeParams& p);

/// -SNR(x0, x0_hat) in dB, clamped to +/- kMetricCapDb.
double snr_loss(const SpecTensor& x0, const SpecTensor& x0_hat);

/// Tape-level losses. Each returns the scalar loss variable and fills `report`.
struct ExampleLoss {
  nn::Var total;
  LossReport report;
};

/// Interior score-matching loss at a given t in [t_eps, T): draws (x_t, z) from the kernel.
ExampleLoss score_loss_interior(nn::Tape& tape, const TseModel& model, const MixtureExample& ex,
                                double t, Rng& rng);
/// Terminal loss with x_T = y + sigma(T) z.
ExampleLoss score_loss_terminal(nn::Tape& tape, const TseModel& model, const MixtureExample& ex,
                                Rng& rng);
/// Full per-example objective for the model's variant: SNR loss (tse), score
/// loss with a drawn t (diff-tse), alpha * SNR + beta * score (diff-tse-mt).
ExampleLoss example_objective(nn::Tape& tape, const TseModel& model, const MixtureExample& ex,
                              const TrainConfig& cfg, Rng& rng);

/// Speaker-first sampling: a target speaker uniformly, then one of its examples uniformly.
std::vector<const MixtureExample*> sample_batch(const std::vector<MixtureExample>& corpus,
                                                int batch_size, Rng& rng);

/// Adam with an exponential moving average of the weights.
class Optimizer {
 public:
  Optimizer(const nn::ParamSet& initial, const TrainConfig& cfg);

  /// One Adam step, then ema = decay * ema + (1 - decay) * params.
  void step(nn::ParamSet& params, const nn::GradBuffer& grads);
  const nn::ParamSet& ema() const { return ema_; }
  long steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<nn::Matrix> m_;
  std::vector<nn::Matrix> v_;
  nn::ParamSet ema_;
  long t_ = 0;
};

struct StepReport {
  int step = 0;
  LossReport loss;       // batch means; t_drawn is the batch mean time
  double terminal_fraction = 0.0;
  double wall_ms = 0.0;
};

std::string format_log_line(const StepReport& r);

/// Computes the batch-averaged gradient and loss report without updating anything.
/// Per-example streams are split from `batch_seed`, so any `jobs` value gives
/// identical results.
std::pair<nn::GradBuffer, StepReport> batch_gradients(const TseModel& model,
                                                      const std::vector<const MixtureExample*>& batch,
                                                      const TrainConfig& cfg, std::uint64_t batch_seed);

class Trainer {
 public:
  Trainer(TseModel& model, TrainConfig cfg);

  /// Samples a batch, computes gradients, and applies one optimizer step.
  /// A non-finite loss skips the update and reports `aborted`.
  StepReport step(const std::vector<MixtureExample>& train_set);

  const Optimizer& optimizer() const { return optimizer_; }
  /// Copies the EMA weights into a model with the same topology.
  TseModel ema_model() const;
  int steps_done() const { return step_; }

 private:
  TseModel* model_;
  TrainConfig cfg_;
  Optimizer optimizer_;
  int step_ = 0;
};

struct TrainCallbacks {
  std::function<void(const StepReport&)> on_step;
  std::function<void(int step, const Trainer&)> on_checkpoint;
};

/// Runs cfg.steps steps and returns the EMA model.
TseModel train_model(TseModel& model, const std::vector<MixtureExample>& train_set,
                     const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

}  // namespace difftse
