#include "difftse/training.hpp"

#include "difftse/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <random>
#include <stdexcept>

namespace difftse {

using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kExampleStream = 2;

bool grads_finite(const nn::GradBuffer& g) {
  for (const auto& m : g) {
    if (!m.allFinite()) return false;
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ContractError("TrainConfig: lr must be > 0");
  if (!(delta_T >= 0.0 && delta_T <= 1.0)) throw ContractError("TrainConfig: delta_T must be in [0, 1]");
  if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ContractError("TrainConfig: alpha and beta must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ContractError("TrainConfig: ema_decay must be in [0, 1]");
  if (batch_size < 0) throw ContractError("TrainConfig: batch_size must be >= 0");
  if (steps < 0) throw ContractError("TrainConfig: steps must be >= 0");
  if (!(t_eps > 0.0)) throw ContractError("TrainConfig: t_eps must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ContractError("TrainConfig: Adam betas must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ContractError("TrainConfig: adam_eps must be > 0");
  if (checkpoint_every < 0) throw ContractError("TrainConfig: checkpoint_every must be >= 0");
}

double learning_rate(const TrainConfig& cfg, long step) {
  if (!cfg.cosine_decay || cfg.steps <= 0) return cfg.lr;
  const double progress = std::min(1.0, static_cast<double>(step - 1) / cfg.steps);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double draw_time(const TrainConfig& cfg, const SdeParams& p, Rng& rng) {
  if (!(cfg.t_eps < p.t_max)) throw ContractError("draw_time: t_eps must be below T");
  std::bernoulli_distribution terminal(cfg.delta_T);
  if (terminal(rng)) return p.t_max;
  std::uniform_real_distribution<double> uniform(cfg.t_eps, p.t_max);
  double t = uniform(rng);
  if (t >= p.t_max) t = std::nextafter(p.t_max, cfg.t_eps);
  return t;
}

double interior_loss_value(const SpecTensor& score, const SpecTensor& z, double t,
                           const SdeParams& p) {
  require_same_shape(score, z, "interior_loss_value");
  return (score + z * (1.0 / kernel_std(t, p))).squared_norm();
}

SpecTensor terminal_target(const SpecTensor& z, const SpecTensor& x0, const SpecTensor& y,
                           const SdeParams& p) {
  require_same_shape(x0, y, "terminal_target");
  require_same_shape(z, y, "terminal_target");
  const double T = p.t_max;
  const double var = kernel_variance(T, p);
  SpecTensor target = z * (-1.0 / std::sqrt(var));
  target -= (x0 - y) * (mean_decay(T, p) / var);
  return target;
}

double terminal_loss_value(const SpecTensor& score, const SpecTensor& z, const SpecTensor& x0,
                           const SpecTensor& y, const SdeParams& p) {
  require_same_shape(score, z, "terminal_loss_value");
  return (score - terminal_target(z, x0, y, p)).squared_norm();
}

double snr_loss(const SpecTensor& x0, const SpecTensor& x0_hat) {
  require_same_shape(x0, x0_hat, "snr_loss");
  const double sig = x0.squared_norm();
  if (!(sig > 0.0)) throw ContractError("snr_loss: zero reference signal");
  const double err = (x0 - x0_hat).squared_norm();
  if (!(err > 0.0)) return -kMetricCapDb;
  return std::clamp(-10.0 * std::log10(sig / err), -kMetricCapDb, kMetricCapDb);
}

namespace {

struct ScoreTerm {
  Var loss;
  Var x0_hat;
};

// Score-matching term: |s(x_t) - target|^2 where target is the analytic minimiser.
ScoreTerm score_term(Tape& tape, const TseModel& model, const MixtureExample& ex, Var embedding,
                     const SpecTensor& xt, const SpecTensor& target, double t) {
  Var y = tape.constant(to_stacked(ex.y));
  auto out = model.score(tape, tape.constant(to_stacked(xt)), y, embedding, t);
  Var diff = tape.sub(out.score, tape.constant(to_stacked(target)));
  return {tape.sum_squares(diff), out.x0_hat};
}

ScoreTerm interior_term(Tape& tape, const TseModel& model, const MixtureExample& ex, Var embedding,
                        double t, Rng& rng) {
  if (!(t < model.sde().t_max)) throw ContractError("score_loss_interior: t >= T belongs to the terminal loss");
  auto sample = sample_xt(ex.x0, ex.y, t, model.sde(), rng);
  const SpecTensor target = sample.z * (-1.0 / kernel_std(t, model.sde()));
  return score_term(tape, model, ex, embedding, sample.xt, target, t);
}

ScoreTerm terminal_term(Tape& tape, const TseModel& model, const MixtureExample& ex, Var embedding,
                        Rng& rng) {
  const SdeParams& p = model.sde();
  SpecTensor z = complex_normal(ex.y.freqs(), ex.y.frames(), rng);
  SpecTensor xt = ex.y + z * kernel_std(p.t_max, p);
  return score_term(tape, model, ex, embedding, xt, terminal_target(z, ex.x0, ex.y, p), p.t_max);
}

}  // namespace

ExampleLoss score_loss_interior(Tape& tape, const TseModel& model, const MixtureExample& ex,
                                double t, Rng& rng) {
  Var e = model.clue_embedding(tape, ex.c.spec);
  ScoreTerm term = interior_term(tape, model, ex, e, t, rng);
  LossReport r;
  r.score_loss = tape.value(term.loss)(0, 0);
  r.total = r.score_loss;
  r.t_drawn = t;
  return {term.loss, r};
}

ExampleLoss score_loss_terminal(Tape& tape, const TseModel& model, const MixtureExample& ex,
                                Rng& rng) {
  Var e = model.clue_embedding(tape, ex.c.spec);
  ScoreTerm term = terminal_term(tape, model, ex, e, rng);
  LossReport r;
  r.score_loss = tape.value(term.loss)(0, 0);
  r.total = r.score_loss;
  r.t_drawn = model.sde().t_max;
  r.was_terminal = true;
  return {term.loss, r};
}

ExampleLoss example_objective(Tape& tape, const TseModel& model, const MixtureExample& ex,
                              const TrainConfig& cfg, Rng& rng) {
  Var e = model.clue_embedding(tape, ex.c.spec);
  LossReport r;
  if (model.variant() == ModelVariant::Tse) {
    Var est = model.extract(tape, tape.constant(to_stacked(ex.y)), e);
    Var snr = tape.negative_snr(est, to_stacked(ex.x0), kMetricCapDb);
    r.snr_loss = tape.value(snr)(0, 0);
    r.total = r.snr_loss;
    return {snr, r};
  }

  const double t = draw_time(cfg, model.sde(), rng);
  r.t_drawn = t;
  r.was_terminal = t >= model.sde().t_max;
  ScoreTerm term = r.was_terminal ? terminal_term(tape, model, ex, e, rng)
                                  : interior_term(tape, model, ex, e, t, rng);
  r.score_loss = tape.value(term.loss)(0, 0);
  if (model.variant() == ModelVariant::DiffTse) {
    r.total = r.score_loss;
    return {term.loss, r};
  }

  Var snr = tape.negative_snr(term.x0_hat, to_stacked(ex.x0), kMetricCapDb);
  r.snr_loss = tape.value(snr)(0, 0);
  Var total = tape.add(tape.scale(snr, cfg.alpha), tape.scale(term.loss, cfg.beta));
  r.total = tape.value(total)(0, 0);
  return {total, r};
}

std::vector<const MixtureExample*> sample_batch(const std::vector<MixtureExample>& corpus,
                                                int batch_size, Rng& rng) {
  if (batch_size < 0) throw ContractError("sample_batch: negative batch size");
  std::vector<const MixtureExample*> batch;
  if (batch_size == 0) return batch;
  if (corpus.empty()) throw ContractError("sample_batch: empty corpus");

  std::map<int, std::vector<const MixtureExample*>> by_speaker;
  for (const auto& ex : corpus) by_speaker[ex.target_id].push_back(&ex);
  std::vector<const std::vector<const MixtureExample*>*> groups;
  groups.reserve(by_speaker.size());
  for (const auto& [id, members] : by_speaker) groups.push_back(&members);

  std::uniform_int_distribution<std::size_t> pick_speaker(0, groups.size() - 1);
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    const auto& members = *groups[pick_speaker(rng)];
    std::uniform_int_distribution<std::size_t> pick_example(0, members.size() - 1);
    batch.push_back(members[pick_example(rng)]);
  }
  return batch;
}

Optimizer::Optimizer(const nn::ParamSet& initial, const TrainConfig& cfg)
    : cfg_(cfg), m_(nn::zero_grads(initial)), v_(nn::zero_grads(initial)), ema_(initial) {}

void Optimizer::step(nn::ParamSet& params, const nn::GradBuffer& grads) {
  if (static_cast<int>(grads.size()) != params.size()) {
    throw ContractError("Optimizer::step: gradient count does not match parameters");
  }
  ++t_;
  const double b1 = cfg_.adam_beta1;
  const double b2 = cfg_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = cfg_.ema_decay;
  const double lr = learning_rate(cfg_, t_);
  for (int i = 0; i < params.size(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    Matrix& w = params[i].value;
    const Matrix& g = grads[k];
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
      throw ContractError("Optimizer::step: gradient shape mismatch for " + params[i].name);
    }
    m_[k] = b1 * m_[k] + (1.0 - b1) * g;
    v_[k] = b2 * v_[k] + (1.0 - b2) * g.cwiseAbs2();
    w.array() -= lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.adam_eps);
    Matrix& shadow = ema_[i].value;
    shadow = decay * shadow + (1.0 - decay) * w;
  }
}

std::string format_log_line(const StepReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%d t_drawn=%.5f score_loss=%.6g snr_loss=%.6g total=%.6g wall_ms=%.2f%s",
                r.step, r.loss.t_drawn, r.loss.score_loss, r.loss.snr_loss, r.loss.total, r.wall_ms,
                r.loss.aborted ? " aborted=1" : "");
  return buf;
}

std::pair<nn::GradBuffer, StepReport> batch_gradients(const TseModel& model,
                                                      const std::vector<const MixtureExample*>& batch,
                                                      const TrainConfig& cfg,
                                                      std::uint64_t batch_seed) {
  const std::size_t n = batch.size();
  std::vector<nn::GradBuffer> grads(n);
  std::vector<LossReport> reports(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    Rng rng(split_seed(batch_seed, i));
    Tape tape(model.params());
    ExampleLoss loss = example_objective(tape, model, *batch[i], cfg, rng);
    reports[i] = loss.report;
    if (std::isfinite(loss.report.total)) {
      tape.backward(loss.total);
      grads[i] = tape.take_param_grads();
    }
  });

  nn::GradBuffer total = nn::zero_grads(model.params());
  StepReport report;
  if (n == 0) return {total, report};
  const double w = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const LossReport& r = reports[i];
    if (!std::isfinite(r.total) || grads[i].empty()) {
      report.loss.aborted = true;
      continue;
    }
    nn::accumulate(total, grads[i], w);
    report.loss.score_loss += w * r.score_loss;
    report.loss.snr_loss += w * r.snr_loss;
    report.loss.total += w * r.total;
    report.loss.t_drawn += w * r.t_drawn;
    report.terminal_fraction += r.was_terminal ? w : 0.0;
  }
  if (!grads_finite(total)) report.loss.aborted = true;
  return {total, report};
}

Trainer::Trainer(TseModel& model, TrainConfig cfg)
    : model_(&model), cfg_(cfg), optimizer_(model.params(), cfg) {
  cfg_.validate();
  if (std::abs(cfg_.t_eps - model.t_eps()) > 1e-12) {
    throw ContractError("Trainer: t_eps differs between training and model configs");
  }
}

StepReport Trainer::step(const std::vector<MixtureExample>& train_set) {
  const auto start = std::chrono::steady_clock::now();
  const auto step_seed = split_seed(cfg_.seed, static_cast<std::uint64_t>(step_));
  Rng batch_rng(split_seed(step_seed, kBatchStream));
  auto batch = sample_batch(train_set, cfg_.batch_size, batch_rng);
  auto [grads, report] = batch_gradients(*model_, batch, cfg_, split_seed(step_seed, kExampleStream));
  report.step = step_;
  if (!report.loss.aborted && !batch.empty()) optimizer_.step(model_->params(), grads);
  ++step_;
  report.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TseModel Trainer::ema_model() const {
  TseModel out(model_->variant(), model_->config(), model_->sde(), model_->t_eps());
  out.params() = optimizer_.ema();
  return out;
}

TseModel train_model(TseModel& model, const std::vector<MixtureExample>& train_set,
                     const TrainConfig& cfg, const TrainCallbacks& callbacks) {
  Trainer trainer(model, cfg);
  for (int s = 0; s < cfg.steps; ++s) {
    StepReport r = trainer.step(train_set);
    if (callbacks.on_step) callbacks.on_step(r);
    const int done = trainer.steps_done();
    if (callbacks.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 &&
        done < cfg.steps) {
      callbacks.on_checkpoint(done, trainer);
    }
  }
  return trainer.ema_model();
}

}  // namespace difftse
