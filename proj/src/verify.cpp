#include "difftse/verify.hpp"

#include "difftse/corpus.hpp"
#include "difftse/signal.hpp"
#include "difftse/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace difftse {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

SpecTensor random_spec(Index f, Index l, double scale, Rng& rng) {
  return complex_normal(f, l, rng) * scale;
}

// Small random model used by the gradient checks; every parameter is perturbed
// so no gradient path is switched off by a zero initialisation.
TseModel small_model(ModelVariant v, const SdeParams& p, std::uint64_t seed) {
  NetConfig cfg;
  cfg.freqs = 5;
  cfg.width = 6;
  cfg.blocks = 2;
  cfg.embed_dim = 4;
  cfg.time_dim = 4;
  cfg.seed = seed;
  TseModel model(v, cfg, p);
  Rng rng(split_seed(seed, 11));
  std::normal_distribution<double> normal(0.0, 0.2);
  for (int i = 0; i < model.params().size(); ++i) {
    auto& w = model.params()[i].value;
    for (Index k = 0; k < w.size(); ++k) w.data()[k] += normal(rng);
  }
  return model;
}

MixtureExample small_example(std::uint64_t seed) {
  Rng rng(seed);
  MixtureExample ex;
  ex.x0 = random_spec(5, 6, 0.3, rng);
  ex.x0_interferer = random_spec(5, 6, 0.3, rng);
  ex.y = ex.x0 + ex.x0_interferer;
  ex.c.spec = random_spec(5, 4, 0.3, rng);
  return ex;
}

}  // namespace

CheckResult check_kernel_monte_carlo(const SdeParams& p, std::uint64_t seed, std::size_t n_paths,
                                     double dt) {
  const auto start = Clock::now();
  CheckResult r{"kernel-monte-carlo", true, "", 0.0};
  SpecTensor x0(2, 2);
  SpecTensor y(2, 2);
  x0(0, 0) = {1.0, 0.5};
  x0(1, 0) = {-0.8, 0.2};
  x0(0, 1) = {0.3, -1.1};
  x0(1, 1) = {0.6, 0.9};
  y(0, 0) = {-0.4, 0.1};
  y(1, 0) = {0.7, -0.6};
  y(0, 1) = {0.2, 0.4};
  y(1, 1) = {-0.9, -0.3};
  ForwardSimConfig cfg;
  cfg.n_paths = n_paths;
  cfg.dt = dt;
  Rng rng(seed);
  const auto sims = forward_simulate(x0, y, p, cfg, rng);
  std::ostringstream detail;
  for (const auto& m : sims) {
    const SpecTensor mu = kernel_mean(x0, y, m.t, p);
    const double mean_err = (m.mean - mu).norm() / mu.norm();
    const double sd = kernel_std(m.t, p);
    const double std_err = std::abs(m.std - sd) / sd;
    if (!(mean_err < 0.02 && std_err < 0.05)) r.passed = false;
    detail << fmt("t=%.2f mean_rel=%.4f std_rel=%.4f; ", m.t, mean_err, std_err);
  }
  r.detail = detail.str();
  r.seconds = seconds_since(start);
  return r;
}

CheckResult check_kernel_boundaries(const SdeParams& p) {
  const auto start = Clock::now();
  CheckResult r{"kernel-boundaries", true, "", 0.0};
  Rng rng(3);
  const SpecTensor x0 = random_spec(3, 4, 1.0, rng);
  const SpecTensor y = random_spec(3, 4, 1.0, rng);
  const double var0 = kernel_variance(0.0, p);
  const double mean0 = (kernel_mean(x0, y, 0.0, p) - x0).values().cwiseAbs().maxCoeff();

  // Simpson quadrature of int_0^T g(s)^2 e^{-2 gamma (T - s)} ds.
  const int n = 20000;
  const double T = p.t_max;
  const double h = T / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double s = i * h;
    const double g = diffusion_coeff(s, p);
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * g * g * std::exp(-2.0 * p.gamma * (T - s));
  }
  const double quad = acc * h / 3.0;
  const double varT = kernel_variance(T, p);
  r.passed = std::abs(var0) <= 1e-12 && mean0 <= 1e-12 && std::abs(quad - varT) <= 1e-9;
  r.detail = fmt("sigma(0)^2=%.3g max|mu(0)-x0|=%.3g", var0, mean0) +
             fmt(" sigma(T)^2=%.6f quadrature=%.6f", varT, quad);
  r.seconds = seconds_since(start);
  return r;
}

CheckResult check_loss_minimizers(const SdeParams& p, std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r{"loss-minimizers", true, "", 0.0};
  Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const SpecTensor x0 = random_spec(5, 7, 0.5, rng);
    const SpecTensor y = random_spec(5, 7, 0.5, rng);
    const SpecTensor z = complex_normal(5, 7, rng);
    std::uniform_real_distribution<double> uni(kDefaultTimeEps, p.t_max);
    const double t = uni(rng);
    const SpecTensor interior_target = z * (-1.0 / kernel_std(t, p));
    worst = std::max(worst, interior_loss_value(interior_target, z, t, p));
    worst = std::max(worst, terminal_loss_value(terminal_target(z, x0, y, p), z, x0, y, p));
  }
  r.passed = worst < 1e-20;
  r.detail = fmt("max loss at analytic targets %.3g", worst);
  r.seconds = seconds_since(start);
  return r;
}

CheckResult check_gradients(const SdeParams& p, std::uint64_t seed, double tolerance) {
  const auto start = Clock::now();
  CheckResult r{"gradients", true, "", 0.0};
  const MixtureExample ex = small_example(seed);
  TrainConfig tc;
  tc.delta_T = 0.5;
  std::ostringstream detail;
  struct Case {
    ModelVariant variant;
    const char* name;
    int objective;  // 0: interior, 1: terminal, 2: full objective
  };
  const Case cases[] = {
      {ModelVariant::Tse, "tse/snr", 2},
      {ModelVariant::DiffTse, "diff-tse/interior", 0},
      {ModelVariant::DiffTse, "diff-tse/terminal", 1},
      {ModelVariant::DiffTseMt, "diff-tse-mt/interior", 0},
      {ModelVariant::DiffTseMt, "diff-tse-mt/multitask", 2},
  };
  for (const auto& c : cases) {
    TseModel model = small_model(c.variant, p, seed);
    const TseModel* mp = &model;
    auto build = [&, mp](nn::Tape& tape) {
      Rng rng(split_seed(seed, 99));
      switch (c.objective) {
        case 0:
          return score_loss_interior(tape, *mp, ex, 0.4, rng).total;
        case 1:
          return score_loss_terminal(tape, *mp, ex, rng).total;
        default:
          return example_objective(tape, *mp, ex, tc, rng).total;
      }
    };
    const auto report = nn::grad_check(model.params(), build, tolerance);
    if (!report.passed) r.passed = false;
    detail << c.name << fmt(" max_rel=%.2e; ", report.max_rel_error);
  }
  r.detail = detail.str();
  r.seconds = seconds_since(start);
  return r;
}

GaussianTask make_gaussian_task(Index freqs, Index frames, std::uint64_t seed) {
  Rng rng(seed);
  GaussianTask task;
  task.y = random_spec(freqs, frames, 0.5, rng);
  task.cond.mean = task.y + random_spec(freqs, frames, 1.0, rng);
  std::uniform_real_distribution<double> var(0.02, 0.1);
  task.cond.variance.resize(freqs, frames);
  for (Index i = 0; i < task.cond.variance.size(); ++i) task.cond.variance.data()[i] = var(rng);
  return task;
}

SamplerOracleStats sampler_oracle_stats(const GaussianTask& task, const SdeParams& p,
                                        const SamplerConfig& cfg, int runs) {
  if (runs < 2) throw ContractError("sampler_oracle_stats: need at least two runs");
  OracleGaussianScore oracle(task.cond, p);
  const auto score = oracle.condition(task.y, EnrollmentClue{});
  const Index n = task.y.size();
  Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(task.y.freqs(), task.y.frames());
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(task.y.freqs(), task.y.frames());
  for (int j = 0; j < runs; ++j) {
    const SpecTensor x = extract_once(task.y, score, p, cfg, ensemble_seed(cfg.seed, j)).x0_hat;
    sum += x.values();
    sq += x.values().cwiseAbs2();
  }
  const double count = runs;
  const Eigen::MatrixXcd mean = sum / count;
  const Eigen::MatrixXd var = (sq - count * mean.cwiseAbs2()) / (count - 1.0);
  auto [target_mean, target_var] = oracle_marginal(task.y, task.cond, cfg.t_eps, p);
  SamplerOracleStats s;
  s.mean_error = (mean - target_mean.values()).norm() / (task.cond.mean - task.y).norm();
  const double emp_std = std::sqrt(var.sum() / static_cast<double>(n));
  const double target_std = std::sqrt(target_var.sum() / static_cast<double>(n));
  s.std_error = std::abs(emp_std - target_std) / target_std;
  return s;
}

CheckResult check_sampler_oracle(const SdeParams& p, std::uint64_t seed, int runs) {
  const auto start = Clock::now();
  CheckResult r{"sampler-oracle", true, "", 0.0};
  const GaussianTask task = make_gaussian_task(4, 3, seed);
  SamplerConfig cfg;
  cfg.seed = seed;
  const auto stats = sampler_oracle_stats(task, p, cfg, runs);
  r.passed = stats.mean_error < 0.05 && stats.std_error < 0.10;
  r.detail = fmt("runs=%.0f mean_err=%.4f std_err=%.4f", runs, stats.mean_error, stats.std_error);
  r.seconds = seconds_since(start);
  return r;
}

CheckResult check_metrics(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult r{"metrics", true, "", 0.0};
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  double worst_scale = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> ref(100);
    std::vector<double> est(100);
    for (auto& v : ref) v = normal(rng);
    for (std::size_t i = 0; i < est.size(); ++i) est[i] = ref[i] + 0.5 * normal(rng);
    const double a = scale(rng);
    std::vector<double> scaled(est);
    for (auto& v : scaled) v *= a;
    worst_scale = std::max(worst_scale, std::abs(si_sdr(ref, est) - si_sdr(ref, scaled)));
  }
  const double ref_value = si_sdr(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0, 1.0});

  double worst_roundtrip = 0.0;
  for (double exponent : {1.0, 0.5}) {
    StftConfig cfg{64, 16, exponent, exponent == 1.0 ? 1.0 : 0.33};
    for (std::size_t len : {1000u, 777u, 64u}) {
      Waveform w;
      w.samples.resize(len);
      for (auto& v : w.samples) v = normal(rng);
      const Waveform back = istft(stft(w, cfg), cfg, len);
      for (std::size_t i = 0; i < len; ++i) {
        worst_roundtrip = std::max(worst_roundtrip, std::abs(back.samples[i] - w.samples[i]));
      }
    }
  }
  r.passed = worst_scale < 1e-9 && std::abs(ref_value) < 1e-12 && worst_roundtrip < 1e-10;
  r.detail = fmt("scale_invariance=%.2e si_sdr([1,0],[1,1])=%.3g istft(stft)=%.2e", worst_scale,
                 ref_value, worst_roundtrip);
  r.seconds = seconds_since(start);
  return r;
}

std::vector<CheckResult> run_verification(const SdeParams& p, std::uint64_t seed) {
  return {check_kernel_monte_carlo(p, seed),   check_kernel_boundaries(p),
          check_loss_minimizers(p, seed),      check_gradients(p, seed),
          check_sampler_oracle(p, seed),       check_metrics(seed)};
}

std::string format_check(const CheckResult& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " (%.1fs)", r.seconds);
  return std::string(r.passed ? "PASS " : "FAIL ") + r.name + ": " + r.detail + buf;
}

}  // namespace difftse
