#include "difftse/sampling.hpp"

#include "difftse/corpus.hpp"
#include "difftse/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace difftse {

namespace {

constexpr std::uint64_t kEnsembleStream = 0x656e73;

void require_finite(const SpecTensor& s, const char* what) {
  if (!s.all_finite()) throw std::runtime_error(std::string(what) + ": non-finite state");
}

}  // namespace

void SamplerConfig::validate() const {
  if (n_steps < 1) throw ContractError("SamplerConfig: n_steps must be >= 1");
  if (corrector_iters < 0) throw ContractError("SamplerConfig: corrector_iters must be >= 0");
  if (!(r > 0.0)) throw ContractError("SamplerConfig: r must be > 0");
  if (ensemble < 1) throw ContractError("SamplerConfig: ensemble must be >= 1");
  if (!(t_eps > 0.0)) throw ContractError("SamplerConfig: t_eps must be > 0");
}

SpecTensor prior_draw(const SpecTensor& y, const SdeParams& p, Rng& rng, bool zero_diffusion) {
  if (zero_diffusion) return y;
  return y + complex_normal(y.freqs(), y.frames(), rng) * kernel_std(p.t_max, p);
}

std::vector<double> time_schedule(int n_steps, double t_eps, const SdeParams& p) {
  if (n_steps < 1) throw ContractError("time_schedule: n_steps must be >= 1");
  if (!(t_eps > 0.0 && t_eps < p.t_max)) throw ContractError("time_schedule: t_eps must be in (0, T)");
  std::vector<double> ts(static_cast<std::size_t>(n_steps) + 1);
  for (int i = 0; i <= n_steps; ++i) {
    ts[static_cast<std::size_t>(i)] = p.t_max - (p.t_max - t_eps) * i / n_steps;
  }
  ts.back() = t_eps;
  return ts;
}

PredictorResult predictor_step(const SpecTensor& x, const SpecTensor& y, double t, double dt,
                               const ScoreModel::ConditionedScore& score, const SdeParams& p,
                               Rng& rng, bool zero_diffusion) {
  if (dt == 0.0) return {x, x};
  const SpecTensor s = score(x, t);
  require_finite(s, "predictor_step");
  const double g = diffusion_coeff(t, p);
  SpecTensor reverse_drift = drift(x, y, p) - s * (g * g);
  SpecTensor x_mean = x - reverse_drift * dt;
  if (zero_diffusion) return {x_mean, x_mean};
  SpecTensor next = x_mean + complex_normal(x.freqs(), x.frames(), rng) * (g * std::sqrt(dt));
  return {std::move(next), std::move(x_mean)};
}

std::string to_string(CorrectorRule rule) {
  return rule == CorrectorRule::Annealed ? "ald" : "langevin";
}

CorrectorRule parse_corrector_rule(const std::string& name) {
  if (name == "ald") return CorrectorRule::Annealed;
  if (name == "langevin") return CorrectorRule::ScoreNorm;
  throw ContractError("unknown corrector rule '" + name + "' (expected ald or langevin)");
}

SpecTensor corrector_step(const SpecTensor& x, double t, const ScoreModel::ConditionedScore& score,
                          double r, CorrectorRule rule, const SdeParams& p, Rng& rng,
                          bool zero_diffusion) {
  const SpecTensor s = score(x, t);
  require_finite(s, "corrector_step");
  const SpecTensor z = complex_normal(x.freqs(), x.frames(), rng);
  double eps = 0.0;
  if (rule == CorrectorRule::Annealed) {
    const double scaled = r * kernel_std(t, p);
    eps = 2.0 * scaled * scaled;
  } else {
    const double s_norm = s.norm();
    if (s_norm == 0.0) return x;
    const double ratio = r * z.norm() / s_norm;
    eps = 2.0 * ratio * ratio;
  }
  SpecTensor out = x + s * eps;
  if (!zero_diffusion) out += z * std::sqrt(2.0 * eps);
  return out;
}

SampleTrace extract_once(const SpecTensor& y, const ScoreModel::ConditionedScore& score,
                         const SdeParams& p, const SamplerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto ts = time_schedule(cfg.n_steps, cfg.t_eps, p);
  SampleTrace trace;
  trace.seed = seed;
  SpecTensor x = prior_draw(y, p, rng, cfg.zero_diffusion);
  if (cfg.keep_states) {
    trace.states.push_back(x);
    trace.times.push_back(ts.front());
  }
  SpecTensor x_mean = x;
  for (int i = 0; i < cfg.n_steps; ++i) {
    const double t = ts[static_cast<std::size_t>(i)];
    const double dt = t - ts[static_cast<std::size_t>(i) + 1];
    for (int k = 0; k < cfg.corrector_iters; ++k) {
      x = corrector_step(x, t, score, cfg.r, cfg.corrector, p, rng, cfg.zero_diffusion);
    }
    auto step = predictor_step(x, y, t, dt, score, p, rng, cfg.zero_diffusion);
    x = std::move(step.x);
    x_mean = std::move(step.x_mean);
    if (cfg.keep_states) {
      trace.states.push_back(x);
      trace.times.push_back(ts[static_cast<std::size_t>(i) + 1]);
    }
  }
  require_finite(x_mean, "extract_once");
  trace.x0_hat = std::move(x_mean);
  return trace;
}

SampleTrace extract_once(const SpecTensor& y, const EnrollmentClue& c, const ScoreModel& model,
                         const SdeParams& p, const SamplerConfig& cfg, std::uint64_t seed) {
  return extract_once(y, model.condition(y, c), p, cfg, seed);
}

std::uint64_t ensemble_seed(std::uint64_t master, int j) {
  return split_seed(split_seed(master, kEnsembleStream), static_cast<std::uint64_t>(j));
}

EnsembleResult extract_ensemble(const SpecTensor& y, const EnrollmentClue& c,
                                const ScoreModel& model, const SdeParams& p,
                                const SamplerConfig& cfg) {
  cfg.validate();
  const auto score = model.condition(y, c);
  EnsembleResult out;
  out.traces.resize(static_cast<std::size_t>(cfg.ensemble));
  parallel_for(out.traces.size(), cfg.jobs, [&](std::size_t j) {
    out.traces[j] = extract_once(y, score, p, cfg, ensemble_seed(cfg.seed, static_cast<int>(j)));
  });
  SpecTensor sum = SpecTensor::constant(y.freqs(), y.frames(), Complex(0.0, 0.0));
  for (const auto& tr : out.traces) sum += tr.x0_hat;
  if (!cfg.sum_mode) sum *= 1.0 / cfg.ensemble;
  out.x0_hat = std::move(sum);
  return out;
}

void write_trace(const std::filesystem::path& dir, const SampleTrace& trace) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "times.txt");
  if (!index) throw std::runtime_error("write_trace: cannot write " + (dir / "times.txt").string());
  index << "seed " << trace.seed << "\n";
  for (std::size_t i = 0; i < trace.states.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "state_%03zu.spec", i);
    write_spec(dir / name, trace.states[i]);
    index << name << " " << trace.times[i] << "\n";
  }
  write_spec(dir / "final.spec", trace.x0_hat);
}

}  // namespace difftse
