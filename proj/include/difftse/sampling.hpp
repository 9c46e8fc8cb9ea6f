#pragma once

#include "difftse/models.hpp"
#include "difftse/sde.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace difftse {

/// Corrector step-size rule.
///  * Annealed:  eps = 2 (r sigma(t))^2
///  * ScoreNorm: eps = 2 (r |z| / |s|)^2
enum class CorrectorRule { Annealed, ScoreNorm };

std::string to_string(CorrectorRule rule);
CorrectorRule parse_corrector_rule(const std::string& name);

struct SamplerConfig {
  int n_steps = 30;
  int corrector_iters = 1;
  double r = 0.5;
  CorrectorRule corrector = CorrectorRule::Annealed;
  int ensemble = 10;
  std::uint64_t seed = 0;
  double t_eps = kDefaultTimeEps;
  // Literal sum of the ensemble members instead of their mean.
  bool sum_mode = false;
  bool keep_states = false;
  // Drops every noise term (prior, predictor and corrector); test mode only.
  bool zero_diffusion = false;
  int jobs = 1;

  void validate() const;
};

struct SampleTrace {
  std::vector<SpecTensor> states;  // x_T then the state after each predictor step, when kept
  std::vector<double> times;
  SpecTensor x0_hat;
  std::uint64_t seed = 0;
};

struct EnsembleResult {
  SpecTensor x0_hat;
  std::vector<SampleTrace> traces;
};

/// x_T = y + sigma(T) z.
SpecTensor prior_draw(const SpecTensor& y, const SdeParams& p, Rng& rng, bool zero_diffusion = false);

/// N + 1 points from T down to t_eps, linearly spaced.
std::vector<double> time_schedule(int n_steps, double t_eps, const SdeParams& p);

struct PredictorResult {
  SpecTensor x;       // x_{t-dt}
  SpecTensor x_mean;  // the same step without the noise term
};

/// Reverse Euler-Maruyama step: x - [f - g^2 s] dt + g sqrt(dt) z.
PredictorResult predictor_step(const SpecTensor& x, const SpecTensor& y, double t, double dt,
                               const ScoreModel::ConditionedScore& score, const SdeParams& p,
                               Rng& rng, bool zero_diffusion = false);

/// Langevin step x + eps s + sqrt(2 eps) z, eps from `rule`.
/// Under ScoreNorm the state is returned unchanged when |s| = 0.
SpecTensor corrector_step(const SpecTensor& x, double t, const ScoreModel::ConditionedScore& score,
                          double r, CorrectorRule rule, const SdeParams& p, Rng& rng,
                          bool zero_diffusion = false);

/// One full predictor-corrector run from the prior to t_eps; the result is the
/// noise-free mean of the last predictor step.
SampleTrace extract_once(const SpecTensor& y, const EnrollmentClue& c, const ScoreModel& model,
                         const SdeParams& p, const SamplerConfig& cfg, std::uint64_t seed);

/// Same, reusing a conditioned score.
SampleTrace extract_once(const SpecTensor& y, const ScoreModel::ConditionedScore& score,
                         const SdeParams& p, const SamplerConfig& cfg, std::uint64_t seed);

/// Seed of ensemble member j.
std::uint64_t ensemble_seed(std::uint64_t master, int j);

/// J runs with per-member seeds, combined in the complex domain.
EnsembleResult extract_ensemble(const SpecTensor& y, const EnrollmentClue& c,
                                const ScoreModel& model, const SdeParams& p,
                                const SamplerConfig& cfg);

/// Writes every kept state of a trace as consecutive spectra (see write_spec).
void write_trace(const std::filesystem::path& dir, const SampleTrace& trace);

}  // namespace difftse
