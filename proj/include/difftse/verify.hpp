#pragma once

#include "difftse/models.hpp"
#include "difftse/sampling.hpp"
#include "difftse/sde.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace difftse {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Euler-Maruyama moments against the closed-form kernel at t in {0.25, 0.5, 1}.
CheckResult check_kernel_monte_carlo(const SdeParams& p, std::uint64_t seed,
                                     std::size_t n_paths = 10000, double dt = 1e-3);

/// sigma(0)^2 = 0, mu(x0, y, 0) = x0, sigma(1)^2 against a quadrature of g^2 e^{-2 gamma (t - s)}.
CheckResult check_kernel_boundaries(const SdeParams& p);

/// Both score losses vanish at their closed-form targets.
CheckResult check_loss_minimizers(const SdeParams& p, std::uint64_t seed);

/// Tape gradients of every training objective and model variant against finite differences.
CheckResult check_gradients(const SdeParams& p, std::uint64_t seed, double tolerance = 1e-4);

/// Toy conditional-Gaussian problem: y, the clean mean m and per-entry variance P.
struct GaussianTask {
  SpecTensor y;
  ConditionalGaussian cond;
};
GaussianTask make_gaussian_task(Index freqs, Index frames, std::uint64_t seed);

struct SamplerOracleStats {
  double mean_error = 0.0;  // |E x_hat - m_eps| / |m - y|
  double std_error = 0.0;   // |std(x_hat) - std_eps| / std_eps
};

/// Runs `runs` PC extractions with the analytic Gaussian score and compares the
/// population with the exact conditional marginal at t_eps.
SamplerOracleStats sampler_oracle_stats(const GaussianTask& task, const SdeParams& p,
                                        const SamplerConfig& cfg, int runs);

CheckResult check_sampler_oracle(const SdeParams& p, std::uint64_t seed, int runs = 500);

/// SI-SDR scale invariance, the two-sample reference value and STFT round trips.
CheckResult check_metrics(std::uint64_t seed);

/// All oracle suites in a fixed order.
std::vector<CheckResult> run_verification(const SdeParams& p, std::uint64_t seed);

std::string format_check(const CheckResult& r);

}  // namespace difftse
