#pragma once

#include "difftse/spec_tensor.hpp"

#include <cstddef>
#include <vector>

namespace difftse {

/// Smallest process time used wherever sigma(t) must be strictly positive.
inline constexpr double kDefaultTimeEps = 0.03;

/// Parameters of the mixture-conditioned forward SDE
///   dx = gamma (y - x) dt + g(t) dw,  g(t) = sigma0 (sigma1/sigma0)^t sqrt(2 log(sigma1/sigma0)).
struct SdeParams {
  double gamma = 2.0;
  double sigma0 = 0.05;
  double sigma1 = 0.5;
  double t_max = 1.0;

  void validate() const;
};

struct KernelMoments {
  SpecTensor mean;
  double std = 0.0;
};

struct PerturbedSample {
  SpecTensor xt;
  SpecTensor z;
};

/// f(x, y) = gamma (y - x).
SpecTensor drift(const SpecTensor& x, const SpecTensor& y, const SdeParams& p);

double diffusion_coeff(double t, const SdeParams& p);

/// e^{-gamma t}: weight of x0 in the kernel mean.
double mean_decay(double t, const SdeParams& p);

/// sigma(t)^2 of the perturbation kernel (complex variance, E|x - mu|^2 per entry).
double kernel_variance(double t, const SdeParams& p);
double kernel_std(double t, const SdeParams& p);

/// mu = e^{-gamma t} x0 + (1 - e^{-gamma t}) y.
SpecTensor kernel_mean(const SpecTensor& x0, const SpecTensor& y, double t, const SdeParams& p);

KernelMoments kernel_moments(const SpecTensor& x0, const SpecTensor& y, double t,
                             const SdeParams& p);

/// x_t = mu + sigma(t) z with z complex standard normal. Returns z alongside x_t.
PerturbedSample sample_xt(const SpecTensor& x0, const SpecTensor& y, double t,
                          const SdeParams& p, Rng& rng);

/// -(x_t - mu) / sigma(t)^2. Throws at t = 0 where the kernel is degenerate.
SpecTensor kernel_score(const SpecTensor& xt, const SpecTensor& x0, const SpecTensor& y,
                        double t, const SdeParams& p);

struct ForwardSimConfig {
  std::size_t n_paths = 10000;
  double dt = 1e-3;
  std::vector<double> checkpoints{0.25, 0.5, 1.0};
  // Drop the noise term and integrate the drift ODE only.
  bool zero_diffusion = false;
};

struct EmpiricalMoments {
  double t = 0.0;
  SpecTensor mean;
  double std = 0.0;  // sqrt of the entry-averaged complex variance
};

/// Euler-Maruyama simulation of the forward SDE, used to check the closed-form kernel.
std::vector<EmpiricalMoments> forward_simulate(const SpecTensor& x0, const SpecTensor& y,
                                               const SdeParams& p, const ForwardSimConfig& cfg,
                                               Rng& rng);

}  // namespace difftse
