#include "difftse/sde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace difftse {

namespace {

void check_time(double t, const SdeParams& p, const char* what) {
  if (!(t >= 0.0 && t <= p.t_max)) {
    throw std::domain_error(std::string(what) + ": t=" + std::to_string(t) +
                            " outside [0, " + std::to_string(p.t_max) + "]");
  }
}

}  // namespace

void SdeParams::validate() const {
  if (!(gamma > 0.0)) throw ContractError("SdeParams: gamma must be > 0");
  if (!(sigma0 > 0.0 && sigma0 < sigma1)) {
    throw ContractError("SdeParams: require 0 < sigma0 < sigma1");
  }
  if (!(t_max > 0.0)) throw ContractError("SdeParams: t_max must be > 0");
}

SpecTensor drift(const SpecTensor& x, const SpecTensor& y, const SdeParams& p) {
  require_same_shape(x, y, "drift");
  return SpecTensor(p.gamma * (y.values() - x.values()));
}

double diffusion_coeff(double t, const SdeParams& p) {
  check_time(t, p, "diffusion_coeff");
  const double log_ratio = std::log(p.sigma1 / p.sigma0);
  return p.sigma0 * std::pow(p.sigma1 / p.sigma0, t) * std::sqrt(2.0 * log_ratio);
}

double mean_decay(double t, const SdeParams& p) { return std::exp(-p.gamma * t); }

double kernel_variance(double t, const SdeParams& p) {
  check_time(t, p, "kernel_variance");
  const double ratio = p.sigma1 / p.sigma0;
  const double log_ratio = std::log(ratio);
  const double growth = std::pow(ratio, 2.0 * t) - std::exp(-2.0 * p.gamma * t);
  return p.sigma0 * p.sigma0 * growth * log_ratio / (p.gamma + log_ratio);
}

double kernel_std(double t, const SdeParams& p) { return std::sqrt(kernel_variance(t, p)); }

SpecTensor kernel_mean(const SpecTensor& x0, const SpecTensor& y, double t, const SdeParams& p) {
  require_same_shape(x0, y, "kernel_mean");
  check_time(t, p, "kernel_mean");
  const double a = mean_decay(t, p);
  return SpecTensor(a * x0.values() + (1.0 - a) * y.values());
}

KernelMoments kernel_moments(const SpecTensor& x0, const SpecTensor& y, double t,
                             const SdeParams& p) {
  return {kernel_mean(x0, y, t, p), kernel_std(t, p)};
}

PerturbedSample sample_xt(const SpecTensor& x0, const SpecTensor& y, double t,
                          const SdeParams& p, Rng& rng) {
  KernelMoments m = kernel_moments(x0, y, t, p);
  SpecTensor z = complex_normal(x0.freqs(), x0.frames(), rng);
  SpecTensor xt = m.mean;
  if (m.std > 0.0) xt.values() += m.std * z.values();
  return {std::move(xt), std::move(z)};
}

SpecTensor kernel_score(const SpecTensor& xt, const SpecTensor& x0, const SpecTensor& y,
                        double t, const SdeParams& p) {
  require_same_shape(xt, x0, "kernel_score");
  const double var = kernel_variance(t, p);
  if (!(var > 0.0)) throw std::domain_error("kernel_score: sigma(t) = 0 at t = 0");
  SpecTensor mu = kernel_mean(x0, y, t, p);
  return SpecTensor(-(xt.values() - mu.values()) / var);
}

std::vector<EmpiricalMoments> forward_simulate(const SpecTensor& x0, const SpecTensor& y,
                                               const SdeParams& p, const ForwardSimConfig& cfg,
                                               Rng& rng) {
  require_same_shape(x0, y, "forward_simulate");
  if (!(cfg.dt > 0.0)) throw ContractError("forward_simulate: dt must be > 0");
  if (cfg.n_paths == 0) throw ContractError("forward_simulate: n_paths must be > 0");
  for (double t : cfg.checkpoints) check_time(t, p, "forward_simulate checkpoint");

  std::vector<double> times = cfg.checkpoints;
  std::sort(times.begin(), times.end());
  std::vector<long> checkpoint_steps;
  for (double t : times) checkpoint_steps.push_back(std::lround(t / cfg.dt));
  const long total_steps = checkpoint_steps.empty() ? 0 : checkpoint_steps.back();

  const Index n = x0.size();
  std::vector<Eigen::VectorXcd> sums(times.size(), Eigen::VectorXcd::Zero(n));
  std::vector<Eigen::VectorXd> sq_sums(times.size(), Eigen::VectorXd::Zero(n));

  const Eigen::Map<const Eigen::VectorXcd> x0v(x0.values().data(), n);
  const Eigen::Map<const Eigen::VectorXcd> yv(y.values().data(), n);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  Eigen::VectorXcd x(n);

  for (std::size_t path = 0; path < cfg.n_paths; ++path) {
    x = x0v;
    std::size_t next = 0;
    for (long step = 0; step <= total_steps; ++step) {
      while (next < checkpoint_steps.size() && checkpoint_steps[next] == step) {
        sums[next] += x;
        sq_sums[next] += x.cwiseAbs2();
        ++next;
      }
      if (step == total_steps) break;
      const double t = step * cfg.dt;
      x += p.gamma * (yv - x) * cfg.dt;
      if (!cfg.zero_diffusion) {
        const double scale = diffusion_coeff(std::min(t, p.t_max), p) * std::sqrt(cfg.dt);
        for (Index i = 0; i < n; ++i) {
          const double re = normal(rng);
          const double im = normal(rng);
          x[i] += scale * Complex(re, im);
        }
      }
    }
  }

  const double count = static_cast<double>(cfg.n_paths);
  std::vector<EmpiricalMoments> out;
  for (std::size_t k = 0; k < times.size(); ++k) {
    Eigen::VectorXcd mean = sums[k] / count;
    double var = 0.0;
    if (cfg.n_paths > 1) {
      const Eigen::VectorXd per_entry =
          (sq_sums[k] - count * mean.cwiseAbs2()) / (count - 1.0);
      var = std::max(0.0, per_entry.mean());
    }
    Eigen::MatrixXcd m = Eigen::Map<Eigen::MatrixXcd>(mean.data(), x0.freqs(), x0.frames());
    out.push_back({times[k], SpecTensor(std::move(m)), std::sqrt(var)});
  }
  return out;
}

}  // namespace difftse
