#pragma once

#include "difftse/autodiff.hpp"

#include <optional>
#include <string>

namespace difftse::nn {

enum class Init { Glorot, Zero };

/// Frame-wise affine map y = W x + b (columns are frames).
struct Dense {
  int weight = -1;
  int bias = -1;  // -1 for a bias-free map
  Index in = 0;
  Index out = 0;

  static Dense create(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng,
                      Init init = Init::Glorot, bool with_bias = true);
  Var operator()(Tape& tape, Var x) const;
};

/// Local mixing across neighbouring frames: y[:, j] = sum_k W_k x[:, j + k] + b, k in [-r, r].
struct TemporalConv {
  int weight = -1;  // out x (2r+1)*in, taps ordered k = -r..r
  int bias = -1;
  Index in = 0;
  Index out = 0;
  int radius = 1;

  static TemporalConv create(ParamSet& params, const std::string& name, Index in, Index out,
                             int radius, Rng& rng, Init init = Init::Glorot);
  Var operator()(Tape& tape, Var x) const;
};

/// Sinusoidal embedding of process time on a geometric frequency ladder.
class TimeEmbedding {
 public:
  explicit TimeEmbedding(int dim = 16, double min_freq = 0.5, double max_freq = 64.0);

  int dim() const { return dim_; }
  /// [sin(2 pi f_k t), cos(2 pi f_k t)]_k as a dim x 1 column.
  Matrix embed(double t) const;
  const Eigen::VectorXd& frequencies() const { return freqs_; }

 private:
  int dim_;
  Eigen::VectorXd freqs_;
};

/// Pre-activation residual block with optional time conditioning:
///   h = conv(silu(x)) [+ time_proj(temb)];  out = x + proj(silu(h)).
/// `proj` starts at zero, so a fresh block is the identity map.
struct ResidualBlock {
  TemporalConv conv;
  std::optional<Dense> time_proj;
  Dense proj;

  static ResidualBlock create(ParamSet& params, const std::string& name, Index width,
                              std::optional<Index> time_dim, Rng& rng);
  Var operator()(Tape& tape, Var x, std::optional<Var> temb = std::nullopt) const;
};

/// Multiplication fusion: every frame of `features` multiplied elementwise by `embedding`.
Matrix multiplication_fusion(const Matrix& features, const Eigen::VectorXd& embedding);
inline Var multiplication_fusion(Tape& tape, Var features, Var embedding) {
  return tape.mul_column(features, embedding);
}

}  // namespace difftse::nn
