#include "difftse/layers.hpp"

#include <cmath>
#include <numbers>

namespace difftse::nn {

namespace {

Matrix glorot(Index rows, Index cols, Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace

Dense Dense::create(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng,
                    Init init, bool with_bias) {
  Dense d;
  d.in = in;
  d.out = out;
  Matrix w = init == Init::Zero ? Matrix::Zero(out, in) : glorot(out, in, in, out, rng);
  d.weight = params.add(name + ".weight", std::move(w));
  if (with_bias) d.bias = params.add(name + ".bias", Matrix::Zero(out, 1));
  return d;
}

Var Dense::operator()(Tape& tape, Var x) const {
  if (tape.rows(x) != in) throw ContractError("Dense: input has wrong feature count");
  Var y = tape.matmul(tape.param(weight), x);
  if (bias >= 0) y = tape.add_column(y, tape.param(bias));
  return y;
}

TemporalConv TemporalConv::create(ParamSet& params, const std::string& name, Index in, Index out,
                                  int radius, Rng& rng, Init init) {
  TemporalConv c;
  c.in = in;
  c.out = out;
  c.radius = radius;
  const Index taps = 2 * radius + 1;
  Matrix w = init == Init::Zero ? Matrix::Zero(out, taps * in)
                                : glorot(out, taps * in, taps * in, out, rng);
  c.weight = params.add(name + ".weight", std::move(w));
  c.bias = params.add(name + ".bias", Matrix::Zero(out, 1));
  return c;
}

Var TemporalConv::operator()(Tape& tape, Var x) const {
  if (tape.rows(x) != in) throw ContractError("TemporalConv: input has wrong feature count");
  std::vector<Var> taps;
  taps.reserve(static_cast<std::size_t>(2 * radius + 1));
  // Tap k reads frame j + k, i.e. the input shifted by -k.
  for (int k = -radius; k <= radius; ++k) taps.push_back(k == 0 ? x : tape.shift_columns(x, -k));
  Var stacked = tape.concat_rows(taps);
  return tape.add_column(tape.matmul(tape.param(weight), stacked), tape.param(bias));
}

TimeEmbedding::TimeEmbedding(int dim, double min_freq, double max_freq) : dim_(dim) {
  if (dim < 2 || dim % 2 != 0) throw ContractError("TimeEmbedding: dimension must be even and >= 2");
  const int half = dim / 2;
  freqs_.resize(half);
  for (int k = 0; k < half; ++k) {
    const double frac = half == 1 ? 0.0 : static_cast<double>(k) / (half - 1);
    freqs_[k] = min_freq * std::pow(max_freq / min_freq, frac);
  }
}

Matrix TimeEmbedding::embed(double t) const {
  const int half = dim_ / 2;
  Matrix e(dim_, 1);
  for (int k = 0; k < half; ++k) {
    const double phase = 2.0 * std::numbers::pi * freqs_[k] * t;
    e(k, 0) = std::sin(phase);
    e(half + k, 0) = std::cos(phase);
  }
  return e;
}

ResidualBlock ResidualBlock::create(ParamSet& params, const std::string& name, Index width,
                                    std::optional<Index> time_dim, Rng& rng) {
  ResidualBlock b;
  b.conv = TemporalConv::create(params, name + ".conv", width, width, 1, rng);
  if (time_dim) b.time_proj = Dense::create(params, name + ".time", *time_dim, width, rng);
  b.proj = Dense::create(params, name + ".proj", width, width, rng, Init::Zero);
  return b;
}

Var ResidualBlock::operator()(Tape& tape, Var x, std::optional<Var> temb) const {
  Var h = conv(tape, tape.silu(x));
  if (time_proj) {
    if (!temb) throw ContractError("ResidualBlock: time embedding required");
    h = tape.add_column(h, (*time_proj)(tape, *temb));
  }
  return tape.add(x, proj(tape, tape.silu(h)));
}

Matrix multiplication_fusion(const Matrix& features, const Eigen::VectorXd& embedding) {
  if (embedding.size() != features.rows()) throw ContractError("fusion: embedding width mismatch");
  return features.array().colwise() * embedding.array();
}

}  // namespace difftse::nn
