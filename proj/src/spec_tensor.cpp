#include "difftse/spec_tensor.hpp"

#include <cmath>

namespace difftse {

std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SpecTensor::SpecTensor(Index freqs, Index frames)
    : values_(Eigen::MatrixXcd::Zero(freqs, frames)) {
  if (freqs < 0 || frames < 0) throw ContractError("SpecTensor: negative dimension");
}

SpecTensor::SpecTensor(Eigen::MatrixXcd values) : values_(std::move(values)) {}

SpecTensor SpecTensor::constant(Index freqs, Index frames, Complex value) {
  return SpecTensor(Eigen::MatrixXcd::Constant(freqs, frames, value));
}

Eigen::Map<Eigen::VectorXd> SpecTensor::real_view() {
  return {reinterpret_cast<double*>(values_.data()), 2 * values_.size()};
}

Eigen::Map<const Eigen::VectorXd> SpecTensor::real_view() const {
  return {reinterpret_cast<const double*>(values_.data()), 2 * values_.size()};
}

bool SpecTensor::all_finite() const { return real_view().allFinite(); }

SpecTensor& SpecTensor::operator+=(const SpecTensor& other) {
  require_same_shape(*this, other, "SpecTensor +=");
  values_ += other.values_;
  return *this;
}

SpecTensor& SpecTensor::operator-=(const SpecTensor& other) {
  require_same_shape(*this, other, "SpecTensor -=");
  values_ -= other.values_;
  return *this;
}

SpecTensor& SpecTensor::operator*=(double s) {
  values_ *= s;
  return *this;
}

void require_same_shape(const SpecTensor& a, const SpecTensor& b, const std::string& what) {
  if (!a.same_shape(b)) {
    throw ContractError(what + ": shape mismatch (" + std::to_string(a.freqs()) + "x" +
                        std::to_string(a.frames()) + " vs " + std::to_string(b.freqs()) + "x" +
                        std::to_string(b.frames()) + ")");
  }
}

SpecTensor complex_normal(Index freqs, Index frames, Rng& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  SpecTensor z(freqs, frames);
  auto view = z.real_view();
  for (Index i = 0; i < view.size(); ++i) view[i] = normal(rng);
  return z;
}

Eigen::MatrixXd to_stacked(const SpecTensor& s) {
  const Index f = s.freqs();
  Eigen::MatrixXd out(2 * f, s.frames());
  out.topRows(f) = s.values().real();
  out.bottomRows(f) = s.values().imag();
  return out;
}

SpecTensor from_stacked(const Eigen::MatrixXd& stacked) {
  if (stacked.rows() % 2 != 0) throw ContractError("from_stacked: odd row count");
  const Index f = stacked.rows() / 2;
  Eigen::MatrixXcd v(f, stacked.cols());
  v.real() = stacked.topRows(f);
  v.imag() = stacked.bottomRows(f);
  return SpecTensor(std::move(v));
}

}  // namespace difftse
