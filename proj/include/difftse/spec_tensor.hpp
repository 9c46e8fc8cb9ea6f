#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace difftse {

using Complex = std::complex<double>;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Raised when a caller violates a documented precondition (shape, sign, range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when stored data fails validation (truncation, checksum, bad header).
class CorruptDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Derives an independent stream seed from a master seed (splitmix64 finalizer).
std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream);

/// Complex F x L time-frequency tensor.
///
/// Storage is a column-major `Eigen::MatrixXcd`, so the underlying memory is
/// interleaved (re, im) pairs and column `l` holds frame `l`. `real_view()`
/// exposes those 2*F*L doubles directly.
class SpecTensor {
 public:
  SpecTensor() = default;
  SpecTensor(Index freqs, Index frames);
  explicit SpecTensor(Eigen::MatrixXcd values);

  static SpecTensor constant(Index freqs, Index frames, Complex value);

  Index freqs() const { return values_.rows(); }
  Index frames() const { return values_.cols(); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0; }

  Eigen::MatrixXcd& values() { return values_; }
  const Eigen::MatrixXcd& values() const { return values_; }

  Complex& operator()(Index f, Index l) { return values_(f, l); }
  Complex operator()(Index f, Index l) const { return values_(f, l); }

  Eigen::Map<Eigen::VectorXd> real_view();
  Eigen::Map<const Eigen::VectorXd> real_view() const;

  double squared_norm() const { return values_.squaredNorm(); }
  double norm() const { return values_.norm(); }
  bool all_finite() const;
  bool same_shape(const SpecTensor& other) const {
    return freqs() == other.freqs() && frames() == other.frames();
  }

  SpecTensor& operator+=(const SpecTensor& other);
  SpecTensor& operator-=(const SpecTensor& other);
  SpecTensor& operator*=(double s);

  friend SpecTensor operator+(SpecTensor a, const SpecTensor& b) { return a += b; }
  friend SpecTensor operator-(SpecTensor a, const SpecTensor& b) { return a -= b; }
  friend SpecTensor operator*(SpecTensor a, double s) { return a *= s; }
  friend SpecTensor operator*(double s, SpecTensor a) { return a *= s; }

  bool operator==(const SpecTensor& other) const {
    return same_shape(other) && values_ == other.values_;
  }

 private:
  Eigen::MatrixXcd values_;
};

void require_same_shape(const SpecTensor& a, const SpecTensor& b, const std::string& what);

/// i.i.d. circularly-symmetric complex normal entries: re, im ~ N(0, 1/2), so E|z|^2 = 1.
SpecTensor complex_normal(Index freqs, Index frames, Rng& rng);

/// Stacks a complex tensor into a real 2F x L matrix: rows [0,F) real, [F,2F) imaginary.
Eigen::MatrixXd to_stacked(const SpecTensor& s);
SpecTensor from_stacked(const Eigen::MatrixXd& stacked);

/// Enrollment utterance of the target speaker; its frame count may differ from the mixture.
struct EnrollmentClue {
  SpecTensor spec;
};

}  // namespace difftse
