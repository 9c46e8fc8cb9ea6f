#pragma once

#include "difftse/spec_tensor.hpp"

#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace difftse::nn {

using Matrix = Eigen::MatrixXd;

/// A named trainable tensor.
struct Param {
  std::string name;
  Matrix value;
};

/// Ordered collection of parameters. Indices are stable and shared with GradBuffer.
class ParamSet {
 public:
  int add(std::string name, Matrix init);

  int size() const { return static_cast<int>(params_.size()); }
  Param& operator[](int i) { return params_[static_cast<std::size_t>(i)]; }
  const Param& operator[](int i) const { return params_[static_cast<std::size_t>(i)]; }
  /// -1 when absent.
  int find(std::string_view name) const;
  std::size_t scalar_count() const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<Param> params_;
};

/// Per-parameter gradients, index-aligned with a ParamSet.
using GradBuffer = std::vector<Matrix>;

GradBuffer zero_grads(const ParamSet& params);
/// dst += scale * src, elementwise over every entry.
void accumulate(GradBuffer& dst, const GradBuffer& src, double scale = 1.0);

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  bool valid() const { return id_ >= 0; }
  int id() const { return id_; }

 private:
  friend class Tape;
  explicit Var(int id) : id_(id) {}
  int id_ = -1;
};

/// Reverse-mode tape over dense real matrices.
///
/// Every op evaluates eagerly and records how to push gradients to its
/// parents. `backward` replays the records in reverse, filling input-node
/// gradients and the per-parameter GradBuffer. Column j of a matrix is frame j
/// in all frame-wise ops. A tape is single-use and single-threaded; parameters
/// are referenced, not copied, and must outlive it.
class Tape {
 public:
  explicit Tape(const ParamSet& params);

  /// Leaf whose gradient is recorded (input gradient).
  Var input(Matrix value);
  /// Leaf without gradient tracking.
  Var constant(Matrix value);
  Var param(int index);

  const Matrix& value(Var v) const;
  /// Gradient of the backward seed w.r.t. v; zero matrix when none flowed.
  Matrix grad(Var v) const;
  Index rows(Var v) const { return value(v).rows(); }
  Index cols(Var v) const { return value(v).cols(); }

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  /// a + col broadcast over columns (col is r x 1).
  Var add_column(Var a, Var col);
  Var mul(Var a, Var b);
  /// a * col broadcast over columns, elementwise (col is r x 1).
  Var mul_column(Var a, Var col);
  Var scale(Var a, double s);
  Var silu(Var a);
  Var sigmoid(Var a);
  Var concat_rows(std::span<const Var> parts);
  Var concat_rows(std::initializer_list<Var> parts) {
    return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
  }
  Var slice_rows(Var a, Index begin, Index count);
  /// Mean over columns: r x c -> r x 1.
  Var mean_columns(Var a);
  /// out[:, j] = a[:, j - offset]; columns shifted in from outside are zero.
  Var shift_columns(Var a, int offset);
  /// Stacked complex (2F x L) -> log(floor + re^2 + im^2), F x L.
  Var log_power(Var stacked, double floor);
  /// Sum of squares of all entries, 1 x 1.
  Var sum_squares(Var a);
  /// sum(a .* weights), 1 x 1.
  Var weighted_sum(Var a, const Matrix& weights);
  /// -10 log10(|ref|^2 / |ref - est|^2) clamped to [-cap, cap]; zero gradient when clamped.
  Var negative_snr(Var estimate, const Matrix& reference, double cap);

  /// Seeds d(out) = 1 for a 1 x 1 output.
  void backward(Var out);
  void backward(Var out, const Matrix& seed);

  const GradBuffer& param_grads() const { return param_grads_; }
  GradBuffer take_param_grads() { return std::move(param_grads_); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;  // parameter nodes alias the ParamSet
    Matrix grad;
    bool has_grad = false;
    bool tracks_grad = false;
    int param_index = -1;
    std::function<void(Tape&, const Node&)> backprop;
  };

  const Node& node(Var v) const;
  const Matrix& value_of(const Node& n) const { return n.external ? *n.external : n.value; }
  Var push(Matrix value, bool tracks, std::function<void(Tape&, const Node&)> backprop);
  bool tracks(Var v) const { return node(v).tracks_grad; }
  void send(Var to, const Matrix& g);

  const ParamSet* params_;
  std::vector<Node> nodes_;
  GradBuffer param_grads_;
};

/// Report of a finite-difference gradient comparison.
struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t entries_checked = 0;
  bool passed = false;
};

/// Compares tape gradients of a scalar loss against central differences.
///
/// `build_loss` must record a 1 x 1 output on the given tape using only `params`.
/// At most `max_entries_per_param` entries per parameter are probed (chosen
/// with a fixed seed). Relative error is |a - n| / max(|a| + |n|, 1e-6).
GradCheckReport grad_check(ParamSet& params, const std::function<Var(Tape&)>& build_loss,
                           double tolerance, double step = 1e-5,
                           std::size_t max_entries_per_param = 48, std::uint64_t seed = 7);

}  // namespace difftse::nn
