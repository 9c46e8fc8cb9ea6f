#include "difftse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace difftse::nn {

int ParamSet::add(std::string name, Matrix init) {
  if (find(name) >= 0) throw ContractError("ParamSet: duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(init)});
  return size() - 1;
}

int ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

bool ParamSet::operator==(const ParamSet& other) const {
  if (params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols() ||
        a.value != b.value) {
      return false;
    }
  }
  return true;
}

GradBuffer zero_grads(const ParamSet& params) {
  GradBuffer g;
  g.reserve(static_cast<std::size_t>(params.size()));
  for (const auto& p : params) g.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
  return g;
}

void accumulate(GradBuffer& dst, const GradBuffer& src, double scale) {
  if (dst.size() != src.size()) throw ContractError("accumulate: gradient buffer size mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

Tape::Tape(const ParamSet& params) : params_(&params), param_grads_(zero_grads(params)) {
  nodes_.reserve(256);
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id() >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("Tape: variable does not belong to this tape");
  }
  return nodes_[static_cast<std::size_t>(v.id())];
}

const Matrix& Tape::value(Var v) const { return value_of(node(v)); }

Matrix Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  const Matrix& val = value_of(n);
  return Matrix::Zero(val.rows(), val.cols());
}

Var Tape::push(Matrix value, bool tracks_grad,
               std::function<void(Tape&, const Node&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.tracks_grad = tracks_grad;
  if (tracks_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var(static_cast<int>(nodes_.size()) - 1);
}

void Tape::send(Var to, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(to.id())];
  if (!n.tracks_grad) return;
  if (n.has_grad) {
    n.grad += g;
  } else {
    n.grad = g;
    n.has_grad = true;
  }
}

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::param(int index) {
  if (index < 0 || index >= params_->size()) throw ContractError("Tape: parameter index out of range");
  Node n;
  n.external = &(*params_)[index].value;
  n.tracks_grad = true;
  n.param_index = index;
  n.backprop = [index](Tape& t, const Node& self) {
    t.param_grads_[static_cast<std::size_t>(index)] += self.grad;
  };
  nodes_.push_back(std::move(n));
  return Var(static_cast<int>(nodes_.size()) - 1);
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) throw ContractError("matmul: inner dimension mismatch");
  return push(av * bv, tracks(a) || tracks(b), [a, b](Tape& t, const Node& self) {
    if (t.tracks(a)) t.send(a, self.grad * t.value(b).transpose());
    if (t.tracks(b)) t.send(b, t.value(a).transpose() * self.grad);
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ContractError("add: shape mismatch");
  return push(av + bv, tracks(a) || tracks(b), [a, b](Tape& t, const Node& self) {
    t.send(a, self.grad);
    t.send(b, self.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ContractError("sub: shape mismatch");
  return push(av - bv, tracks(a) || tracks(b), [a, b](Tape& t, const Node& self) {
    t.send(a, self.grad);
    if (t.tracks(b)) t.send(b, -self.grad);
  });
}

Var Tape::add_column(Var a, Var col) {
  const Matrix& av = value(a);
  const Matrix& cv = value(col);
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw ContractError("add_column: shape mismatch");
  Matrix out = av.colwise() + cv.col(0);
  return push(std::move(out), tracks(a) || tracks(col), [a, col](Tape& t, const Node& self) {
    t.send(a, self.grad);
    if (t.tracks(col)) t.send(col, self.grad.rowwise().sum());
  });
}

Var Tape::mul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ContractError("mul: shape mismatch");
  return push(av.cwiseProduct(bv), tracks(a) || tracks(b), [a, b](Tape& t, const Node& self) {
    if (t.tracks(a)) t.send(a, self.grad.cwiseProduct(t.value(b)));
    if (t.tracks(b)) t.send(b, self.grad.cwiseProduct(t.value(a)));
  });
}

Var Tape::mul_column(Var a, Var col) {
  const Matrix& av = value(a);
  const Matrix& cv = value(col);
  if (cv.cols() != 1 || cv.rows() != av.rows()) throw ContractError("mul_column: shape mismatch");
  Matrix out = av.array().colwise() * cv.col(0).array();
  return push(std::move(out), tracks(a) || tracks(col), [a, col](Tape& t, const Node& self) {
    if (t.tracks(a)) {
      Matrix g = self.grad.array().colwise() * t.value(col).col(0).array();
      t.send(a, g);
    }
    if (t.tracks(col)) t.send(col, self.grad.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

Var Tape::scale(Var a, double s) {
  return push(s * value(a), tracks(a), [a, s](Tape& t, const Node& self) { t.send(a, s * self.grad); });
}

Var Tape::silu(Var a) {
  const Matrix& av = value(a);
  const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-av.array()).exp());
  Matrix out = av.array() * sig;
  return push(std::move(out), tracks(a), [a](Tape& t, const Node& self) {
    const Eigen::ArrayXXd x = t.value(a).array();
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-x).exp());
    Matrix g = self.grad.array() * (s * (1.0 + x * (1.0 - s)));
    t.send(a, g);
  });
}

Var Tape::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-value(a).array()).exp())).matrix();
  return push(std::move(out), tracks(a), [a](Tape& t, const Node& self) {
    const Eigen::ArrayXXd s = self.value.array();
    Matrix g = self.grad.array() * s * (1.0 - s);
    t.send(a, g);
  });
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const Index cols = value(parts[0]).cols();
  Index rows = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ContractError("concat_rows: column count mismatch");
    rows += value(p).rows();
    any = any || tracks(p);
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (Var p : parts) {
    out.middleRows(offset, value(p).rows()) = value(p);
    offset += value(p).rows();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), any, [ids](Tape& t, const Node& self) {
    Index off = 0;
    for (Var p : ids) {
      const Index r = t.value(p).rows();
      if (t.tracks(p)) t.send(p, self.grad.middleRows(off, r));
      off += r;
    }
  });
}

Var Tape::slice_rows(Var a, Index begin, Index count) {
  const Matrix& av = value(a);
  if (begin < 0 || count < 0 || begin + count > av.rows()) throw ContractError("slice_rows: out of range");
  return push(av.middleRows(begin, count), tracks(a), [a, begin, count](Tape& t, const Node& self) {
    const Matrix& src = t.value(a);
    Matrix g = Matrix::Zero(src.rows(), src.cols());
    g.middleRows(begin, count) = self.grad;
    t.send(a, g);
  });
}

Var Tape::mean_columns(Var a) {
  const Matrix& av = value(a);
  if (av.cols() < 1) throw ContractError("mean_columns: no columns");
  return push(av.rowwise().mean(), tracks(a), [a](Tape& t, const Node& self) {
    const Index c = t.value(a).cols();
    Matrix g = self.grad.col(0).replicate(1, c) / static_cast<double>(c);
    t.send(a, g);
  });
}

Var Tape::shift_columns(Var a, int offset) {
  const Matrix& av = value(a);
  const Index c = av.cols();
  Matrix out = Matrix::Zero(av.rows(), c);
  const Index k = std::min<Index>(std::abs(offset), c);
  if (offset >= 0) {
    out.rightCols(c - k) = av.leftCols(c - k);
  } else {
    out.leftCols(c - k) = av.rightCols(c - k);
  }
  return push(std::move(out), tracks(a), [a, offset, k](Tape& t, const Node& self) {
    const Index cc = self.grad.cols();
    Matrix g = Matrix::Zero(self.grad.rows(), cc);
    if (offset >= 0) {
      g.leftCols(cc - k) = self.grad.rightCols(cc - k);
    } else {
      g.rightCols(cc - k) = self.grad.leftCols(cc - k);
    }
    t.send(a, g);
  });
}

Var Tape::log_power(Var stacked, double floor) {
  const Matrix& sv = value(stacked);
  if (sv.rows() % 2 != 0) throw ContractError("log_power: expected stacked complex input");
  if (!(floor > 0.0)) throw ContractError("log_power: floor must be > 0");
  const Index f = sv.rows() / 2;
  const Eigen::ArrayXXd power = sv.topRows(f).array().square() + sv.bottomRows(f).array().square();
  Matrix out = (power + floor).log().matrix();
  return push(std::move(out), tracks(stacked), [stacked, floor, f](Tape& t, const Node& self) {
    const Matrix& s = t.value(stacked);
    const Eigen::ArrayXXd re = s.topRows(f).array();
    const Eigen::ArrayXXd im = s.bottomRows(f).array();
    const Eigen::ArrayXXd common = 2.0 * self.grad.array() / (re.square() + im.square() + floor);
    Matrix g(s.rows(), s.cols());
    g.topRows(f) = (common * re).matrix();
    g.bottomRows(f) = (common * im).matrix();
    t.send(stacked, g);
  });
}

Var Tape::sum_squares(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).squaredNorm();
  return push(std::move(out), tracks(a), [a](Tape& t, const Node& self) {
    t.send(a, (2.0 * self.grad(0, 0)) * t.value(a));
  });
}

Var Tape::weighted_sum(Var a, const Matrix& weights) {
  const Matrix& av = value(a);
  if (weights.rows() != av.rows() || weights.cols() != av.cols()) {
    throw ContractError("weighted_sum: shape mismatch");
  }
  Matrix out(1, 1);
  out(0, 0) = av.cwiseProduct(weights).sum();
  return push(std::move(out), tracks(a), [a, weights](Tape& t, const Node& self) {
    t.send(a, self.grad(0, 0) * weights);
  });
}

Var Tape::negative_snr(Var estimate, const Matrix& reference, double cap) {
  const Matrix& ev = value(estimate);
  if (ev.rows() != reference.rows() || ev.cols() != reference.cols()) {
    throw ContractError("negative_snr: shape mismatch");
  }
  const double energy = reference.squaredNorm();
  if (!(energy > 0.0)) throw ContractError("negative_snr: zero reference signal");
  const double err = (reference - ev).squaredNorm();
  double loss = 0.0;
  bool clamped = false;
  if (err <= 0.0) {
    loss = -cap;
    clamped = true;
  } else {
    loss = -10.0 * std::log10(energy / err);
    if (loss < -cap || loss > cap) {
      loss = std::clamp(loss, -cap, cap);
      clamped = true;
    }
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  return push(std::move(out), tracks(estimate) && !clamped,
              [estimate, reference, err](Tape& t, const Node& self) {
                const double k = 10.0 / std::numbers::ln10 / err;
                t.send(estimate, (-2.0 * k * self.grad(0, 0)) * (reference - t.value(estimate)));
              });
}

void Tape::backward(Var out) {
  if (nodes_.empty() || !out.valid()) throw std::logic_error("backward called before forward");
  const Matrix& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) throw ContractError("backward: non-scalar output needs a seed");
  backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  if (nodes_.empty() || !out.valid() || out.id() >= static_cast<int>(nodes_.size())) {
    throw std::logic_error("backward called before forward");
  }
  const Matrix& v = value(out);
  if (seed.rows() != v.rows() || seed.cols() != v.cols()) throw ContractError("backward: seed shape mismatch");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad.resize(0, 0);
  }
  for (auto& g : param_grads_) g.setZero();
  send(out, seed);
  for (int i = out.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backprop) n.backprop(*this, n);
  }
}

GradCheckReport grad_check(ParamSet& params, const std::function<Var(Tape&)>& build_loss,
                           double tolerance, double step, std::size_t max_entries_per_param,
                           std::uint64_t seed) {
  auto eval = [&]() {
    Tape tape(params);
    Var out = build_loss(tape);
    return tape.value(out)(0, 0);
  };

  GradBuffer analytic;
  {
    Tape tape(params);
    Var out = build_loss(tape);
    tape.backward(out);
    analytic = tape.take_param_grads();
  }

  GradCheckReport report;
  Rng rng(seed);
  for (int p = 0; p < params.size(); ++p) {
    Matrix& value = params[p].value;
    const Index n = value.size();
    std::vector<Index> entries(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) entries[static_cast<std::size_t>(i)] = i;
    if (entries.size() > max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(max_entries_per_param);
    }
    for (Index idx : entries) {
      double& slot = value.data()[idx];
      const double saved = slot;
      slot = saved + step;
      const double up = eval();
      slot = saved - step;
      const double down = eval();
      slot = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(p)].data()[idx];
      const double denom = std::max(std::abs(a) + std::abs(numeric), 1e-6);
      const double rel = std::abs(a - numeric) / denom;
      if (!std::isfinite(rel)) {
        report.max_rel_error = std::numeric_limits<double>::infinity();
        report.worst_param = params[p].name;
      } else if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = params[p].name;
      }
      ++report.entries_checked;
    }
  }
  report.passed = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace difftse::nn
