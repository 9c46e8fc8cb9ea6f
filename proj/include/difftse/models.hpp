#pragma once

#include "difftse/layers.hpp"
#include "difftse/sde.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace difftse {

enum class ModelVariant { Tse, DiffTse, DiffTseMt };

std::string to_string(ModelVariant v);
ModelVariant parse_variant(const std::string& name);

struct NetConfig {
  int freqs = 33;
  int width = 64;
  int blocks = 4;
  int embed_dim = 16;
  int time_dim = 16;
  // Floor inside the log-power input features.
  double feature_floor = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-frame two-layer encoder followed by average pooling over frames.
class ClueEncoder {
 public:
  static ClueEncoder create(nn::ParamSet& params, const NetConfig& cfg, Rng& rng);
  /// embed_dim x 1.
  nn::Var encode(nn::Tape& tape, const SpecTensor& clue) const;

 private:
  nn::Dense frame_in_;
  nn::Dense frame_out_;
  double floor_ = 1e-3;
};

/// Residual trunk over frames with a gain head.
///
/// Inputs are stacked complex channels (2F x L each). Features are their log
/// powers; the trunk is: dense -> block 1 -> [clue fusion] -> blocks 2..B ->
/// dense head. The head emits one real gain per bin and frame for each output
/// channel, and `combine` forms sum_k gain_k * channel_k.
class GainNetwork {
 public:
  static GainNetwork create(nn::ParamSet& params, const std::string& name, const NetConfig& cfg,
                            int input_channels, std::vector<double> initial_gains, bool timed,
                            bool fused, Rng& rng);

  nn::Var gains(nn::Tape& tape, std::span<const nn::Var> inputs,
                std::optional<nn::Var> embedding, std::optional<double> t) const;
  nn::Var combine(nn::Tape& tape, nn::Var gains, std::span<const nn::Var> channels) const;

  bool fused() const { return fusion_.has_value(); }
  bool timed() const { return time_in_.has_value(); }

 private:
  int freqs_ = 0;
  int input_channels_ = 0;
  int gain_channels_ = 0;
  double floor_ = 1e-3;
  nn::Dense input_;
  std::vector<nn::ResidualBlock> blocks_;
  std::optional<nn::Dense> fusion_;  // embed_dim -> width, no bias
  std::optional<nn::Dense> time_in_;
  nn::TimeEmbedding time_embedding_;
  nn::Dense head_;
};

/// The three network variants behind one parameter set.
///
///  * Tse:       x0_hat = G(y, e) * y                                  (discriminative)
///  * DiffTse:   s = [A * x_t + B * y] / sigma(t)^2, gains from (x_t, y, e, t)
///  * DiffTseMt: x0_hat from the Tse branch, then
///               s = [A * x_t + D * x0_hat + B * y] / sigma(t)^2, gains from (x_t, x0_hat, y, t)
///
/// The clue encoder is shared by every branch of a model.
class TseModel {
 public:
  TseModel(ModelVariant variant, NetConfig cfg, SdeParams sde, double t_eps = kDefaultTimeEps);

  ModelVariant variant() const { return variant_; }
  const NetConfig& config() const { return cfg_; }
  const SdeParams& sde() const { return sde_; }
  double t_eps() const { return t_eps_; }
  bool is_generative() const { return variant_ != ModelVariant::Tse; }
  bool has_discriminative_branch() const { return variant_ != ModelVariant::DiffTse; }

  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // Tape-level builders. Complex tensors enter as stacked 2F x L variables.
  nn::Var clue_embedding(nn::Tape& tape, const SpecTensor& clue) const;
  nn::Var extract(nn::Tape& tape, nn::Var y, nn::Var embedding) const;
  struct ScoreVars {
    nn::Var score;
    nn::Var x0_hat;  // invalid for DiffTse
  };
  ScoreVars score(nn::Tape& tape, nn::Var xt, nn::Var y, nn::Var embedding, double t) const;
  /// Score from a precomputed discriminative estimate (DiffTseMt only).
  nn::Var score_from_estimate(nn::Tape& tape, nn::Var xt, nn::Var y, nn::Var x0_hat, double t) const;

  // Value-level entry points.
  Eigen::VectorXd clue_encode(const EnrollmentClue& c) const;
  SpecTensor discriminative_extract(const SpecTensor& y, const EnrollmentClue& c) const;
  SpecTensor diff_tse_score(const SpecTensor& xt, const SpecTensor& y, const EnrollmentClue& c,
                            double t) const;
  std::pair<SpecTensor, SpecTensor> diff_tse_mt_score(const SpecTensor& xt, const SpecTensor& y,
                                                      const EnrollmentClue& c, double t) const;

  /// Plain-text topology descriptor (key = value lines).
  std::string topology() const;
  static TseModel from_topology(const std::string& text);

  /// Writes <stem>.topology and <stem>.params.
  void save(const std::filesystem::path& stem) const;
  static TseModel load(const std::filesystem::path& stem);

  /// Parameter names owned by the discriminative branch (prefix "tse.").
  static bool is_discriminative_param(const std::string& name);
  static bool is_score_head_param(const std::string& name);

 private:
  void check_time(double t) const;
  void check_shapes(const SpecTensor& y) const;

  ModelVariant variant_;
  NetConfig cfg_;
  SdeParams sde_;
  double t_eps_;
  nn::ParamSet params_;
  ClueEncoder clue_;
  std::optional<GainNetwork> tse_;
  std::optional<GainNetwork> score_;
};

/// s(x_t, y, c, t) approximating the conditional score of the reverse process.
class ScoreModel {
 public:
  using ConditionedScore = std::function<SpecTensor(const SpecTensor& xt, double t)>;

  virtual ~ScoreModel() = default;
  /// Precomputes everything that depends on (y, c) only; the result is cheap to call per step.
  virtual ConditionedScore condition(const SpecTensor& y, const EnrollmentClue& c) const = 0;

  SpecTensor score(const SpecTensor& xt, const SpecTensor& y, const EnrollmentClue& c,
                   double t) const {
    return condition(y, c)(xt, t);
  }
};

/// Score network backed by a DiffTse or DiffTseMt model.
class NetScoreModel : public ScoreModel {
 public:
  explicit NetScoreModel(const TseModel& model);
  ConditionedScore condition(const SpecTensor& y, const EnrollmentClue& c) const override;

 private:
  const TseModel* model_;
};

/// Conditional Gaussian p(x0 | y, c) = N_c(mean, diag(variance)).
struct ConditionalGaussian {
  SpecTensor mean;
  Eigen::MatrixXd variance;  // F x L, complex variance per entry, >= 0
};

/// -(x_t - m_t) / v_t with m_t = e^{-gamma t} m + (1 - e^{-gamma t}) y and
/// v_t = e^{-2 gamma t} P + sigma(t)^2: the exact marginal score when x0 ~ N_c(m, P).
SpecTensor oracle_gaussian_score(const SpecTensor& xt, const SpecTensor& y,
                                 const ConditionalGaussian& cond, double t, const SdeParams& p);

/// Marginal of x_t under the conditional Gaussian (mean tensor, per-entry variance).
std::pair<SpecTensor, Eigen::MatrixXd> oracle_marginal(const SpecTensor& y,
                                                       const ConditionalGaussian& cond, double t,
                                                       const SdeParams& p);

class OracleGaussianScore : public ScoreModel {
 public:
  OracleGaussianScore(ConditionalGaussian cond, SdeParams sde);
  ConditionedScore condition(const SpecTensor& y, const EnrollmentClue& c) const override;

 private:
  ConditionalGaussian cond_;
  SdeParams sde_;
};

/// x0_hat = TSE(y, c).
class TargetExtractor {
 public:
  virtual ~TargetExtractor() = default;
  virtual SpecTensor extract(const SpecTensor& y, const EnrollmentClue& c) const = 0;
};

class DiscriminativeExtractor : public TargetExtractor {
 public:
  explicit DiscriminativeExtractor(const TseModel& model);
  SpecTensor extract(const SpecTensor& y, const EnrollmentClue& c) const override;

 private:
  const TseModel* model_;
};

/// Returns the mixture unchanged; the zero-improvement baseline.
class MixturePassthrough : public TargetExtractor {
 public:
  SpecTensor extract(const SpecTensor& y, const EnrollmentClue&) const override { return y; }
};

}  // namespace difftse
