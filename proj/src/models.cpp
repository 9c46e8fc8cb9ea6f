#include "difftse/models.hpp"

#include "difftse/checkpoint.hpp"
#include "difftse/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace difftse {

using nn::Tape;
using nn::Var;

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Tse: return "tse";
    case ModelVariant::DiffTse: return "diff-tse";
    case ModelVariant::DiffTseMt: return "diff-tse-mt";
  }
  return "unknown";
}

ModelVariant parse_variant(const std::string& name) {
  if (name == "tse") return ModelVariant::Tse;
  if (name == "diff-tse") return ModelVariant::DiffTse;
  if (name == "diff-tse-mt") return ModelVariant::DiffTseMt;
  throw ContractError("unknown model variant '" + name + "' (expected tse, diff-tse, diff-tse-mt)");
}

void NetConfig::validate() const {
  if (freqs < 1 || width < 1 || blocks < 1 || embed_dim < 1) {
    throw ContractError("NetConfig: sizes must be positive");
  }
  if (time_dim < 2 || time_dim % 2 != 0) throw ContractError("NetConfig: time_dim must be even");
  if (!(feature_floor > 0.0)) throw ContractError("NetConfig: feature_floor must be > 0");
}

ClueEncoder ClueEncoder::create(nn::ParamSet& params, const NetConfig& cfg, Rng& rng) {
  ClueEncoder enc;
  enc.frame_in_ = nn::Dense::create(params, "clue.frame_in", cfg.freqs, cfg.width, rng);
  enc.frame_out_ = nn::Dense::create(params, "clue.frame_out", cfg.width, cfg.embed_dim, rng);
  enc.floor_ = cfg.feature_floor;
  return enc;
}

Var ClueEncoder::encode(Tape& tape, const SpecTensor& clue) const {
  if (clue.frames() < 1) throw ContractError("clue_encode: enrollment has no frames");
  if (clue.freqs() != frame_in_.in) throw ContractError("clue_encode: wrong frequency count");
  Var features = tape.log_power(tape.constant(to_stacked(clue)), floor_);
  Var h = tape.silu(frame_in_(tape, features));
  return tape.mean_columns(frame_out_(tape, h));
}

GainNetwork GainNetwork::create(nn::ParamSet& params, const std::string& name, const NetConfig& cfg,
                                int input_channels, std::vector<double> initial_gains, bool timed,
                                bool fused, Rng& rng) {
  GainNetwork net;
  net.freqs_ = cfg.freqs;
  net.input_channels_ = input_channels;
  net.gain_channels_ = static_cast<int>(initial_gains.size());
  net.floor_ = cfg.feature_floor;
  net.time_embedding_ = nn::TimeEmbedding(cfg.time_dim);
  net.input_ = nn::Dense::create(params, name + ".input", static_cast<Index>(input_channels) * cfg.freqs,
                                 cfg.width, rng);
  if (timed) net.time_in_ = nn::Dense::create(params, name + ".time_in", cfg.time_dim, cfg.width, rng);
  for (int b = 0; b < cfg.blocks; ++b) {
    std::optional<Index> tdim;
    if (timed) tdim = cfg.width;
    net.blocks_.push_back(
        nn::ResidualBlock::create(params, name + ".block" + std::to_string(b), cfg.width, tdim, rng));
  }
  if (fused) {
    net.fusion_ = nn::Dense::create(params, name + ".fusion", cfg.embed_dim, cfg.width, rng,
                                    nn::Init::Glorot, /*with_bias=*/false);
  }
  net.head_ = nn::Dense::create(params, name + ".head", cfg.width,
                                static_cast<Index>(net.gain_channels_) * cfg.freqs, rng, nn::Init::Zero);
  nn::Matrix& bias = params[net.head_.bias].value;
  for (int k = 0; k < net.gain_channels_; ++k) {
    bias.middleRows(static_cast<Index>(k) * cfg.freqs, cfg.freqs).setConstant(initial_gains[k]);
  }
  return net;
}

Var GainNetwork::gains(Tape& tape, std::span<const Var> inputs, std::optional<Var> embedding,
                       std::optional<double> t) const {
  if (static_cast<int>(inputs.size()) != input_channels_) {
    throw ContractError("GainNetwork: wrong number of input channels");
  }
  std::vector<Var> features;
  for (Var in : inputs) {
    if (tape.rows(in) != 2 * freqs_) throw ContractError("GainNetwork: input has wrong frequency count");
    features.push_back(tape.log_power(in, floor_));
  }
  Var h = input_(tape, tape.concat_rows(features));

  std::optional<Var> temb;
  if (time_in_) {
    if (!t) throw ContractError("GainNetwork: process time required");
    temb = tape.silu((*time_in_)(tape, tape.constant(time_embedding_.embed(*t))));
  }
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    h = blocks_[b](tape, h, temb);
    if (b == 0 && fusion_) {
      if (!embedding) throw ContractError("GainNetwork: clue embedding required");
      h = nn::multiplication_fusion(tape, h, (*fusion_)(tape, *embedding));
    }
  }
  return head_(tape, tape.silu(h));
}

Var GainNetwork::combine(Tape& tape, Var gains, std::span<const Var> channels) const {
  if (static_cast<int>(channels.size()) != gain_channels_) {
    throw ContractError("GainNetwork: wrong number of combined channels");
  }
  Var out;
  for (int k = 0; k < gain_channels_; ++k) {
    Var g = tape.slice_rows(gains, static_cast<Index>(k) * freqs_, freqs_);
    Var term = tape.mul(tape.concat_rows({g, g}), channels[static_cast<std::size_t>(k)]);
    out = out.valid() ? tape.add(out, term) : term;
  }
  return out;
}

TseModel::TseModel(ModelVariant variant, NetConfig cfg, SdeParams sde, double t_eps)
    : variant_(variant), cfg_(cfg), sde_(sde), t_eps_(t_eps) {
  cfg_.validate();
  sde_.validate();
  if (!(t_eps_ > 0.0 && t_eps_ < sde_.t_max)) throw ContractError("TseModel: t_eps must be in (0, T)");
  Rng rng(cfg_.seed);
  clue_ = ClueEncoder::create(params_, cfg_, rng);
  switch (variant_) {
    case ModelVariant::Tse:
      tse_ = GainNetwork::create(params_, "tse", cfg_, 1, {1.0}, false, true, rng);
      break;
    case ModelVariant::DiffTse:
      score_ = GainNetwork::create(params_, "score", cfg_, 2, {-1.0, 1.0}, true, true, rng);
      break;
    case ModelVariant::DiffTseMt:
      tse_ = GainNetwork::create(params_, "tse", cfg_, 1, {1.0}, false, true, rng);
      score_ = GainNetwork::create(params_, "score", cfg_, 3, {-1.0, 0.0, 1.0}, true, false, rng);
      break;
  }
}

void TseModel::check_time(double t) const {
  constexpr double slack = 1e-12;
  if (!(t >= t_eps_ - slack && t <= sde_.t_max + slack)) {
    throw std::domain_error("score model: t=" + std::to_string(t) + " outside [t_eps, T]");
  }
}

void TseModel::check_shapes(const SpecTensor& y) const {
  if (y.freqs() != cfg_.freqs) throw ContractError("TseModel: mixture has wrong frequency count");
  if (y.frames() < 1) throw ContractError("TseModel: mixture has no frames");
}

Var TseModel::clue_embedding(Tape& tape, const SpecTensor& clue) const {
  return clue_.encode(tape, clue);
}

Var TseModel::extract(Tape& tape, Var y, Var embedding) const {
  if (!tse_) throw ContractError("extract: model has no discriminative branch");
  const Var inputs[] = {y};
  Var g = tse_->gains(tape, inputs, embedding, std::nullopt);
  return tse_->combine(tape, g, inputs);
}

Var TseModel::score_from_estimate(Tape& tape, Var xt, Var y, Var x0_hat, double t) const {
  if (variant_ != ModelVariant::DiffTseMt) throw ContractError("score_from_estimate: DiffTseMt only");
  check_time(t);
  const Var inputs[] = {xt, x0_hat, y};
  Var g = score_->gains(tape, inputs, std::nullopt, t);
  return tape.scale(score_->combine(tape, g, inputs), 1.0 / kernel_variance(t, sde_));
}

TseModel::ScoreVars TseModel::score(Tape& tape, Var xt, Var y, Var embedding, double t) const {
  if (!score_) throw ContractError("score: model is not generative");
  check_time(t);
  if (variant_ == ModelVariant::DiffTseMt) {
    Var x0_hat = extract(tape, y, embedding);
    return {score_from_estimate(tape, xt, y, x0_hat, t), x0_hat};
  }
  const Var inputs[] = {xt, y};
  Var g = score_->gains(tape, inputs, embedding, t);
  return {tape.scale(score_->combine(tape, g, inputs), 1.0 / kernel_variance(t, sde_)), Var{}};
}

Eigen::VectorXd TseModel::clue_encode(const EnrollmentClue& c) const {
  Tape tape(params_);
  return tape.value(clue_embedding(tape, c.spec)).col(0);
}

SpecTensor TseModel::discriminative_extract(const SpecTensor& y, const EnrollmentClue& c) const {
  check_shapes(y);
  Tape tape(params_);
  Var e = clue_embedding(tape, c.spec);
  return from_stacked(tape.value(extract(tape, tape.constant(to_stacked(y)), e)));
}

SpecTensor TseModel::diff_tse_score(const SpecTensor& xt, const SpecTensor& y,
                                    const EnrollmentClue& c, double t) const {
  require_same_shape(xt, y, "diff_tse_score");
  check_shapes(y);
  Tape tape(params_);
  Var e = clue_embedding(tape, c.spec);
  auto out = score(tape, tape.constant(to_stacked(xt)), tape.constant(to_stacked(y)), e, t);
  return from_stacked(tape.value(out.score));
}

std::pair<SpecTensor, SpecTensor> TseModel::diff_tse_mt_score(const SpecTensor& xt,
                                                              const SpecTensor& y,
                                                              const EnrollmentClue& c,
                                                              double t) const {
  if (variant_ != ModelVariant::DiffTseMt) throw ContractError("diff_tse_mt_score: DiffTseMt only");
  require_same_shape(xt, y, "diff_tse_mt_score");
  check_shapes(y);
  Tape tape(params_);
  Var e = clue_embedding(tape, c.spec);
  auto out = score(tape, tape.constant(to_stacked(xt)), tape.constant(to_stacked(y)), e, t);
  return {from_stacked(tape.value(out.score)), from_stacked(tape.value(out.x0_hat))};
}

bool TseModel::is_discriminative_param(const std::string& name) { return name.rfind("tse.", 0) == 0; }
bool TseModel::is_score_head_param(const std::string& name) { return name.rfind("score.", 0) == 0; }

std::string TseModel::topology() const {
  std::ostringstream os;
  os.precision(17);
  os << "# difftse model topology\n";
  os << "variant = " << to_string(variant_) << "\n";
  os << "freqs = " << cfg_.freqs << "\n";
  os << "width = " << cfg_.width << "\n";
  os << "blocks = " << cfg_.blocks << "\n";
  os << "embed_dim = " << cfg_.embed_dim << "\n";
  os << "time_dim = " << cfg_.time_dim << "\n";
  os << "feature_floor = " << cfg_.feature_floor << "\n";
  os << "seed = " << cfg_.seed << "\n";
  os << "t_eps = " << t_eps_ << "\n";
  os << "gamma = " << sde_.gamma << "\n";
  os << "sigma0 = " << sde_.sigma0 << "\n";
  os << "sigma1 = " << sde_.sigma1 << "\n";
  os << "t_max = " << sde_.t_max << "\n";
  os << "param_count = " << params_.scalar_count() << "\n";
  return os.str();
}

TseModel TseModel::from_topology(const std::string& text) {
  const IniDocument doc = IniDocument::parse(text);
  NetConfig cfg;
  cfg.freqs = doc.get_int("freqs");
  cfg.width = doc.get_int("width");
  cfg.blocks = doc.get_int("blocks");
  cfg.embed_dim = doc.get_int("embed_dim");
  cfg.time_dim = doc.get_int("time_dim");
  cfg.feature_floor = doc.get_double("feature_floor");
  cfg.seed = doc.get_u64("seed");
  SdeParams sde;
  sde.gamma = doc.get_double("gamma");
  sde.sigma0 = doc.get_double("sigma0");
  sde.sigma1 = doc.get_double("sigma1");
  sde.t_max = doc.get_double("t_max");
  return TseModel(parse_variant(doc.get("variant")), cfg, sde, doc.get_double("t_eps"));
}

void TseModel::save(const std::filesystem::path& stem) const {
  std::ofstream os(stem.string() + ".topology");
  if (!os) throw std::runtime_error("TseModel::save: cannot write " + stem.string() + ".topology");
  os << topology();
  nn::save_params(params_, stem.string() + ".params");
}

TseModel TseModel::load(const std::filesystem::path& stem) {
  const std::filesystem::path topo = stem.string() + ".topology";
  std::ifstream is(topo);
  if (!is) throw std::runtime_error("TseModel::load: cannot open " + topo.string());
  std::stringstream buffer;
  buffer << is.rdbuf();
  std::optional<TseModel> parsed;
  try {
    parsed.emplace(from_topology(buffer.str()));
  } catch (const std::exception& e) {
    throw CorruptDataError("TseModel::load: bad topology " + topo.string() + ": " + e.what());
  }
  TseModel model = std::move(*parsed);
  nn::load_params_into(model.params_, stem.string() + ".params");
  return model;
}

NetScoreModel::NetScoreModel(const TseModel& model) : model_(&model) {
  if (!model.is_generative()) throw ContractError("NetScoreModel: model variant has no score head");
}

ScoreModel::ConditionedScore NetScoreModel::condition(const SpecTensor& y,
                                                      const EnrollmentClue& c) const {
  const TseModel* model = model_;
  const nn::Matrix y_stacked = to_stacked(y);
  nn::Matrix embedding;
  nn::Matrix x0_hat;
  {
    Tape tape(model->params());
    Var e = model->clue_embedding(tape, c.spec);
    embedding = tape.value(e);
    if (model->variant() == ModelVariant::DiffTseMt) {
      x0_hat = tape.value(model->extract(tape, tape.constant(y_stacked), e));
    }
  }
  return [model, y_stacked, embedding, x0_hat](const SpecTensor& xt, double t) {
    if (xt.freqs() * 2 != y_stacked.rows() || xt.frames() != y_stacked.cols()) {
      throw ContractError("score: x_t shape does not match mixture");
    }
    Tape tape(model->params());
    Var xv = tape.constant(to_stacked(xt));
    Var yv = tape.constant(y_stacked);
    Var out;
    if (model->variant() == ModelVariant::DiffTseMt) {
      out = model->score_from_estimate(tape, xv, yv, tape.constant(x0_hat), t);
    } else {
      out = model->score(tape, xv, yv, tape.constant(embedding), t).score;
    }
    return from_stacked(tape.value(out));
  };
}

std::pair<SpecTensor, Eigen::MatrixXd> oracle_marginal(const SpecTensor& y,
                                                       const ConditionalGaussian& cond, double t,
                                                       const SdeParams& p) {
  require_same_shape(y, cond.mean, "oracle_marginal");
  if (cond.variance.rows() != y.freqs() || cond.variance.cols() != y.frames()) {
    throw ContractError("oracle_marginal: variance shape mismatch");
  }
  if ((cond.variance.array() < 0.0).any()) throw ContractError("oracle_marginal: negative variance");
  const double a = mean_decay(t, p);
  SpecTensor mean(a * cond.mean.values() + (1.0 - a) * y.values());
  Eigen::MatrixXd var = (a * a) * cond.variance.array() + kernel_variance(t, p);
  return {std::move(mean), std::move(var)};
}

SpecTensor oracle_gaussian_score(const SpecTensor& xt, const SpecTensor& y,
                                 const ConditionalGaussian& cond, double t, const SdeParams& p) {
  require_same_shape(xt, y, "oracle_gaussian_score");
  if (!(t > 0.0)) throw std::domain_error("oracle_gaussian_score: t must be > 0");
  auto [mean, var] = oracle_marginal(y, cond, t, p);
  Eigen::MatrixXcd s = -(xt.values() - mean.values()).array() / var.array().cast<Complex>();
  return SpecTensor(std::move(s));
}

OracleGaussianScore::OracleGaussianScore(ConditionalGaussian cond, SdeParams sde)
    : cond_(std::move(cond)), sde_(sde) {}

ScoreModel::ConditionedScore OracleGaussianScore::condition(const SpecTensor& y,
                                                            const EnrollmentClue&) const {
  return [this, y](const SpecTensor& xt, double t) {
    return oracle_gaussian_score(xt, y, cond_, t, sde_);
  };
}

DiscriminativeExtractor::DiscriminativeExtractor(const TseModel& model) : model_(&model) {
  if (!model.has_discriminative_branch()) {
    throw ContractError("DiscriminativeExtractor: model has no discriminative branch");
  }
}

SpecTensor DiscriminativeExtractor::extract(const SpecTensor& y, const EnrollmentClue& c) const {
  return model_->discriminative_extract(y, c);
}

}  // namespace difftse
