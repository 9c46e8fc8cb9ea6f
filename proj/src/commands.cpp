#include "difftse/commands.hpp"

#include "difftse/parallel.hpp"
#include "difftse/verify.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace difftse {

namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kPassthrough = "passthrough";

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

std::string fmt_num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_db(double v) {
  if (std::isnan(v)) return "     -";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", v);
  return buf;
}

// Enrollment of `speaker` from the first other example that targets it.
const EnrollmentClue* clue_for(const Corpus& corpus, int speaker, int exclude_id) {
  for (const auto& ex : corpus.test) {
    if (ex.target_id == speaker && ex.id != exclude_id) return &ex.c;
  }
  for (const auto& ex : corpus.train) {
    if (ex.target_id == speaker) return &ex.c;
  }
  return nullptr;
}

std::optional<TseModel> load_checkpoint(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("no checkpoint given (run.checkpoint or --model-path)");
  if (cfg.checkpoint == kPassthrough) return std::nullopt;
  require_file(cfg.checkpoint + ".topology");
  require_file(cfg.checkpoint + ".params");
  return TseModel::load(cfg.checkpoint);
}

}  // namespace

void require_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingFileError("missing file: " + path.string());
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Usage);
  } catch (const MissingFileError& e) {
    err << e.what() << "\n";
    return static_cast<int>(ExitCode::MissingFile);
  } catch (const fs::filesystem_error& e) {
    err << e.what() << "\n";
    return static_cast<int>(ExitCode::MissingFile);
  } catch (const CorruptDataError& e) {
    err << "corrupt data: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Corrupt);
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Corrupt);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::Failure);
  }
}

void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  open_out(dir / "config.ini") << cfg.to_ini();
}

int cmd_gen(const RunConfig& cfg, std::ostream& out) {
  const Corpus corpus = generate_corpus(cfg.corpus);
  write_corpus(corpus, cfg.corpus_dir);
  write_resolved_config(cfg, cfg.corpus_dir);
  out << "wrote " << corpus.train.size() << " train and " << corpus.test.size()
      << " test mixtures (" << corpus.speakers.size() << " speakers) to " << cfg.corpus_dir << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  require_file(fs::path(cfg.corpus_dir) / "manifest.txt");
  const Corpus corpus = read_corpus(cfg.corpus_dir);
  if (corpus.train.empty()) throw ContractError("train: corpus has no training mixtures");

  NetConfig net = cfg.net;
  net.freqs = static_cast<int>(corpus.train.front().y.freqs());
  TseModel model(cfg.model, net, cfg.sde, cfg.t_eps);

  const fs::path dir = cfg.output_dir;
  write_resolved_config(cfg, dir);
  std::ofstream log = open_out(dir / "train.log");
  const int report_every = std::max(1, cfg.train.steps / 20);

  TrainCallbacks callbacks;
  callbacks.on_step = [&](const StepReport& r) {
    log << format_log_line(r) << "\n";
    if ((r.step + 1) % report_every == 0 || r.loss.aborted) out << format_log_line(r) << "\n";
  };
  callbacks.on_checkpoint = [&](int step, const Trainer& trainer) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%06d", step);
    fs::create_directories(dir / "checkpoints");
    trainer.ema_model().save(dir / "checkpoints" / name);
  };
  out << to_string(cfg.model) << ": " << model.params().scalar_count() << " parameters, "
      << cfg.train.steps << " steps\n";
  const TseModel ema = train_model(model, corpus.train, cfg.train, callbacks);
  ema.save(dir / "model");
  out << "saved " << (dir / "model").string() << ".{topology,params}\n";
  return 0;
}

int cmd_extract(const RunConfig& cfg, const ExtractRequest& req, std::ostream& out) {
  require_file(req.mixture);
  require_file(req.clue);
  auto model = load_checkpoint(cfg);
  const Waveform mix = read_wav(req.mixture);
  const Waveform clue_wave = read_wav(req.clue);
  const SpecTensor y = stft(mix, cfg.stft);
  const EnrollmentClue clue{stft(clue_wave, cfg.stft)};

  const fs::path dir = cfg.output_dir;
  write_resolved_config(cfg, dir);
  std::ofstream index = open_out(dir / "extract.txt");
  auto emit = [&](const std::string& name, const SpecTensor& s) {
    write_wav(dir / name, istft(s, cfg.stft, mix.size(), mix.sample_rate));
    index << name << "\n";
    out << "wrote " << (dir / name).string() << "\n";
  };

  if (!model) {
    emit("estimate.wav", y);
    return 0;
  }
  if (!model->is_generative()) {
    emit("estimate.wav", model->discriminative_extract(y, clue));
    return 0;
  }
  SamplerConfig sc = cfg.sampler;
  sc.t_eps = model->t_eps();
  sc.keep_states = sc.keep_states || req.trace;
  NetScoreModel score(*model);
  const EnsembleResult result = extract_ensemble(y, clue, score, model->sde(), sc);
  for (std::size_t j = 0; j < result.traces.size(); ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%02zu", j);
    emit(std::string(name) + ".wav", result.traces[j].x0_hat);
    if (req.trace) write_trace(dir / "traces" / name, result.traces[j]);
  }
  if (sc.ensemble > 1) emit("ensemble.wav", result.x0_hat);
  return 0;
}

EvalReport evaluate(const RunConfig& cfg, const Corpus& corpus) {
  auto model = load_checkpoint(cfg);
  const StftConfig& stft_cfg = corpus.cfg.stft;
  std::size_t n = corpus.test.size();
  if (cfg.eval_limit > 0) n = std::min(n, static_cast<std::size_t>(cfg.eval_limit));

  EvalReport report;
  report.system = model ? to_string(model->variant()) : std::string(kPassthrough);
  const bool generative = model && model->is_generative();
  report.ensemble = generative ? cfg.sampler.ensemble : 1;
  report.rows.resize(n);

  SamplerConfig sc = cfg.sampler;
  sc.jobs = 1;
  if (model) sc.t_eps = model->t_eps();
  std::optional<NetScoreModel> score;
  if (generative) score.emplace(*model);

  parallel_for(n, cfg.jobs, [&](std::size_t k) {
    const MixtureExample& ex = corpus.test[k];
    auto wav = [&](const SpecTensor& s) { return istft(s, stft_cfg, ex.x0_wave.size(), ex.x0_wave.sample_rate); };
    auto improvement = [&](const SpecTensor& s) { return si_sdr_improvement(ex.x0_wave, ex.y_wave, wav(s)); };
    EvalRow row;
    row.id = ex.id;
    row.target_id = ex.target_id;
    row.interferer_id = ex.interferer_id;
    row.si_sdr_mixture = si_sdr(ex.x0_wave, ex.y_wave);
    row.si_sdri_samples = kNaN;
    row.si_sdri_ensemble = kNaN;
    row.si_sdri_branch = kNaN;
    row.swap_ok = kNaN;

    const EnrollmentClue* swapped = clue_for(corpus, ex.interferer_id, ex.id);
    auto swap_check = [&](const SpecTensor& est) {
      const Waveform w = wav(est);
      return si_sdr(ex.interferer_wave, w) > si_sdr(ex.x0_wave, w) ? 1.0 : 0.0;
    };

    if (!model) {
      row.si_sdri_first = improvement(ex.y);
    } else if (!generative) {
      row.si_sdri_first = improvement(model->discriminative_extract(ex.y, ex.c));
      if (swapped) row.swap_ok = swap_check(model->discriminative_extract(ex.y, *swapped));
    } else {
      SamplerConfig local = sc;
      local.seed = split_seed(sc.seed, static_cast<std::uint64_t>(ex.id));
      const EnsembleResult result = extract_ensemble(ex.y, ex.c, *score, model->sde(), local);
      double acc = 0.0;
      for (const auto& tr : result.traces) acc += improvement(tr.x0_hat);
      row.si_sdri_first = improvement(result.traces.front().x0_hat);
      row.si_sdri_samples = acc / static_cast<double>(result.traces.size());
      if (local.ensemble > 1) row.si_sdri_ensemble = improvement(result.x0_hat);
      if (model->variant() == ModelVariant::DiffTseMt) {
        row.si_sdri_branch = improvement(model->discriminative_extract(ex.y, ex.c));
      }
      if (swapped) {
        const auto sw = extract_once(ex.y, *swapped, *score, model->sde(), local,
                                     ensemble_seed(local.seed, 0));
        row.swap_ok = swap_check(sw.x0_hat);
      }
    }
    report.rows[k] = row;
  });

  EvalRow& m = report.mean;
  m = EvalRow{};
  m.id = -1;
  auto column_mean = [&](double EvalRow::*field) {
    if (report.rows.empty()) return kNaN;
    double acc = 0.0;
    for (const auto& r : report.rows) acc += r.*field;
    return acc / static_cast<double>(report.rows.size());
  };
  m.si_sdr_mixture = column_mean(&EvalRow::si_sdr_mixture);
  m.si_sdri_first = column_mean(&EvalRow::si_sdri_first);
  m.si_sdri_samples = column_mean(&EvalRow::si_sdri_samples);
  m.si_sdri_ensemble = column_mean(&EvalRow::si_sdri_ensemble);
  m.si_sdri_branch = column_mean(&EvalRow::si_sdri_branch);
  m.swap_ok = column_mean(&EvalRow::swap_ok);
  return report;
}

void write_eval_report(const EvalReport& report, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream csv = open_out(dir / "metrics.csv");
    csv << "id,target,interferer,si_sdr_mixture,si_sdri_first,si_sdri_samples,si_sdri_ensemble,"
           "si_sdri_branch,swap_ok\n";
    auto line = [&](const std::string& id, const std::string& target, const std::string& interferer,
                    const EvalRow& r) {
      csv << id << "," << target << "," << interferer << "," << fmt_num(r.si_sdr_mixture) << ","
          << fmt_num(r.si_sdri_first) << "," << fmt_num(r.si_sdri_samples) << ","
          << fmt_num(r.si_sdri_ensemble) << "," << fmt_num(r.si_sdri_branch) << ","
          << fmt_num(r.swap_ok) << "\n";
    };
    for (const auto& r : report.rows) {
      line(std::to_string(r.id), std::to_string(r.target_id), std::to_string(r.interferer_id), r);
    }
    line("mean", "", "", report.mean);
  }
  {
    std::ofstream scatter = open_out(dir / "scatter.csv");
    scatter << "id,si_sdr_mixture,si_sdri_single,si_sdri_ensemble\n";
    for (const auto& r : report.rows) {
      scatter << r.id << "," << fmt_num(r.si_sdr_mixture) << "," << fmt_num(r.si_sdri_first) << ","
              << fmt_num(r.si_sdri_ensemble) << "\n";
    }
  }
  std::ofstream txt = open_out(dir / "metrics.txt");
  const EvalRow& m = report.mean;
  txt << "system " << report.system << ", J = " << report.ensemble << ", "
      << report.rows.size() << " test mixtures\n\n";
  txt << "estimate                  SI-SDR  SI-SDRi\n";
  auto row = [&](const char* name, double improvement) {
    if (std::isnan(improvement)) return;
    txt << name << fmt_db(m.si_sdr_mixture + improvement) << "   " << fmt_db(improvement) << "\n";
  };
  row("mixture                 ", 0.0);
  row(std::isnan(m.si_sdri_samples) ? "estimate                " : "first sample            ",
      m.si_sdri_first);
  row("per-sample mean         ", m.si_sdri_samples);
  row("ensemble                ", m.si_sdri_ensemble);
  row("discriminative branch   ", m.si_sdri_branch);
  if (!std::isnan(m.swap_ok)) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "\nclue swap extracts the interferer: %.1f%%\n", 100.0 * m.swap_ok);
    txt << buf;
  }
}

int cmd_eval(const RunConfig& cfg, std::ostream& out) {
  require_file(fs::path(cfg.corpus_dir) / "manifest.txt");
  const Corpus corpus = read_corpus(cfg.corpus_dir);
  const EvalReport report = evaluate(cfg, corpus);
  write_resolved_config(cfg, cfg.output_dir);
  write_eval_report(report, cfg.output_dir);
  std::ifstream txt(fs::path(cfg.output_dir) / "metrics.txt");
  out << txt.rdbuf();
  return 0;
}

int cmd_verify(const RunConfig& cfg, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_verification(cfg.sde, cfg.seed)) {
    out << format_check(r) << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : static_cast<int>(ExitCode::VerificationFailed);
}

}  // namespace difftse
