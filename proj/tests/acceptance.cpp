// End-to-end acceptance run: one PASS/FAIL line per criterion, exit 1 on any FAIL.
//
// Trained models are cached under --work keyed by their resolved config, so a
// rerun only re-evaluates. Pass --fresh to retrain from scratch.

#include "difftse/commands.hpp"
#include "difftse/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

using namespace difftse;
namespace fs = std::filesystem;

namespace {

using Overrides = std::vector<std::pair<std::string, std::string>>;
using Clock = std::chrono::steady_clock;

constexpr int kSeeds = 3;
constexpr int kEnsemble = 10;
constexpr double kMaxTrainSeconds = 1800.0;

// Toy-scale training recipe shared by both generative systems.
const Overrides kRecipe = {
    {"corpus.n_train", "2000"}, {"corpus.n_test", "200"}, {"net.width", "32"},
    {"net.blocks", "4"},        {"train.lr", "1e-3"},     {"train.batch_size", "16"},
    {"train.ema_decay", "0.999"}, {"train.cosine_decay", "true"},
};
constexpr const char* kDiffSteps = "15000";
constexpr const char* kMtSteps = "10000";
// The unweighted score loss is orders of magnitude larger than the SNR loss on
// this corpus; this weight keeps the shared branch a working extractor.
constexpr const char* kMtAlpha = "1e5";

struct Verdict {
  bool passed = true;
  std::ostringstream detail;
  void require(bool ok) { passed = passed && ok; }
};

void report(int id, const std::string& what, const Verdict& v, double seconds) {
  std::string detail = v.detail.str();
  while (!detail.empty() && (detail.back() == ' ' || detail.back() == ';')) detail.pop_back();
  std::printf("criterion %d: %s  %s [%s] (%.1f s)\n", id, v.passed ? "PASS" : "FAIL", what.c_str(),
              detail.c_str(), seconds);
  std::fflush(stdout);
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string fmt(double v, const char* spec = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

RunConfig make_config(const fs::path& work, int seed, Overrides extra) {
  Overrides o = kRecipe;
  o.emplace_back("seed", std::to_string(seed));
  o.emplace_back("corpus_dir", (work / ("corpus_" + std::to_string(seed))).string());
  for (auto& kv : extra) o.push_back(std::move(kv));
  return load_run_config("", o);
}

// Generates the corpus unless an identical one is already on disk.
void ensure_corpus(const RunConfig& train_cfg) {
  RunConfig cfg = train_cfg;
  cfg.output_dir = cfg.corpus_dir;
  const fs::path stamp = fs::path(cfg.corpus_dir) / "config.ini";
  if (fs::exists(stamp) && slurp(stamp) == cfg.to_ini()) return;
  std::ostringstream sink;
  if (cmd_gen(cfg, sink) != 0) throw std::runtime_error("corpus generation failed");
}

struct SystemResult {
  EvalReport report;
  double train_seconds = 0.0;
};

SystemResult train_and_evaluate(RunConfig cfg, const Corpus& corpus) {
  const fs::path dir = cfg.output_dir;
  const fs::path seconds_file = dir / "train_seconds.txt";
  SystemResult r;
  const bool cached = fs::exists(dir / "model.params") && fs::exists(seconds_file) &&
                      slurp(dir / "config.ini") == cfg.to_ini();
  if (cached) {
    std::ifstream(seconds_file) >> r.train_seconds;
  } else {
    std::ofstream progress(dir.string() + ".progress.log");
    const auto t0 = Clock::now();
    if (cmd_train(cfg, progress) != 0) throw std::runtime_error("training failed: " + dir.string());
    r.train_seconds = since(t0);
    std::ofstream(seconds_file) << fmt(r.train_seconds, "%.3f") << "\n";
  }
  cfg.checkpoint = (dir / "model").string();
  cfg.sampler.ensemble = kEnsemble;
  r.report = evaluate(cfg, corpus);
  write_eval_report(r.report, dir / "eval");
  return r;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DIFFTSE_CLI_PATH) + " " + args + " >> " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Everything but the per-step wall time is deterministic in a training log.
std::string comparable(const fs::path& p) {
  std::string text = slurp(p);
  if (p.filename() == "train.log") {
    static const std::regex wall(" wall_ms=[0-9.]+");
    text = std::regex_replace(text, wall, "");
  }
  return text;
}

bool same_tree(const fs::path& a, const fs::path& b, std::string& why) {
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    if (rel == "config.ini") continue;  // records the output path itself
    ++files;
    if (!fs::exists(b / rel) || comparable(entry.path()) != comparable(b / rel)) {
      why = rel.string() + " differs";
      return false;
    }
  }
  if (files == 0) {
    why = "no files in " + a.string();
    return false;
  }
  return true;
}

Verdict check_determinism(const fs::path& work) {
  Verdict v;
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path log = root / "cli.log";
  const std::string small = " --seed 7 --set corpus.n_train=40 --set corpus.n_test=4";
  const std::string tiny_net = " --set net.width=8 --set net.blocks=1 --set train.batch_size=4 --iterations 20";

  auto compare = [&](const std::string& label, const fs::path& a, const fs::path& b) {
    std::string why;
    const bool ok = same_tree(a, b, why);
    v.require(ok);
    if (!ok) v.detail << label << ": " << why << "; ";
  };
  auto run = [&](const std::string& args) {
    const int code = run_cli(args, log);
    v.require(code == 0);
    if (code != 0) v.detail << "exit " << code << " from: " << args << "; ";
  };

  const std::string c1 = (root / "c1").string();
  run("gen --corpus " + c1 + small);
  run("gen --corpus " + (root / "c2").string() + small + " --jobs 3");
  compare("gen jobs 3 vs 1", root / "c1", root / "c2");

  for (const std::string model : {"tse", "diff-tse", "diff-tse-mt"}) {
    const fs::path base = root / model;
    run("train --model " + model + " --corpus " + c1 + " --out " + (base / "a").string() + small + tiny_net);
    run("train --model " + model + " --corpus " + c1 + " --out " + (base / "b").string() + small + tiny_net);
    run("train --model " + model + " --corpus " + c1 + " --out " + (base / "p").string() + small + tiny_net +
        " --jobs 3");
    compare(model + " rerun", base / "a", base / "b");
    compare(model + " jobs 3 vs 1", base / "a", base / "p");
  }

  const std::string ckpt = (root / "diff-tse-mt" / "a" / "model").string();
  const Corpus corpus = read_corpus(c1);
  const std::string test_stem = (root / "c1" / "test" / std::to_string(corpus.test.front().id)).string();
  const std::string io = " --checkpoint " + ckpt + " --mixture " + test_stem + ".y.wav --clue " + test_stem +
                         ".clue.wav --ensemble 3 --steps 6 --seed 7";
  run("extract" + io + " --out " + (root / "xa").string());
  run("extract" + io + " --out " + (root / "xb").string());
  run("extract" + io + " --out " + (root / "xp").string() + " --jobs 3");
  compare("extract rerun", root / "xa", root / "xb");
  compare("extract jobs 3 vs 1", root / "xa", root / "xp");
  v.require(fs::exists(root / "xa" / "ensemble.wav"));

  if (v.passed) v.detail << "gen, train (3 variants), extract: reruns and --jobs 3 byte-identical";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string work = "acceptance_work";
  bool fresh = false;
  std::uint64_t seed = 0;
  app.add_option("--work", work, "scratch directory for corpora and models");
  app.add_flag("--fresh", fresh, "discard cached models");
  app.add_option("--seed", seed, "seed for the oracle suites");
  CLI11_PARSE(app, argc, argv);

  const fs::path work_dir = work;
  if (fresh) fs::remove_all(work_dir);
  fs::create_directories(work_dir);
  const SdeParams sde;
  bool all = true;
  auto record = [&](int id, const std::string& what, const Verdict& v, Clock::time_point t0) {
    report(id, what, v, since(t0));
    all = all && v.passed;
  };
  auto from_check = [](const CheckResult& r, double limit_seconds) {
    Verdict v;
    v.require(r.passed);
    std::string d = r.detail;
    while (!d.empty() && (d.back() == ' ' || d.back() == ';')) d.pop_back();
    v.detail << d;
    if (limit_seconds > 0.0) {
      v.require(r.seconds < limit_seconds);
      v.detail << "; " << fmt(r.seconds, "%.1f") << " s of " << limit_seconds << " s allowed";
    }
    return v;
  };

  auto t0 = Clock::now();
  record(1, "forward kernel moments vs Euler-Maruyama", from_check(check_kernel_monte_carlo(sde, seed), 60.0), t0);

  t0 = Clock::now();
  {
    Verdict v = from_check(check_kernel_boundaries(sde), 0.0);
    const double var1 = kernel_variance(1.0, sde);
    v.require(std::abs(var1 - 0.1338) < 5e-4);
    v.detail << "; sigma(1)^2 = " << fmt(var1, "%.6f");
    record(2, "kernel boundary values", v, t0);
  }

  t0 = Clock::now();
  {
    const CheckResult m = check_loss_minimizers(sde, seed);
    const CheckResult g = check_gradients(sde, seed, 1e-4);
    Verdict v;
    v.require(m.passed && g.passed);
    v.detail << m.detail << "; " << g.detail;
    record(3, "loss minimisers and gradients", v, t0);
  }

  t0 = Clock::now();
  record(4, "sampler against the analytic Gaussian posterior",
         from_check(check_sampler_oracle(sde, seed, 500), 120.0), t0);

  // Criteria 5-7 share the trained systems.
  t0 = Clock::now();
  std::vector<SystemResult> diff(kSeeds);
  std::vector<SystemResult> mt(kSeeds);
  std::string train_error;
  try {
    for (int s = 0; s < kSeeds; ++s) {
      RunConfig dcfg = make_config(work_dir, s, {{"model", "diff-tse"},
                                                  {"train.steps", kDiffSteps},
                                                  {"output_dir", (work_dir / ("diff-tse_" + std::to_string(s))).string()}});
      RunConfig mcfg = make_config(work_dir, s, {{"model", "diff-tse-mt"},
                                                  {"train.steps", kMtSteps},
                                                  {"train.alpha", kMtAlpha},
                                                  {"output_dir", (work_dir / ("diff-tse-mt_" + std::to_string(s))).string()}});
      ensure_corpus(dcfg);
      const Corpus corpus = read_corpus(dcfg.corpus_dir);
      diff[s] = train_and_evaluate(dcfg, corpus);
      mt[s] = train_and_evaluate(mcfg, corpus);
      std::printf("  seed %d: diff-tse sample %.2f ens %.2f swap %.1f%% (%.0f s train) | "
                  "mt sample %.2f ens %.2f branch %.2f swap %.1f%% (%.0f s train)\n",
                  s, diff[s].report.mean.si_sdri_samples, diff[s].report.mean.si_sdri_ensemble,
                  100.0 * diff[s].report.mean.swap_ok, diff[s].train_seconds, mt[s].report.mean.si_sdri_samples,
                  mt[s].report.mean.si_sdri_ensemble, mt[s].report.mean.si_sdri_branch,
                  100.0 * mt[s].report.mean.swap_ok, mt[s].train_seconds);
      std::fflush(stdout);
    }
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  const double systems_seconds = since(t0);

  Verdict c5, c6, c7;
  if (!train_error.empty()) {
    for (Verdict* v : {&c5, &c6, &c7}) {
      v->require(false);
      v->detail << train_error;
    }
  } else {
    for (int s = 0; s < kSeeds; ++s) {
      const EvalRow& d = diff[s].report.mean;
      const EvalRow& m = mt[s].report.mean;
      c5.require(d.si_sdri_samples > 3.0 && d.swap_ok >= 0.8 && diff[s].train_seconds <= kMaxTrainSeconds);
      c5.detail << "seed " << s << ": " << fmt(d.si_sdri_samples, "%.2f") << " dB, swap "
                << fmt(100.0 * d.swap_ok, "%.1f") << "%, " << fmt(diff[s].train_seconds, "%.0f") << " s; ";
      c6.require(d.si_sdri_ensemble >= d.si_sdri_samples && m.si_sdri_ensemble >= m.si_sdri_samples);
      c6.detail << "seed " << s << ": diff-tse " << fmt(d.si_sdri_ensemble, "%.2f") << " vs "
                << fmt(d.si_sdri_samples, "%.2f") << ", mt " << fmt(m.si_sdri_ensemble, "%.2f") << " vs "
                << fmt(m.si_sdri_samples, "%.2f") << "; ";
      c7.require(m.si_sdri_ensemble >= d.si_sdri_ensemble - 0.5 && m.si_sdri_branch > 0.0);
      c7.detail << "seed " << s << ": mt+ens " << fmt(m.si_sdri_ensemble, "%.2f") << " vs diff-tse+ens "
                << fmt(d.si_sdri_ensemble, "%.2f") << ", branch " << fmt(m.si_sdri_branch, "%.2f") << "; ";
    }
  }
  report(5, "Diff-TSE extraction quality and clue dependence", c5, systems_seconds);
  report(6, "ensemble of " + std::to_string(kEnsemble) + " vs single samples", c6, 0.0);
  report(7, "multi-task vs Diff-TSE", c7, 0.0);
  all = all && c5.passed && c6.passed && c7.passed;

  t0 = Clock::now();
  record(8, "metric and transform identities", from_check(check_metrics(seed), 0.0), t0);

  t0 = Clock::now();
  Verdict c9;
  try {
    c9 = check_determinism(work_dir);
  } catch (const std::exception& e) {
    c9.require(false);
    c9.detail << e.what();
  }
  record(9, "bit-exact reproducibility", c9, t0);

  std::printf("%s\n", all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAIL");
  return all ? 0 : 1;
}
