#include "difftse/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace difftse;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<std::string> model;
  std::optional<int> ensemble;
  std::optional<int> steps;
  std::optional<int> iterations;
  std::optional<std::string> corpus;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", f.sets, "override, section.key=value (repeatable)");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--jobs", f.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--corpus", f.corpus, "corpus directory");
  cmd->add_option("--out", f.out, "output directory");
}

std::vector<std::pair<std::string, std::string>> overrides(const CommonFlags& f) {
  std::vector<std::pair<std::string, std::string>> o;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) o.emplace_back("run.seed", std::to_string(*f.seed));
  if (f.jobs) o.emplace_back("run.jobs", std::to_string(*f.jobs));
  if (f.model) o.emplace_back("run.model", *f.model);
  if (f.ensemble) o.emplace_back("sampler.ensemble", std::to_string(*f.ensemble));
  if (f.steps) o.emplace_back("sampler.n_steps", std::to_string(*f.steps));
  if (f.iterations) o.emplace_back("train.steps", std::to_string(*f.iterations));
  if (f.corpus) o.emplace_back("run.corpus_dir", *f.corpus);
  if (f.out) o.emplace_back("run.output_dir", *f.out);
  if (f.checkpoint) o.emplace_back("run.checkpoint", *f.checkpoint);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-based target speech extraction on a synthetic two-talker corpus"};
  app.require_subcommand(1);

  CommonFlags flags;
  ExtractRequest extract_req;

  auto* gen = app.add_subcommand("gen", "generate the toy corpus");
  add_common(gen, flags);

  auto* train = app.add_subcommand("train", "train a model on the corpus");
  add_common(train, flags);
  train->add_option("--model", flags.model, "tse | diff-tse | diff-tse-mt");
  train->add_option("--iterations", flags.iterations, "optimizer steps");

  auto* extract = app.add_subcommand("extract", "extract the clued speaker from a mixture WAV");
  add_common(extract, flags);
  extract->add_option("--checkpoint", flags.checkpoint, "model stem (<dir>/model) or 'passthrough'");
  extract->add_option("--mixture", extract_req.mixture, "mixture WAV")->required();
  extract->add_option("--clue", extract_req.clue, "enrollment WAV")->required();
  extract->add_option("--ensemble", flags.ensemble, "ensemble size J");
  extract->add_option("--steps", flags.steps, "reverse steps N");
  extract->add_flag("--trace", extract_req.trace, "dump per-step states");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval, flags);
  eval->add_option("--checkpoint", flags.checkpoint, "model stem (<dir>/model) or 'passthrough'");
  eval->add_option("--ensemble", flags.ensemble, "ensemble size J");
  eval->add_option("--steps", flags.steps, "reverse steps N");

  auto* verify = app.add_subcommand("verify", "run the oracle suites");
  add_common(verify, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::Usage);
  }

  return run_guarded(
      [&]() -> int {
        const RunConfig cfg = load_run_config(flags.config, overrides(flags));
        std::cout << "# resolved config\n" << cfg.to_ini() << "\n";
        if (gen->parsed()) return cmd_gen(cfg, std::cout);
        if (train->parsed()) return cmd_train(cfg, std::cout);
        if (extract->parsed()) return cmd_extract(cfg, extract_req, std::cout);
        if (eval->parsed()) return cmd_eval(cfg, std::cout);
        return cmd_verify(cfg, std::cout);
      },
      std::cerr);
}
