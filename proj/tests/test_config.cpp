#include "support.hpp"

#include "difftse/config.hpp"

#include <catch_amalgamated.hpp>

#include <fstream>

using namespace difftse;

TEST_CASE("ini parsing") {
  const IniDocument doc = IniDocument::parse(
      "# leading comment\n"
      "seed = 7\n"
      "[train]\n"
      "lr = 0.001   ; trailing comment\n"
      "  steps=20\n"
      "\n"
      "[sampler]\n"
      "sum_mode = true\n");
  CHECK(doc.get("seed") == "7");
  CHECK(doc.get_double("train.lr") == 0.001);
  CHECK(doc.get_int("train.steps") == 20);
  CHECK(doc.get_bool("sampler.sum_mode"));
  CHECK_THROWS_AS(doc.get("train.missing"), ConfigError);
  CHECK_THROWS_AS(doc.get_int("train.lr"), ConfigError);

  CHECK_THROWS_AS(IniDocument::parse("[train\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::parse("just words\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::parse(" = 3\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::load("/nonexistent/difftse.ini"), std::filesystem::filesystem_error);
}

TEST_CASE("run config fields and overrides") {
  RunConfig cfg;
  cfg.set("model", "diff-tse-mt");
  cfg.set("train.alpha", "2.5");
  cfg.set("sampler.corrector", "langevin");
  cfg.set("sampler.ensemble", "3");
  CHECK(cfg.model == ModelVariant::DiffTseMt);
  CHECK(cfg.train.alpha == 2.5);
  CHECK(cfg.sampler.corrector == CorrectorRule::ScoreNorm);
  CHECK(cfg.sampler.ensemble == 3);
  CHECK_THROWS_AS(cfg.set("train.momentum", "0.9"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.steps", "many"), ConfigError);
  CHECK_THROWS_AS(cfg.set("model", "unet"), ConfigError);

  const auto dir = testing::scratch_dir("config");
  std::ofstream(dir / "a.ini") << "[run]\nseed = 3\njobs = 2\n[train]\nsteps = 50\n";
  const RunConfig loaded = load_run_config(dir / "a.ini", {{"train.steps", "60"}, {"seed", "4"}});
  CHECK(loaded.train.steps == 60);
  CHECK(loaded.seed == 4);
  CHECK(loaded.jobs == 2);
  CHECK(loaded.train.jobs == 2);
  CHECK(loaded.sampler.jobs == 2);
  CHECK(loaded.corpus.seed == 4);
  CHECK(loaded.net.freqs == loaded.stft.freqs());

  CHECK_THROWS_AS(load_run_config("", {{"train.delta_T", "2"}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {{"jobs", "0"}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("", {{"sde.t_eps", "0"}}), ConfigError);
}

TEST_CASE("resolved config text reproduces the same config") {
  const RunConfig cfg = load_run_config("", {{"seed", "11"},
                                             {"train.lr", "0.001"},
                                             {"train.cosine_decay", "true"},
                                             {"sde.sigma1", "0.45"},
                                             {"corpus.n_train", "123"},
                                             {"sampler.r", "0.3"}});
  const std::string text = cfg.to_ini();
  const auto dir = testing::scratch_dir("config_echo");
  std::ofstream(dir / "echo.ini") << text;
  const RunConfig back = load_run_config(dir / "echo.ini", {});
  CHECK(back.to_ini() == text);
  CHECK(back.train.lr == 0.001);
  CHECK(back.train.cosine_decay);
  CHECK(back.sde.sigma1 == 0.45);
  CHECK(back.corpus.n_train == 123);
  CHECK(back.sampler.seed == cfg.sampler.seed);
}
