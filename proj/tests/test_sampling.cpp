#include "support.hpp"

#include "difftse/sampling.hpp"
#include "difftse/verify.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>

using namespace difftse;

namespace {

const SdeParams kSde{};

ScoreModel::ConditionedScore zero_score() {
  return [](const SpecTensor& x, double) { return SpecTensor(x.freqs(), x.frames()); };
}

ScoreModel::ConditionedScore oracle(const SpecTensor& y, const ConditionalGaussian& cond) {
  return [y, cond](const SpecTensor& x, double t) { return oracle_gaussian_score(x, y, cond, t, kSde); };
}

double rms_error(const SamplerOracleStats& s) { return std::hypot(s.mean_error, s.std_error); }

}  // namespace

TEST_CASE("corrector rule names") {
  CHECK(parse_corrector_rule("ald") == CorrectorRule::Annealed);
  CHECK(parse_corrector_rule("langevin") == CorrectorRule::ScoreNorm);
  CHECK(to_string(CorrectorRule::ScoreNorm) == "langevin");
  CHECK_THROWS_AS(parse_corrector_rule("euler"), ContractError);
}

TEST_CASE("time schedule") {
  const auto ts = time_schedule(30, 0.03, kSde);
  REQUIRE(ts.size() == 31);
  CHECK(ts.front() == kSde.t_max);
  CHECK(ts.back() == 0.03);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK(time_schedule(1, 0.03, kSde).size() == 2);
  CHECK_THROWS_AS(time_schedule(0, 0.03, kSde), ContractError);
}

TEST_CASE("prior draw") {
  const SpecTensor y = testing::random_spec(3, 2, 1.0, 1);
  Rng rng(2);
  CHECK(prior_draw(y, kSde, rng, true) == y);

  Rng r1(3);
  Rng r2(3);
  CHECK(prior_draw(y, kSde, r1) == prior_draw(y, kSde, r2));

  const SpecTensor one = SpecTensor::constant(1, 1, {0.2, 0.1});
  const int n = 10000;
  double sq = 0.0;
  for (int i = 0; i < n; ++i) sq += (prior_draw(one, kSde, rng) - one).squared_norm();
  const double var = sq / n;
  const double expected = kernel_variance(1.0, kSde);
  // |x - y|^2 is exponential with mean sigma(T)^2, so its sample mean has standard error expected / sqrt(n).
  CHECK(std::abs(var - expected) < 3.0 * expected / std::sqrt(n));
}

TEST_CASE("predictor step") {
  const SpecTensor y = testing::random_spec(3, 2, 1.0, 4);
  const SpecTensor x = testing::random_spec(3, 2, 1.0, 5);
  Rng rng(6);

  SECTION("zero step leaves the state unchanged") {
    const auto r = predictor_step(x, y, 0.5, 0.0, zero_score(), kSde, rng);
    CHECK(r.x == x);
    CHECK(r.x_mean == x);
  }

  SECTION("zero score reverses the drift, moving away from the mixture") {
    const auto r = predictor_step(x, y, 0.5, 0.05, zero_score(), kSde, rng, true);
    CHECK((r.x - y).norm() > (x - y).norm());
    CHECK((r.x - (x - drift(x, y, kSde) * 0.05)).norm() < 1e-14);
  }

  SECTION("noise-free reverse run with a point-mass oracle reaches the clean mean") {
    const SpecTensor m = testing::random_spec(3, 2, 1.0, 7);
    const ConditionalGaussian cond{m, Eigen::MatrixXd::Zero(3, 2)};
    SamplerConfig cfg;
    cfg.n_steps = 1000;
    cfg.corrector_iters = 0;
    cfg.zero_diffusion = true;
    cfg.t_eps = 1e-3;
    const auto trace = extract_once(y, oracle(y, cond), kSde, cfg, 8);
    CHECK((trace.x0_hat - m).norm() < 0.05 * (m - y).norm());
  }
}

TEST_CASE("corrector step") {
  const GaussianTask task = make_gaussian_task(2, 2, 9);
  const auto score = oracle(task.y, task.cond);
  const double t = 0.5;
  const auto [mean, var] = oracle_marginal(task.y, task.cond, t, kSde);

  SECTION("repeated correction settles on the marginal mean") {
    for (const CorrectorRule rule : {CorrectorRule::Annealed, CorrectorRule::ScoreNorm}) {
      const int chains = 500;
      SpecTensor sum(2, 2);
      Rng rng(10);
      for (int c = 0; c < chains; ++c) {
        SpecTensor x = task.y;
        for (int k = 0; k < 200; ++k) x = corrector_step(x, t, score, 0.5, rule, kSde, rng);
        sum += x;
      }
      sum *= 1.0 / chains;
      INFO(to_string(rule));
      CHECK((sum - mean).norm() < 0.05 * (mean - task.y).norm());
    }
  }

  SECTION("r = 0 does not move the state") {
    Rng rng(11);
    const SpecTensor x = testing::random_spec(2, 2, 1.0, 12);
    CHECK(corrector_step(x, t, score, 0.0, CorrectorRule::Annealed, kSde, rng) == x);
  }

  SECTION("a vanishing score skips the step under the norm rule") {
    Rng rng(13);
    const SpecTensor x = testing::random_spec(2, 2, 1.0, 14);
    CHECK(corrector_step(x, t, zero_score(), 0.5, CorrectorRule::ScoreNorm, kSde, rng) == x);
  }

  SECTION("finite for random finite inputs") {
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
      const SpecTensor x = testing::random_spec(2, 2, 10.0, 100 + i);
      for (const CorrectorRule rule : {CorrectorRule::Annealed, CorrectorRule::ScoreNorm}) {
        CHECK(corrector_step(x, 0.03 + 0.97 * i / 100.0, score, 0.5, rule, kSde, rng).all_finite());
      }
    }
  }
}

TEST_CASE("extract_once with the analytic score recovers the conditional") {
  const GaussianTask task = make_gaussian_task(4, 3, 0);
  SamplerConfig cfg;
  const auto stats = sampler_oracle_stats(task, kSde, cfg, 500);
  INFO("mean error " << stats.mean_error << " std error " << stats.std_error);
  CHECK(stats.mean_error < 0.05);
  CHECK(stats.std_error < 0.10);
}

TEST_CASE("finer schedules track the conditional more closely") {
  const GaussianTask task = make_gaussian_task(4, 3, 0);
  SamplerConfig coarse;
  coarse.n_steps = 15;
  SamplerConfig fine;
  fine.n_steps = 60;
  CHECK(rms_error(sampler_oracle_stats(task, kSde, fine, 500)) <
        rms_error(sampler_oracle_stats(task, kSde, coarse, 500)));
}

TEST_CASE("extract_once determinism and degenerate schedules") {
  const GaussianTask task = make_gaussian_task(3, 2, 16);
  const auto score = oracle(task.y, task.cond);
  SamplerConfig cfg;
  cfg.keep_states = true;
  const auto a = extract_once(task.y, score, kSde, cfg, 1);
  const auto b = extract_once(task.y, score, kSde, cfg, 1);
  const auto c = extract_once(task.y, score, kSde, cfg, 2);
  CHECK(a.x0_hat == b.x0_hat);
  CHECK(a.x0_hat != c.x0_hat);
  CHECK(a.states.size() == 31);
  CHECK(a.times.back() == cfg.t_eps);
  CHECK(a.seed == 1);

  cfg.n_steps = 1;
  CHECK(extract_once(task.y, score, kSde, cfg, 3).x0_hat.all_finite());

  SamplerConfig bad;
  bad.ensemble = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = SamplerConfig{};
  bad.r = 0.0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("ensemble combination") {
  const GaussianTask task = make_gaussian_task(3, 2, 17);
  const OracleGaussianScore model(task.cond, kSde);
  const EnrollmentClue clue{SpecTensor(3, 1)};
  SamplerConfig cfg;
  cfg.seed = 18;

  SECTION("one member equals its single run") {
    cfg.ensemble = 1;
    const auto r = extract_ensemble(task.y, clue, model, kSde, cfg);
    CHECK(r.x0_hat == extract_once(task.y, clue, model, kSde, cfg, ensemble_seed(cfg.seed, 0)).x0_hat);
  }

  SECTION("identical members give that member") {
    cfg.ensemble = 4;
    cfg.zero_diffusion = true;
    const auto r = extract_ensemble(task.y, clue, model, kSde, cfg);
    CHECK((r.x0_hat - r.traces[0].x0_hat).norm() < 1e-12 * r.x0_hat.norm());
  }

  SECTION("mean, sum and parallel execution") {
    cfg.ensemble = 5;
    const auto r = extract_ensemble(task.y, clue, model, kSde, cfg);
    SpecTensor sum(3, 2);
    for (const auto& tr : r.traces) sum += tr.x0_hat;
    CHECK(r.x0_hat == sum * (1.0 / 5));
    for (std::size_t j = 1; j < r.traces.size(); ++j) CHECK(r.traces[j].x0_hat != r.traces[0].x0_hat);

    SamplerConfig literal = cfg;
    literal.sum_mode = true;
    CHECK(extract_ensemble(task.y, clue, model, kSde, literal).x0_hat == sum);

    SamplerConfig parallel = cfg;
    parallel.jobs = 3;
    CHECK(extract_ensemble(task.y, clue, model, kSde, parallel).x0_hat == r.x0_hat);
  }
}

TEST_CASE("trace dump") {
  const GaussianTask task = make_gaussian_task(3, 2, 19);
  SamplerConfig cfg;
  cfg.n_steps = 4;
  cfg.keep_states = true;
  const auto trace = extract_once(task.y, oracle(task.y, task.cond), kSde, cfg, 20);
  const auto dir = testing::scratch_dir("trace");
  write_trace(dir, trace);
  CHECK(read_spec(dir / "state_000.spec") == trace.states[0]);
  CHECK(read_spec(dir / "state_004.spec") == trace.states[4]);
  CHECK(read_spec(dir / "final.spec") == trace.x0_hat);
  CHECK(std::filesystem::exists(dir / "times.txt"));
}
