#include "support.hpp"

#include "difftse/training.hpp"
#include "difftse/verify.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>

using namespace difftse;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

const SdeParams kSde{};

NetConfig tiny_net(int freqs) {
  NetConfig cfg;
  cfg.freqs = freqs;
  cfg.width = 8;
  cfg.blocks = 2;
  cfg.embed_dim = 4;
  cfg.time_dim = 4;
  cfg.seed = 4;
  return cfg;
}

MixtureExample random_example(Index f, Index l, std::uint64_t seed, int target = 0) {
  MixtureExample ex;
  ex.target_id = target;
  ex.interferer_id = target + 1;
  ex.x0 = testing::random_spec(f, l, 0.3, seed);
  ex.x0_interferer = testing::random_spec(f, l, 0.3, seed + 1);
  ex.y = ex.x0 + ex.x0_interferer;
  ex.c.spec = testing::random_spec(f, 3, 0.3, seed + 2);
  return ex;
}

bool grads_equal(const nn::GradBuffer& a, const nn::GradBuffer& b, double rel) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] - b[i]).norm() > rel * (a[i].norm() + b[i].norm()) + 1e-300) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("draw_time follows the terminal probability") {
  TrainConfig cfg;
  Rng rng(1);
  const int n = 100000;

  cfg.delta_T = 1.0;
  for (int i = 0; i < 1000; ++i) CHECK(draw_time(cfg, kSde, rng) == kSde.t_max);

  cfg.delta_T = 0.0;
  int terminal = 0;
  double lo = 1.0;
  for (int i = 0; i < n; ++i) {
    const double t = draw_time(cfg, kSde, rng);
    terminal += t == kSde.t_max;
    lo = std::min(lo, t);
    REQUIRE(t >= cfg.t_eps);
    REQUIRE(t <= kSde.t_max);
  }
  CHECK(terminal == 0);
  CHECK(lo < cfg.t_eps + 1e-3);

  cfg.delta_T = 0.1;
  terminal = 0;
  for (int i = 0; i < n; ++i) terminal += draw_time(cfg, kSde, rng) == kSde.t_max;
  CHECK_THAT(terminal / static_cast<double>(n), WithinAbs(0.1, 0.005));
}

TEST_CASE("interior loss minimiser and zero model") {
  const SpecTensor z = testing::random_spec(6, 5, 1.0, 2);
  const double t = 0.4;
  const double sd = kernel_std(t, kSde);
  CHECK(interior_loss_value(z * (-1.0 / sd), z, t, kSde) < 1e-20);
  CHECK_THAT(interior_loss_value(SpecTensor(6, 5), z, t, kSde),
             WithinRel(z.squared_norm() / (sd * sd), 1e-12));

  // Mean over draws of the zero-model loss: one unit of complex variance per entry.
  Rng rng(3);
  double mean = 0.0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) {
    mean += interior_loss_value(SpecTensor(6, 5), complex_normal(6, 5, rng), t, kSde) / draws;
  }
  CHECK_THAT(mean, WithinRel(30.0 / (sd * sd), 0.02));
}

TEST_CASE("terminal loss minimiser and correction term") {
  const SpecTensor z = testing::random_spec(4, 3, 1.0, 4);
  const SpecTensor x0 = testing::random_spec(4, 3, 1.0, 5);
  const SpecTensor y = testing::random_spec(4, 3, 1.0, 6);
  CHECK(terminal_loss_value(terminal_target(z, x0, y, kSde), z, x0, y, kSde) < 1e-20);

  const SpecTensor s = testing::random_spec(4, 3, 1.0, 7);
  CHECK_THAT(terminal_loss_value(s, z, y, y, kSde), WithinRel(interior_loss_value(s, z, 1.0, kSde), 1e-12));

  const SpecTensor correction = terminal_target(z, x0, y, kSde) - z * (-1.0 / kernel_std(1.0, kSde));
  CHECK_THAT(correction.norm(), WithinRel(0.1353 * (x0 - y).norm() / 0.1338, 1e-3));
}

TEST_CASE("snr loss reference values") {
  const SpecTensor x0 = testing::random_spec(4, 4, 1.0, 8);
  CHECK_THAT(snr_loss(x0, SpecTensor(4, 4)), WithinAbs(0.0, 1e-12));
  CHECK(snr_loss(x0, x0) == -kMetricCapDb);
  CHECK_THAT(snr_loss(x0, x0 * (1.0 - std::sqrt(0.1))), WithinAbs(-10.0, 1e-9));
  CHECK_THROWS_AS(snr_loss(SpecTensor(4, 4), x0), ContractError);
}

TEST_CASE("losses are nonnegative") {
  TseModel model(ModelVariant::DiffTse, tiny_net(5), kSde);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const MixtureExample ex = random_example(5, 4, 100 + i);
    nn::Tape t1(model.params());
    CHECK(score_loss_interior(t1, model, ex, 0.03 + 0.9 * i / 50.0, rng).report.score_loss >= 0.0);
    nn::Tape t2(model.params());
    CHECK(score_loss_terminal(t2, model, ex, rng).report.score_loss >= 0.0);
  }
  nn::Tape tape(model.params());
  CHECK_THROWS_AS(score_loss_interior(tape, model, random_example(5, 4, 1), 1.0, rng), ContractError);
}

TEST_CASE("loss gradients match finite differences") {
  const CheckResult r = check_gradients(kSde, 3);
  INFO(r.detail);
  CHECK(r.passed);
}

TEST_CASE("multi-task weights") {
  TseModel mt(ModelVariant::DiffTseMt, tiny_net(5), kSde);
  Rng init(10);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (int i = 0; i < mt.params().size(); ++i) {
    auto& v = mt.params()[i].value;
    for (Index k = 0; k < v.size(); ++k) v.data()[k] += normal(init);
  }
  std::vector<MixtureExample> examples;
  for (int i = 0; i < 4; ++i) examples.push_back(random_example(5, 4, 200 + 10 * i));
  std::vector<const MixtureExample*> batch;
  for (const auto& ex : examples) batch.push_back(&ex);

  SECTION("alpha and beta of one add the two losses") {
    TrainConfig cfg;
    Rng rng(11);
    nn::Tape tape(mt.params());
    const auto loss = example_objective(tape, mt, examples[0], cfg, rng);
    CHECK(loss.report.total == loss.report.snr_loss + loss.report.score_loss);
  }

  SECTION("alpha zero gives the pure score-matching gradient") {
    TrainConfig cfg;
    cfg.alpha = 0.0;
    cfg.delta_T = 0.5;
    const std::uint64_t seed = 12;
    const auto [grads, report] = batch_gradients(mt, batch, cfg, seed);

    nn::GradBuffer expected = nn::zero_grads(mt.params());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Rng rng(split_seed(seed, i));
      const double t = draw_time(cfg, kSde, rng);
      nn::Tape tape(mt.params());
      const auto loss = t >= kSde.t_max ? score_loss_terminal(tape, mt, *batch[i], rng)
                                        : score_loss_interior(tape, mt, *batch[i], t, rng);
      tape.backward(loss.total);
      nn::accumulate(expected, tape.param_grads(), 1.0 / static_cast<double>(batch.size()));
    }
    CHECK(grads_equal(grads, expected, 1e-12));
  }

  SECTION("beta zero leaves the score head without gradient") {
    TrainConfig cfg;
    cfg.beta = 0.0;
    const auto [grads, report] = batch_gradients(mt, batch, cfg, 13);
    double head = 0.0;
    double branch = 0.0;
    for (int i = 0; i < mt.params().size(); ++i) {
      const double g = grads[static_cast<std::size_t>(i)].norm();
      if (TseModel::is_score_head_param(mt.params()[i].name)) head += g;
      if (TseModel::is_discriminative_param(mt.params()[i].name)) branch += g;
    }
    CHECK(head == 0.0);
    CHECK(branch > 0.0);
  }
}

TEST_CASE("speaker-first batch sampling") {
  std::vector<MixtureExample> corpus;
  for (int i = 0; i < 90; ++i) corpus.push_back(random_example(2, 1, i, 0));
  for (int i = 0; i < 10; ++i) corpus.push_back(random_example(2, 1, 1000 + i, 7));

  Rng rng(14);
  int a = 0;
  const int n = 10000;
  for (const auto* ex : sample_batch(corpus, n, rng)) a += ex->target_id == 0;
  // Binomial(1e4, 0.5): four standard deviations is 200.
  CHECK(std::abs(a - n / 2) < 200);

  CHECK(sample_batch(corpus, 0, rng).empty());
  CHECK_THROWS_AS(sample_batch({}, 3, rng), ContractError);

  Rng r1(15);
  Rng r2(15);
  for (int i = 0; i < 5; ++i) CHECK(sample_batch(corpus, 8, r1) == sample_batch(corpus, 8, r2));
}

TEST_CASE("optimizer and weight averaging") {
  nn::ParamSet params;
  params.add("w", nn::Matrix::Constant(3, 2, 1.0));
  const nn::Matrix target = (nn::Matrix(3, 2) << 0.5, -1.0, 2.0, 0.0, -0.25, 3.0).finished();
  auto bowl_grad = [&](const nn::ParamSet& p) { return nn::GradBuffer{2.0 * (p[0].value - target)}; };

  SECTION("decay zero tracks the parameters") {
    TrainConfig cfg;
    cfg.ema_decay = 0.0;
    Optimizer opt(params, cfg);
    for (int i = 0; i < 5; ++i) {
      opt.step(params, bowl_grad(params));
      CHECK(opt.ema() == params);
    }
  }

  SECTION("decay one freezes the average") {
    TrainConfig cfg;
    cfg.ema_decay = 1.0;
    const nn::ParamSet initial = params;
    Optimizer opt(params, cfg);
    for (int i = 0; i < 5; ++i) opt.step(params, bowl_grad(params));
    CHECK(opt.ema() == initial);
    CHECK(!(params == initial));
  }

  SECTION("quadratic bowl converges to its minimiser") {
    TrainConfig cfg;
    cfg.lr = 1e-2;
    Optimizer opt(params, cfg);
    int steps = 0;
    while (steps < 10000 && (params[0].value - target).cwiseAbs().maxCoeff() > 1e-6) {
      opt.step(params, bowl_grad(params));
      ++steps;
    }
    CHECK((params[0].value - target).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(steps <= 10000);
  }
}

TEST_CASE("training is reproducible and independent of the worker count") {
  std::vector<MixtureExample> train;
  for (int i = 0; i < 12; ++i) train.push_back(random_example(5, 4, 300 + 5 * i, i % 3));
  for (auto variant : {ModelVariant::Tse, ModelVariant::DiffTse, ModelVariant::DiffTseMt}) {
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 4;
    cfg.lr = 1e-3;
    cfg.seed = 16;
    TseModel m1(variant, tiny_net(5), kSde);
    TseModel m2(variant, tiny_net(5), kSde);
    TseModel m3(variant, tiny_net(5), kSde);
    const TseModel e1 = train_model(m1, train, cfg);
    const TseModel e2 = train_model(m2, train, cfg);
    cfg.jobs = 3;
    const TseModel e3 = train_model(m3, train, cfg);
    CHECK(e1.params() == e2.params());
    CHECK(e1.params() == e3.params());
    CHECK(m1.params() == m3.params());
  }
}

TEST_CASE("non-finite loss aborts the step") {
  TseModel model(ModelVariant::DiffTse, tiny_net(5), kSde);
  std::vector<MixtureExample> train{random_example(5, 4, 400)};
  train[0].x0(0, 0) = Complex(std::numeric_limits<double>::quiet_NaN(), 0.0);
  const nn::ParamSet before = model.params();
  TrainConfig cfg;
  cfg.batch_size = 2;
  Trainer trainer(model, cfg);
  const StepReport r = trainer.step(train);
  CHECK(r.loss.aborted);
  CHECK(model.params() == before);
  CHECK(format_log_line(r).find("aborted=1") != std::string::npos);
}

TEST_CASE("log lines carry every field") {
  StepReport r;
  r.step = 3;
  r.loss.t_drawn = 0.5;
  r.loss.score_loss = 2.0;
  r.loss.snr_loss = -1.0;
  r.loss.total = 1.0;
  r.wall_ms = 4.5;
  const std::string line = format_log_line(r);
  for (const char* key : {"step=3", "t_drawn=", "score_loss=2", "snr_loss=-1", "total=1", "wall_ms=4.5"}) {
    CHECK(line.find(key) != std::string::npos);
  }
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.delta_T = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = TrainConfig{};
  cfg.alpha = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ContractError);

  TseModel model(ModelVariant::DiffTse, tiny_net(5), kSde, 0.05);
  CHECK_THROWS_AS(Trainer(model, TrainConfig{}), ContractError);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  cfg.lr = 2e-3;
  cfg.steps = 100;
  CHECK(learning_rate(cfg, 1) == cfg.lr);
  CHECK(learning_rate(cfg, 100) == cfg.lr);

  cfg.cosine_decay = true;
  CHECK(learning_rate(cfg, 1) == cfg.lr);
  CHECK(learning_rate(cfg, 51) == Catch::Approx(0.5 * cfg.lr).epsilon(1e-12));
  CHECK(learning_rate(cfg, 101) == Catch::Approx(0.0).margin(1e-18));
  CHECK(learning_rate(cfg, 500) == Catch::Approx(0.0).margin(1e-18));
  for (long k = 2; k <= 100; ++k) CHECK(learning_rate(cfg, k) < learning_rate(cfg, k - 1));
}
