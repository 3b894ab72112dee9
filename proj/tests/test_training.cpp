#include "ccn/training.hpp"
#include "helpers.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace ccn;
using ccn::testing::random_tensor;

namespace {

// Textbook definition, computed independently of the library.
auto textbook_r(std::vector<double> const &x, std::vector<double> const &y) -> double
{
  double const n = static_cast<double>(x.size());
  double       mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

auto r(std::vector<double> const &x, std::vector<double> const &y) -> double
{
  return pearson<double>(std::span(x), std::span(y));
}

auto tiny_config() -> ModelConfig
{
  ModelConfig c;
  c.num_blocks = 1;
  c.eeg_channels = 8;
  c.stack_filters = {6, 6, 6, 4, 4};
  c.stack_kernel = 3;
  c.hidden_width = 4;
  c.context_kernel = 4;
  return c;
}

auto tiny_windows(std::uint64_t seed, Index n_windows) -> std::vector<WindowPair>
{
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = 32 + 8 * (n_windows - 1);
  s.eeg_channels = 8;
  s.seed = seed;
  return window(synth_dataset(s).front(), 32, 8);
}

} // namespace

TEST_CASE("pearson hand examples")
{
  CHECK(std::abs(r({1, 2, 3}, {1, 2, 3}) - 1.0) <= 1e-6);
  CHECK(std::abs(r({1, 2, 3}, {3, 2, 1}) + 1.0) <= 1e-6);
  CHECK(std::abs(r({1, 2, 3, 4}, {2, 1, 4, 3}) - 0.6) <= 1e-6);
  CHECK(r({2, 2, 2}, {1, 2, 3}) == 0.0);
  CHECK_THROWS_AS(r({1, 2, 3}, {1, 2}), ShapeError);
}

TEST_CASE("pearson matches the textbook formula")
{
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t const   n = 2 + rng.below(200);
    double const        scale = std::exp(rng.uniform(-3, 3));
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = scale * rng.normal() + 3.0;
      y[i] = 0.5 * x[i] + rng.normal();
    }
    CHECK(std::abs(r(x, y) - textbook_r(x, y)) <= 1e-10);
  }
}

TEST_CASE("pearson affine invariance and bounds")
{
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t const   n = 3 + rng.below(50);
    std::vector<double> x(n), y(n), ax(n), nx(n);
    double const        a = std::exp(rng.uniform(-2, 2)), b = rng.uniform(-10, 10);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal() + x[i] * rng.uniform(-1, 1);
      ax[i] = a * x[i] + b;
      nx[i] = -x[i];
    }
    double const base = r(x, y);
    CHECK(std::abs(r(ax, y) - base) <= 1e-6);
    CHECK(std::abs(r(nx, y) + base) <= 1e-6);
    CHECK(base >= -1 - 1e-6);
    CHECK(base <= 1 + 1e-6);
  }
}

TEST_CASE("pearson_loss limits")
{
  Rng           rng(3);
  auto const    t = random_tensor(rng, 2, 11, 20);
  Graph<double> g(false);
  CHECK(pearson_loss(g.input(t), t).value()(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
  Tensor3<double> neg(2, 11, -t.values());
  CHECK(pearson_loss(g.input(neg), t).value()(0, 0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(pearson_loss(g.input(random_tensor(rng, 2, 10, 20)), t), ShapeError);
}

TEST_CASE("adam closed-form steps")
{
  ParameterSet<double> ps;
  auto const           id = ps.add("theta", {1});
  AdamHyper            h;
  CHECK_THROWS_AS(adam_step(ps, h), UsageError);

  ps.mark_grads_ready();
  ps[id].grad.setOnes();
  adam_step(ps, h);
  CHECK(std::abs(ps[id].value(0, 0) + 1e-3 / (1 + 1e-8)) <= 1e-9);
  CHECK(h.step_count == 1);
  adam_step(ps, h);
  CHECK(std::abs(ps[id].value(0, 0) + 2e-3) <= 1e-6);

  ParameterSet<double> zero;
  auto const           z = zero.add("z", {3});
  zero[z].value.setConstant(0.25);
  zero.mark_grads_ready();
  AdamHyper fresh;
  adam_step(zero, fresh);
  CHECK(zero[z].value.isConstant(0.25));
}

TEST_CASE("adam step size with constant gradient")
{
  ParameterSet<double> ps;
  auto const           id = ps.add("theta", {1});
  AdamHyper            h;
  h.eps = 1e-12;
  ps.mark_grads_ready();
  double prev = 0.0;
  for (int k = 1; k <= 10; ++k) {
    ps[id].grad.setOnes();
    adam_step(ps, h);
    double const step = std::abs(ps[id].value(0, 0) - prev);
    CHECK(step >= 0.99 * h.lr);
    CHECK(step <= 1.01 * h.lr);
    prev = ps[id].value(0, 0);
  }
}

TEST_CASE("adam hyper validation")
{
  AdamHyper h;
  h.lr = 0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = {};
  h.beta1 = 1.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
}

TEST_CASE("train spec validation and json")
{
  TrainSpec s;
  ModelConfig const c = tiny_config();
  s.window_len = 3;
  CHECK_THROWS_AS(s.validate(c), ConfigError);
  s = {};
  s.window_hop = 0;
  CHECK_THROWS_AS(s.validate(c), ConfigError);
  s = {};
  s.patience = 0;
  CHECK_THROWS_AS(s.validate(c), ConfigError);
  s = {};
  s.envelope_target = false;
  CHECK_THROWS_AS(s.validate(c), ConfigError); // 11 outputs for 10 targets

  s = {};
  s.batch_size = 7;
  s.adam.lr = 5e-4;
  nlohmann::json const j = s;
  auto const           back = j.get<TrainSpec>();
  CHECK(back.batch_size == 7);
  CHECK(back.adam.lr == 5e-4);
}

TEST_CASE("training is deterministic")
{
  auto const windows = tiny_windows(1, 6);
  TrainSpec  spec;
  spec.window_len = 32;
  spec.batch_size = 2;
  spec.max_epochs = 3;
  spec.seed = 4;
  auto       a = build_model<double>(tiny_config(), 4);
  auto       b = build_model<double>(tiny_config(), 4);
  auto const ra = train(a, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec);
  auto const rb = train(b, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_loss == rb.history[i].train_loss);
    CHECK(ra.history[i].val_score == rb.history[i].val_score);
  }
  CHECK(ra.steps == 9); // 6 windows / batch 2, three epochs
  for (std::size_t i = 0; i < a.params.size(); ++i) { CHECK(a.params[i].value == b.params[i].value); }
}

TEST_CASE("early stopping with patience 1")
{
  auto const windows = tiny_windows(2, 4);
  TrainSpec  spec;
  spec.window_len = 32;
  spec.batch_size = 4;
  spec.patience = 1;
  spec.max_epochs = 50;
  TrainHooks hooks;
  hooks.score_override = [](Index epoch, double) { return epoch == 1 ? 0.5 : 0.1; };
  auto       m = build_model<float>(tiny_config(), 2);
  auto const r = train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec, hooks);
  CHECK(r.epochs_run == 2);
  CHECK(r.meta.epoch == 1);
  CHECK(r.meta.val_score == 0.5);
}

TEST_CASE("best epoch parameters are restored")
{
  auto const windows = tiny_windows(3, 4);
  TrainSpec  spec;
  spec.window_len = 32;
  spec.batch_size = 4;
  spec.patience = 2;
  spec.max_epochs = 3;
  std::vector<Matrix<double>> after_epoch1;
  auto                        m = build_model<double>(tiny_config(), 3);
  TrainHooks                  hooks;
  hooks.score_override = [](Index epoch, double) { return epoch == 1 ? 1.0 : 0.0; };
  hooks.on_epoch = [&](EpochLog const &log) {
    if (log.epoch == 1) { after_epoch1 = m.params.snapshot(); }
  };
  train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec, hooks);
  auto const final = m.params.snapshot();
  for (std::size_t i = 0; i < final.size(); ++i) { CHECK(final[i] == after_epoch1[i]); }
}

TEST_CASE("max_steps bounds optimizer steps")
{
  auto const windows = tiny_windows(4, 8);
  TrainSpec  spec;
  spec.window_len = 32;
  spec.batch_size = 2;
  spec.max_steps = 5;
  spec.max_epochs = 100;
  spec.patience = 100;
  auto       m = build_model<float>(tiny_config(), 4);
  auto const r = train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec);
  CHECK(r.steps == 5);
  CHECK(r.epochs_run == 2);
}

TEST_CASE("training guards")
{
  auto       windows = tiny_windows(5, 2);
  TrainSpec  spec;
  spec.window_len = 32;
  auto       m = build_model<float>(tiny_config(), 5);
  std::vector<WindowPair> none;
  CHECK_THROWS_AS(train(m, std::span<WindowPair const>(none), std::span<WindowPair const>(windows), spec), ConfigError);
  CHECK_THROWS_AS(train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(none), spec), ConfigError);

  windows[0].eeg(0, 0) = std::numeric_limits<float>::quiet_NaN();
  windows[1].eeg(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec),
                  std::runtime_error);
}

TEST_CASE("mel-only targets train a 10-output model")
{
  auto const  windows = tiny_windows(6, 4);
  ModelConfig c = tiny_config();
  c.output_subbands = 10;
  TrainSpec spec;
  spec.window_len = 32;
  spec.batch_size = 4;
  spec.max_epochs = 2;
  spec.envelope_target = false;
  auto       m = build_model<float>(c, 6);
  auto const r = train(m, std::span<WindowPair const>(windows), std::span<WindowPair const>(windows), spec);
  CHECK(r.epochs_run == 2);
  CHECK(std::isfinite(r.meta.val_score));
}
