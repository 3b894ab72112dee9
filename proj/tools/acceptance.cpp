// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include "ccn/eval.hpp"
#include "ccn/gradcheck.hpp"
#include "ccn/random.hpp"
#include "ccn/training.hpp"
#include "ridge.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>

using namespace ccn;

namespace {

using Clock = std::chrono::steady_clock;

auto seconds_since(Clock::time_point t0) -> double
{
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome
{
  bool        pass = false;
  std::string detail;
};

auto as_span(std::vector<WindowPair> const &w) { return std::span<WindowPair const>(w); }

// ---- 1 -------------------------------------------------------------------

auto gradient_suite() -> Outcome
{
  auto const        t0 = Clock::now();
  SuiteOptions const opt; // 20 cases per op, h = 1e-5, tol = 1e-4
  auto const        reports = run_grad_suite(opt);
  double const      secs = seconds_since(t0);
  bool              ok = secs < 120.0;
  double            worst = 0.0;
  std::string       failed;
  for (auto const &r : reports) {
    worst = std::max(worst, r.max_rel_error);
    bool const enough = r.cases >= 20;
    if (!r.passed || !enough) { failed += " " + r.op_name; }
    ok = ok && r.passed && enough;
  }
  bool const covers = reports.size() == differentiable_ops().size() + 1;
  return {ok && covers, fmt::format("{} reports, worst rel err {:.2e}, {:.1f}s{}", reports.size(), worst, secs,
                                    failed.empty() ? "" : ", failed:" + failed)};
}

// ---- 2 -------------------------------------------------------------------

auto shape_oracle() -> Outcome
{
  ModelConfig const cfg;
  auto              m = build_model<float>(cfg, 0);
  Rng               rng(1);
  Tensor3<float>    eeg(1, 64, 320);
  for (Index i = 0; i < eeg.size(); ++i) { eeg.data()[i] = static_cast<float>(rng.normal()); }
  auto const y = predict(m, eeg);

  bool ok = y.shape_string() == "(1, 11, 320)";
  ok = ok && block_input_channels(cfg, 0) == 64 && block_input_channels(cfg, 1) == 192;
  ok = ok && stack_tconv_widths(cfg, 64) == std::array<Index, 4>{320, 320, 320, 192};
  ok = ok && stack_tconv_widths(cfg, 192) == std::array<Index, 4>{448, 448, 448, 320};
  for (Index b = 0; b < cfg.num_blocks; ++b) {
    auto const widths = stack_tconv_widths(cfg, block_input_channels(cfg, b));
    for (int i = 0; i < 4; ++i) {
      auto const &w = m.params[m.params.find(fmt::format("block{}.stack{}.tconv.weight", b, i))];
      ok = ok && w.shape.front() == widths[i];
    }
    ok = ok && m.params[m.params.find(fmt::format("block{}.stack4.conv.weight", b))].shape.front() == 128;
  }
  return {ok, fmt::format("output {}, widths 320/320/320/192 then 448/448/448/320, stack out 128", y.shape_string())};
}

// ---- 3 -------------------------------------------------------------------

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

auto pearson_oracle() -> Outcome
{
  auto r = [](std::vector<double> const &x, std::vector<double> const &y) {
    return pearson<double>(std::span(x), std::span(y));
  };
  Rng    rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t const   n = 2 + rng.below(500);
    std::vector<double> x(n), y(n);
    double const        scale = std::exp(rng.uniform(-4, 4));
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = scale * rng.normal() + rng.uniform(-5, 5);
      y[i] = rng.uniform(-1, 1) * x[i] + rng.normal();
    }
    worst = std::max(worst, std::abs(r(x, y) - textbook_r(x, y)));
  }
  double const e1 = std::abs(r({1, 2, 3}, {1, 2, 3}) - 1.0);
  double const e2 = std::abs(r({1, 2, 3}, {3, 2, 1}) + 1.0);
  double const e3 = std::abs(r({1, 2, 3, 4}, {2, 1, 4, 3}) - 0.6);
  bool const   ok = worst <= 1e-10 && e1 <= 1e-6 && e2 <= 1e-6 && e3 <= 1e-6;
  return {ok, fmt::format("max |diff| over 1000 pairs {:.1e}; hand examples off by {:.1e}/{:.1e}/{:.1e}", worst, e1,
                          e2, e3)};
}

// ---- 4 -------------------------------------------------------------------

auto range(int a, int b) -> std::set<int>
{
  std::set<int> s;
  for (int i = a; i <= b; ++i) { s.insert(i); }
  return s;
}

auto fold_exactness() -> Outcome
{
  auto const folds = make_folds();
  if (folds.size() != 4) { return {false, fmt::format("{} folds", folds.size())}; }
  std::array<std::set<int>, 4> const val{range(1, 26), range(27, 48), range(49, 71), range(72, 85)};
  bool ok = true;
  for (std::size_t k = 0; k < 4; ++k) {
    std::set<int> train = range(1, 85);
    for (int s : val[k]) { train.erase(s); }
    auto const &f = folds[k];
    ok = ok && f.fold_id == static_cast<int>(k + 1) && f.val_subjects == val[k] && f.train_subjects == train;
    ok = ok && f.excluded_val_stimuli.contains(shared_stimulus);
    for (int s : f.val_subjects) { ok = ok && !f.train_subjects.contains(s); }
  }
  return {ok, "validation 1-26 / 27-48 / 49-71 / 72-85, AB1 excluded, disjoint"};
}

// ---- 5 -------------------------------------------------------------------

auto overfit_sanity() -> Outcome
{
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = 640;
  s.seed = 5;
  auto const windows = window(synth_dataset(s).front(), 320, 64);

  ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.hidden_width = 16;
  TrainSpec spec;
  spec.max_steps = 200;
  spec.max_epochs = 200;
  spec.patience = 200;
  spec.seed = 5;

  auto const t0 = Clock::now();
  auto       m = build_model<float>(cfg, 5);
  auto const result = train(m, as_span(windows), as_span(windows), spec);
  double const r = validation_score(m, as_span(windows), spec.batch_size);
  double const secs = seconds_since(t0);
  return {r >= 0.95 && result.steps <= 200 && secs < 300,
          fmt::format("training mean r {:.4f} after {} steps in {:.1f}s", r, result.steps, secs)};
}

// ---- 6 / 7 ---------------------------------------------------------------

struct SyntheticRun
{
  std::vector<RecordingSample> data;
  std::vector<WindowPair>      train, val, test;
  std::vector<Index>           test_recordings;
  testing::RidgeBaseline       ridge;
  std::vector<double>          cnn_scores;
  std::vector<PredictionSet>   member_predictions;
  double                       seconds = 0.0;
};

constexpr int ensemble_size = 5;

auto small_config() -> ModelConfig
{
  ModelConfig c;
  c.num_blocks = 2;
  c.hidden_width = 32;
  c.stack_filters = {64, 64, 64, 32, 32};
  return c;
}

// Eight subjects, six recordings each: four for training, one for early stopping, one held out.
auto synthetic_run() -> SyntheticRun
{
  SyntheticRun run;
  SynthSpec    s;
  s.n_subjects = 8;
  s.recordings_per_subject = 6;
  s.T = 1920;
  s.snr_db = 10.0;
  s.lag_taps = 4;
  s.seed = 11;
  run.data = synth_dataset(s);
  for (Index i = 0; i < static_cast<Index>(run.data.size()); ++i) {
    Index const k = i % s.recordings_per_subject;
    auto       &target = k < 4 ? run.train : (k == 4 ? run.val : run.test);
    auto        w = window(run.data[i], 320, k < 4 ? 64 : 320);
    for (auto &p : w) { p.recording = i; }
    target.insert(target.end(), w.begin(), w.end());
    if (k == 5) { run.test_recordings.push_back(i); }
  }
  run.ridge = testing::ridge_baseline(as_span(run.train), as_span(run.val), as_span(run.test), 8);

  auto const t0 = Clock::now();
  for (int seed = 1; seed <= ensemble_size; ++seed) {
    TrainSpec spec;
    spec.batch_size = 16;
    spec.max_epochs = 6;
    spec.patience = 3;
    spec.seed = static_cast<std::uint64_t>(seed);
    auto model = build_model<float>(small_config(), spec.seed);
    train(model, as_span(run.train), as_span(run.val), spec);
    run.cnn_scores.push_back(validation_score(model, as_span(run.test), spec.batch_size));

    PredictionSet set;
    for (Index i : run.test_recordings) {
      auto const &rec = run.data[i];
      auto const  y = predict(model, Tensor3<float>::from_item(rec.eeg));
      set.predictions.push_back(make_prediction(rec, y.item(0).cast<double>()));
    }
    run.member_predictions.push_back(std::move(set));
    std::cerr << fmt::format("  seed {}: held-out mean r {:.4f} ({:.0f}s elapsed)\n", seed, run.cnn_scores.back(),
                             seconds_since(t0));
  }
  run.seconds = seconds_since(t0);
  return run;
}

auto synthetic_generalization(SyntheticRun const &run) -> Outcome
{
  double const bar = std::max(0.5, run.ridge.test_score - 0.05);
  double const worst = *std::min_element(run.cnn_scores.begin(), run.cnn_scores.end());
  return {worst >= bar,
          fmt::format("held-out mean r per seed [{:.4f}], ridge {:.4f} (lambda {:.3g}), bar {:.4f}, {} train windows",
                      fmt::join(run.cnn_scores, ", "), run.ridge.test_score, run.ridge.fit.lambda, bar,
                      run.train.size())};
}

auto ensemble_dominance(SyntheticRun const &run) -> Outcome
{
  std::vector<Matrix<double>> targets;
  for (Index i : run.test_recordings) { targets.push_back(run.data[i].mel.cast<double>()); }
  auto const tspan = std::span<Matrix<double> const>(targets);

  std::vector<double> member_r;
  for (auto const &set : run.member_predictions) {
    member_r.push_back(evaluate(std::span<Prediction const>(set.predictions), tspan).mean_r);
  }
  std::vector<Prediction> combined;
  for (std::size_t r = 0; r < run.test_recordings.size(); ++r) {
    std::vector<Prediction> members;
    for (auto const &set : run.member_predictions) { members.push_back(set.predictions[r]); }
    combined.push_back(ensemble(std::span<Prediction const>(members)));
  }
  double const ens = evaluate(std::span<Prediction const>(combined), tspan).mean_r;
  double       mean = 0.0;
  bool         nonneg = true;
  for (double r : member_r) {
    mean += r / static_cast<double>(member_r.size());
    nonneg = nonneg && r >= 0.0;
  }
  return {nonneg && ens >= mean - 1e-6,
          fmt::format("ensemble {:.4f} vs member mean {:.4f} (members [{:.4f}])", ens, mean, fmt::join(member_r, ", "))};
}

// ---- 8 -------------------------------------------------------------------

auto fusion_round_trip() -> Outcome
{
  SynthSpec s;
  s.n_subjects = 2;
  s.recordings_per_subject = 2;
  s.T = 257;
  s.seed = 8;
  bool ok = true;
  for (auto const &rec : synth_dataset(s)) {
    auto const          fused = fuse_targets(rec.envelope, rec.mel);
    Matrix<float> const mel = fused.bottomRows(mel_subbands);
    ok = ok && fused.rows() == fused_subbands &&
         std::memcmp(mel.data(), rec.mel.data(), sizeof(float) * static_cast<std::size_t>(mel.size())) == 0;

    // Evaluation must not read row 0: poison it and compare.
    Rng            rng(static_cast<std::uint64_t>(rec.time()));
    Matrix<double> v = fused.cast<double>();
    for (Index i = 0; i < v.size(); ++i) { v.data()[i] += 0.5 * rng.normal(); }
    auto       p = make_prediction(rec, v);
    auto const target = rec.mel.cast<double>().eval();
    auto const clean = evaluate(p, target).mean_r;
    p.values.row(0).setConstant(std::numeric_limits<double>::quiet_NaN());
    auto const poisoned = evaluate(p, target).mean_r;
    ok = ok && std::isfinite(poisoned) && poisoned == clean;
  }
  return {ok, "mel slice bitwise equal; NaN envelope row leaves scores unchanged"};
}

// ---- 9 -------------------------------------------------------------------

auto determinism_and_persistence() -> Outcome
{
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = 448;
  s.seed = 9;
  auto const windows = window(synth_dataset(s).front(), 320, 64);
  TrainSpec  spec;
  spec.batch_size = 2;
  spec.max_epochs = 2;
  spec.seed = 9;
  ModelConfig cfg;
  cfg.num_blocks = 1;
  cfg.hidden_width = 16;

  auto run_once = [&] {
    auto m = build_model<float>(cfg, 9);
    auto r = train(m, as_span(windows), as_span(windows), spec);
    return save_checkpoint(m, r.meta);
  };
  auto const a = run_once();
  auto const b = run_once();
  bool const same_bytes = a == b;

  auto       loaded = load_checkpoint<float>(a);
  auto       fresh = load_checkpoint<float>(b);
  auto const x = Tensor3<float>::from_item(windows.front().eeg);
  bool const same_pred = predict(loaded.model, x) == predict(fresh.model, x);
  bool const resave = save_checkpoint(loaded.model, loaded.meta) == a;

  auto       d = build_model<double>(cfg, 3);
  auto const dbytes = save_checkpoint(d, CheckpointMeta{});
  auto       dl = load_checkpoint<double>(dbytes);
  auto const xd = Tensor3<double>::from_item(windows.front().eeg.cast<double>());
  bool const same_double = predict(d, xd) == predict(dl.model, xd);

  return {same_bytes && same_pred && resave && same_double,
          fmt::format("{} checkpoint bytes, identical across runs: {}, predictions identical after reload: {}",
                      a.size(), same_bytes, same_pred && same_double)};
}

// ---- 10 ------------------------------------------------------------------

auto envelope_ablation() -> Outcome
{
  SynthSpec s;
  s.n_subjects = 3;
  s.recordings_per_subject = 3;
  s.T = 960;
  s.seed = 10;
  auto const              data = synth_dataset(s);
  std::vector<WindowPair> train_w, test_w;
  for (std::size_t i = 0; i < data.size(); ++i) {
    bool const held_out = i % 3 == 2;
    auto const w = window(data[i], 320, held_out ? 320 : 64);
    (held_out ? test_w : train_w).insert((held_out ? test_w : train_w).end(), w.begin(), w.end());
  }

  auto score = [&](bool with_envelope) {
    ModelConfig cfg;
    cfg.num_blocks = 1;
    cfg.hidden_width = 16;
    cfg.output_subbands = with_envelope ? fused_subbands : mel_subbands;
    TrainSpec spec;
    spec.batch_size = 8;
    spec.max_epochs = 3;
    spec.envelope_target = with_envelope;
    spec.seed = 10;
    auto m = build_model<float>(cfg, 10);
    train(m, as_span(train_w), as_span(test_w), spec);
    return validation_score(m, as_span(test_w), spec.batch_size);
  };
  double const with_env = score(true);
  double const without = score(false);
  return {std::isfinite(with_env) && std::isfinite(without),
          fmt::format("mean r with envelope row {:.4f}, without {:.4f}", with_env, without)};
}

} // namespace

int main()
{
  int  failures = 0;
  auto report = [&](int n, std::string const &name, std::function<Outcome()> const &check) {
    Outcome o;
    try {
      o = check();
    } catch (std::exception const &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << fmt::format("[{}] criterion {}: {}: {}", o.pass ? "PASS" : "FAIL", n, name, o.detail) << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "shape oracle", shape_oracle);
  report(3, "pearson oracle", pearson_oracle);
  report(4, "fold exactness", fold_exactness);
  report(5, "overfit sanity", overfit_sanity);

  std::optional<SyntheticRun> run;
  std::string                 run_error;
  try {
    run = synthetic_run();
  } catch (std::exception const &e) {
    run_error = e.what();
  }
  auto needs_run = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!run) { return {false, "synthetic run failed: " + run_error}; }
      return fn(*run);
    };
  };
  report(6, "synthetic generalization", needs_run(synthetic_generalization));
  report(7, "ensemble dominance", needs_run(ensemble_dominance));
  report(8, "target fusion round trip", fusion_round_trip);
  report(9, "determinism and persistence", determinism_and_persistence);
  report(10, "envelope ablation", envelope_ablation);

  std::cout << fmt::format("{} of 10 criteria passed", 10 - failures) << std::endl;
  return failures == 0 ? 0 : 1;
}
