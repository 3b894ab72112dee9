#include "ccn/cli.hpp"
#include "ccn/data.hpp"
#include "ccn/eval.hpp"
#include "ccn/gradcheck.hpp"
#include "ccn/io.hpp"

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <unistd.h>

#include <filesystem>
#include <sstream>

using namespace ccn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result
{
  int         code = -1;
  std::string out;
  std::string err;
};

auto run(std::vector<std::string> args) -> Result
{
  std::ostringstream out, err;
  Result             r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

struct TempDir
{
  fs::path path;
  TempDir()
    : path(fs::temp_directory_path() / fmt::format("ccn-cli-{}-{}", ::getpid(), counter()++))
  {
    fs::create_directories(path);
  }
  ~TempDir()
  {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  auto operator/(std::string const &s) const -> std::string { return (path / s).string(); }
  static auto counter() -> int &
  {
    static int n = 0;
    return n;
  }
};

auto last_json(std::string const &text) -> json
{
  auto const trimmed = text.substr(0, text.find_last_not_of('\n') + 1);
  return json::parse(trimmed.substr(trimmed.find_last_of('\n') + 1));
}

void write(std::string const &path, json const &j) { io::write_file_atomic(path, j.dump()); }

auto tiny_config(Index channels, Index window) -> json
{
  return json{{"model",
               {{"num_blocks", 1},
                {"eeg_channels", channels},
                {"stack_filters", {4, 4, 4, 3, 3}},
                {"stack_kernel", 3},
                {"hidden_width", 3},
                {"context_kernel", 4}}},
              {"train", {{"window_len", window}, {"window_hop", window}, {"max_epochs", 1}, {"max_steps", 1}}}};
}

} // namespace

TEST_CASE("synth writes reproducible datasets")
{
  TempDir tmp;
  auto const a = run({"synth", "--subjects", "4", "--per-subject", "2", "--T", "1920", "--seed", "7", "--out",
                      tmp / "a/"});
  REQUIRE(a.code == cli::Ok);
  CHECK(last_json(a.out).at("recordings") == 8);
  CHECK(load_dataset(tmp.path / "a").size() == 8);
  REQUIRE(run({"synth", "--subjects", "4", "--per-subject", "2", "--T", "1920", "--seed", "7", "--out", tmp / "b"})
            .code == cli::Ok);
  for (auto const &e : fs::recursive_directory_iterator(tmp.path / "a")) {
    if (!e.is_regular_file()) { continue; }
    auto const rel = fs::relative(e.path(), tmp.path / "a");
    CHECK(io::read_file(e.path()) == io::read_file(tmp.path / "b" / rel));
  }
  CHECK(fs::exists(tmp / "a.run.json"));

  auto const bad = run({"synth", "--T", "0", "--out", tmp / "c"});
  CHECK(bad.code == cli::Usage);
  CHECK(bad.err.find("--T") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "c"));
  CHECK(run({"synth"}).code == cli::Usage);
  CHECK(run({"nonsense"}).code == cli::Usage);
  CHECK(run({"--help"}).code == cli::Ok);
}

TEST_CASE("folds subcommand")
{
  auto const r = run({"folds"});
  REQUIRE(r.code == cli::Ok);
  std::istringstream lines(r.out);
  std::string        line;
  int                n = 0;
  while (std::getline(lines, line)) {
    auto const f = json::parse(line).get<FoldSpec>();
    CHECK(f.train_subjects == standard_fold(f.fold_id).train_subjects);
    ++n;
  }
  CHECK(n == 4);
  CHECK(last_json(run({"folds", "--fold", "3"}).out).at("fold_id") == 3);
  CHECK(run({"folds", "--fold", "0"}).code == cli::Usage);
}

TEST_CASE("train on a standard fold")
{
  TempDir tmp;
  REQUIRE(run({"synth", "--subjects", "85", "--per-subject", "1", "--T", "64", "--channels", "4", "--seed", "3",
               "--out", tmp / "data"})
            .code == cli::Ok);
  write(tmp / "cfg.json", tiny_config(4, 64));

  auto const args = [&](std::string const &out) {
    return std::vector<std::string>{"train", "--fold", "1", "--seed", "5", "--data", tmp / "data", "--config",
                                    tmp / "cfg.json", "--out", out};
  };
  auto const a = run(args(tmp / "a.ckpt"));
  INFO(a.err);
  REQUIRE(a.code == cli::Ok);
  CHECK(last_json(a.out).contains("val_mean_r"));

  auto const manifest = json::parse(io::read_file(tmp / "a.ckpt.run.json"));
  std::set<std::string> expected;
  for (int s = 27; s <= 85; ++s) { expected.insert(std::to_string(s)); }
  CHECK(manifest.at("train_subjects").get<std::set<std::string>>() == expected);
  CHECK(manifest.at("train_windows") == 59);
  CHECK(manifest.at("val_windows") == 26);
  CHECK(manifest.at("fold_id") == 1);
  CHECK(manifest.at("subcommand") == "train");
  for (auto const &[path, hash] : manifest.at("artifacts").items()) { CHECK(fs::exists(path)); }

  REQUIRE(run(args(tmp / "b.ckpt")).code == cli::Ok);
  CHECK(io::read_file(tmp / "a.ckpt") == io::read_file(tmp / "b.ckpt"));

  auto bad_fold = args(tmp / "c.ckpt");
  bad_fold[2] = "5";
  CHECK(run(bad_fold).code == cli::Usage);
  CHECK_FALSE(fs::exists(tmp / "c.ckpt"));

  // No subject of this fold file exists in the dataset.
  write(tmp / "fold.json", json{{"fold_id", 9}, {"train_subjects", {200}}, {"val_subjects", {201}}});
  auto const empty = run({"train", "--fold-file", tmp / "fold.json", "--data", tmp / "data", "--config",
                          tmp / "cfg.json", "--out", tmp / "d.ckpt"});
  CHECK(empty.code == cli::EmptySplit);
  CHECK_FALSE(fs::exists(tmp / "d.ckpt"));

  write(tmp / "extra.json", json{{"model", json::object()}, {"optimizer", json::object()}});
  CHECK(run({"train", "--fold", "1", "--data", tmp / "data", "--config", tmp / "extra.json", "--out", tmp / "e.ckpt"})
          .code == cli::Usage);
  CHECK(run({"train", "--data", tmp / "data", "--out", tmp / "e.ckpt"}).code == cli::Usage);
  CHECK(run({"train", "--fold", "1", "--data", tmp / "missing", "--out", tmp / "e.ckpt"}).code == cli::Io);
}

TEST_CASE("predict, ensemble and eval")
{
  TempDir tmp;
  REQUIRE(run({"synth", "--subjects", "2", "--per-subject", "2", "--T", "96", "--channels", "4", "--seed", "4",
               "--out", tmp / "data"})
            .code == cli::Ok);
  auto cfg = tiny_config(4, 32);
  write(tmp / "cfg.json", cfg);
  write(tmp / "fold.json", json{{"fold_id", 0}, {"train_subjects", {1}}, {"val_subjects", {2}}});
  for (int seed : {1, 2}) {
    REQUIRE(run({"train", "--fold-file", tmp / "fold.json", "--seed", std::to_string(seed), "--data", tmp / "data",
                 "--config", tmp / "cfg.json", "--out", tmp / fmt::format("m{}.ckpt", seed)})
              .code == cli::Ok);
    REQUIRE(run({"predict", "--ckpt", tmp / fmt::format("m{}.ckpt", seed), "--data", tmp / "data", "--out",
                 tmp / fmt::format("p{}", seed)})
              .code == cli::Ok);
  }
  auto const p1 = load_predictions(tmp.path / "p1");
  REQUIRE(p1.predictions.size() == 4);
  for (auto const &p : p1.predictions) {
    CHECK(p.values.rows() == 11);
    CHECK(p.values.cols() == 96);
  }
  CHECK(p1.checkpoint_id == io::hex(io::fnv1a64(io::read_file(tmp / "m1.ckpt"))));

  // Idempotent outputs.
  REQUIRE(run({"predict", "--ckpt", tmp / "m1.ckpt", "--data", tmp / "data", "--out", tmp / "p1b"}).code == cli::Ok);
  for (auto const &e : fs::directory_iterator(tmp.path / "p1")) {
    CHECK(io::read_file(e.path()) == io::read_file(tmp.path / "p1b" / e.path().filename()));
  }

  auto corrupt = io::read_file(tmp / "m1.ckpt");
  corrupt[0] = 'Z';
  io::write_file_atomic(tmp / "bad.ckpt", corrupt);
  auto const bad = run({"predict", "--ckpt", tmp / "bad.ckpt", "--data", tmp / "data", "--out", tmp / "pbad"});
  CHECK(bad.code == cli::CheckpointFormat);
  CHECK_FALSE(fs::exists(tmp / "pbad"));
  CHECK_FALSE(fs::exists(tmp / "pbad.run.json"));

  REQUIRE(run({"ensemble", "--preds", tmp / "p1", "--out", tmp / "e1"}).code == cli::Ok);
  auto const e1 = load_predictions(tmp.path / "e1");
  CHECK(e1.normalization == "zscore-mean");
  for (std::size_t i = 0; i < e1.predictions.size(); ++i) {
    auto const z = znormalize(p1.predictions[i]).values.cast<float>().cast<double>();
    CHECK(e1.predictions[i].values == z);
  }
  REQUIRE(run({"ensemble", "--preds", tmp / "p1", tmp / "p2", "--out", tmp / "e12"}).code == cli::Ok);

  // A member set covering fewer recordings.
  auto partial = p1;
  partial.predictions.pop_back();
  save_predictions(tmp.path / "partial", partial);
  CHECK(run({"ensemble", "--preds", tmp / "p1", tmp / "partial", "--out", tmp / "ebad"}).code == cli::Alignment);
  CHECK_FALSE(fs::exists(tmp / "ebad"));

  auto const ev = run({"eval", "--pred", tmp / "e12", "--data", tmp / "data"});
  REQUIRE(ev.code == cli::Ok);
  auto const report = last_json(ev.out);
  CHECK(report.at("n_recordings") == 4);
  CHECK(report.at("subband_r").size() == 10);
  double sum = 0;
  for (double r : report.at("subband_r")) { sum += r; }
  CHECK(std::abs(report.at("mean_r").get<double>() - sum / 10) <= 1e-9);

  // Predictions equal to the targets.
  auto const    data = load_dataset(tmp.path / "data");
  PredictionSet perfect;
  for (auto const &rec : data) {
    Matrix<double> v(11, rec.time());
    v.row(0) = rec.envelope.cast<double>();
    v.bottomRows(10) = rec.mel.cast<double>();
    perfect.predictions.push_back(make_prediction(rec, v));
  }
  save_predictions(tmp.path / "perfect", perfect);
  auto const pr = last_json(run({"eval", "--pred", tmp / "perfect", "--data", tmp / "data"}).out);
  CHECK(pr.at("mean_r").get<double>() == doctest::Approx(1.0).epsilon(1e-6));

  perfect.predictions.front().recording = "sub-999_none";
  save_predictions(tmp.path / "stray", perfect);
  CHECK(run({"eval", "--pred", tmp / "stray", "--data", tmp / "data"}).code == cli::Alignment);
}

TEST_CASE("overfit run predicts its own training data")
{
  TempDir tmp;
  SynthSpec s;
  s.n_subjects = 1;
  s.recordings_per_subject = 1;
  s.T = 320;
  s.eeg_channels = 16;
  s.seed = 12;
  auto       recs = synth_dataset(s);
  // A validation subject holding the same signals, so the best validation epoch is the best fit.
  auto twin = recs.front();
  twin.subject_id = "2";
  twin.stimulus_id = "twin";
  twin.name = "sub-002_twin";
  recs.push_back(twin);
  save_dataset(tmp.path / "data", recs);

  write(tmp / "cfg.json",
        json{{"model", {{"num_blocks", 1}, {"eeg_channels", 16}, {"hidden_width", 16}}},
             {"train", {{"window_len", 320}, {"window_hop", 320}, {"max_epochs", 200}, {"patience", 200}}}});
  write(tmp / "fold.json", json{{"fold_id", 0}, {"train_subjects", {1}}, {"val_subjects", {2}}});
  auto const t = run({"train", "--fold-file", tmp / "fold.json", "--seed", "1", "--data", tmp / "data", "--config",
                      tmp / "cfg.json", "--out", tmp / "m.ckpt"});
  INFO(t.err);
  REQUIRE(t.code == cli::Ok);
  CHECK(last_json(t.out).at("steps") == 200);
  REQUIRE(run({"predict", "--ckpt", tmp / "m.ckpt", "--data", tmp / "data", "--out", tmp / "p"}).code == cli::Ok);
  auto const report = last_json(run({"eval", "--pred", tmp / "p", "--data", tmp / "data"}).out);
  MESSAGE("overfit mean r: " << report.at("mean_r").get<double>());
  CHECK(report.at("per_recording")[0].at("mean_r").get<double>() >= 0.95);
}

TEST_CASE("gradcheck subcommand")
{
  auto const ok = run({"gradcheck", "--cases", "2"});
  CHECK(ok.code == cli::Ok);
  std::istringstream lines(ok.out);
  std::string        line;
  std::set<std::string> ops;
  while (std::getline(lines, line)) {
    auto const j = json::parse(line);
    if (j.contains("op")) { ops.insert(j.at("op").get<std::string>()); }
  }
  std::set<std::string> expected(differentiable_ops().begin(), differentiable_ops().end());
  expected.insert("model_forward");
  CHECK(ops == expected);
  CHECK(last_json(ok.out).at("passed") == true);

  CHECK(run({"gradcheck", "--cases", "2", "--corrupt", "layer_norm"}).code == cli::CheckFailed);
  CHECK(run({"gradcheck", "--corrupt", "no_such_op"}).code == cli::Usage);
}
