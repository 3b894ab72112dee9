#include "ccn/cli.hpp"
#include "ccn/eval.hpp"
#include "ccn/gradcheck.hpp"
#include "ccn/io.hpp"
#include "ccn/training.hpp"

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <map>
#include <ostream>

namespace ccn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for failures that already map to a specific exit code.
struct Failure : std::runtime_error
{
  Failure(int c, std::string const &what)
    : std::runtime_error(what)
    , code(c)
  {
  }
  int code;
};

auto utc_now() -> std::string
{
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

auto strip_trailing_separator(fs::path p) -> fs::path
{
  auto s = p.string();
  while (s.size() > 1 && s.back() == '/') { s.pop_back(); }
  return fs::path(s);
}

// Hashes of every regular file under `p` (or of `p` itself), keyed by path.
auto artifact_hashes(fs::path const &p) -> json
{
  json out = json::object();
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (auto const &e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) { files.push_back(e.path()); }
    }
    std::sort(files.begin(), files.end());
    for (auto const &f : files) { out[f.string()] = io::hex(io::fnv1a64(io::read_file(f))); }
  } else if (fs::exists(p)) {
    out[p.string()] = io::hex(io::fnv1a64(io::read_file(p)));
  }
  return out;
}

struct RunManifest
{
  std::string              subcommand;
  json                     config = json::object();
  std::uint64_t            seed = 0;
  int                      fold_id = 0;
  std::vector<std::string> inputs;
  fs::path                 output;
  std::string              started_at = utc_now();
  json                     extra = json::object();

  // Written next to the output as <output>.run.json once the output is in place.
  void commit() const
  {
    auto const target = strip_trailing_separator(output);
    json       j{{"subcommand", subcommand},
                 {"config", config},
                 {"seed", seed},
                 {"fold_id", fold_id},
                 {"inputs", inputs},
                 {"output", target.string()},
                 {"started_at", started_at},
                 {"finished_at", utc_now()},
                 {"artifacts", artifact_hashes(target)}};
    for (auto const &[k, v] : extra.items()) { j[k] = v; }
    auto path = target;
    path += ".run.json";
    io::write_file_atomic(path, j.dump(2) + "\n");
  }
};

auto load_data(fs::path const &dir) -> std::vector<RecordingSample>
{
  if (!fs::is_directory(dir)) { throw LoadError(LoadErrc::MissingFile, "no dataset directory " + dir.string()); }
  auto data = load_dataset(dir);
  if (data.empty()) { throw LoadError(LoadErrc::MissingFile, "no recordings under " + dir.string()); }
  return data;
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs
{
  SynthSpec   spec;
  std::string out;
};

auto cmd_synth(SynthArgs const &a, std::ostream &out) -> int
{
  a.spec.validate();
  RunManifest run;
  run.subcommand = "synth";
  run.seed = a.spec.seed;
  run.output = a.out;
  run.config = json{{"n_subjects", a.spec.n_subjects},
                    {"recordings_per_subject", a.spec.recordings_per_subject},
                    {"T", a.spec.T},
                    {"snr_db", a.spec.snr_db},
                    {"lag_taps", a.spec.lag_taps},
                    {"eeg_channels", a.spec.eeg_channels}};
  auto const recs = synth_dataset(a.spec);
  {
    io::StagedDir stage(strip_trailing_separator(a.out));
    save_dataset(stage.path(), recs);
    stage.commit();
  }
  run.commit();
  out << json{{"command", "synth"}, {"recordings", recs.size()}, {"out", a.out}}.dump() << "\n";
  return Ok;
}

// ---- folds ---------------------------------------------------------------

auto cmd_folds(int fold, std::ostream &out) -> int
{
  for (auto const &f : make_folds()) {
    if (fold != 0 && f.fold_id != fold) { continue; }
    out << json(f).dump() << "\n";
  }
  return Ok;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs
{
  int           fold = 0;
  std::string   fold_file;
  std::uint64_t seed = 0;
  std::string   data;
  std::string   config;
  std::string   out;
};

struct RunConfig
{
  ModelConfig model;
  TrainSpec   train;
};

auto read_config(std::string const &path) -> RunConfig
{
  RunConfig rc;
  if (path.empty()) { return rc; }
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (json::exception const &e) {
    throw ConfigError(fmt::format("--config {}: {}", path, e.what()));
  }
  if (!j.is_object()) { throw ConfigError("--config must hold an object with \"model\" and/or \"train\""); }
  for (auto const &[k, v] : j.items()) {
    if (k != "model" && k != "train") { throw ConfigError(fmt::format("--config: unknown section '{}'", k)); }
  }
  try {
    if (j.contains("model")) { rc.model = j.at("model").get<ModelConfig>(); }
    if (j.contains("train")) { rc.train = j.at("train").get<TrainSpec>(); }
  } catch (json::exception const &e) {
    throw ConfigError(fmt::format("--config {}: {}", path, e.what()));
  }
  return rc;
}

template <typename Scalar>
auto train_and_save(RunConfig const &rc, FoldSpec const &fold,
                    std::vector<WindowPair> const &tw, std::vector<WindowPair> const &vw, std::uint64_t seed)
  -> std::pair<TrainResult, std::string>
{
  auto spec = rc.train;
  spec.seed = seed;
  auto model = build_model<Scalar>(rc.model, seed);
  auto result = train(model, std::span<WindowPair const>(tw), std::span<WindowPair const>(vw), spec);
  result.meta.fold_id = fold.fold_id;
  return {result, save_checkpoint(model, result.meta)};
}

auto cmd_train(TrainArgs const &a, std::ostream &out) -> int
{
  auto rc = read_config(a.config);
  rc.model.validate();
  rc.train.validate(rc.model);

  FoldSpec fold;
  if (!a.fold_file.empty()) {
    try {
      fold = json::parse(io::read_file(a.fold_file)).get<FoldSpec>();
    } catch (json::exception const &e) {
      throw ConfigError(fmt::format("--fold-file {}: {}", a.fold_file, e.what()));
    }
  } else {
    fold = standard_fold(a.fold);
  }
  fold.validate();

  auto const data = load_data(a.data);
  auto const span = std::span<RecordingSample const>(data);

  std::vector<WindowPair> tw, vw;
  try {
    tw = select_windows(span, fold, Split::Train, rc.train.window_len, rc.train.window_hop);
    vw = select_windows(span, fold, Split::Validation, rc.train.window_len, rc.train.window_hop);
  } catch (ConfigError const &e) {
    throw Failure(EmptySplit, e.what());
  }

  auto [result, bytes] = rc.train.precision == 64 ? train_and_save<double>(rc, fold, tw, vw, a.seed)
                                                  : train_and_save<float>(rc, fold, tw, vw, a.seed);

  std::set<std::string> train_subjects;
  for (auto i : select_recordings(span, fold, Split::Train)) { train_subjects.insert(data[i].subject_id); }
  std::set<std::string> val_recordings;
  for (auto i : select_recordings(span, fold, Split::Validation)) { val_recordings.insert(data[i].name); }

  RunManifest run;
  run.subcommand = "train";
  run.seed = a.seed;
  run.fold_id = fold.fold_id;
  run.output = a.out;
  auto        train_json = json(rc.train);
  train_json["seed"] = a.seed;
  run.config = json{{"model", rc.model}, {"train", train_json}};
  run.inputs = {a.data};
  if (!a.config.empty()) { run.inputs.push_back(a.config); }
  if (!a.fold_file.empty()) { run.inputs.push_back(a.fold_file); }
  json history = json::array();
  for (auto const &h : result.history) {
    history.push_back(
      json{{"epoch", h.epoch}, {"steps", h.steps}, {"train_loss", h.train_loss}, {"val_mean_r", h.val_score}});
  }
  run.extra = json{{"train_subjects", train_subjects},
                   {"val_recordings", val_recordings},
                   {"train_windows", tw.size()},
                   {"val_windows", vw.size()},
                   {"history", history}};

  io::write_file_atomic(a.out, bytes);
  run.commit();
  out << json{{"command", "train"},
              {"fold_id", fold.fold_id},
              {"seed", a.seed},
              {"best_epoch", result.meta.epoch},
              {"epochs_run", result.epochs_run},
              {"steps", result.steps},
              {"val_mean_r", result.meta.val_score},
              {"checkpoint", a.out}}
             .dump()
      << "\n";
  return Ok;
}

// ---- predict -------------------------------------------------------------

template <typename Scalar>
auto predict_all(std::string_view bytes, std::span<RecordingSample const> data) -> std::vector<Prediction>
{
  auto                    ck = load_checkpoint<Scalar>(bytes);
  std::vector<Prediction> preds;
  for (auto const &rec : data) {
    if (rec.eeg.rows() != ck.model.config.eeg_channels) {
      throw ShapeError(fmt::format("recording '{}' has {} EEG channels; checkpoint expects {}", rec.name,
                                   rec.eeg.rows(), ck.model.config.eeg_channels));
    }
    auto const y = predict(ck.model, Tensor3<Scalar>::from_item(rec.eeg.template cast<Scalar>()));
    preds.push_back(make_prediction(rec, y.item(0).template cast<double>()));
  }
  return preds;
}

auto cmd_predict(std::string const &ckpt, std::string const &data_dir, std::string const &out_dir,
                 std::ostream &out) -> int
{
  auto const bytes = io::read_file(ckpt);
  auto const info = read_checkpoint_info(bytes);
  auto const data = load_data(data_dir);
  auto const span = std::span<RecordingSample const>(data);

  PredictionSet set;
  set.checkpoint_id = io::hex(io::fnv1a64(bytes));
  set.predictions = info.dtype == "f64" ? predict_all<double>(bytes, span) : predict_all<float>(bytes, span);
  save_predictions(strip_trailing_separator(out_dir), set);

  RunManifest run;
  run.subcommand = "predict";
  run.seed = info.meta.seed;
  run.fold_id = info.meta.fold_id;
  run.output = out_dir;
  run.config = json{{"model", info.config}};
  run.inputs = {ckpt, data_dir};
  run.commit();
  out << json{{"command", "predict"}, {"predictions", set.predictions.size()}, {"checkpoint_id", set.checkpoint_id},
              {"out", out_dir}}
           .dump()
      << "\n";
  return Ok;
}

// ---- ensemble ------------------------------------------------------------

auto cmd_ensemble(std::vector<std::string> const &dirs, std::string const &out_dir, std::ostream &out) -> int
{
  std::vector<PredictionSet> sets;
  for (auto const &d : dirs) { sets.push_back(load_predictions(d)); }

  auto names_of = [](PredictionSet const &s) {
    std::vector<std::string> n;
    for (auto const &p : s.predictions) { n.push_back(p.recording); }
    std::sort(n.begin(), n.end());
    return n;
  };
  auto const names = names_of(sets.front());
  for (std::size_t i = 1; i < sets.size(); ++i) {
    if (names_of(sets[i]) != names) {
      throw AlignmentError(fmt::format("{} covers different recordings than {}", dirs[i], dirs.front()));
    }
  }

  PredictionSet result;
  result.normalization = "zscore-mean";
  std::vector<std::string> ids;
  for (auto const &s : sets) { ids.push_back(s.checkpoint_id); }
  result.checkpoint_id = fmt::format("ensemble:{}", fmt::join(ids, "+"));
  for (auto const &name : names) {
    std::vector<Prediction> members;
    for (auto const &s : sets) {
      auto it = std::find_if(s.predictions.begin(), s.predictions.end(),
                             [&](Prediction const &p) { return p.recording == name; });
      members.push_back(*it);
    }
    result.predictions.push_back(ensemble(std::span<Prediction const>(members)));
  }
  save_predictions(strip_trailing_separator(out_dir), result);

  RunManifest run;
  run.subcommand = "ensemble";
  run.output = out_dir;
  run.inputs = dirs;
  run.config = json{{"normalization", result.normalization}, {"members", dirs.size()}};
  run.commit();
  out << json{{"command", "ensemble"}, {"members", dirs.size()}, {"predictions", result.predictions.size()},
              {"out", out_dir}}
           .dump()
      << "\n";
  return Ok;
}

// ---- eval ----------------------------------------------------------------

auto cmd_eval(std::string const &pred_dir, std::string const &data_dir, std::ostream &out) -> int
{
  auto const set = load_predictions(pred_dir);
  auto const data = load_data(data_dir);
  std::map<std::string, RecordingSample const *> by_name;
  for (auto const &r : data) { by_name[r.name] = &r; }

  std::vector<Matrix<double>> targets;
  for (auto const &p : set.predictions) {
    auto it = by_name.find(p.recording);
    if (it == by_name.end()) { throw AlignmentError(fmt::format("no recording '{}' in {}", p.recording, data_dir)); }
    targets.push_back(it->second->mel.cast<double>());
  }
  auto report = evaluate(std::span<Prediction const>(set.predictions), std::span<Matrix<double> const>(targets));
  out << report_json(report).dump() << "\n";
  return Ok;
}

// ---- gradcheck -----------------------------------------------------------

auto cmd_gradcheck(SuiteOptions const &opt, std::ostream &out) -> int
{
  auto const reports = run_grad_suite(opt);
  bool       ok = true;
  for (auto const &r : reports) {
    out << json{{"op", r.op_name}, {"max_rel_error", r.max_rel_error}, {"tolerance", r.tolerance},
                {"passed", r.passed}, {"checked", r.checked}}
             .dump()
        << "\n";
    ok = ok && r.passed;
  }
  out << json{{"command", "gradcheck"}, {"ops", reports.size()}, {"passed", ok}}.dump() << "\n";
  return ok ? Ok : CheckFailed;
}

void apply_thread_cap()
{
  char const *env = std::getenv("CCN_THREADS");
  if (env == nullptr || *env == '\0') { return; }
  char      *end = nullptr;
  long const n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) { throw UsageError(fmt::format("CCN_THREADS must be a positive integer, got '{}'", env)); }
  Eigen::setNbThreads(static_cast<int>(n));
}

} // namespace

auto run(std::vector<std::string> const &args, std::ostream &out, std::ostream &err) -> int
{
  CLI::App app{"EEG to mel-spectrogram decoder toolkit", "ccn"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto     *s = app.add_subcommand("synth", "write a synthetic dataset");
  s->add_option("--subjects", synth.spec.n_subjects, "number of subjects")->check(CLI::PositiveNumber);
  s->add_option("--per-subject", synth.spec.recordings_per_subject, "recordings per subject")->check(CLI::PositiveNumber);
  s->add_option("--T", synth.spec.T, "samples per recording")->check(CLI::PositiveNumber);
  s->add_option("--snr-db", synth.spec.snr_db, "signal-to-noise ratio in dB (inf disables noise)");
  s->add_option("--lag-taps", synth.spec.lag_taps, "lags of the mixing model")->check(CLI::PositiveNumber);
  s->add_option("--channels", synth.spec.eeg_channels, "EEG channels")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.spec.seed, "generator seed");
  s->add_option("--out", synth.out, "output dataset directory")->required();

  int   folds_id = 0;
  auto *f = app.add_subcommand("folds", "print the cross-validation folds");
  f->add_option("--fold", folds_id, "only this fold")->check(CLI::Range(1, 4));

  TrainArgs train_args;
  auto     *t = app.add_subcommand("train", "train one model on one fold");
  auto     *fold_opt = t->add_option("--fold", train_args.fold, "fold 1..4")->check(CLI::Range(1, 4));
  auto     *fold_file = t->add_option("--fold-file", train_args.fold_file, "custom fold (JSON)")->check(CLI::ExistingFile);
  fold_opt->excludes(fold_file);
  t->add_option("--seed", train_args.seed, "model and shuffling seed");
  t->add_option("--data", train_args.data, "dataset directory")->required();
  t->add_option("--config", train_args.config, "JSON with \"model\" and \"train\" sections")->check(CLI::ExistingFile);
  t->add_option("--out", train_args.out, "checkpoint path")->required();

  std::string ckpt, pdata, pout;
  auto       *p = app.add_subcommand("predict", "predict every recording of a dataset");
  p->add_option("--ckpt", ckpt, "checkpoint")->required();
  p->add_option("--data", pdata, "dataset directory")->required();
  p->add_option("--out", pout, "prediction directory")->required();

  std::vector<std::string> edirs;
  std::string              eout;
  auto                    *e = app.add_subcommand("ensemble", "z-normalize and average prediction sets");
  e->add_option("--preds", edirs, "prediction directories")->required()->expected(1, -1);
  e->add_option("--out", eout, "output directory")->required();

  std::string vpred, vdata;
  auto       *v = app.add_subcommand("eval", "score predictions against the mel targets");
  v->add_option("--pred", vpred, "prediction directory")->required();
  v->add_option("--data", vdata, "dataset directory")->required();

  SuiteOptions gopt;
  auto        *g = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  g->add_option("--cases", gopt.cases_per_op, "random cases per op")->check(CLI::PositiveNumber);
  g->add_option("--seed", gopt.seed, "case seed");
  g->add_option("--corrupt", gopt.corrupt_op, "scale this op's analytic gradient by 1.01");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (CLI::CallForHelp const &) {
    out << app.help();
    return Ok;
  } catch (CLI::CallForAllHelp const &) {
    out << app.help("", CLI::AppFormatMode::All);
    return Ok;
  } catch (CLI::ParseError const &ex) {
    err << "error: " << ex.what() << "\n";
    return Usage;
  }

  try {
    apply_thread_cap();
    if (s->parsed()) { return cmd_synth(synth, out); }
    if (f->parsed()) { return cmd_folds(folds_id, out); }
    if (t->parsed()) {
      if (train_args.fold == 0 && train_args.fold_file.empty()) { throw UsageError("train: --fold or --fold-file is required"); }
      return cmd_train(train_args, out);
    }
    if (p->parsed()) { return cmd_predict(ckpt, pdata, pout, out); }
    if (e->parsed()) { return cmd_ensemble(edirs, eout, out); }
    if (v->parsed()) { return cmd_eval(vpred, vdata, out); }
    if (g->parsed()) {
      if (!gopt.corrupt_op.empty() && gopt.corrupt_op != "model_forward" &&
          std::find(differentiable_ops().begin(), differentiable_ops().end(), gopt.corrupt_op) == differentiable_ops().end()) {
        throw UsageError("--corrupt: unknown op '" + gopt.corrupt_op + "'");
      }
      return cmd_gradcheck(gopt, out);
    }
  } catch (Failure const &ex) {
    err << "error: " << ex.what() << "\n";
    return ex.code;
  } catch (FormatError const &ex) {
    err << "error: checkpoint " << to_string(ex.code) << ": " << ex.what() << "\n";
    return CheckpointFormat;
  } catch (AlignmentError const &ex) {
    err << "error: " << ex.what() << "\n";
    return Alignment;
  } catch (ShapeError const &ex) {
    err << "error: " << ex.what() << "\n";
    return Alignment;
  } catch (UsageError const &ex) {
    err << "error: " << ex.what() << "\n";
    return Usage;
  } catch (ConfigError const &ex) {
    err << "error: " << ex.what() << "\n";
    return Usage;
  } catch (LoadError const &ex) {
    err << "error: " << to_string(ex.code) << ": " << ex.what() << "\n";
    return Io;
  } catch (fs::filesystem_error const &ex) {
    err << "error: " << ex.what() << "\n";
    return Io;
  } catch (std::exception const &ex) {
    err << "error: " << ex.what() << "\n";
    return CheckFailed;
  }
  return Usage;
}

} // namespace ccn::cli
