#include "ccn/data.hpp"
#include "ccn/io.hpp"
#include "ccn/random.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace ccn {

namespace fs = std::filesystem;
using nlohmann::json;

auto RecordingSample::subject_number() const -> std::optional<int>
{
  int         v = 0;
  auto const *first = subject_id.data();
  auto const *last = first + subject_id.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) { return std::nullopt; }
  return v;
}

void RecordingSample::validate() const
{
  Index const T = eeg.cols();
  if (T < 1) { throw ShapeError("recording '" + name + "' is empty"); }
  if (mel.rows() != mel_subbands) {
    throw ShapeError(fmt::format("recording '{}': mel has {} rows, expected {}", name, mel.rows(), mel_subbands));
  }
  if (envelope.rows() != 1) { throw ShapeError("recording '" + name + "': envelope must have one row"); }
  if (mel.cols() != T || envelope.cols() != T) {
    throw ShapeError(fmt::format("recording '{}': eeg/mel/envelope lengths {} / {} / {} differ", name, T, mel.cols(),
                                 envelope.cols()));
  }
  if (!eeg.allFinite() || !mel.allFinite() || !envelope.allFinite()) {
    throw LoadError(LoadErrc::NonFinite, "recording '" + name + "' holds non-finite values");
  }
}

void save_recording(fs::path const &dir, RecordingSample const &rec)
{
  rec.validate();
  json manifest{{"subject_id", rec.subject_id},
                {"stimulus_id", rec.stimulus_id},
                {"sample_rate_hz", sample_rate_hz},
                {"T", rec.time()},
                {"eeg_channels", rec.eeg.rows()},
                {"mel_subbands", rec.mel.rows()},
                {"envelope_channels", 1}};
  if (!rec.provenance.empty()) { manifest["synth"] = json::parse(rec.provenance); }

  io::StagedDir stage(dir);
  io::write_file_atomic(stage.path() / "manifest", manifest.dump(2) + "\n");
  io::write_file_atomic(stage.path() / "eeg.raw", io::encode_f32(rec.eeg));
  io::write_file_atomic(stage.path() / "mel.raw", io::encode_f32(rec.mel));
  io::write_file_atomic(stage.path() / "env.raw", io::encode_f32(rec.envelope));
  stage.commit();
}

auto load_recording(fs::path const &dir) -> RecordingSample
{
  auto const manifest_path = dir / "manifest";
  if (!fs::exists(manifest_path)) { throw LoadError(LoadErrc::MissingFile, "no manifest in " + dir.string()); }
  json m;
  try {
    m = json::parse(io::read_file(manifest_path));
  } catch (json::exception const &e) {
    throw LoadError(LoadErrc::BadManifest, fmt::format("{}: {}", manifest_path.string(), e.what()));
  }

  RecordingSample rec;
  rec.name = dir.filename().string();
  Index T = 0, eeg_channels = 0, mel_rows = 0;
  try {
    auto const &sid = m.at("subject_id");
    rec.subject_id = sid.is_string() ? sid.get<std::string>() : sid.dump();
    rec.stimulus_id = m.at("stimulus_id").get<std::string>();
    T = m.at("T").get<Index>();
    eeg_channels = m.value("eeg_channels", Index{64});
    mel_rows = m.value("mel_subbands", mel_subbands);
    if (m.contains("synth")) { rec.provenance = m.at("synth").dump(); }
  } catch (json::exception const &e) {
    throw LoadError(LoadErrc::BadManifest, fmt::format("{}: {}", manifest_path.string(), e.what()));
  }
  if (T < 1 || eeg_channels < 1 || mel_rows != mel_subbands) {
    throw LoadError(LoadErrc::BadManifest, "implausible dimensions in " + manifest_path.string());
  }

  auto read = [&](char const *file, Index rows) {
    auto const path = dir / file;
    if (!fs::exists(path)) { throw LoadError(LoadErrc::MissingFile, "missing " + path.string()); }
    auto const bytes = io::read_file(path);
    if (static_cast<Index>(bytes.size()) != rows * T * 4) {
      throw LoadError(LoadErrc::LengthMismatch, fmt::format("{}: {} bytes, manifest implies {} ({} x {} x 4)",
                                                            path.string(), bytes.size(), rows * T * 4, rows, T));
    }
    return io::decode_f32(bytes, rows, T);
  };
  rec.eeg = read("eeg.raw", eeg_channels);
  rec.mel = read("mel.raw", mel_rows);
  rec.envelope = read("env.raw", 1);
  rec.validate();
  return rec;
}

auto load_dataset(fs::path const &root) -> std::vector<RecordingSample>
{
  if (!fs::is_directory(root)) { throw LoadError(LoadErrc::MissingFile, "no dataset directory " + root.string()); }
  std::vector<fs::path> dirs;
  for (auto const &entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest")) { dirs.push_back(entry.path()); }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<RecordingSample> out;
  out.reserve(dirs.size());
  for (auto const &d : dirs) { out.push_back(load_recording(d)); }
  return out;
}

void save_dataset(fs::path const &root, std::span<RecordingSample const> recs)
{
  fs::create_directories(root);
  for (auto const &r : recs) { save_recording(root / r.name, r); }
}

auto fuse_targets(Matrix<float> const &envelope, Matrix<float> const &mel) -> Matrix<float>
{
  if (envelope.rows() != 1) { throw ShapeError("fuse_targets: envelope must have one row"); }
  if (mel.rows() != mel_subbands) { throw ShapeError("fuse_targets: mel must have 10 rows"); }
  if (envelope.cols() != mel.cols()) {
    throw ShapeError(fmt::format("fuse_targets: envelope T={} vs mel T={}", envelope.cols(), mel.cols()));
  }
  Matrix<float> out(fused_subbands, mel.cols());
  out.topRows(1) = envelope;
  out.bottomRows(mel_subbands) = mel;
  return out;
}

auto window_count(Index T, Index len, Index hop) -> Index
{
  if (len < 1 || hop < 1 || len > T) { return 0; }
  return (T - len) / hop + 1;
}

auto window(RecordingSample const &rec, Index len, Index hop, ShortRecording policy, Index recording_index)
  -> std::vector<WindowPair>
{
  if (hop < 1) { throw ConfigError("window hop must be >= 1"); }
  if (len < 1) { throw ConfigError("window length must be >= 1"); }
  Index const T = rec.time();
  if (len > T) {
    if (policy == ShortRecording::Empty) { return {}; }
    throw ShapeError(fmt::format("recording '{}' has T={}, shorter than window {}", rec.name, T, len));
  }
  auto const               target = fuse_targets(rec.envelope, rec.mel);
  Index const              n = window_count(T, len, hop);
  std::vector<WindowPair> out;
  out.reserve(n);
  for (Index i = 0; i < n; ++i) {
    Index const start = i * hop;
    out.push_back(WindowPair{recording_index, start, rec.eeg.middleCols(start, len), target.middleCols(start, len)});
  }
  return out;
}

void FoldSpec::validate() const
{
  for (int s : train_subjects) {
    if (val_subjects.contains(s)) { throw ConfigError(fmt::format("fold {}: subject {} in both splits", fold_id, s)); }
  }
  if (!excluded_val_stimuli.contains(shared_stimulus)) {
    throw ConfigError(fmt::format("fold {}: {} must be excluded from validation", fold_id, shared_stimulus));
  }
}

void to_json(json &j, FoldSpec const &f)
{
  j = json{{"fold_id", f.fold_id},
           {"train_subjects", f.train_subjects},
           {"val_subjects", f.val_subjects},
           {"excluded_val_stimuli", f.excluded_val_stimuli}};
}

void from_json(json const &j, FoldSpec &f)
{
  f.fold_id = j.value("fold_id", 0);
  f.train_subjects = j.at("train_subjects").get<std::set<int>>();
  f.val_subjects = j.at("val_subjects").get<std::set<int>>();
  f.excluded_val_stimuli = j.value("excluded_val_stimuli", std::set<std::string>{shared_stimulus});
  f.excluded_val_stimuli.insert(shared_stimulus);
}

namespace {

auto subject_range(int first, int last) -> std::set<int>
{
  std::set<int> s;
  for (int i = first; i <= last; ++i) { s.insert(i); }
  return s;
}

auto set_union(std::set<int> a, std::set<int> const &b) -> std::set<int>
{
  a.insert(b.begin(), b.end());
  return a;
}

} // namespace

auto make_folds() -> std::vector<FoldSpec>
{
  // Validation blocks 1-26, 27-48, 49-71, 72-85; training is the rest.
  std::vector<std::pair<int, int>> const val_ranges{{1, 26}, {27, 48}, {49, 71}, {72, 85}};
  std::vector<FoldSpec>                  folds;
  for (std::size_t i = 0; i < val_ranges.size(); ++i) {
    FoldSpec f;
    f.fold_id = static_cast<int>(i + 1);
    f.val_subjects = subject_range(val_ranges[i].first, val_ranges[i].second);
    for (std::size_t j = 0; j < val_ranges.size(); ++j) {
      if (j != i) { f.train_subjects = set_union(f.train_subjects, subject_range(val_ranges[j].first, val_ranges[j].second)); }
    }
    f.excluded_val_stimuli = {shared_stimulus};
    f.validate();
    folds.push_back(std::move(f));
  }
  return folds;
}

auto standard_fold(int fold_id) -> FoldSpec
{
  if (fold_id < 1 || fold_id > 4) { throw ConfigError(fmt::format("fold must be 1..4, got {}", fold_id)); }
  return make_folds()[fold_id - 1];
}

auto select_recordings(std::span<RecordingSample const> dataset, FoldSpec const &fold, Split split)
  -> std::vector<Index>
{
  fold.validate();
  std::vector<Index>    train;
  std::set<std::string> seen_stimuli;
  for (Index i = 0; i < static_cast<Index>(dataset.size()); ++i) {
    auto const subject = dataset[i].subject_number();
    if (subject && fold.train_subjects.contains(*subject)) {
      train.push_back(i);
      seen_stimuli.insert(dataset[i].stimulus_id);
    }
  }
  if (split == Split::Train) { return train; }

  std::vector<Index> val;
  for (Index i = 0; i < static_cast<Index>(dataset.size()); ++i) {
    auto const &rec = dataset[i];
    auto const  subject = rec.subject_number();
    if (!subject || !fold.val_subjects.contains(*subject)) { continue; }
    if (fold.excluded_val_stimuli.contains(rec.stimulus_id)) { continue; }
    if (seen_stimuli.contains(rec.stimulus_id)) { continue; }
    val.push_back(i);
  }
  return val;
}

auto select_windows(std::span<RecordingSample const> dataset, FoldSpec const &fold, Split split, Index len, Index hop)
  -> std::vector<WindowPair>
{
  auto const               recs = select_recordings(dataset, fold, split);
  std::vector<WindowPair> out;
  for (Index i : recs) {
    auto w = window(dataset[i], len, hop, ShortRecording::Empty, i);
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  if (out.empty()) {
    throw ConfigError(fmt::format("fold {}: the {} split selects no windows", fold.fold_id,
                                  split == Split::Train ? "training" : "validation"));
  }
  return out;
}

void SynthSpec::validate() const
{
  auto check = [](bool ok, char const *msg) {
    if (!ok) { throw ConfigError(std::string("synth: ") + msg); }
  };
  check(n_subjects >= 1, "n_subjects must be >= 1");
  check(recordings_per_subject >= 1, "recordings_per_subject must be >= 1");
  check(T >= 1, "T must be >= 1");
  check(lag_taps >= 1, "lag_taps must be >= 1");
  check(eeg_channels >= 1, "eeg_channels must be >= 1");
  check(!std::isnan(snr_db), "snr_db must be a number");
}

namespace {

constexpr double smoothing = 0.9;      // AR(1) pole of the mel generator
constexpr double common_weight = 0.8;  // shared component across mel rows
constexpr double specific_weight = 0.6;

// Unit-variance stationary AR(1) rows.
auto smoothed_noise(Index rows, Index T, Rng &rng) -> Eigen::MatrixXd
{
  Eigen::MatrixXd out(rows, T);
  double const    innovation = std::sqrt(1.0 - smoothing * smoothing);
  for (Index r = 0; r < rows; ++r) {
    double state = rng.normal();
    for (Index t = 0; t < T; ++t) {
      if (t > 0) { state = smoothing * state + innovation * rng.normal(); }
      out(r, t) = state;
    }
  }
  return out;
}

auto softplus(double x) -> double { return x > 30.0 ? x : std::log1p(std::exp(x)); }

auto stimulus_mel(std::uint64_t seed, std::string const &stimulus, Index T) -> Eigen::MatrixXd
{
  Rng             rng(mix_seed(seed, io::fnv1a64(stimulus)));
  Eigen::MatrixXd common = smoothed_noise(1, T, rng);
  Eigen::MatrixXd specific = smoothed_noise(mel_subbands, T, rng);
  Eigen::MatrixXd mel(mel_subbands, T);
  for (Index s = 0; s < mel_subbands; ++s) {
    for (Index t = 0; t < T; ++t) { mel(s, t) = softplus(common_weight * common(0, t) + specific_weight * specific(s, t)); }
  }
  return mel;
}

auto stimulus_name(SynthSpec const &spec, Index subject, Index k) -> std::string
{
  if (k == 0 && spec.recordings_per_subject > 1) { return shared_stimulus; }
  return fmt::format("syn-s{:03}-r{}", subject, k);
}

} // namespace

auto synth_dataset(SynthSpec const &spec) -> std::vector<RecordingSample>
{
  spec.validate();
  Index const                  L = spec.lag_taps;
  Index const                  T = spec.T;
  std::vector<RecordingSample> out;
  for (Index subject = 1; subject <= spec.n_subjects; ++subject) {
    std::uint64_t const subject_seed = mix_seed(spec.seed, 1000 + static_cast<std::uint64_t>(subject));
    Rng                 subject_rng(subject_seed);
    // Spatial mixing: column s*L + l maps mel row s delayed by l samples.
    Eigen::MatrixXd mixing(spec.eeg_channels, mel_subbands * L);
    double const    scale = 1.0 / std::sqrt(static_cast<double>(mel_subbands * L));
    for (Index i = 0; i < mixing.size(); ++i) { mixing.data()[i] = scale * subject_rng.normal(); }

    for (Index k = 0; k < spec.recordings_per_subject; ++k) {
      auto const      stimulus = stimulus_name(spec, subject, k);
      Eigen::MatrixXd mel = stimulus_mel(spec.seed, stimulus, T);
      Eigen::MatrixXd centered = mel.colwise() - mel.rowwise().mean();

      Eigen::MatrixXd lagged = Eigen::MatrixXd::Zero(mel_subbands * L, T);
      for (Index s = 0; s < mel_subbands; ++s) {
        for (Index l = 0; l < L && l < T; ++l) { lagged.row(s * L + l).tail(T - l) = centered.row(s).head(T - l); }
      }
      Eigen::MatrixXd eeg = mixing * lagged;

      std::uint64_t const noise_seed = mix_seed(subject_seed, static_cast<std::uint64_t>(k) + 1);
      if (std::isfinite(spec.snr_db)) {
        double const power = eeg.squaredNorm() / static_cast<double>(eeg.size());
        double const sd = std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));
        Rng          noise(noise_seed);
        for (Index i = 0; i < eeg.size(); ++i) { eeg.data()[i] += sd * noise.normal(); }
      }

      RecordingSample rec;
      rec.subject_id = std::to_string(subject);
      rec.stimulus_id = stimulus;
      rec.name = fmt::format("sub-{:03}_{}", subject, stimulus);
      rec.eeg = eeg.cast<float>();
      rec.mel = mel.cast<float>();
      rec.envelope = mel.colwise().mean().cast<float>();
      json prov{{"generator", "ccn-synth"},
                {"seed", spec.seed},
                {"snr_db", std::isfinite(spec.snr_db) ? json(spec.snr_db) : json(spec.snr_db > 0 ? "inf" : "-inf")},
                {"lag_taps", L},
                {"subject_seed", subject_seed},
                {"noise_seed", noise_seed}};
      rec.provenance = prov.dump();
      out.push_back(std::move(rec));
    }
  }
  return out;
}

} // namespace ccn
