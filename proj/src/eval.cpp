#include "ccn/eval.hpp"
#include "ccn/io.hpp"
#include "ccn/training.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <set>

namespace ccn {

namespace fs = std::filesystem;
using nlohmann::json;

auto Prediction::mel_view() const -> Matrix<double>
{
  if (values.rows() == fused_subbands) { return values.bottomRows(mel_subbands); }
  if (values.rows() == mel_subbands) { return values; }
  throw ShapeError(fmt::format("prediction for '{}' has {} rows; expected 10 or 11", recording, values.rows()));
}

auto evaluate(Prediction const &pred, Matrix<double> const &target_mel) -> EvalReport
{
  auto const mel = pred.mel_view();
  if (target_mel.rows() != mel_subbands) { throw ShapeError("evaluate: target must have 10 mel rows"); }
  if (target_mel.cols() != mel.cols()) {
    throw AlignmentError(
      fmt::format("evaluate: prediction '{}' has T={}, target has T={}", pred.recording, mel.cols(), target_mel.cols()));
  }
  RecordingScore score;
  score.recording = pred.recording;
  double sum = 0.0;
  for (Index s = 0; s < mel_subbands; ++s) {
    score.subband_r[s] = pearson<double>(std::span(mel.row(s).data(), static_cast<std::size_t>(mel.cols())),
                                         std::span(target_mel.row(s).data(), static_cast<std::size_t>(mel.cols())));
    sum += score.subband_r[s];
  }
  score.mean_r = sum / static_cast<double>(mel_subbands);

  EvalReport report;
  report.subband_r = score.subband_r;
  report.mean_r = score.mean_r;
  report.n_recordings = 1;
  report.per_recording.push_back(std::move(score));
  return report;
}

auto evaluate(std::span<Prediction const> preds, std::span<Matrix<double> const> target_mels) -> EvalReport
{
  if (preds.size() != target_mels.size()) {
    throw AlignmentError(fmt::format("evaluate: {} predictions for {} targets", preds.size(), target_mels.size()));
  }
  if (preds.empty()) { throw UsageError("evaluate: nothing to evaluate"); }
  EvalReport report;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto one = evaluate(preds[i], target_mels[i]);
    for (Index s = 0; s < mel_subbands; ++s) { report.subband_r[s] += one.subband_r[s]; }
    report.per_recording.push_back(std::move(one.per_recording.front()));
  }
  double const n = static_cast<double>(preds.size());
  double       sum = 0.0;
  for (auto &r : report.subband_r) {
    r /= n;
    sum += r;
  }
  report.mean_r = sum / static_cast<double>(mel_subbands);
  report.n_recordings = static_cast<Index>(preds.size());
  return report;
}

auto report_json(EvalReport const &report) -> json
{
  json per = json::array();
  for (auto const &r : report.per_recording) {
    per.push_back(json{{"recording", r.recording}, {"subband_r", r.subband_r}, {"mean_r", r.mean_r}});
  }
  return json{{"subband_r", report.subband_r},
              {"mean_r", report.mean_r},
              {"n_recordings", report.n_recordings},
              {"per_recording", per}};
}

auto znormalize(Prediction const &pred) -> Prediction
{
  Prediction out = pred;
  auto      &v = out.values;
  for (Index r = 0; r < v.rows(); ++r) {
    double const mean = v.row(r).mean();
    auto const   centered = (v.row(r).array() - mean).eval();
    double const sd = std::sqrt(centered.square().mean());
    if (sd < znorm_min_sd) {
      v.row(r).setZero();
    } else {
      v.row(r) = (centered / sd).matrix();
    }
  }
  return out;
}

auto ensemble(std::span<Prediction const> members) -> Prediction
{
  if (members.empty()) { throw UsageError("ensemble: no members"); }
  auto const &first = members.front();
  for (auto const &m : members) {
    if (m.recording != first.recording || m.values.rows() != first.values.rows() ||
        m.values.cols() != first.values.cols()) {
      throw AlignmentError(fmt::format("ensemble: member for '{}' ({}x{}) does not align with '{}' ({}x{})",
                                       m.recording, m.values.rows(), m.values.cols(), first.recording,
                                       first.values.rows(), first.values.cols()));
    }
  }
  Prediction out = znormalize(first);
  for (std::size_t i = 1; i < members.size(); ++i) { out.values += znormalize(members[i]).values; }
  if (members.size() > 1) { out.values /= static_cast<double>(members.size()); }
  return out;
}

auto make_prediction(RecordingSample const &rec, Matrix<double> values) -> Prediction
{
  return Prediction{rec.name, rec.subject_id, rec.stimulus_id, std::move(values)};
}

void save_predictions(fs::path const &dir, PredictionSet const &set)
{
  json entries = json::array();
  std::set<std::string> names;
  io::StagedDir stage(dir);
  for (auto const &p : set.predictions) {
    if (!names.insert(p.recording).second) { throw UsageError("duplicate prediction for '" + p.recording + "'"); }
    Matrix<float> const values = p.values.cast<float>();
    auto const          file = p.recording + ".raw";
    io::write_file_atomic(stage.path() / file, io::encode_f32(values));
    entries.push_back(json{{"recording", p.recording},
                           {"subject_id", p.subject_id},
                           {"stimulus_id", p.stimulus_id},
                           {"rows", p.values.rows()},
                           {"T", p.values.cols()},
                           {"file", file}});
  }
  json manifest{{"checkpoint_id", set.checkpoint_id}, {"normalization", set.normalization}, {"predictions", entries}};
  io::write_file_atomic(stage.path() / "manifest", manifest.dump(2) + "\n");
  stage.commit();
}

auto load_predictions(fs::path const &dir) -> PredictionSet
{
  auto const path = dir / "manifest";
  if (!fs::exists(path)) { throw LoadError(LoadErrc::MissingFile, "no prediction manifest in " + dir.string()); }
  PredictionSet set;
  try {
    auto const m = json::parse(io::read_file(path));
    set.checkpoint_id = m.value("checkpoint_id", std::string());
    set.normalization = m.value("normalization", std::string("none"));
    for (auto const &e : m.at("predictions")) {
      Prediction p;
      p.recording = e.at("recording").get<std::string>();
      p.subject_id = e.value("subject_id", std::string());
      p.stimulus_id = e.value("stimulus_id", std::string());
      auto const rows = e.at("rows").get<Index>();
      auto const T = e.at("T").get<Index>();
      auto const file = dir / e.at("file").get<std::string>();
      if (!fs::exists(file)) { throw LoadError(LoadErrc::MissingFile, "missing " + file.string()); }
      p.values = io::decode_f32(io::read_file(file), rows, T).cast<double>();
      if (!p.values.allFinite()) { throw LoadError(LoadErrc::NonFinite, "non-finite prediction in " + file.string()); }
      set.predictions.push_back(std::move(p));
    }
  } catch (json::exception const &e) {
    throw LoadError(LoadErrc::BadManifest, fmt::format("{}: {}", path.string(), e.what()));
  }
  return set;
}

} // namespace ccn
