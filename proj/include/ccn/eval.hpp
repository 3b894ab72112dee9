#pragma once

#include "data.hpp"
#include "tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ccn {

// One model's (or an ensemble's) output for one recording; rows x T.
struct Prediction
{
  std::string    recording;
  std::string    subject_id;
  std::string    stimulus_id;
  Matrix<double> values; // 11 x T raw output, or 10 x T mel-only

  // The 10 mel rows; never touches the envelope row of an 11-row prediction.
  [[nodiscard]] auto mel_view() const -> Matrix<double>;
};

struct RecordingScore
{
  std::string                       recording;
  std::array<double, mel_subbands> subband_r{};
  double                            mean_r = 0.0;
};

struct EvalReport
{
  std::array<double, mel_subbands> subband_r{};
  double                            mean_r = 0.0;
  Index                             n_recordings = 0;
  std::vector<RecordingScore>       per_recording;
};

// Pearson per mel subband against `target_mel` (10 x T) and their mean.
auto evaluate(Prediction const &pred, Matrix<double> const &target_mel) -> EvalReport;

// Recordings weigh equally; subband_r is the per-subband mean over recordings.
auto evaluate(std::span<Prediction const> preds, std::span<Matrix<double> const> target_mels) -> EvalReport;

// Structured text with keys subband_r, mean_r, n_recordings (plus per_recording).
auto report_json(EvalReport const &report) -> nlohmann::json;

inline constexpr double znorm_min_sd = 1e-12;

// Each row shifted and scaled to zero mean, unit population SD; flat rows become zero.
auto znormalize(Prediction const &pred) -> Prediction;

// Elementwise mean of the z-normalized members. Throws AlignmentError / UsageError.
auto ensemble(std::span<Prediction const> members) -> Prediction;

// On disk: <dir>/manifest (JSON) plus one <recording>.raw per prediction,
// little-endian 32-bit reals, rows x T row-major.
struct PredictionSet
{
  std::vector<Prediction> predictions;
  std::string             checkpoint_id;
  std::string             normalization = "none";
};

void save_predictions(std::filesystem::path const &dir, PredictionSet const &set);
auto load_predictions(std::filesystem::path const &dir) -> PredictionSet;

// Prediction record for a recording from any model output matrix.
auto make_prediction(RecordingSample const &rec, Matrix<double> values) -> Prediction;

} // namespace ccn
