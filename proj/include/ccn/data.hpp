#pragma once

#include "tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ccn {

inline constexpr Index mel_subbands = 10;
inline constexpr Index fused_subbands = mel_subbands + 1;
inline constexpr int   sample_rate_hz = 64;
inline constexpr char const *shared_stimulus = "AB1";

// One trial. Arrays are rows x T, row-major, 32-bit as stored on disk.
struct RecordingSample
{
  std::string   name; // directory name inside the dataset
  std::string   subject_id;
  std::string   stimulus_id;
  Matrix<float> eeg;      // channels x T
  Matrix<float> mel;      // 10 x T
  Matrix<float> envelope; // 1 x T
  std::string   provenance; // JSON text, empty when absent

  [[nodiscard]] auto time() const -> Index { return eeg.cols(); }
  // Numeric subject id when the id is an integer (training subjects 1..85).
  [[nodiscard]] auto subject_number() const -> std::optional<int>;
  // Throws ShapeError / LoadError(NonFinite).
  void validate() const;
};

// Writes manifest + eeg.raw / mel.raw / env.raw into `dir` via a temporary sibling and rename.
void save_recording(std::filesystem::path const &dir, RecordingSample const &rec);
// Throws LoadError with a code per failure kind.
auto load_recording(std::filesystem::path const &dir) -> RecordingSample;

// Every subdirectory of `root` holding a manifest, sorted by name.
auto load_dataset(std::filesystem::path const &root) -> std::vector<RecordingSample>;
void save_dataset(std::filesystem::path const &root, std::span<RecordingSample const> recs);

// Row 0 = envelope, rows 1..10 = mel.
auto fuse_targets(Matrix<float> const &envelope, Matrix<float> const &mel) -> Matrix<float>;

struct WindowPair
{
  Index         recording = 0; // index into the dataset
  Index         start = 0;
  Matrix<float> eeg;    // channels x len
  Matrix<float> target; // 11 x len
};

enum class ShortRecording
{
  Error,
  Empty,
};

auto window_count(Index T, Index len, Index hop) -> Index;
auto window(RecordingSample const &rec,
            Index                  len,
            Index                  hop,
            ShortRecording         policy = ShortRecording::Error,
            Index                  recording_index = 0) -> std::vector<WindowPair>;

struct FoldSpec
{
  int                   fold_id = 0;
  std::set<int>         train_subjects;
  std::set<int>         val_subjects;
  std::set<std::string> excluded_val_stimuli;

  // Disjoint subject sets and AB1 excluded; throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json &j, FoldSpec const &f);
void from_json(nlohmann::json const &j, FoldSpec &f);

// The four-fold subject split over subjects 1..85.
auto make_folds() -> std::vector<FoldSpec>;
auto standard_fold(int fold_id) -> FoldSpec;

enum class Split
{
  Train,
  Validation,
};

/*
 * Train = every recording of a training subject. Validation = recordings of
 * validation subjects whose stimulus is neither listed as excluded nor heard
 * in any training recording of this fold.
 */
auto select_recordings(std::span<RecordingSample const> dataset, FoldSpec const &fold, Split split)
  -> std::vector<Index>;

// Windows of the selected recordings; throws ConfigError when nothing is selected.
auto select_windows(std::span<RecordingSample const> dataset, FoldSpec const &fold, Split split, Index len, Index hop)
  -> std::vector<WindowPair>;

struct SynthSpec
{
  Index         n_subjects = 4;
  Index         recordings_per_subject = 2;
  Index         T = 1920;
  double        snr_db = 10.0;
  Index         lag_taps = 4;
  std::uint64_t seed = 0;
  Index         eeg_channels = 64;

  void validate() const;
};

/*
 * Synthetic recordings with a known linear forward model: mel rows are
 * smoothed positive noise sharing a common component, the envelope is their
 * mean, and eeg = S * (lagged, centered mel) + white noise at snr_db, with one
 * random spatial mixing matrix S per subject. The first recording of every
 * subject plays the shared stimulus when a subject has more than one.
 */
auto synth_dataset(SynthSpec const &spec) -> std::vector<RecordingSample>;

} // namespace ccn
