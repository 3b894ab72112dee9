#pragma once

#include "autodiff.hpp"
#include "data.hpp"
#include "model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ccn {

inline constexpr double pearson_eps = 1e-8;
// Series whose population variance falls below this correlate as 0.
inline constexpr double constant_variance = 1e-12;

template <typename T> auto pearson(std::span<T const> x, std::span<T const> y) -> double;

// -mean over batch items and subbands of pearson(pred[b,s,:], target[b,s,:]).
template <typename Scalar> auto pearson_loss(Var<Scalar> pred, Tensor3<Scalar> const &target) -> Var<Scalar>;

struct AdamHyper
{
  double        lr = 1e-3;
  double        beta1 = 0.9;
  double        beta2 = 0.999;
  double        eps = 1e-8;
  std::int64_t  step_count = 0;

  void validate() const;
};

// One bias-corrected Adam update of every parameter; increments step_count.
template <typename Scalar> void adam_step(ParameterSet<Scalar> &params, AdamHyper &hyper);

struct TrainSpec
{
  Index         window_len = 320;
  Index         window_hop = 64;
  Index         batch_size = 64;
  Index         max_epochs = 100;
  Index         patience = 5;
  Index         max_steps = 0; // 0 = unlimited
  std::uint64_t seed = 0;
  int           precision = 32;
  bool          envelope_target = true; // train on 11 rows (envelope + mel) or mel only
  AdamHyper     adam;

  void validate(ModelConfig const &config) const;
};

void to_json(nlohmann::json &j, TrainSpec const &s);
void from_json(nlohmann::json const &j, TrainSpec &s);

struct EpochLog
{
  Index  epoch = 0;
  Index  steps = 0; // cumulative optimizer steps
  double train_loss = 0.0;
  double val_score = 0.0;
  bool   improved = false;
};

struct CheckpointMeta
{
  int           fold_id = 0;
  std::uint64_t seed = 0;
  Index         epoch = 0;
  double        val_score = 0.0;
};

void to_json(nlohmann::json &j, CheckpointMeta const &m);
void from_json(nlohmann::json const &j, CheckpointMeta &m);

struct TrainResult
{
  CheckpointMeta        meta; // of the best epoch
  std::vector<EpochLog> history;
  Index                 epochs_run = 0;
  Index                 steps = 0;
};

struct TrainHooks
{
  // Replaces the computed validation score (early-stopping tests).
  std::function<double(Index epoch, double score)> score_override;
  std::function<void(EpochLog const &)>            on_epoch;
};

/*
 * Mean over windows of the mean Pearson correlation of the last 10 output rows
 * with the last 10 target rows.
 */
template <typename Scalar>
auto validation_score(Model<Scalar> &model, std::span<WindowPair const> windows, Index batch_size) -> double;

/*
 * Shuffled mini-batch Adam on pearson_loss. Batches drop the last partial
 * batch, except that a training set smaller than one batch trains as a single
 * batch. Stops after `patience` epochs without validation improvement, at
 * max_epochs, or at max_steps; leaves the best epoch's parameters in `model`.
 */
template <typename Scalar>
auto train(Model<Scalar>              &model,
           std::span<WindowPair const> train_windows,
           std::span<WindowPair const> val_windows,
           TrainSpec const            &spec,
           TrainHooks const           &hooks = {}) -> TrainResult;

template <typename Scalar>
auto train(Model<Scalar>                   &model,
           std::span<RecordingSample const> dataset,
           FoldSpec const                  &fold,
           TrainSpec const                 &spec,
           TrainHooks const                &hooks = {}) -> TrainResult;

// Stacks windows [indices] into (B, C, len) tensors.
template <typename Scalar>
auto gather_eeg(std::span<WindowPair const> windows, std::span<Index const> indices) -> Tensor3<Scalar>;
template <typename Scalar>
auto gather_targets(std::span<WindowPair const> windows, std::span<Index const> indices, bool envelope_target)
  -> Tensor3<Scalar>;

// ---- checkpoints -----------------------------------------------------------

inline constexpr std::string_view checkpoint_magic = "CCN1";
inline constexpr std::uint32_t    checkpoint_version = 1;

struct CheckpointInfo
{
  std::uint32_t  version = 0;
  std::string    dtype; // "f32" or "f64"
  ModelConfig    config;
  CheckpointMeta meta;
  std::string    header; // raw header text
};

/*
 * Layout: magic "CCN1", u32 version, u64 header length (little-endian), JSON
 * header, then every parameter's values little-endian in header order.
 */
template <typename Scalar> auto save_checkpoint(Model<Scalar> const &model, CheckpointMeta const &meta) -> std::string;

// Parses and validates the framing and header only. Throws FormatError.
auto read_checkpoint_info(std::string_view bytes) -> CheckpointInfo;

template <typename Scalar> struct LoadedCheckpoint
{
  Model<Scalar>  model;
  CheckpointMeta meta;
};

// Throws FormatError with a code per failure kind.
template <typename Scalar> auto load_checkpoint(std::string_view bytes) -> LoadedCheckpoint<Scalar>;

} // namespace ccn
