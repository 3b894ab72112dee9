#pragma once

#include "autodiff.hpp"

#include <nlohmann/json_fwd.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace ccn {

// Which terminal features feed the output head.
enum class HeadInput
{
  EegContextAttention, // concat([eeg, ctx_last, att_last])
  ContextOnly,         // ctx_last
};

struct ModelConfig
{
  Index                num_blocks = 6;
  Index                eeg_channels = 64;
  std::array<Index, 5> stack_filters = {256, 256, 256, 128, 128};
  Index                stack_kernel = 8;
  Index                hidden_width = 64;
  Index                context_kernel = 32;
  Index                output_subbands = 11;
  double               leaky_slope = 0.01;
  bool                 attention_enabled = true;
  HeadInput            head_input = HeadInput::EegContextAttention;

  // Throws ConfigError.
  void validate() const;

  auto operator==(ModelConfig const &) const -> bool = default;
};

void to_json(nlohmann::json &j, ModelConfig const &c);
void from_json(nlohmann::json const &j, ModelConfig &c);

// Channel count entering block `block` (0-based): eeg, or eeg + ctx + att.
auto block_input_channels(ModelConfig const &c, Index block) -> Index;

// Widths of the four depthwise Tconv layers of a stack fed with `input_channels`.
auto stack_tconv_widths(ModelConfig const &c, Index input_channels) -> std::array<Index, 4>;

auto head_input_channels(ModelConfig const &c) -> Index;

// Closed-form scalar parameter count.
auto param_count(ModelConfig const &c) -> Index;

struct StackLayerParams
{
  ParamId sconv_w, sconv_b, sconv_gamma, sconv_beta;
  ParamId tconv_w, tconv_b, tconv_gamma, tconv_beta;
};

struct BlockParams
{
  std::array<StackLayerParams, 4> layers;
  ParamId                         conv5_w, conv5_b, conv5_gamma, conv5_beta;
  ParamId                         linear_w, linear_b;
  ParamId                         context_w, context_b, context_gamma, context_beta;
  ParamId                         attention_w, attention_b;
};

template <typename Scalar> struct Model
{
  ModelConfig              config;
  ParameterSet<Scalar>     params;
  std::vector<BlockParams> blocks;
  ParamId                  head_w = 0;
  ParamId                  head_b = 0;
};

/*
 * Builds and initializes every parameter deterministically from `seed`:
 * weights and biases uniform in +-1/sqrt(fan_in), layer-norm gain 1 and
 * offset 0. Audits the stack channel bookkeeping while doing so.
 */
template <typename Scalar> auto build_model(ModelConfig const &config, std::uint64_t seed) -> Model<Scalar>;

template <typename Scalar> auto cnn_stack_forward(Var<Scalar> x, Model<Scalar> &model, Index block) -> Var<Scalar>;

template <typename Scalar>
auto spatial_attention_forward(Var<Scalar> ctx, Model<Scalar> &model, Index block) -> Var<Scalar>;

// Returns (ctx, att). The first block takes no previous outputs.
template <typename Scalar>
auto block_forward(Var<Scalar>                eeg,
                   std::optional<Var<Scalar>> prev_ctx,
                   std::optional<Var<Scalar>> prev_att,
                   Model<Scalar>             &model,
                   Index                      block) -> std::pair<Var<Scalar>, Var<Scalar>>;

// (B, eeg_channels, T) -> (B, output_subbands, T)
template <typename Scalar> auto model_forward(Var<Scalar> eeg, Model<Scalar> &model) -> Var<Scalar>;

// Inference without recording a tape.
template <typename Scalar> auto predict(Model<Scalar> &model, Tensor3<Scalar> const &eeg) -> Tensor3<Scalar>;

extern template auto build_model<float>(ModelConfig const &, std::uint64_t) -> Model<float>;
extern template auto build_model<double>(ModelConfig const &, std::uint64_t) -> Model<double>;

} // namespace ccn
