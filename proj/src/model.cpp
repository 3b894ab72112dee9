#include "ccn/model.hpp"
#include "ccn/random.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cmath>

namespace ccn {

NLOHMANN_JSON_SERIALIZE_ENUM(HeadInput,
                             {{HeadInput::EegContextAttention, "eeg_ctx_att"}, {HeadInput::ContextOnly, "ctx"}})

void to_json(nlohmann::json &j, ModelConfig const &c)
{
  j = nlohmann::json{{"num_blocks", c.num_blocks},
                     {"eeg_channels", c.eeg_channels},
                     {"stack_filters", c.stack_filters},
                     {"stack_kernel", c.stack_kernel},
                     {"hidden_width", c.hidden_width},
                     {"context_kernel", c.context_kernel},
                     {"output_subbands", c.output_subbands},
                     {"leaky_slope", c.leaky_slope},
                     {"attention_enabled", c.attention_enabled},
                     {"head_input", c.head_input}};
}

void from_json(nlohmann::json const &j, ModelConfig &c)
{
  ModelConfig const d;
  c.num_blocks = j.value("num_blocks", d.num_blocks);
  c.eeg_channels = j.value("eeg_channels", d.eeg_channels);
  if (j.contains("stack_filters")) {
    auto const f = j.at("stack_filters").get<std::vector<Index>>();
    if (f.size() != 5) { throw ConfigError("stack_filters must have exactly 5 entries"); }
    std::copy(f.begin(), f.end(), c.stack_filters.begin());
  } else {
    c.stack_filters = d.stack_filters;
  }
  c.stack_kernel = j.value("stack_kernel", d.stack_kernel);
  c.hidden_width = j.value("hidden_width", d.hidden_width);
  c.context_kernel = j.value("context_kernel", d.context_kernel);
  c.output_subbands = j.value("output_subbands", d.output_subbands);
  c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
  c.attention_enabled = j.value("attention_enabled", d.attention_enabled);
  c.head_input = j.value("head_input", d.head_input);
}

void ModelConfig::validate() const
{
  auto fail = [](std::string const &msg) { throw ConfigError("model config: " + msg); };
  if (num_blocks < 1) { fail("num_blocks must be >= 1"); }
  if (eeg_channels < 1) { fail("eeg_channels must be >= 1"); }
  for (auto f : stack_filters) {
    if (f < 1) { fail("stack_filters entries must be >= 1"); }
  }
  if (stack_kernel < 1) { fail("stack_kernel must be >= 1"); }
  if (hidden_width < 1) { fail("hidden_width must be >= 1"); }
  if (context_kernel < 1) { fail("context_kernel must be >= 1"); }
  // Evaluation reads the last 10 rows as mel; an optional leading row carries the envelope.
  if (output_subbands != 10 && output_subbands != 11) { fail("output_subbands must be 10 or 11"); }
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) { fail("leaky_slope must lie in (0, 1)"); }
}

auto block_input_channels(ModelConfig const &c, Index block) -> Index
{
  return block == 0 ? c.eeg_channels : c.eeg_channels + 2 * c.hidden_width;
}

auto stack_tconv_widths(ModelConfig const &c, Index input_channels) -> std::array<Index, 4>
{
  return {c.stack_filters[0] + input_channels,
          c.stack_filters[1] + input_channels,
          c.stack_filters[2] + input_channels,
          c.stack_filters[3] + input_channels};
}

auto head_input_channels(ModelConfig const &c) -> Index
{
  return c.head_input == HeadInput::ContextOnly ? c.hidden_width : c.eeg_channels + 2 * c.hidden_width;
}

auto param_count(ModelConfig const &c) -> Index
{
  c.validate();
  Index const K = c.stack_kernel;
  Index const H = c.hidden_width;
  Index const F5 = c.stack_filters[4];
  Index       total = 0;
  for (Index blk = 0; blk < c.num_blocks; ++blk) {
    Index const C0 = block_input_channels(c, blk);
    auto const  widths = stack_tconv_widths(c, C0);
    Index       c_in = C0;
    for (int i = 0; i < 4; ++i) {
      Index const F = c.stack_filters[i];
      total += F * c_in + F + 2 * F;                       // Sconv + LLP affine
      total += widths[i] * K + widths[i] + 2 * widths[i]; // Tconv + LLP affine
      c_in = widths[i];
    }
    total += F5 * c_in * K + F5 + 2 * F5;              // layer-5 conv + LLP affine
    total += H * F5 + H;                               // linear
    total += H * H * c.context_kernel + H + 2 * H;     // context conv + layer norm
    total += H * H + H;                                // attention score map
  }
  total += c.output_subbands * head_input_channels(c) + c.output_subbands;
  return total;
}

namespace {

template <typename Scalar> void init_uniform(Parameter<Scalar> &p, Index fan_in, Rng &rng)
{
  double const bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Index i = 0; i < p.value.size(); ++i) { p.value.data()[i] = Scalar(rng.uniform(-bound, bound)); }
}

template <typename Scalar> void init_constant(Parameter<Scalar> &p, double v) { p.value.setConstant(Scalar(v)); }

template <typename Scalar> class Builder
{
public:
  Builder(Model<Scalar> &m, std::uint64_t seed)
    : model_(m)
    , rng_(seed)
  {
  }

  auto weight(std::string const &name, std::vector<Index> shape, Index fan_in) -> ParamId
  {
    auto id = model_.params.add(name, std::move(shape));
    init_uniform(model_.params[id], fan_in, rng_);
    return id;
  }

  auto affine(std::string const &prefix, Index channels) -> std::pair<ParamId, ParamId>
  {
    auto g = model_.params.add(prefix + ".gamma", {channels});
    auto b = model_.params.add(prefix + ".beta", {channels});
    init_constant(model_.params[g], 1.0);
    init_constant(model_.params[b], 0.0);
    return {g, b};
  }

private:
  Model<Scalar> &model_;
  Rng            rng_;
};

} // namespace

template <typename Scalar> auto build_model(ModelConfig const &config, std::uint64_t seed) -> Model<Scalar>
{
  config.validate();
  Model<Scalar> m;
  m.config = config;
  Builder<Scalar> make(m, seed);
  Index const     K = config.stack_kernel;
  Index const     H = config.hidden_width;
  Index const     Kc = config.context_kernel;

  for (Index blk = 0; blk < config.num_blocks; ++blk) {
    BlockParams bp{};
    auto const  pre = fmt::format("block{}", blk);
    Index const C0 = block_input_channels(config, blk);
    auto const  expected = stack_tconv_widths(config, C0);
    Index       c_in = C0;
    for (int i = 0; i < 4; ++i) {
      auto const  lp = fmt::format("{}.stack{}", pre, i);
      Index const F = config.stack_filters[i];
      auto       &L = bp.layers[i];
      L.sconv_w = make.weight(lp + ".sconv.weight", {F, c_in}, c_in);
      L.sconv_b = make.weight(lp + ".sconv.bias", {F}, c_in);
      std::tie(L.sconv_gamma, L.sconv_beta) = make.affine(lp + ".sconv.norm", F);
      // Tconv runs over concat([Sconv output, stack input]).
      Index const width = F + C0;
      if (width != expected[i]) {
        throw ConfigError(fmt::format("{}: Tconv width {} disagrees with closed form {}", lp, width, expected[i]));
      }
      L.tconv_w = make.weight(lp + ".tconv.weight", {width, K}, K);
      L.tconv_b = make.weight(lp + ".tconv.bias", {width}, K);
      std::tie(L.tconv_gamma, L.tconv_beta) = make.affine(lp + ".tconv.norm", width);
      c_in = width;
    }
    Index const F5 = config.stack_filters[4];
    bp.conv5_w = make.weight(pre + ".stack4.conv.weight", {F5, c_in, K}, c_in * K);
    bp.conv5_b = make.weight(pre + ".stack4.conv.bias", {F5}, c_in * K);
    std::tie(bp.conv5_gamma, bp.conv5_beta) = make.affine(pre + ".stack4.conv.norm", F5);

    bp.linear_w = make.weight(pre + ".linear.weight", {H, F5}, F5);
    bp.linear_b = make.weight(pre + ".linear.bias", {H}, F5);

    bp.context_w = make.weight(pre + ".context.weight", {H, H, Kc}, H * Kc);
    bp.context_b = make.weight(pre + ".context.bias", {H}, H * Kc);
    std::tie(bp.context_gamma, bp.context_beta) = make.affine(pre + ".context.norm", H);

    bp.attention_w = make.weight(pre + ".attention.weight", {H, H}, H);
    bp.attention_b = make.weight(pre + ".attention.bias", {H}, H);
    m.blocks.push_back(bp);
  }
  Index const head_in = head_input_channels(config);
  m.head_w = make.weight("head.weight", {config.output_subbands, head_in}, head_in);
  m.head_b = make.weight("head.bias", {config.output_subbands}, head_in);
  return m;
}

template <typename Scalar> auto cnn_stack_forward(Var<Scalar> x, Model<Scalar> &model, Index block) -> Var<Scalar>
{
  auto const &bp = model.blocks.at(block);
  auto       &P = model.params;
  Index const C0 = block_input_channels(model.config, block);
  if (x.channels() != C0) {
    throw ShapeError(fmt::format("cnn stack of block {} expects {} channels, got {}", block, C0, x.channels()));
  }
  Scalar const slope = Scalar(model.config.leaky_slope);
  Index const  K = model.config.stack_kernel;

  auto const stack_input = x;
  auto       h = x;
  for (auto const &L : bp.layers) {
    auto s = pointwise_conv(h, P[L.sconv_w], P[L.sconv_b]);
    s = leaky_relu(layer_norm(s, P[L.sconv_gamma], P[L.sconv_beta]), slope);
    // Padding the concatenation pads both parts; the Tconv then keeps T.
    auto t = causal_pad(concat_channels({s, stack_input}), K - 1);
    t = depthwise_temporal_conv(t, P[L.tconv_w], P[L.tconv_b]);
    h = leaky_relu(layer_norm(t, P[L.tconv_gamma], P[L.tconv_beta]), slope);
  }
  h = temporal_conv(causal_pad(h, K - 1), P[bp.conv5_w], P[bp.conv5_b]);
  return leaky_relu(layer_norm(h, P[bp.conv5_gamma], P[bp.conv5_beta]), slope);
}

template <typename Scalar>
auto spatial_attention_forward(Var<Scalar> ctx, Model<Scalar> &model, Index block) -> Var<Scalar>
{
  auto const &bp = model.blocks.at(block);
  return spatial_attention(ctx, model.params[bp.attention_w], model.params[bp.attention_b]);
}

template <typename Scalar>
auto block_forward(Var<Scalar>                eeg,
                   std::optional<Var<Scalar>> prev_ctx,
                   std::optional<Var<Scalar>> prev_att,
                   Model<Scalar>             &model,
                   Index                      block) -> std::pair<Var<Scalar>, Var<Scalar>>
{
  auto const &bp = model.blocks.at(block);
  auto       &P = model.params;
  auto const &cfg = model.config;

  Var<Scalar> input = eeg;
  if (prev_ctx || prev_att) {
    if (!prev_ctx || !prev_att) { throw UsageError("block_forward needs both previous ctx and att, or neither"); }
    if (prev_ctx->time() != eeg.time() || prev_att->time() != eeg.time()) {
      throw ShapeError(fmt::format("block {}: previous outputs have time {} / {}, eeg has {}",
                                   block, prev_ctx->time(), prev_att->time(), eeg.time()));
    }
    input = concat_channels({eeg, *prev_ctx, *prev_att});
  }

  auto h = cnn_stack_forward(input, model, block);
  h = linear_per_timestep(h, P[bp.linear_w], P[bp.linear_b]);

  auto ctx = temporal_conv(causal_pad(h, cfg.context_kernel - 1), P[bp.context_w], P[bp.context_b]);
  ctx = layer_norm(leaky_relu(ctx, Scalar(cfg.leaky_slope)), P[bp.context_gamma], P[bp.context_beta]);

  auto att = cfg.attention_enabled ? spatial_attention_forward(ctx, model, block) : ctx;
  return {ctx, att};
}

template <typename Scalar> auto model_forward(Var<Scalar> eeg, Model<Scalar> &model) -> Var<Scalar>
{
  auto const &cfg = model.config;
  if (eeg.channels() != cfg.eeg_channels) {
    throw ShapeError(fmt::format("model expects {} eeg channels, got {}", cfg.eeg_channels, eeg.channels()));
  }
  std::optional<Var<Scalar>> ctx, att;
  for (Index blk = 0; blk < cfg.num_blocks; ++blk) {
    auto [c, a] = block_forward(eeg, ctx, att, model, blk);
    ctx = c;
    att = a;
  }
  auto features = cfg.head_input == HeadInput::ContextOnly ? *ctx : concat_channels({eeg, *ctx, *att});
  return pointwise_conv(features, model.params[model.head_w], model.params[model.head_b]);
}

template <typename Scalar> auto predict(Model<Scalar> &model, Tensor3<Scalar> const &eeg) -> Tensor3<Scalar>
{
  Graph<Scalar> g(false);
  return model_forward(g.input(eeg), model).value();
}

#define CCN_INSTANTIATE(S)                                                                                             \
  template auto build_model<S>(ModelConfig const &, std::uint64_t) -> Model<S>;                                        \
  template auto cnn_stack_forward(Var<S>, Model<S> &, Index) -> Var<S>;                                                \
  template auto spatial_attention_forward(Var<S>, Model<S> &, Index) -> Var<S>;                                        \
  template auto block_forward(Var<S>, std::optional<Var<S>>, std::optional<Var<S>>, Model<S> &, Index)                 \
    -> std::pair<Var<S>, Var<S>>;                                                                                      \
  template auto model_forward(Var<S>, Model<S> &) -> Var<S>;                                                           \
  template auto predict(Model<S> &, Tensor3<S> const &) -> Tensor3<S>;

CCN_INSTANTIATE(float)
CCN_INSTANTIATE(double)

#undef CCN_INSTANTIATE

} // namespace ccn
