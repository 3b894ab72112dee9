#include "ccn/gradcheck.hpp"
#include "ccn/io.hpp"
#include "ccn/model.hpp"
#include "ccn/random.hpp"
#include "ccn/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace ccn {

namespace {

auto evaluate_case(GradCase const &c, std::vector<Tensor3<double>> const &inputs) -> double
{
  Graph<double>            g(false);
  std::vector<Var<double>> vars;
  for (auto const &t : inputs) { vars.push_back(g.input(t)); }
  auto out = c.build(g, vars, *c.params);
  return out.value()(0, 0, 0);
}

auto relative_error(double analytic, double numeric, double floor) -> double
{
  double const denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

} // namespace

auto grad_check(GradCase &c, double h, double tol, double corrupt) -> GradReport
{
  if (!c.params) { c.params = std::make_shared<ParameterSet<double>>(); }
  auto &params = *c.params;

  // Analytic pass.
  std::vector<Tensor3<double>> input_grads;
  {
    Graph<double>            g;
    std::vector<Var<double>> vars;
    for (auto const &t : c.inputs) { vars.push_back(g.input(t)); }
    auto out = c.build(g, vars, params);
    g.backward(out, params);
    for (auto const &v : vars) { input_grads.push_back(g.grad(v)); }
  }
  std::vector<Matrix<double>> param_grads;
  for (auto const &p : params) { param_grads.push_back(p.grad); }

  // Partials far below the case's largest one are dominated by rounding in f(x +- h).
  double g_max = 0.0;
  for (auto const &g : input_grads) { g_max = std::max(g_max, g.values().cwiseAbs().maxCoeff()); }
  for (auto const &g : param_grads) {
    if (g.size() > 0) { g_max = std::max(g_max, g.cwiseAbs().maxCoeff()); }
  }
  double const floor = std::max(relative_error_floor, relative_error_scale_floor * g_max);

  GradReport report;
  report.op_name = c.op_name;
  report.tolerance = tol;

  auto inputs = c.inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto &vals = inputs[k].values();
    for (Index i = 0; i < vals.size(); ++i) {
      double const orig = vals.data()[i];
      vals.data()[i] = orig + h;
      double const up = evaluate_case(c, inputs);
      vals.data()[i] = orig - h;
      double const down = evaluate_case(c, inputs);
      vals.data()[i] = orig;
      double const numeric = (up - down) / (2 * h);
      double const analytic = corrupt * input_grads[k].values().data()[i];
      report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric, floor));
      report.checked += 1;
    }
  }
  std::size_t pi = 0;
  for (auto &p : params) {
    for (Index i = 0; i < p.value.size(); ++i) {
      double const orig = p.value.data()[i];
      p.value.data()[i] = orig + h;
      double const up = evaluate_case(c, c.inputs);
      p.value.data()[i] = orig - h;
      double const down = evaluate_case(c, c.inputs);
      p.value.data()[i] = orig;
      double const numeric = (up - down) / (2 * h);
      double const analytic = corrupt * param_grads[pi].data()[i];
      report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic, numeric, floor));
      report.checked += 1;
    }
    ++pi;
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

auto differentiable_ops() -> std::vector<std::string> const &
{
  static std::vector<std::string> const ops{
    "pointwise_conv", "linear_per_timestep", "depthwise_temporal_conv", "temporal_conv", "layer_norm",
    "leaky_relu",     "causal_pad",          "concat_channels",         "slice_channels", "spatial_attention",
    "sum",            "weighted_sum",        "pearson_loss",
  };
  return ops;
}

namespace {

auto random_tensor(Rng &rng, Index B, Index C, Index T, double lo = -1.0, double hi = 1.0) -> Tensor3<double>
{
  Tensor3<double> t(B, C, T);
  for (Index i = 0; i < t.size(); ++i) { t.data()[i] = rng.uniform(lo, hi); }
  return t;
}

// Values in [0.05, 1] with random sign, away from the leaky-relu kink.
auto kink_free_tensor(Rng &rng, Index B, Index C, Index T) -> Tensor3<double>
{
  Tensor3<double> t(B, C, T);
  for (Index i = 0; i < t.size(); ++i) {
    double const mag = rng.uniform(0.05, 1.0);
    t.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  return t;
}

auto add_random(ParameterSet<double> &ps, std::string name, std::vector<Index> shape, Rng &rng) -> ParamId
{
  auto id = ps.add(std::move(name), std::move(shape));
  auto &v = ps[id].value;
  for (Index i = 0; i < v.size(); ++i) { v.data()[i] = rng.uniform(-1.0, 1.0); }
  return id;
}

auto dim(Rng &rng, Index lo, Index hi) -> Index { return lo + static_cast<Index>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

// Projects a tensor-valued op onto a scalar with fixed random weights.
auto readout(Var<double> y, Tensor3<double> const &w) -> Var<double> { return weighted_sum(y, w); }

auto make_case(std::string const &op, Rng &rng) -> GradCase
{
  GradCase c;
  c.op_name = op;
  c.params = std::make_shared<ParameterSet<double>>();
  auto &ps = *c.params;

  Index const B = dim(rng, 1, 3);
  if (op == "pointwise_conv" || op == "linear_per_timestep") {
    Index const Ci = dim(rng, 1, 5), Co = dim(rng, 1, 5), T = dim(rng, 1, 7);
    c.inputs = {random_tensor(rng, B, Ci, T)};
    auto w = add_random(ps, "w", {Co, Ci}, rng);
    auto b = add_random(ps, "b", {Co}, rng);
    auto R = random_tensor(rng, B, Co, T);
    bool const linear = op == "linear_per_timestep";
    c.build = [w, b, R, linear](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &p) {
      auto y = linear ? linear_per_timestep(in[0], p[w], p[b]) : pointwise_conv(in[0], p[w], p[b]);
      return readout(y, R);
    };
  } else if (op == "depthwise_temporal_conv") {
    Index const C = dim(rng, 1, 5), K = dim(rng, 1, 4), T = K + dim(rng, 0, 5);
    c.inputs = {random_tensor(rng, B, C, T)};
    auto w = add_random(ps, "w", {C, K}, rng);
    auto b = add_random(ps, "b", {C}, rng);
    auto R = random_tensor(rng, B, C, T - K + 1);
    c.build = [w, b, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &p) {
      return readout(depthwise_temporal_conv(in[0], p[w], p[b]), R);
    };
  } else if (op == "temporal_conv") {
    Index const Ci = dim(rng, 1, 4), Co = dim(rng, 1, 4), K = dim(rng, 1, 4), T = K + dim(rng, 0, 5);
    c.inputs = {random_tensor(rng, B, Ci, T)};
    auto w = add_random(ps, "w", {Co, Ci, K}, rng);
    auto b = add_random(ps, "b", {Co}, rng);
    auto R = random_tensor(rng, B, Co, T - K + 1);
    c.build = [w, b, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &p) {
      return readout(temporal_conv(in[0], p[w], p[b]), R);
    };
  } else if (op == "layer_norm") {
    Index const C = dim(rng, 2, 6), T = dim(rng, 1, 6);
    c.inputs = {random_tensor(rng, B, C, T)};
    auto g = add_random(ps, "gamma", {C}, rng);
    auto b = add_random(ps, "beta", {C}, rng);
    auto R = random_tensor(rng, B, C, T);
    c.build = [g, b, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &p) {
      return readout(layer_norm(in[0], p[g], p[b]), R);
    };
  } else if (op == "leaky_relu") {
    Index const C = dim(rng, 1, 5), T = dim(rng, 1, 6);
    double const slope = rng.uniform(0.01, 0.5);
    c.inputs = {kink_free_tensor(rng, B, C, T)};
    auto R = random_tensor(rng, B, C, T);
    c.build = [slope, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return readout(leaky_relu(in[0], slope), R);
    };
  } else if (op == "causal_pad") {
    Index const C = dim(rng, 1, 4), T = dim(rng, 1, 6), amount = dim(rng, 0, 4);
    c.inputs = {random_tensor(rng, B, C, T)};
    auto R = random_tensor(rng, B, C, T + amount);
    c.build = [amount, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return readout(causal_pad(in[0], amount), R);
    };
  } else if (op == "concat_channels") {
    Index const T = dim(rng, 1, 6), parts = dim(rng, 1, 3);
    Index       C = 0;
    for (Index i = 0; i < parts; ++i) {
      Index const Ci = dim(rng, 1, 4);
      c.inputs.push_back(random_tensor(rng, B, Ci, T));
      C += Ci;
    }
    auto R = random_tensor(rng, B, C, T);
    c.build = [R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return readout(concat_channels(in), R);
    };
  } else if (op == "slice_channels") {
    Index const C = dim(rng, 1, 6), T = dim(rng, 1, 6);
    Index const first = dim(rng, 0, C - 1), count = dim(rng, 1, C - first);
    c.inputs = {random_tensor(rng, B, C, T)};
    auto R = random_tensor(rng, B, count, T);
    c.build = [first, count, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return readout(slice_channels(in[0], first, count), R);
    };
  } else if (op == "spatial_attention") {
    Index const H = dim(rng, 1, 6), T = dim(rng, 1, 6);
    c.inputs = {random_tensor(rng, B, H, T)};
    auto w = add_random(ps, "w", {H, H}, rng);
    auto b = add_random(ps, "b", {H}, rng);
    auto R = random_tensor(rng, B, H, T);
    c.build = [w, b, R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &p) {
      return readout(spatial_attention(in[0], p[w], p[b]), R);
    };
  } else if (op == "sum") {
    Index const C = dim(rng, 1, 5), T = dim(rng, 1, 6);
    c.inputs = {random_tensor(rng, B, C, T)};
    c.build = [](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) { return sum(in[0]); };
  } else if (op == "weighted_sum") {
    Index const C = dim(rng, 1, 5), T = dim(rng, 1, 6);
    c.inputs = {random_tensor(rng, B, C, T)};
    auto R = random_tensor(rng, B, C, T);
    c.build = [R](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return weighted_sum(in[0], R);
    };
  } else if (op == "pearson_loss") {
    Index const S = dim(rng, 1, 4), T = dim(rng, 3, 10);
    c.inputs = {random_tensor(rng, B, S, T)};
    auto target = random_tensor(rng, B, S, T);
    c.build = [target](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return pearson_loss(in[0], target);
    };
  } else if (op == "model_forward") {
    // Whole network on a toy configuration, driven through the training loss.
    ModelConfig cfg;
    cfg.num_blocks = dim(rng, 1, 2);
    cfg.eeg_channels = dim(rng, 2, 3);
    // Layer norm over one or two channels is nearly constant, so widths start at 3.
    cfg.stack_filters = {dim(rng, 3, 4), dim(rng, 3, 4), dim(rng, 3, 4), dim(rng, 3, 4), dim(rng, 3, 4)};
    cfg.stack_kernel = dim(rng, 1, 3);
    cfg.hidden_width = dim(rng, 3, 4);
    cfg.context_kernel = dim(rng, 1, 3);
    cfg.output_subbands = 11;
    auto        model = std::make_shared<Model<double>>(build_model<double>(cfg, rng.bits()));
    // Layer-norm affines start at 1 / 0; perturb them so their gradients are generic.
    for (auto &p : model->params) {
      if (p.name.ends_with(".gamma") || p.name.ends_with(".beta")) {
        for (Index i = 0; i < p.value.size(); ++i) { p.value.data()[i] += rng.uniform(-0.3, 0.3); }
      }
    }
    Index const T = dim(rng, 3, 6);
    c.inputs = {random_tensor(rng, 1, cfg.eeg_channels, T)};
    auto target = random_tensor(rng, 1, cfg.output_subbands, T);
    c.params = std::shared_ptr<ParameterSet<double>>(model, &model->params);
    c.build = [model, target](Graph<double> &, std::span<Var<double> const> in, ParameterSet<double> &) {
      return pearson_loss(model_forward(in[0], *model), target);
    };
  } else {
    throw ConfigError("no gradient case generator for op '" + op + "'");
  }
  return c;
}

} // namespace

auto make_grad_cases(std::string const &op, int count, std::uint64_t seed) -> std::vector<GradCase>
{
  Rng                   rng(mix_seed(seed, io::fnv1a64(op)));
  std::vector<GradCase> out;
  for (int i = 0; i < count; ++i) { out.push_back(make_case(op, rng)); }
  return out;
}

auto run_grad_suite(SuiteOptions const &opt) -> std::vector<GradReport>
{
  auto names = differentiable_ops();
  names.push_back("model_forward");
  std::vector<GradReport> reports;
  for (auto const &op : names) {
    int const  count = opt.cases_per_op;
    auto       cases = make_grad_cases(op, count, opt.seed);
    GradReport worst{op, 0.0, opt.tol, true, 0, static_cast<Index>(cases.size())};
    for (auto &c : cases) {
      auto const r = grad_check(c, opt.h, opt.tol, op == opt.corrupt_op ? 1.01 : 1.0);
      worst.max_rel_error = std::max(worst.max_rel_error, r.max_rel_error);
      worst.checked += r.checked;
    }
    worst.passed = worst.max_rel_error <= opt.tol;
    reports.push_back(worst);
  }
  return reports;
}

} // namespace ccn
