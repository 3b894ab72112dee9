#include "ccn/training.hpp"
#include "ccn/random.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <limits>
#include <numeric>

namespace ccn {

template <typename T> auto pearson(std::span<T const> x, std::span<T const> y) -> double
{
  if (x.size() != y.size()) { throw ShapeError(fmt::format("pearson: lengths {} and {} differ", x.size(), y.size())); }
  if (x.size() < 2) { throw ShapeError("pearson: need at least two samples"); }
  auto const n = static_cast<double>(x.size());
  double     mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += static_cast<double>(x[i]);
    my += static_cast<double>(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double const dx = static_cast<double>(x[i]) - mx;
    double const dy = static_cast<double>(y[i]) - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx / n < constant_variance || syy / n < constant_variance) { return 0.0; }
  return sxy / std::sqrt(sxx * syy);
}

template <typename Scalar> auto pearson_loss(Var<Scalar> pred, Tensor3<Scalar> const &target) -> Var<Scalar>
{
  auto const &p = pred.value();
  if (!p.same_shape(target)) {
    throw ShapeError("pearson_loss: prediction " + p.shape_string() + " vs target " + target.shape_string());
  }
  if (p.time() < 2) { throw ShapeError("pearson_loss: need at least two time samples"); }
  Index const rows = p.values().rows();
  Index const T = p.time();
  double const n = static_cast<double>(T);

  // Per-row gradient of r w.r.t. the prediction, in double.
  Eigen::MatrixXd dr(rows, T);
  double          total = 0.0;
  for (Index r = 0; r < rows; ++r) {
    Eigen::RowVectorXd const x = p.values().row(r).template cast<double>();
    Eigen::RowVectorXd const y = target.values().row(r).template cast<double>();
    Eigen::RowVectorXd const xc = x.array() - x.mean();
    Eigen::RowVectorXd const yc = y.array() - y.mean();
    double const             sxx = xc.squaredNorm();
    double const             syy = yc.squaredNorm();
    if (sxx / n < constant_variance || syy / n < constant_variance) {
      dr.row(r).setZero();
      continue;
    }
    double const sxy = xc.dot(yc);
    double const d = std::sqrt(sxx * syy + pearson_eps);
    total += sxy / d;
    dr.row(r) = yc / d - (sxy * syy / (d * d * d)) * xc;
  }
  double const scale = -1.0 / static_cast<double>(rows);
  auto         out = Tensor3<Scalar>::constant(1, 1, 1, Scalar(scale * total));
  return pred.graph->record(std::move(out), [pred, dr = std::move(dr), scale](Graph<Scalar> &g, Tensor3<Scalar> const &dy) {
    g.grad_buffer(pred.id).values() += (double(dy(0, 0, 0)) * scale * dr).template cast<Scalar>();
  });
}

void AdamHyper::validate() const
{
  if (!(lr > 0.0)) { throw ConfigError("adam: lr must be > 0"); }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) { throw ConfigError("adam: beta1 must lie in [0, 1)"); }
  if (!(beta2 >= 0.0 && beta2 < 1.0)) { throw ConfigError("adam: beta2 must lie in [0, 1)"); }
  if (!(eps >= 0.0)) { throw ConfigError("adam: eps must be >= 0"); }
}

template <typename Scalar> void adam_step(ParameterSet<Scalar> &params, AdamHyper &hyper)
{
  if (!params.grads_ready()) { throw UsageError("adam_step called before any backward pass"); }
  hyper.validate();
  hyper.step_count += 1;
  auto const   t = static_cast<double>(hyper.step_count);
  Scalar const b1 = Scalar(hyper.beta1);
  Scalar const b2 = Scalar(hyper.beta2);
  Scalar const c1 = Scalar(1.0 - std::pow(hyper.beta1, t));
  Scalar const c2 = Scalar(1.0 - std::pow(hyper.beta2, t));
  Scalar const lr = Scalar(hyper.lr);
  Scalar const eps = Scalar(hyper.eps);
  for (auto &p : params) {
    auto g = p.grad.array();
    p.adam_m.array() = b1 * p.adam_m.array() + (Scalar(1) - b1) * g;
    p.adam_v.array() = b2 * p.adam_v.array() + (Scalar(1) - b2) * g.square();
    p.value.array() -= lr * (p.adam_m.array() / c1) / ((p.adam_v.array() / c2).sqrt() + eps);
  }
}

void TrainSpec::validate(ModelConfig const &config) const
{
  auto check = [](bool ok, std::string const &msg) {
    if (!ok) { throw ConfigError("train spec: " + msg); }
  };
  check(window_len >= config.context_kernel, fmt::format("window_len {} shorter than context kernel {}", window_len,
                                                         config.context_kernel));
  check(window_len >= 2, "window_len must be >= 2");
  check(window_hop >= 1, "window_hop must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(max_epochs >= 1, "max_epochs must be >= 1");
  check(patience >= 1, "patience must be >= 1");
  check(max_steps >= 0, "max_steps must be >= 0");
  check(precision == 32 || precision == 64, "precision must be 32 or 64");
  Index const rows = envelope_target ? fused_subbands : mel_subbands;
  check(config.output_subbands == rows, fmt::format("model emits {} subbands but the {} target has {}",
                                                    config.output_subbands,
                                                    envelope_target ? "envelope+mel" : "mel-only", rows));
  adam.validate();
}

void to_json(nlohmann::json &j, TrainSpec const &s)
{
  j = nlohmann::json{{"window_len", s.window_len},   {"window_hop", s.window_hop}, {"batch_size", s.batch_size},
                     {"max_epochs", s.max_epochs},   {"patience", s.patience},     {"max_steps", s.max_steps},
                     {"seed", s.seed},               {"precision", s.precision},   {"envelope_target", s.envelope_target},
                     {"lr", s.adam.lr},              {"beta1", s.adam.beta1},      {"beta2", s.adam.beta2},
                     {"eps", s.adam.eps}};
}

void from_json(nlohmann::json const &j, TrainSpec &s)
{
  TrainSpec const d;
  s.window_len = j.value("window_len", d.window_len);
  s.window_hop = j.value("window_hop", d.window_hop);
  s.batch_size = j.value("batch_size", d.batch_size);
  s.max_epochs = j.value("max_epochs", d.max_epochs);
  s.patience = j.value("patience", d.patience);
  s.max_steps = j.value("max_steps", d.max_steps);
  s.seed = j.value("seed", d.seed);
  s.precision = j.value("precision", d.precision);
  s.envelope_target = j.value("envelope_target", d.envelope_target);
  s.adam.lr = j.value("lr", d.adam.lr);
  s.adam.beta1 = j.value("beta1", d.adam.beta1);
  s.adam.beta2 = j.value("beta2", d.adam.beta2);
  s.adam.eps = j.value("eps", d.adam.eps);
}

template <typename Scalar>
auto gather_eeg(std::span<WindowPair const> windows, std::span<Index const> indices) -> Tensor3<Scalar>
{
  if (indices.empty()) { throw ShapeError("gather_eeg: empty batch"); }
  auto const     &first = windows[indices.front()].eeg;
  Tensor3<Scalar> out(static_cast<Index>(indices.size()), first.rows(), first.cols());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto const &w = windows[indices[b]].eeg;
    if (w.rows() != first.rows() || w.cols() != first.cols()) { throw ShapeError("gather_eeg: ragged windows"); }
    out.item(static_cast<Index>(b)) = w.template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
auto gather_targets(std::span<WindowPair const> windows, std::span<Index const> indices, bool envelope_target)
  -> Tensor3<Scalar>
{
  if (indices.empty()) { throw ShapeError("gather_targets: empty batch"); }
  Index const     rows = envelope_target ? fused_subbands : mel_subbands;
  Index const     len = windows[indices.front()].target.cols();
  Tensor3<Scalar> out(static_cast<Index>(indices.size()), rows, len);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    auto const &t = windows[indices[b]].target;
    if (t.cols() != len || t.rows() != fused_subbands) { throw ShapeError("gather_targets: ragged windows"); }
    out.item(static_cast<Index>(b)) = t.bottomRows(rows).template cast<Scalar>();
  }
  return out;
}

template <typename Scalar>
auto validation_score(Model<Scalar> &model, std::span<WindowPair const> windows, Index batch_size) -> double
{
  if (windows.empty()) { throw ConfigError("validation_score: no windows"); }
  double             total = 0.0;
  std::vector<Index> idx;
  for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(batch_size)) {
    idx.clear();
    for (std::size_t i = start; i < std::min(windows.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      idx.push_back(static_cast<Index>(i));
    }
    auto const  eeg = gather_eeg<Scalar>(windows, idx);
    auto const  pred = predict(model, eeg);
    Index const S = pred.channels();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto const &target = windows[idx[b]].target;
      double      window_sum = 0.0;
      for (Index s = 0; s < mel_subbands; ++s) {
        Eigen::RowVectorXd const pr = pred.item(static_cast<Index>(b)).row(S - mel_subbands + s).template cast<double>();
        Eigen::RowVectorXd const tr = target.row(fused_subbands - mel_subbands + s).template cast<double>();
        window_sum += pearson<double>(std::span(pr.data(), pr.size()), std::span(tr.data(), tr.size()));
      }
      total += window_sum / static_cast<double>(mel_subbands);
    }
  }
  return total / static_cast<double>(windows.size());
}

template <typename Scalar>
auto train(Model<Scalar>              &model,
           std::span<WindowPair const> train_windows,
           std::span<WindowPair const> val_windows,
           TrainSpec const            &spec,
           TrainHooks const           &hooks) -> TrainResult
{
  spec.validate(model.config);
  if (train_windows.empty()) { throw ConfigError("train: empty training split"); }
  if (val_windows.empty()) { throw ConfigError("train: empty validation split"); }
  for (auto const *set : {&train_windows, &val_windows}) {
    for (auto const &w : *set) {
      if (w.eeg.cols() != spec.window_len || w.target.cols() != spec.window_len) {
        throw ShapeError(fmt::format("train: window of length {} but window_len is {}", w.eeg.cols(), spec.window_len));
      }
    }
  }

  Index const n = static_cast<Index>(train_windows.size());
  Index const batch = std::min(spec.batch_size, n);
  Index const batches_per_epoch = n / batch;

  Rng                shuffle_rng(mix_seed(spec.seed, 0x5eed));
  std::vector<Index> order(static_cast<std::size_t>(n));
  AdamHyper          adam = spec.adam;
  adam.step_count = 0;

  TrainResult result;
  double      best = -std::numeric_limits<double>::infinity();
  auto        best_values = model.params.snapshot();
  Index       since_improvement = 0;
  bool        step_limit_hit = false;

  for (Index epoch = 1; epoch <= spec.max_epochs && !step_limit_hit; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = n - 1; i > 0; --i) {
      auto const j = static_cast<Index>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[i], order[j]);
    }

    double loss_sum = 0.0;
    Index  loss_count = 0;
    for (Index bi = 0; bi < batches_per_epoch; ++bi) {
      std::span<Index const> idx(order.data() + bi * batch, static_cast<std::size_t>(batch));
      auto const             eeg = gather_eeg<Scalar>(train_windows, idx);
      auto const             target = gather_targets<Scalar>(train_windows, idx, spec.envelope_target);

      Graph<Scalar> g;
      auto          loss = pearson_loss(model_forward(g.input(eeg), model), target);
      double const  value = static_cast<double>(loss.value()(0, 0, 0));
      if (!std::isfinite(value)) {
        throw std::runtime_error(fmt::format("non-finite training loss at epoch {} step {}", epoch, result.steps + 1));
      }
      g.backward(loss, model.params);
      adam_step(model.params, adam);
      result.steps += 1;
      loss_sum += value;
      loss_count += 1;
      if (spec.max_steps > 0 && result.steps >= spec.max_steps) {
        step_limit_hit = true;
        break;
      }
    }

    double score = validation_score(model, val_windows, spec.batch_size);
    if (hooks.score_override) { score = hooks.score_override(epoch, score); }

    EpochLog log;
    log.epoch = epoch;
    log.steps = result.steps;
    log.train_loss = loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0;
    log.val_score = score;
    log.improved = score > best;
    if (log.improved) {
      best = score;
      best_values = model.params.snapshot();
      result.meta.epoch = epoch;
      result.meta.val_score = score;
      since_improvement = 0;
    } else {
      since_improvement += 1;
    }
    result.history.push_back(log);
    result.epochs_run = epoch;
    if (hooks.on_epoch) { hooks.on_epoch(log); }
    if (since_improvement >= spec.patience) { break; }
  }

  model.params.restore(best_values);
  result.meta.seed = spec.seed;
  return result;
}

template <typename Scalar>
auto train(Model<Scalar>                   &model,
           std::span<RecordingSample const> dataset,
           FoldSpec const                  &fold,
           TrainSpec const                 &spec,
           TrainHooks const                &hooks) -> TrainResult
{
  auto const train_windows = select_windows(dataset, fold, Split::Train, spec.window_len, spec.window_hop);
  auto const val_windows = select_windows(dataset, fold, Split::Validation, spec.window_len, spec.window_hop);
  auto       result = train(model, std::span<WindowPair const>(train_windows), std::span<WindowPair const>(val_windows),
                            spec, hooks);
  result.meta.fold_id = fold.fold_id;
  return result;
}

template auto pearson<float>(std::span<float const>, std::span<float const>) -> double;
template auto pearson<double>(std::span<double const>, std::span<double const>) -> double;

#define CCN_INSTANTIATE(S)                                                                                             \
  template auto pearson_loss(Var<S>, Tensor3<S> const &) -> Var<S>;                                                    \
  template void adam_step(ParameterSet<S> &, AdamHyper &);                                                             \
  template auto gather_eeg<S>(std::span<WindowPair const>, std::span<Index const>) -> Tensor3<S>;                      \
  template auto gather_targets<S>(std::span<WindowPair const>, std::span<Index const>, bool) -> Tensor3<S>;            \
  template auto validation_score(Model<S> &, std::span<WindowPair const>, Index) -> double;                            \
  template auto train(Model<S> &, std::span<WindowPair const>, std::span<WindowPair const>, TrainSpec const &,         \
                      TrainHooks const &) -> TrainResult;                                                              \
  template auto train(Model<S> &, std::span<RecordingSample const>, FoldSpec const &, TrainSpec const &,               \
                      TrainHooks const &) -> TrainResult;

CCN_INSTANTIATE(float)
CCN_INSTANTIATE(double)

#undef CCN_INSTANTIATE

} // namespace ccn
