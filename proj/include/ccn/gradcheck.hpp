#pragma once

#include "autodiff.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ccn {

struct GradReport
{
  std::string op_name;
  double      max_rel_error = 0.0;
  double      tolerance = 0.0;
  bool        passed = false;
  Index       checked = 0; // number of scalar partials compared
  Index       cases = 0;
};

/*
 * One finite-difference experiment: a scalar function of `inputs` and
 * `params`, expressed on a Graph<double>.
 */
struct GradCase
{
  using Builder = std::function<Var<double>(Graph<double> &, std::span<Var<double> const>, ParameterSet<double> &)>;

  std::string                           op_name;
  std::vector<Tensor3<double>>          inputs;
  std::shared_ptr<ParameterSet<double>> params; // may alias a parameter set owned elsewhere
  Builder                               build;
};

// Denominator floors for the relative error: an absolute one, and one relative to
// the largest analytic partial of the case.
inline constexpr double relative_error_floor = 1e-8;
inline constexpr double relative_error_scale_floor = 1e-5;

/*
 * Compares reverse-mode gradients against central differences
 * (f(x+h) - f(x-h)) / 2h for every input and parameter entry. Relative error
 * uses max(|analytic|, |numeric|, relative_error_floor,
 * relative_error_scale_floor * max |analytic|) as denominator. `corrupt` scales the
 * analytic gradient before comparison and exists to prove the checker fires.
 */
auto grad_check(GradCase &c, double h = 1e-5, double tol = 1e-4, double corrupt = 1.0) -> GradReport;

// Names of every differentiable op the suite must cover.
auto differentiable_ops() -> std::vector<std::string> const &;

// Random cases for one op; throws ConfigError for an unknown name.
auto make_grad_cases(std::string const &op, int count, std::uint64_t seed) -> std::vector<GradCase>;

struct SuiteOptions
{
  int           cases_per_op = 20;
  std::uint64_t seed = 2024;
  double        h = 1e-5;
  double        tol = 1e-4;
  std::string   corrupt_op; // analytic gradients of this op are scaled by 1.01
};

// Worst-case report per op, in differentiable_ops() order plus the composite model case.
auto run_grad_suite(SuiteOptions const &opt) -> std::vector<GradReport>;

} // namespace ccn
