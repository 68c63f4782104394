#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bevssl/param_set.hpp"

namespace bevssl {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t flagged = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Scalar objective of the bound parameters.
using Objective = std::function<Tensor(const Bindings&)>;

// |a - n| / max(|a|, |n|, floor). The floor keeps the measure meaningful for
// entries whose true gradient is zero.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients with central differences
// (f(theta + eps e) - f(theta - eps e)) / (2 eps) on every element.
inline GradCheckReport finite_difference_check(const Objective& f, ParamSet params, double eps, double tol) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");
  {
    Tape tape;
    Tensor loss = f(params.bind(&tape));
    if (loss.tape()) {
      backward(loss, params);
    } else {
      params.zero_grad();
    }
  }
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = params[pi];
    GradCheckEntry e;
    e.name = p.name;
    const Tensor original = p.value;
    std::vector<double> buf(original.values().begin(), original.values().end());
    for (std::size_t i = 0; i < buf.size(); ++i) {
      const double x0 = buf[i];
      buf[i] = x0 + eps;
      p.value = Tensor(original.shape(), buf);
      const double fp = f(params.bind(nullptr)).item();
      buf[i] = x0 - eps;
      p.value = Tensor(original.shape(), buf);
      const double fm = f(params.bind(nullptr)).item();
      buf[i] = x0;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = relative_error(p.grad[i], numeric);
      if (err > tol) ++e.flagged;
      if (i == 0 || err > e.max_rel_error) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = p.grad[i];
        e.numeric = numeric;
      }
    }
    p.value = original;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    if (e.flagged) report.passed = false;
    report.params.push_back(std::move(e));
  }
  return report;
}

}  // namespace bevssl
