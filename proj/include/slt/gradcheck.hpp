#pragma once

// Central finite-difference gradient verification.  The loss closure is run
// once with the tape to collect analytic gradients, then every checked
// element is perturbed +/-h with gradients disabled.  Relative error uses
// max(|analytic|,|numeric|) as denominator, falling back to absolute error
// for near-zero pairs.

#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "module.hpp"
#include "tensor.hpp"

namespace slt {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  std::string worst_name;
  int64_t elements_checked = 0;

  bool pass(double tol) const { return worst < tol; }
};

namespace detail {
// Relative error with a floor on the denominator.  The floor absorbs the
// finite-difference noise floor (~eps*|loss|/h in gradient units): gradients
// below it are compared on that absolute scale instead of blowing up the
// ratio, while genuinely wrong small gradients still register far above any
// sane tolerance.
inline double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}
}  // namespace detail

// `loss` must rebuild its graph from the current parameter values on every
// call.  `stride` > 1 checks every stride-th element of each parameter;
// stride 1 checks all of them.
template <typename S>
GradCheckReport grad_check(const std::function<Tensor<S>()>& loss,
                           ParamStore<S>& params, double h = 1e-5,
                           int64_t stride = 1, bool verbose = false) {
  check(stride >= 1, "grad_check: stride must be >= 1");
  // Determinism guard: the closure must give bit-identical losses.
  double l0, l1;
  {
    NoGradGuard ng;
    l0 = static_cast<double>(loss().item());
    l1 = static_cast<double>(loss().item());
  }
  check(l0 == l1, "grad_check: loss is not deterministic (", l0, " vs ", l1,
        ")");
  double eps = static_cast<double>(std::numeric_limits<S>::epsilon());
  // The multiplier budgets a few ulps of cancellation noise per loss
  // evaluation plus a max over many checked elements; measured noise on
  // structurally-zero gradients sits ~1e1 ulps, so 1e6 keeps noise-on-zero
  // entries around 1e-6 of the floor.
  double floor = std::max(1e-6, 1e6 * eps * std::max(1.0, std::abs(l0)) / h);

  params.zero_grads();
  Tensor<S> l = loss();
  check(l.numel() == 1, "grad_check: loss must be scalar");
  l.backward();

  std::vector<std::vector<S>> analytic(params.size());
  for (size_t i = 0; i < params.size(); ++i) analytic[i] = params.param(i).grad();

  GradCheckReport report;
  NoGradGuard ng;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<S> p = params.param(i);
    GradCheckEntry e;
    e.name = params.name(i);
    for (int64_t j = 0; j < p.numel(); j += stride) {
      auto uj = static_cast<size_t>(j);
      S saved = p.data()[uj];
      p.data()[uj] = saved + static_cast<S>(h);
      double lp = static_cast<double>(loss().item());
      p.data()[uj] = saved - static_cast<S>(h);
      double lm = static_cast<double>(loss().item());
      p.data()[uj] = saved;
      double num = (lp - lm) / (2.0 * h);
      double ana = static_cast<double>(analytic[i][uj]);
      double re = detail::rel_err(ana, num, floor);
      ++report.elements_checked;
      if (re > e.max_rel_err) {
        e.max_rel_err = re;
        e.worst_index = j;
        e.analytic = ana;
        e.numeric = num;
      }
    }
    if (verbose)
      std::printf("  %-48s max_rel_err %.3e\n", e.name.c_str(), e.max_rel_err);
    if (e.max_rel_err > report.worst) {
      report.worst = e.max_rel_err;
      report.worst_name = e.name;
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace slt
