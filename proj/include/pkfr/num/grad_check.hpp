#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "pkfr/num/graph.hpp"

namespace pkfr::num {

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::string failure;  // set when f was non-finite at a perturbed point
};

struct GradCheckOptions {
  double step = 1e-3;
  double tol = 1e-6;
  /// Relative errors are taken against max(|analytic|, |numeric|, floor).
  double floor = 1e-6;
  std::size_t max_coords = 10000;
  std::uint64_t seed = 0;
  /// Five-point central stencil (O(h^4) truncation) instead of three-point.
  bool five_point = true;
};

/// Compares backward() against central finite differences, coordinate by
/// coordinate. f must rebuild its graph from the current parameter values on
/// every call and be deterministic. Above max_coords total coordinates a
/// seeded subset is checked.
inline GradCheckReport grad_check(const std::function<Var<double>()>& f,
                                  std::vector<Var<double>> params, GradCheckOptions opt = {}) {
  GradCheckReport rep;
  for (auto& p : params) {
    if (!p.is_leaf()) throw ContractError("grad_check: parameters must be leaf nodes");
  }
  const Var<double> loss = f();
  const Gradients<double> grads = backward(loss);
  std::vector<Array<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(grads.of(p));

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t pi = 0; pi < params.size(); ++pi)
    for (std::size_t i = 0; i < params[pi].value().size(); ++i) coords.emplace_back(pi, i);
  if (coords.size() > opt.max_coords) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(opt.max_coords);
  }

  for (auto [pi, i] : coords) {
    auto& v = params[pi].mutable_value()[i];
    const double orig = v;
    auto at = [&](double offset) {
      v = orig + offset;
      const double y = f().value().item();
      v = orig;
      return y;
    };
    const double h = opt.step;
    const double fp = at(h), fm = at(-h);
    double fp2 = 0.0, fm2 = 0.0;
    if (opt.five_point) {
      fp2 = at(2.0 * h);
      fm2 = at(-2.0 * h);
    }
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(fp2) || !std::isfinite(fm2)) {
      rep.pass = false;
      rep.worst_param = pi;
      rep.worst_index = i;
      rep.failure = "non-finite f at perturbed coordinate " + std::to_string(i) + " of parameter " +
                    std::to_string(pi);
      rep.max_rel_err = std::numeric_limits<double>::infinity();
      return rep;
    }
    const double numeric = opt.five_point ? (8.0 * (fp - fm) - (fp2 - fm2)) / (12.0 * h) : (fp - fm) / (2.0 * h);
    const double a = analytic[pi][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = pi;
      rep.worst_index = i;
    }
    ++rep.checked;
  }
  rep.pass = rep.max_rel_err < opt.tol;
  return rep;
}

}  // namespace pkfr::num
