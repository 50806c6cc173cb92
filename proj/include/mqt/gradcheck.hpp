#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace mqt {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  size_t checked = 0;
};

// Central-difference check of an analytic gradient. f evaluates the scalar
// loss at a parameter vector; any stochastic pieces (dropout masks) must be
// frozen inside f so repeated evaluations see the same function.
// Relative error per coordinate: |a - n| / max(1, |a|, |n|).
inline GradCheckReport grad_check(const std::function<double(const std::vector<double>&)>& f,
                                  std::vector<double> theta, const std::vector<double>& analytic,
                                  double h = 1e-4, size_t max_coords = 0, size_t stride = 1) {
  GradCheckReport rep;
  const size_t n = theta.size();
  if (stride == 0) stride = 1;
  for (size_t i = 0; i < n; i += stride) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double fp = f(theta);
    theta[i] = keep - h;
    const double fm = f(theta);
    theta[i] = keep;
    const double num = (fp - fm) / (2.0 * h);
    const double ana = analytic[i];
    const double rel = std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = ana;
      rep.numeric_at_worst = num;
    }
    ++rep.checked;
    if (max_coords && rep.checked >= max_coords) break;
  }
  return rep;
}

}  // namespace mqt
