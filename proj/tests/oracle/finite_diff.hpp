// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst = 0;  // coordinate with the largest error
  double worst_analytic = 0.0, worst_numeric = 0.0;
};

// Central differences on the listed coordinates. Relative error is measured
// against max(|analytic|, |numeric|, floor) so near-zero entries do not blow up.
inline GradCheck check_gradient(std::vector<double>& params, const std::function<double()>& loss,
                                const std::vector<double>& analytic, const std::vector<std::size_t>& coords,
                                double h = 1e-5, double floor = 1e-6) {
  GradCheck out;
  for (std::size_t i : coords) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    const double err = std::abs(analytic[i] - numeric) / scale;
    if (err >= out.max_rel_error) {
      out.max_rel_error = err;
      out.worst = i;
      out.worst_analytic = analytic[i];
      out.worst_numeric = numeric;
    }
    ++out.checked;
  }
  return out;
}

}  // namespace oracle
