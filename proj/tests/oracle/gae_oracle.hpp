// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

namespace oracle {

// A_t = sum_{l >= 0} (gamma*lambda)^l delta_{t+l}, summed term by term, with
// the value past the last token taken as 0.
inline std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v, double gamma,
                               double lambda) {
  const std::size_t T = r.size();
  std::vector<double> a(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0;
    for (std::size_t j = t; j < T; ++j) {
      const double next = j + 1 < T ? v[j + 1] : 0.0;
      const double delta = r[j] + gamma * next - v[j];
      sum += std::pow(gamma * lambda, static_cast<double>(j - t)) * delta;
    }
    a[t] = sum;
  }
  return a;
}

}  // namespace oracle
