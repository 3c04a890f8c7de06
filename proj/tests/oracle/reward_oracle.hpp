// SPDX-License-Identifier: Apache-2.0
// Straight-line transcription of the reward rules, written independently of
// the library so the two can be compared case by case.
#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "recalign/instructions.hpp"

namespace oracle {

struct Entry {
  bool illegal = false;
  bool target = false;
  int rank = 0;  // teacher rank, 1-based
  bool in = false;
};

struct Rewards {
  std::vector<double> scores, scores_ctl, r_item, scores_star;
  double ctl_list = 0.0;
  double r_list = 0.0;
};

inline double lg(double x) { return std::log2(x); }

inline Rewards rewards(const std::vector<Entry>& items, int k, recalign::IntentionKind kind, double m, double alpha) {
  using K = recalign::IntentionKind;
  const std::size_t N = items.size();
  Rewards out;
  out.scores.assign(N, 0.0);
  out.scores_ctl.assign(N, 0.0);
  out.r_item.assign(N, 0.0);
  out.scores_star.assign(N, 0.0);

  for (std::size_t i = 0; i < N; ++i) {
    if (items[i].illegal)
      out.scores[i] = -1;
    else if (items[i].target)
      out.scores[i] = +1;
    else
      out.scores[i] = 1.0 / lg(items[i].rank + 3);
  }

  int count_in = 0, count_out = 0;
  const double km = k * m;
  for (std::size_t i = 0; i < N; ++i) {
    if (items[i].illegal) {
      out.scores_ctl[i] = -1;
      continue;
    }
    int in, outv;
    if (items[i].in) {
      in = 1;
      outv = 0;
    } else {
      in = 0;
      outv = 1;
    }
    count_in += in;
    count_out += outv;
    double s = 0.0;
    if (kind == K::I0) s = out.scores[i];
    if (kind == K::I1_pos) s = in;
    if (kind == K::I1_neg) s = outv;
    if (kind == K::I2_le) {
      if (count_out > (k - km))
        s = 0.5;
      else if (outv)
        s = 1.0;
      else if (count_in < km)
        s = 0.5;
      else
        s = 0.0;
    }
    if (kind == K::I2_ge) {
      if (count_in > k)
        s = 0.5;
      else if (in)
        s = 1.0;
      else if (count_out < (k - km))
        s = 0.5;
      else
        s = 0.0;
    }
    if (kind == K::I2_approx) {
      if (in) {
        if (count_in <= km)
          s = 1.0;
        else
          s = 0.0;
      } else if (count_in >= km)
        s = 1.0;
      else if (count_out <= (k - km))
        s = 0.5;
      else
        s = 0.0;
    }
    out.scores_ctl[i] = s;
  }

  for (std::size_t i = 0; i < N; ++i) out.r_item[i] = (1 - alpha) * out.scores[i] + alpha * out.scores_ctl[i];

  double sum_star = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    const double pos = static_cast<double>(i + 1);
    out.scores_star[i] = items[i].illegal ? -1.0 : out.scores[i] / lg(pos + 2);
    sum_star += out.scores_star[i];
  }

  switch (kind) {
    case K::I0: out.ctl_list = sum_star; break;
    case K::I1_pos: out.ctl_list = 1.0 / lg((k - count_in) + 2); break;
    case K::I1_neg: out.ctl_list = 1.0 / lg((k - count_out) + 2); break;
    case K::I2_le: out.ctl_list = 1.0 / lg(std::max(count_in - km, 0.0) + 2); break;
    case K::I2_ge: out.ctl_list = 1.0 / lg(std::max(km - count_in, 0.0) + 2); break;
    case K::I2_approx: out.ctl_list = 1.0 / lg(std::abs(count_in - km) + 2); break;
    default: std::abort();
  }
  out.r_list = (1 - alpha) * sum_star + alpha * out.ctl_list;
  return out;
}

// Proportion accuracy, read off the three cases directly.
inline int cpa(recalign::IntentionKind kind, int count_in, int k, double m) {
  using K = recalign::IntentionKind;
  if (kind == K::I2_le) return count_in <= k * m ? 1 : 0;
  if (kind == K::I2_ge) return count_in >= k * m ? 1 : 0;
  if (kind == K::I2_approx) return std::abs(count_in - k * m) <= 1 ? 1 : 0;
  std::abort();
}

}  // namespace oracle
