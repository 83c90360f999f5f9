#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "attriq/optim.hpp"
#include "attriq/rng.hpp"
#include "attriq/tensor.hpp"

namespace attriq {

struct FdGroupReport {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  bool frozen = false;
};

struct FdReport {
  std::vector<FdGroupReport> groups;
  double max_rel_error = 0.0;

  bool passes(double tolerance) const { return max_rel_error <= tolerance; }
};

// Central finite differences against already-accumulated analytic gradients.
//
// Caller protocol: run forward+backward once so each group's .grad holds the
// analytic gradient of the scalar loss, then call with a loss_value functor
// that re-evaluates the same loss under the current parameter values.
// A random subsample of up to max_coords coordinates per group is probed.
// Relative error: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).
//
// Coordinates where both sides sit below zero_floor are counted as exact:
// a structurally zero gradient (e.g. a parameter the loss is invariant to)
// leaves only roundoff noise in the central difference, and the relative
// formula would amplify that noise into a spurious failure.
inline FdReport fd_check(const std::vector<ParamGroup*>& groups,
                         const std::function<double()>& loss_value,
                         double h = 1e-5, std::uint64_t seed = 7,
                         std::size_t max_coords = 200,
                         double zero_floor = 1e-7) {
  FdReport report;
  RandomStream rng(seed);
  for (ParamGroup* group : groups) {
    FdGroupReport gr;
    gr.name = group->name;
    gr.frozen = !group->trainable;
    std::size_t n = group->value.size();
    if (gr.frozen) {
      // Frozen groups are not probed; their accumulated gradient must be 0.
      for (double g : group->grad.data)
        gr.max_rel_error = std::max(gr.max_rel_error, std::abs(g));
      gr.coords_checked = n;
      report.max_rel_error = std::max(report.max_rel_error, gr.max_rel_error);
      report.groups.push_back(std::move(gr));
      continue;
    }
    std::vector<std::size_t> coords;
    if (n <= max_coords) {
      coords.resize(n);
      for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      std::set<std::size_t> picked;
      while (picked.size() < max_coords) picked.insert(rng.next_below(n));
      coords.assign(picked.begin(), picked.end());
    }
    for (std::size_t c : coords) {
      double saved = group->value.data[c];
      group->value.data[c] = saved + h;
      double up = loss_value();
      group->value.data[c] = saved - h;
      double down = loss_value();
      group->value.data[c] = saved;
      double g_fd = (up - down) / (2.0 * h);
      double g_ad = group->grad.data[c];
      if (std::abs(g_ad) <= zero_floor && std::abs(g_fd) <= zero_floor)
        continue;
      double rel = std::abs(g_ad - g_fd) /
                   std::max(1e-8, std::abs(g_ad) + std::abs(g_fd));
      gr.max_rel_error = std::max(gr.max_rel_error, rel);
    }
    gr.coords_checked = coords.size();
    report.max_rel_error = std::max(report.max_rel_error, gr.max_rel_error);
    report.groups.push_back(std::move(gr));
  }
  return report;
}

}  // namespace attriq
