//
// Linear beta schedule and the derived cumulative alpha products. Endpoints
// scale with the step count (the usual 1000-step 1e-4..2e-2 line) so that
// alpha_bar at the final step stays below 0.05 at the default 100 steps.
//

#pragma once

#include <vector>

#include "locadit/core.hpp"

namespace locadit {

struct DiffusionSchedule {
  int steps = 100;                 // T
  std::vector<double> beta;        // beta_t for t = 1..T at [t-1]
  std::vector<double> alpha_bar;   // alpha_bar_t for t = 0..T, alpha_bar_0 = 1

  static DiffusionSchedule linear(int T = 100, double base_start = 1e-4, double base_end = 2e-2) {
    if (T < 1) fail(errc::bad_config, "schedule needs at least 1 step");
    double scale = 1000.0 / double(T);
    DiffusionSchedule s;
    s.steps = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 0; t < T; ++t) {
      s.beta[t] = T > 1 ? scale * (base_start + (base_end - base_start) * double(t) / double(T - 1))
                        : scale * base_end;
      s.alpha_bar[t + 1] = s.alpha_bar[t] * (1.0 - s.beta[t]);
    }
    return s;
  }

  double alphabar(int t) const {
    if (t < 0 || t > steps) fail(errc::step_out_of_range, "alpha_bar step out of range");
    return alpha_bar[t];
  }

  void check_valid() const {
    for (int t = 0; t < steps; ++t) {
      if (!(beta[t] > 0 && beta[t] < 1)) fail(errc::bad_config, "beta outside (0,1)");
      if (t > 0 && beta[t] < beta[t - 1]) fail(errc::bad_config, "beta must be non-decreasing");
    }
    if (alpha_bar[steps] >= 0.05) fail(errc::bad_config, "terminal alpha_bar too large");
  }
};

}  // namespace locadit
