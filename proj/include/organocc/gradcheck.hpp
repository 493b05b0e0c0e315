#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace organocc {

struct GradcheckEntry {
  std::string op;
  double max_rel_error = 0;
  std::size_t checked = 0;  // gradient entries compared
  std::size_t kinks = 0;    // probes skipped as straddling a non-differentiable point
  double seconds = 0;
  std::string worst;  // input#entry of the largest error
  bool passed = false;
};

// Relative error of one entry: |analytic - numeric| / max(|analytic|, |numeric|, kGradcheckFloor).
inline constexpr double kGradcheckFloor = 1e-6;
inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-4;

// Central finite differences at 64-bit for every differentiable operator and
// for the full model graph, on randomized micro-shapes drawn from `seed`.
std::vector<GradcheckEntry> run_gradcheck_suite(std::uint64_t seed, double tolerance = kGradcheckTolerance);

}  // namespace organocc
