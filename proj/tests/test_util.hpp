#pragma once
// Helpers shared by the test suites: finite-difference oracle, fixture paths.

#include <cmath>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "mrc/tensor.hpp"

namespace mrc_test {

inline std::string fixture_path(const std::string& name) {
  const char* dir = std::getenv("MRC_FIXTURES");
  return std::string(dir ? dir : "tests/fixtures") + "/" + name;
}

inline std::string tmp_path(const std::string& name) {
  const char* dir = std::getenv("MRC_TEST_TMP");
  return std::string(dir ? dir : "/tmp") + "/" + name;
}

// Central finite differences of a scalar-valued function with respect to one
// parameter tensor. Independent of the tape: every coordinate is perturbed and
// the function re-evaluated from scratch.
inline std::vector<double> finite_difference_grad(mrc::Tensor& param,
                                                  const std::function<double()>& loss,
                                                  double eps = 1e-3) {
  std::vector<double> out(param.v.size());
  for (size_t i = 0; i < param.v.size(); ++i) {
    const double orig = param.v[i];
    param.v[i] = orig + eps;
    const double up = loss();
    param.v[i] = orig - eps;
    const double down = loss();
    param.v[i] = orig;
    out[i] = (up - down) / (2 * eps);
  }
  return out;
}

// Max |analytic - numeric| scaled by the largest gradient magnitude in the
// group; stable for coordinates whose true gradient is near zero.
inline double grad_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double max_diff = 0, max_mag = 0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    max_diff = std::max(max_diff, std::fabs(analytic[i] - numeric[i]));
    max_mag = std::max({max_mag, std::fabs(analytic[i]), std::fabs(numeric[i])});
  }
  return max_diff / std::max(max_mag, 1e-8);
}

inline void fill_uniform(mrc::Tensor& t, mrc::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : t.v) x = rng.uniform(lo, hi);
}

}  // namespace mrc_test
