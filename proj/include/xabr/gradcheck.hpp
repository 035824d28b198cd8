#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "xabr/tensor.hpp"
#include "xabr/transformer.hpp"

namespace xabr {

struct GradCheckOptions {
  double step = kDoubleEngine ? 1.0 / 1024 : 1.0 / 64;  // powers of two keep x ± h exact
  double tolerance = kDoubleEngine ? 1e-6 : 1e-2;
  // Denominator floor of the relative error, so entries whose true gradient
  // is below the finite-difference noise are judged absolutely.
  double floor = kDoubleEngine ? 1e-6 : 1e-2;
};

struct GradCheckResult {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0;
  std::string worst;  // "<param>[index]" of the largest error
  bool passed = false;
};

// Compares reverse-mode gradients of the scalar `objective` against the
// five-point central difference for every entry of every tensor in `inputs`.
// The objective is re-evaluated four times per entry.
GradCheckResult check_gradients(std::string name, const std::function<Tensor()>& objective,
                                const std::vector<NamedParam>& inputs, const GradCheckOptions& options = {});

inline constexpr std::string_view kGradcheckModules[] = {"tensor", "loss", "transformer", "bridge", "combined"};

// Runs the named suite, or every suite when `module` is empty. Throws
// ConfigError for an unknown module.
std::vector<GradCheckResult> run_gradcheck_suite(std::string_view module = {},
                                                 const GradCheckOptions& options = {});

}  // namespace xabr
