#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gshield/numerics/autograd.hpp"

namespace gshield {

struct GradCheckEntry {
    std::string name;
    double rel_error = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool passed = true;
};

/// Compares reverse-mode gradients of `fragment` against central finite
/// differences for each named input. The fragment must rebuild its graph
/// from the given leaves on every call and return a scalar. Runs in double.
///
/// Relative error per input is ||g_ad - g_fd||_2 / max(||g_ad||_2 + ||g_fd||_2, 1e-12).
GradCheckReport grad_check(const std::function<VarD(const std::vector<VarD>&)>& fragment,
                           std::vector<std::pair<std::string, TensorD>> inputs, double tolerance,
                           double step = 1e-6);

} // namespace gshield
