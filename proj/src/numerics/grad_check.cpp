#include "gshield/numerics/grad_check.hpp"

#include <cmath>

namespace gshield {

GradCheckReport grad_check(const std::function<VarD(const std::vector<VarD>&)>& fragment,
                           std::vector<std::pair<std::string, TensorD>> inputs, double tolerance,
                           double step) {
    std::vector<VarD> leaves;
    leaves.reserve(inputs.size());
    for (auto& [name, t] : inputs) leaves.push_back(VarD::parameter(t));
    fragment(leaves).backward();

    GradCheckReport report;
    for (std::size_t p = 0; p < leaves.size(); ++p) {
        const TensorD analytic = leaves[p].grad();
        TensorD& value = leaves[p].mutable_value();
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const double orig = value[i];
            auto eval = [&](double x) {
                value[i] = x;
                std::vector<VarD> frozen;
                for (const auto& l : leaves) frozen.push_back(VarD::constant(l.value()));
                return fragment(frozen).value()[0];
            };
            const double numeric = (eval(orig + step) - eval(orig - step)) / (2.0 * step);
            value[i] = orig;
            diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
            a2 += analytic[i] * analytic[i];
            n2 += numeric * numeric;
        }
        GradCheckEntry entry;
        entry.name = inputs[p].first;
        entry.rel_error = std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
        entry.passed = entry.rel_error < tolerance;
        report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
        report.passed = report.passed && entry.passed;
        report.entries.push_back(entry);
    }
    return report;
}

} // namespace gshield
