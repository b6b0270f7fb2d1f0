#include "gshield/nn.hpp"

#include <algorithm>

#include "gshield/error.hpp"

namespace gshield::nn {

namespace {

Tensor init(const Shape& shape, std::int64_t fan_in, Rng& rng, bool zero) {
    return zero ? Tensor(shape) : kaiming_uniform(shape, fan_in, rng);
}

} // namespace

void add_conv(ParamGraph& params, const std::string& name, int cin, int cout, int k, Rng& rng, bool zero) {
    params.add(name + ".w", init({cout, cin, k, k}, static_cast<std::int64_t>(cin) * k * k, rng, zero));
    params.add(name + ".b", Tensor({cout}));
}

void add_conv_transpose(ParamGraph& params, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                        bool zero) {
    // Each output pixel sees about cin * (k / stride)^2 inputs.
    const auto fan_in = std::max<std::int64_t>(1, static_cast<std::int64_t>(cin) * k * k / (stride * stride));
    params.add(name + ".w", init({cin, cout, k, k}, fan_in, rng, zero));
    params.add(name + ".b", Tensor({cout}));
}

void add_dense(ParamGraph& params, const std::string& name, int in, int out, Rng& rng, bool zero) {
    params.add(name + ".w", init({out, in}, in, rng, zero));
    params.add(name + ".b", Tensor({out}));
}

std::map<std::string, Tensor> to_named(const ParamGraph& params) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, var] : params.entries()) out.emplace(name, var.value());
    return out;
}

void from_named(ParamGraph& params, const std::map<std::string, Tensor>& named) {
    for (auto [name, var] : params.entries()) {
        const auto it = named.find(name);
        if (it == named.end()) throw DataError("weights file is missing '" + name + "'");
        if (it->second.shape() != var.shape()) {
            throw DataError("weights for '" + name + "' have shape " + shape_str(it->second.shape()) + ", expected " +
                            shape_str(var.shape()));
        }
        var.mutable_value() = it->second;
    }
}

} // namespace gshield::nn
