#pragma once

#include <map>
#include <string>

#include "gshield/numerics/optim.hpp"

namespace gshield::nn {

inline constexpr float kLeakySlope = 0.2f;

/// Registers `name.w` [cout, cin, k, k] and `name.b` [cout]. A zero layer
/// starts with all-zero weights and bias.
void add_conv(ParamGraph& params, const std::string& name, int cin, int cout, int k, Rng& rng, bool zero = false);

/// Registers `name.w` [cin, cout, k, k] and `name.b` [cout].
void add_conv_transpose(ParamGraph& params, const std::string& name, int cin, int cout, int k, int stride, Rng& rng,
                        bool zero = false);

/// Registers `name.w` [out, in] and `name.b` [out].
void add_dense(ParamGraph& params, const std::string& name, int in, int out, Rng& rng, bool zero = false);

template <class T>
BasicVar<T> conv(const BasicParamGraph<T>& params, const std::string& name, const BasicVar<T>& x, int stride,
                 int padding) {
    return ops::conv2d(x, params.get(name + ".w"), params.get(name + ".b"), stride, padding);
}

template <class T>
BasicVar<T> conv_transpose(const BasicParamGraph<T>& params, const std::string& name, const BasicVar<T>& x,
                           int stride, int padding) {
    return ops::conv_transpose2d(x, params.get(name + ".w"), params.get(name + ".b"), stride, padding);
}

template <class T>
BasicVar<T> dense(const BasicParamGraph<T>& params, const std::string& name, const BasicVar<T>& x) {
    return ops::dense(x, params.get(name + ".w"), params.get(name + ".b"));
}

template <class T>
BasicVar<T> leaky(const BasicVar<T>& x) {
    return ops::leaky_relu(x, static_cast<T>(kLeakySlope));
}

/// Copy of a float graph in another precision, every entry a fresh parameter.
template <class T>
BasicParamGraph<T> cast_params(const ParamGraph& params) {
    BasicParamGraph<T> out;
    for (const auto& [name, var] : params.entries()) out.add(name, var.value().template cast<T>());
    return out;
}

/// Named tensors of a graph, e.g. for saving.
std::map<std::string, Tensor> to_named(const ParamGraph& params);
/// Loads by name; throws DataError on a missing name or shape mismatch.
void from_named(ParamGraph& params, const std::map<std::string, Tensor>& named);

} // namespace gshield::nn
