#include "gshield/numerics/optim.hpp"

#include <cmath>

namespace gshield {

template <class T>
BasicVar<T> BasicParamGraph<T>::add(const std::string& name, BasicTensor<T> init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    auto var = BasicVar<T>::parameter(std::move(init));
    index_[name] = entries_.size();
    entries_.emplace_back(name, var);
    return var;
}

template <class T>
const BasicVar<T>& BasicParamGraph<T>::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

template <class T>
void BasicParamGraph<T>::zero_grad() {
    for (auto& [name, var] : entries_) var.zero_grad();
}

template <class T>
void BasicParamGraph<T>::set_trainable(bool on) {
    for (auto& [name, var] : entries_) var.set_requires_grad(on);
}

template <class T>
std::vector<std::pair<std::string, BasicTensor<T>>> BasicParamGraph<T>::named_tensors() const {
    std::vector<std::pair<std::string, BasicTensor<T>>> out;
    out.reserve(entries_.size());
    for (const auto& [name, var] : entries_) out.emplace_back(name, var.value());
    return out;
}

template <class T>
void BasicParamGraph<T>::load(const std::vector<std::pair<std::string, BasicTensor<T>>>& named) {
    std::map<std::string, const BasicTensor<T>*> lookup;
    for (const auto& [name, t] : named) lookup[name] = &t;
    for (auto& [name, var] : entries_) {
        const auto it = lookup.find(name);
        if (it == lookup.end()) throw DataError("weights are missing parameter '" + name + "'");
        if (it->second->shape() != var.shape()) {
            throw DataError("parameter '" + name + "' has shape " + shape_str(it->second->shape()) +
                            ", expected " + shape_str(var.shape()));
        }
        var.mutable_value() = *it->second;
    }
}

template class BasicParamGraph<float>;
template class BasicParamGraph<double>;

void adam_step(ParamGraph& params, AdamState& state) {
    const auto& c = state.config;
    const std::int64_t t = ++state.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    for (auto [name, var] : params.entries()) {
        if (!var.requires_grad()) continue;
        const Tensor& g = var.grad();
        if (g.numel() != var.value().numel()) throw NumericError("adam_step: missing gradient for '" + name + "'");
        auto& mom = state.moments[name];
        if (mom.m.numel() != g.numel()) {
            mom.m = Tensor(var.shape());
            mom.v = Tensor(var.shape());
        }
        Tensor& w = var.mutable_value();
        for (std::int64_t i = 0; i < w.numel(); ++i) {
            const double gi = g[i];
            const double m = c.beta1 * mom.m[i] + (1.0 - c.beta1) * gi;
            const double v = c.beta2 * mom.v[i] + (1.0 - c.beta2) * gi * gi;
            mom.m[i] = static_cast<float>(m);
            mom.v[i] = static_cast<float>(v);
            const double step = c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps);
            w[i] = static_cast<float>(w[i] - step);
        }
    }
}

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, double gain) {
    Tensor t(shape);
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
    for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

} // namespace gshield
