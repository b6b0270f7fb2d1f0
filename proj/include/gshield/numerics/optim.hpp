#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gshield/numerics/autograd.hpp"
#include "gshield/rng.hpp"

namespace gshield {

/// Named, ordered set of trainable tensors.
template <class T>
class BasicParamGraph {
public:
    BasicVar<T> add(const std::string& name, BasicTensor<T> init);

    const BasicVar<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const std::vector<std::pair<std::string, BasicVar<T>>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Allocates zero gradients for every parameter.
    void zero_grad();
    void set_trainable(bool on);

    std::vector<std::pair<std::string, BasicTensor<T>>> named_tensors() const;
    /// Copies values by name; every parameter must be present with its shape.
    void load(const std::vector<std::pair<std::string, BasicTensor<T>>>& named);

private:
    std::vector<std::pair<std::string, BasicVar<T>>> entries_;
    std::map<std::string, std::size_t> index_;
};

using ParamGraph = BasicParamGraph<float>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Tensor m;
    Tensor v;
};

struct AdamState {
    AdamConfig config;
    std::int64_t step = 0;
    std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update of every trainable parameter, in place.
void adam_step(ParamGraph& params, AdamState& state);

/// Kaiming-uniform init for a conv/dense weight; fan_in from dims 1.. of shape.
Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, Rng& rng, double gain = 1.0);

} // namespace gshield
