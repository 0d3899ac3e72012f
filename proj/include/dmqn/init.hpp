#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "dmqn/rng.hpp"
#include "dmqn/tensor.hpp"

namespace dmqn {

/// Parameter with N(0, stddev²) entries. The stream is keyed by (seed, name)
/// so adding a parameter never shifts the initial values of the others.
template <class T = float>
BasicParameter<T> normal_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
    BasicTensor<T> t(std::move(shape));
    Rng rng(derive_seed({seed, fnv1a(name)}));
    for (auto& v : t.values()) v = static_cast<T>(stddev * normal(rng));
    return BasicParameter<T>(name, std::move(t));
}

template <class T = float>
BasicParameter<T> constant_param(const std::string& name, Shape shape, double value) {
    return BasicParameter<T>(name, BasicTensor<T>::filled(std::move(shape), static_cast<T>(value)));
}

/// Weight of a linear map with `fan_in` inputs, std 1/sqrt(fan_in).
template <class T = float>
BasicParameter<T> linear_param(const std::string& name, std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
    return normal_param<T>(name, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), seed);
}

template <class T, class U>
BasicParameter<U> cast_param(const BasicParameter<T>& p) {
    return BasicParameter<U>(p.name, p.value.template cast<U>());
}

}  // namespace dmqn
