#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dmqn/errors.hpp"
#include "dmqn/tensor.hpp"

namespace dmqn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam. Moments are kept in double, one slot per parameter in
/// the order they are passed to step().
template <class T>
class BasicAdam {
public:
    explicit BasicAdam(AdamConfig cfg = {}) : cfg_(cfg) {}

    std::uint64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    void step(const std::vector<BasicParameter<T>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->value.size(), 0.0);
                v_.emplace_back(p->value.size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ContractError("adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            if (p.grad.size() != p.value.size() || m_[i].size() != p.value.size())
                throw DimensionError("adam: shape mismatch for " + p.name);
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < p.grad.size(); ++j) {
                const double g = p.grad[j];
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
                const double update = cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
                p.value[j] = static_cast<T>(p.value[j] - update);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::uint64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

using Adam = BasicAdam<float>;

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<BasicParameter<T>*>& params, double max_norm) {
    double sq = 0.0;
    for (auto* p : params)
        for (auto g : p->grad) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto* p : params)
            for (auto& g : p->grad) g = static_cast<T>(g * s);
    }
    return norm;
}

}  // namespace dmqn
