#ifndef CHAI_PARAMS_HPP
#define CHAI_PARAMS_HPP

#include <cmath>
#include <map>
#include <string>
#include <string_view>

#include "tensor.hpp"

namespace chai {

/// Gradients (or any per-parameter tensors) keyed by parameter name.
template<typename T>
using GradMap = std::map<std::string, Tensor<T>, std::less<>>;

/**
 * Named trainable tensors plus their momentum buffers.
 *
 * Names look like `conv0.weight`; the part before the first dot is the
 * layer group used for per-group learning rates.
 */
template<typename T>
class ParamSet {
public:
    void add(std::string name, Tensor<T> value) {
        if (values_.count(name)) {
            throw InvalidInput("duplicate parameter name '" + name + "'");
        }
        velocity_.emplace(name, Tensor<T>(value.shape()));
        values_.emplace(std::move(name), std::move(value));
    }

    bool contains(std::string_view name) const { return values_.find(name) != values_.end(); }

    const Tensor<T>& at(std::string_view name) const {
        auto it = values_.find(name);
        if (it == values_.end()) {
            throw InvalidInput("unknown parameter '" + std::string(name) + "'");
        }
        return it->second;
    }

    Tensor<T>& at(std::string_view name) {
        return const_cast<Tensor<T>&>(static_cast<const ParamSet&>(*this).at(name));
    }

    const Tensor<T>& velocity(std::string_view name) const { return velocity_.find(name)->second; }
    Tensor<T>& velocity(std::string_view name) { return velocity_.find(name)->second; }

    const GradMap<T>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : values_) {
            n += t.size();
        }
        return n;
    }

    /// Zero tensors shaped like every parameter.
    GradMap<T> zeros_like() const {
        GradMap<T> out;
        for (const auto& [name, t] : values_) {
            out.emplace(name, Tensor<T>(t.shape()));
        }
        return out;
    }

    void reset_velocity() {
        for (auto& [name, v] : velocity_) {
            v.fill(T{0});
        }
    }

    template<typename U>
    ParamSet<U> cast() const {
        ParamSet<U> out;
        for (const auto& [name, t] : values_) {
            out.add(name, t.template cast<U>());
        }
        return out;
    }

    /// Parameter values only; momentum state is not compared.
    friend bool operator==(const ParamSet& a, const ParamSet& b) { return a.values_ == b.values_; }

private:
    GradMap<T> values_;
    GradMap<T> velocity_;
};

inline std::string param_group(std::string_view name) {
    return std::string(name.substr(0, name.find('.')));
}

template<typename T>
struct LearningRates {
    T base{0};
    std::map<std::string, T, std::less<>> per_group;

    T for_param(std::string_view name) const {
        auto it = per_group.find(param_group(name));
        return it == per_group.end() ? base : it->second;
    }

    LearningRates scaled(T factor) const {
        LearningRates out{base * factor, {}};
        for (const auto& [g, lr] : per_group) {
            out.per_group.emplace(g, lr * factor);
        }
        return out;
    }
};

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
template<typename T>
double clip_grad_norm(GradMap<T>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            sq += static_cast<double>(g[i]) * static_cast<double>(g[i]);
        }
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const auto f = static_cast<T>(max_norm / norm);
        for (auto& [name, g] : grads) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] *= f;
            }
        }
    }
    return norm;
}

/// Momentum SGD: v <- momentum * v - lr * g; p <- p + v.
template<typename T>
void sgd_momentum_step(ParamSet<T>& params, const GradMap<T>& grads, const LearningRates<T>& lr,
                       T momentum) {
    if (!(momentum >= T{0} && momentum < T{1})) {
        throw InvalidInput("momentum must lie in [0, 1)");
    }
    if (lr.base < T{0}) {
        throw InvalidInput("learning rate must be non-negative");
    }
    for (const auto& [g, rate] : lr.per_group) {
        if (rate < T{0}) {
            throw InvalidInput("learning rate for group '" + g + "' is negative");
        }
    }
    for (const auto& [name, grad] : grads) {
        if (!params.contains(name)) {
            throw InvalidInput("gradient for unknown parameter '" + name + "'");
        }
        if (params.at(name).shape() != grad.shape()) {
            throw InvalidInput("gradient shape mismatch for '" + name + "'");
        }
    }
    for (const auto& [name, grad] : grads) {
        auto& p = params.at(name);
        auto& v = params.velocity(name);
        const T rate = lr.for_param(name);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum * v[i] - rate * grad[i];
            p[i] += v[i];
        }
    }
}

}

#endif
