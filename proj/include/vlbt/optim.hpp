#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/model.hpp"

namespace vlbt {

struct ScheduleConfig {
    double peak_lr = 2e-3;
    long long warmup_steps = 100;
    long long total_steps = 2000;
};

// Linear warmup to the peak, then cosine decay to zero. Steps past the
// end clamp to the final value.
inline double lr_at_step(long long step, const ScheduleConfig& cfg) {
    if (step < 0) throw contract_error("lr_at_step: negative step");
    if (cfg.warmup_steps > cfg.total_steps)
        throw config_error("warmup_steps exceeds total steps");
    if (step < cfg.warmup_steps)
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    if (step > cfg.total_steps) step = cfg.total_steps;
    const double denom = static_cast<double>(std::max<long long>(1, cfg.total_steps - cfg.warmup_steps));
    const double progress = static_cast<double>(step - cfg.warmup_steps) / denom;
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// Weight decay applies to 2-d projection matrices only; biases, norm
// parameters, and everything under emb/ (word/position/cls/mask tables)
// are excluded.
inline bool decay_applies(const std::string& name, const Shape& shape) {
    if (shape.size() != 2) return false;
    return name.rfind("emb/", 0) != 0;
}

// First/second moment buffers aligned with the parameter store order.
template <typename T>
struct AdamState {
    std::vector<std::string> names;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    long long step = 0;

    static AdamState init(const ParamStore<T>& params) {
        AdamState s;
        for (const auto& [name, t] : params.items()) {
            s.names.push_back(name);
            s.m.emplace_back(t.numel(), T(0));
            s.v.emplace_back(t.numel(), T(0));
        }
        return s;
    }
};

// Bias-corrected Adam with decoupled weight decay. Gradients are read
// from the parameters' grad buffers.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
    auto& items = params.items();
    if (items.size() != state.m.size())
        throw contract_error("optimizer state does not match parameter store");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < items.size(); ++p) {
        auto& [name, t] = items[p];
        if (name != state.names[p])
            throw contract_error("optimizer state order mismatch at " + name);
        if (!t.grad) throw contract_error("parameter without gradient buffer: " + name);
        if (state.m[p].size() != t.numel())
            throw contract_error("moment shape mismatch for " + name);
        const bool decay = decay_applies(name, t.shape) && cfg.weight_decay > 0.0;
        T* theta = t.values->data();
        const T* g = t.grad->data();
        T* m = state.m[p].data();
        T* v = state.v[p].data();
        for (std::size_t i = 0; i < t.numel(); ++i) {
            m[i] = static_cast<T>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
            v[i] = static_cast<T>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double update = lr * mhat / (std::sqrt(vhat) + cfg.eps);
            if (decay) update += lr * cfg.weight_decay * theta[i];
            theta[i] = static_cast<T>(theta[i] - update);
        }
    }
}

}  // namespace vlbt
