#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "vlbt/tensor.hpp"

namespace vlbt {

template <typename T>
struct GradCheckEntry {
    std::string name;
    T max_rel_err = 0;
    std::size_t worst_index = 0;
};

template <typename T>
struct GradCheckReport {
    std::vector<GradCheckEntry<T>> entries;
    T tol = 0;
    bool pass = true;

    T max_rel_err() const {
        T m = 0;
        for (const auto& e : entries) m = std::max(m, e.max_rel_err);
        return m;
    }
};

// Compares tape gradients against central finite differences, parameter
// tensor by parameter tensor. `f` must build the scalar loss from the
// given params on the supplied tape (nullptr = plain forward) and be
// deterministic; determinism is verified with two bit-compared forward
// evaluations. Meant for 64-bit mode; 32-bit finite differences are noise.
template <typename T, typename F>
GradCheckReport<T> grad_check(F&& f, std::vector<std::pair<std::string, Tensor<T>>>& params,
                              T h, T tol) {
    const T v1 = f(static_cast<Tape<T>*>(nullptr)).at(0);
    const T v2 = f(static_cast<Tape<T>*>(nullptr)).at(0);
    if (std::memcmp(&v1, &v2, sizeof(T)) != 0)
        throw contract_error("grad_check requires a deterministic function; two forward "
                             "evaluations differ");

    for (auto& [name, p] : params) {
        p.ensure_grad();
        p.zero_grad();
    }
    Tape<T> tape;
    Tensor<T> loss = f(&tape);
    tape.backward(loss);

    GradCheckReport<T> report;
    report.tol = tol;
    for (auto& [name, p] : params) {
        GradCheckEntry<T> entry;
        entry.name = name;
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const T saved = (*p.values)[i];
            (*p.values)[i] = saved + h;
            const T lp = f(static_cast<Tape<T>*>(nullptr)).at(0);
            (*p.values)[i] = saved - h;
            const T lm = f(static_cast<Tape<T>*>(nullptr)).at(0);
            (*p.values)[i] = saved;
            const T fd = (lp - lm) / (2 * h);
            const T g = (*p.grad)[i];
            const T denom = std::max(std::max(std::abs(g), std::abs(fd)), T(1e-8));
            const T rel = std::abs(g - fd) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
            }
        }
        report.pass = report.pass && entry.max_rel_err <= tol;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace vlbt
