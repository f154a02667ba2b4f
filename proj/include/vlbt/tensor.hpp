#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "vlbt/errors.hpp"

namespace vlbt {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major n-d array of T. Copies are shallow: the value and
// gradient buffers are shared, so a Tensor behaves like a handle. `node`
// is the index of the operation that produced it on a recording tape;
// -1 means leaf or inference-mode value. Leaves that participate in
// training must call ensure_grad() once, so a grad buffer exists before
// any op captures them.
template <typename T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> values;
    std::shared_ptr<std::vector<T>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    int node = -1;

    Tensor() = default;

    static Tensor zeros(const Shape& s) {
        Tensor t;
        t.shape = s;
        t.values = std::make_shared<std::vector<T>>(shape_numel(s), T(0));
        return t;
    }

    static Tensor from(const Shape& s, std::vector<T> data) {
        if (shape_numel(s) != data.size())
            throw dim_error("tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = s;
        t.values = std::make_shared<std::vector<T>>(std::move(data));
        return t;
    }

    static Tensor scalar(T v) { return from({1}, {v}); }

    std::size_t numel() const { return values ? values->size() : 0; }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    T* data() { return values->data(); }
    const T* data() const { return values->data(); }
    T& at(int i) { return (*values)[static_cast<std::size_t>(i)]; }
    T at(int i) const { return (*values)[static_cast<std::size_t>(i)]; }
    T& at(int r, int c) { return (*values)[static_cast<std::size_t>(r) * cols() + c]; }
    T at(int r, int c) const { return (*values)[static_cast<std::size_t>(r) * cols() + c]; }

    void ensure_grad() {
        requires_grad = true;
        if (!grad) grad = std::make_shared<std::vector<T>>(values->size(), T(0));
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), T(0));
    }

    Tensor clone() const {
        Tensor t;
        t.shape = shape;
        t.values = std::make_shared<std::vector<T>>(*values);
        return t;
    }
};

// Recording tape. Nodes are appended in execution order, which is a
// topological order by construction; backward() walks it once in reverse.
// One tape per training step, single-threaded, one backward per tape.
template <typename T>
class Tape {
public:
    struct Node {
        std::vector<int> inputs;  // producing node ids, -1 for leaves
        std::function<void()> backward;
    };

    int record(std::vector<int> inputs, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(inputs), std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Seeds d(loss)/d(loss)=1 and accumulates gradients into every
    // requires_grad tensor reachable from `loss`. Gradients add up across
    // uses; zero_grad resets them.
    void backward(Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw contract_error("backward requires a scalar loss, got shape " +
                                 shape_str(loss.shape));
        if (loss.node < 0)
            throw contract_error("backward requires a loss recorded on an active tape");
        loss.ensure_grad();
        (*loss.grad)[0] += T(1);
        for (int i = loss.node; i >= 0; --i) nodes_[static_cast<std::size_t>(i)].backward();
    }

private:
    std::vector<Node> nodes_;
};

namespace detail {

// An op output joins the tape when a tape is active and some input is
// grad-bearing. Inference mode (tape == nullptr) produces plain values.
template <typename T>
bool track(Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
    if (!tape) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad || t->node >= 0) return true;
    return false;
}

template <typename T>
std::vector<int> node_ids(std::initializer_list<const Tensor<T>*> inputs) {
    std::vector<int> ids;
    for (const Tensor<T>* t : inputs) ids.push_back(t->node);
    return ids;
}

}  // namespace detail

template <typename T>
void check_2d(const Tensor<T>& t, const char* who) {
    if (t.shape.size() != 2)
        throw dim_error(std::string(who) + " expects a 2-d tensor, got " + shape_str(t.shape));
}

// ---------------------------------------------------------------------------
// Primitives. Each computes the forward value and, when recording, registers
// one backward closure that accumulates into the inputs' grad buffers. The
// closure is always built after ensure_grad() so the captured output handle
// shares the live grad buffer.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw dim_error("matmul shape mismatch: " + shape_str(a.shape) + " x " +
                        shape_str(b.shape));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> out = Tensor<T>::zeros({m, n});
    {
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                const T av = pa[i * k + kk];
                const T* brow = pb + kk * n;
                T* orow = po + i * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
    }
    if (detail::track(tape, {&a, &b})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&a, &b}), [a, b, out]() mutable {
            const int m2 = a.rows(), k2 = a.cols(), n2 = b.cols();
            const T* g = out.grad->data();
            if (a.grad) {
                T* ga = a.grad->data();
                const T* pb2 = b.data();
                for (int i = 0; i < m2; ++i)
                    for (int kk = 0; kk < k2; ++kk) {
                        T acc = 0;
                        const T* grow = g + i * n2;
                        const T* brow = pb2 + kk * n2;
                        for (int j = 0; j < n2; ++j) acc += grow[j] * brow[j];
                        ga[i * k2 + kk] += acc;
                    }
            }
            if (b.grad) {
                T* gb = b.grad->data();
                const T* pa2 = a.data();
                for (int i = 0; i < m2; ++i)
                    for (int kk = 0; kk < k2; ++kk) {
                        const T av = pa2[i * k2 + kk];
                        if (av == T(0)) continue;
                        const T* grow = g + i * n2;
                        T* brow = gb + kk * n2;
                        for (int j = 0; j < n2; ++j) brow[j] += av * grow[j];
                    }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> transpose(Tape<T>* tape, const Tensor<T>& a) {
    check_2d(a, "transpose");
    const int m = a.rows(), n = a.cols();
    Tensor<T> out = Tensor<T>::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
    if (detail::track(tape, {&a})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&a}), [a, out]() mutable {
            if (!a.grad) return;
            const int m2 = a.rows(), n2 = a.cols();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < n2; ++j) (*a.grad)[i * n2 + j] += (*out.grad)[j * m2 + i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw dim_error("add shape mismatch: " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        (*out.values)[i] = (*a.values)[i] + (*b.values)[i];
    if (detail::track(tape, {&a, &b})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&a, &b}), [a, b, out]() mutable {
            const std::size_t n = out.numel();
            if (a.grad)
                for (std::size_t i = 0; i < n; ++i) (*a.grad)[i] += (*out.grad)[i];
            if (b.grad)
                for (std::size_t i = 0; i < n; ++i) (*b.grad)[i] += (*out.grad)[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T>* tape, const Tensor<T>& a, T c) {
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.values)[i] = (*a.values)[i] * c;
    if (detail::track(tape, {&a})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&a}), [a, out, c]() mutable {
            if (!a.grad) return;
            for (std::size_t i = 0; i < out.numel(); ++i) (*a.grad)[i] += c * (*out.grad)[i];
        });
    }
    return out;
}

// y = s * x with a learnable scalar s (shape [1]).
template <typename T>
Tensor<T> scale_by(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& s) {
    if (s.numel() != 1) throw dim_error("scale_by expects a scalar, got " + shape_str(s.shape));
    const T sv = s.at(0);
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.values)[i] = (*x.values)[i] * sv;
    if (detail::track(tape, {&x, &s})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x, &s}), [x, s, out]() mutable {
            const T sv2 = s.at(0);
            if (x.grad)
                for (std::size_t i = 0; i < out.numel(); ++i)
                    (*x.grad)[i] += sv2 * (*out.grad)[i];
            if (s.grad) {
                T acc = 0;
                for (std::size_t i = 0; i < out.numel(); ++i)
                    acc += (*out.grad)[i] * (*x.values)[i];
                (*s.grad)[0] += acc;
            }
        });
    }
    return out;
}

// Adds a row vector b[n] to every row of x[m,n].
template <typename T>
Tensor<T> add_bias(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& b) {
    check_2d(x, "add_bias");
    if (static_cast<std::size_t>(x.cols()) != b.numel())
        throw dim_error("add_bias width mismatch: " + shape_str(x.shape) + " vs " +
                        shape_str(b.shape));
    const int m = x.rows(), n = x.cols();
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
    if (detail::track(tape, {&x, &b})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x, &b}), [x, b, out]() mutable {
            const int m2 = x.rows(), n2 = x.cols();
            if (x.grad)
                for (std::size_t i = 0; i < out.numel(); ++i) (*x.grad)[i] += (*out.grad)[i];
            if (b.grad)
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j) (*b.grad)[j] += (*out.grad)[i * n2 + j];
        });
    }
    return out;
}

template <typename T>
Tensor<T> gelu(Tape<T>* tape, const Tensor<T>& x) {
    // Exact Gaussian-CDF form x * Phi(x).
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    const T inv_sqrt2 = T(0.7071067811865475244);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const T v = (*x.values)[i];
        (*out.values)[i] = v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
    }
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out]() mutable {
            if (!x.grad) return;
            const T inv_sqrt2b = T(0.7071067811865475244);
            const T inv_sqrt2pi = T(0.3989422804014326779);
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const T v = (*x.values)[i];
                const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2b));
                const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
                (*x.grad)[i] += (cdf + v * pdf) * (*out.grad)[i];
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> exp_of(Tape<T>* tape, const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) (*out.values)[i] = std::exp((*x.values)[i]);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out]() mutable {
            if (!x.grad) return;
            for (std::size_t i = 0; i < out.numel(); ++i)
                (*x.grad)[i] += (*out.values)[i] * (*out.grad)[i];
        });
    }
    return out;
}

namespace detail {
// Iterates a tensor as rows of length `n` stepping along `axis`:
// outer * n * inner element layout.
struct AxisSpan {
    std::size_t outer, n, inner;
};
inline AxisSpan axis_span(const Shape& shape, int axis) {
    const int rank = static_cast<int>(shape.size());
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) throw dim_error("softmax axis out of range");
    AxisSpan s{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i)
        s.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    for (int i = axis + 1; i < rank; ++i)
        s.inner *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
    return s;
}
}  // namespace detail

template <typename T>
Tensor<T> softmax(Tape<T>* tape, const Tensor<T>& x, int axis = -1) {
    const auto span = detail::axis_span(x.shape, axis);
    if (span.n < 1) throw contract_error("softmax needs at least one element along axis");
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    for (std::size_t o = 0; o < span.outer; ++o)
        for (std::size_t in = 0; in < span.inner; ++in) {
            const std::size_t base = o * span.n * span.inner + in;
            T mx = (*x.values)[base];
            for (std::size_t j = 1; j < span.n; ++j)
                mx = std::max(mx, (*x.values)[base + j * span.inner]);
            T sum = 0;
            for (std::size_t j = 0; j < span.n; ++j) {
                const T e = std::exp((*x.values)[base + j * span.inner] - mx);
                (*out.values)[base + j * span.inner] = e;
                sum += e;
            }
            if (std::isnan(static_cast<double>(sum)))
                throw numeric_error("softmax on NaN input");
            for (std::size_t j = 0; j < span.n; ++j) (*out.values)[base + j * span.inner] /= sum;
        }
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out, span]() mutable {
            if (!x.grad) return;
            for (std::size_t o = 0; o < span.outer; ++o)
                for (std::size_t in = 0; in < span.inner; ++in) {
                    const std::size_t base = o * span.n * span.inner + in;
                    T dot = 0;
                    for (std::size_t j = 0; j < span.n; ++j) {
                        const std::size_t idx = base + j * span.inner;
                        dot += (*out.grad)[idx] * (*out.values)[idx];
                    }
                    for (std::size_t j = 0; j < span.n; ++j) {
                        const std::size_t idx = base + j * span.inner;
                        (*x.grad)[idx] += (*out.values)[idx] * ((*out.grad)[idx] - dot);
                    }
                }
        });
    }
    return out;
}

// Per-row normalization over the last axis of a 2-d tensor, then affine.
template <typename T>
Tensor<T> layer_norm(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-6)) {
    check_2d(x, "layer_norm");
    const int m = x.rows(), d = x.cols();
    if (static_cast<std::size_t>(d) != gamma.numel() ||
        static_cast<std::size_t>(d) != beta.numel())
        throw dim_error("layer_norm parameter width mismatch");
    if (eps <= T(0)) throw contract_error("layer_norm eps must be positive");
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    auto xhat = std::make_shared<std::vector<T>>(x.numel());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        T mean = 0;
        for (int j = 0; j < d; ++j) mean += x.at(i, j);
        mean /= T(d);
        T var = 0;
        for (int j = 0; j < d; ++j) {
            const T c = x.at(i, j) - mean;
            var += c * c;
        }
        var /= T(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < d; ++j) {
            const T h = (x.at(i, j) - mean) * is;
            (*xhat)[static_cast<std::size_t>(i * d + j)] = h;
            out.at(i, j) = gamma.at(j) * h + beta.at(j);
        }
    }
    if (detail::track(tape, {&x, &gamma, &beta})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x, &gamma, &beta}),
                                [x, gamma, beta, out, xhat, inv_std]() mutable {
            const int m2 = x.rows(), d2 = x.cols();
            for (int i = 0; i < m2; ++i) {
                const T* g = out.grad->data() + i * d2;
                const T* h = xhat->data() + i * d2;
                if (gamma.grad)
                    for (int j = 0; j < d2; ++j) (*gamma.grad)[j] += g[j] * h[j];
                if (beta.grad)
                    for (int j = 0; j < d2; ++j) (*beta.grad)[j] += g[j];
                if (x.grad) {
                    T mean_dh = 0, mean_dh_h = 0;
                    for (int j = 0; j < d2; ++j) {
                        const T dh = g[j] * gamma.at(j);
                        mean_dh += dh;
                        mean_dh_h += dh * h[j];
                    }
                    mean_dh /= T(d2);
                    mean_dh_h /= T(d2);
                    const T is = (*inv_std)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d2; ++j) {
                        const T dh = g[j] * gamma.at(j);
                        (*x.grad)[static_cast<std::size_t>(i * d2 + j)] +=
                            is * (dh - mean_dh - h[j] * mean_dh_h);
                    }
                }
            }
        });
    }
    return out;
}

// Mean negative log-softmax probability of the target class per row.
template <typename T>
Tensor<T> cross_entropy(Tape<T>* tape, const Tensor<T>& logits, const std::vector<int>& targets) {
    check_2d(logits, "cross_entropy");
    const int b = logits.rows(), v = logits.cols();
    if (static_cast<std::size_t>(b) != targets.size())
        throw dim_error("cross_entropy needs one target per row");
    for (int t : targets)
        if (t < 0 || t >= v)
            throw contract_error("cross_entropy target " + std::to_string(t) +
                                 " out of range [0," + std::to_string(v) + ")");
    T loss = 0;
    for (int i = 0; i < b; ++i) {
        T mx = logits.at(i, 0);
        for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
        T sum = 0;
        for (int j = 0; j < v; ++j) sum += std::exp(logits.at(i, j) - mx);
        const T lse = mx + std::log(sum);
        loss += lse - logits.at(i, targets[static_cast<std::size_t>(i)]);
    }
    loss /= T(b);
    Tensor<T> out = Tensor<T>::scalar(loss);
    if (detail::track(tape, {&logits})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&logits}), [logits, targets, out]() mutable {
            if (!logits.grad) return;
            const int b2 = logits.rows(), v2 = logits.cols();
            const T g = (*out.grad)[0] / T(b2);
            for (int i = 0; i < b2; ++i) {
                T mx = logits.at(i, 0);
                for (int j = 1; j < v2; ++j) mx = std::max(mx, logits.at(i, j));
                T sum = 0;
                for (int j = 0; j < v2; ++j) sum += std::exp(logits.at(i, j) - mx);
                for (int j = 0; j < v2; ++j) {
                    T p = std::exp(logits.at(i, j) - mx) / sum;
                    if (j == targets[static_cast<std::size_t>(i)]) p -= T(1);
                    (*logits.grad)[static_cast<std::size_t>(i * v2 + j)] += p * g;
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum_all(Tape<T>* tape, const Tensor<T>& x) {
    T s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += (*x.values)[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out]() mutable {
            if (!x.grad) return;
            const T g = (*out.grad)[0];
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += g;
        });
    }
    return out;
}

// Mean over rows: [L,d] -> [1,d].
template <typename T>
Tensor<T> mean_rows(Tape<T>* tape, const Tensor<T>& x) {
    check_2d(x, "mean_rows");
    const int m = x.rows(), d = x.cols();
    Tensor<T> out = Tensor<T>::zeros({1, d});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) out.at(0, j) += x.at(i, j) / T(m);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out]() mutable {
            if (!x.grad) return;
            const int m2 = x.rows(), d2 = x.cols();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < d2; ++j)
                    (*x.grad)[static_cast<std::size_t>(i * d2 + j)] +=
                        (*out.grad)[static_cast<std::size_t>(j)] / T(m2);
        });
    }
    return out;
}

// Row gather: out[j] = x[idx[j]]. Duplicate indices accumulate gradient,
// which is exactly what embedding lookups need.
template <typename T>
Tensor<T> gather_rows(Tape<T>* tape, const Tensor<T>& x, const std::vector<int>& idx) {
    check_2d(x, "gather_rows");
    const int d = x.cols();
    for (int i : idx)
        if (i < 0 || i >= x.rows())
            throw contract_error("gather_rows index " + std::to_string(i) + " out of range [0," +
                                 std::to_string(x.rows()) + ")");
    Tensor<T> out = Tensor<T>::zeros({static_cast<int>(idx.size()), d});
    for (std::size_t j = 0; j < idx.size(); ++j)
        for (int c = 0; c < d; ++c) out.at(static_cast<int>(j), c) = x.at(idx[j], c);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, idx, out]() mutable {
            if (!x.grad) return;
            const int d2 = x.cols();
            for (std::size_t j = 0; j < idx.size(); ++j)
                for (int c = 0; c < d2; ++c)
                    (*x.grad)[static_cast<std::size_t>(idx[j] * d2 + c)] +=
                        (*out.grad)[j * static_cast<std::size_t>(d2) + static_cast<std::size_t>(c)];
        });
    }
    return out;
}

// Inverse of gather_rows: places row j of x at row idx[j] of a zero
// [rows, d] tensor. Indices must be unique.
template <typename T>
Tensor<T> scatter_rows(Tape<T>* tape, const Tensor<T>& x, const std::vector<int>& idx, int rows) {
    check_2d(x, "scatter_rows");
    if (idx.size() != static_cast<std::size_t>(x.rows()))
        throw contract_error("scatter_rows needs one index per input row");
    std::vector<char> seen(static_cast<std::size_t>(rows), 0);
    for (int i : idx) {
        if (i < 0 || i >= rows) throw contract_error("scatter_rows index out of range");
        if (seen[static_cast<std::size_t>(i)]) throw contract_error("scatter_rows duplicate index");
        seen[static_cast<std::size_t>(i)] = 1;
    }
    const int d = x.cols();
    Tensor<T> out = Tensor<T>::zeros({rows, d});
    for (std::size_t j = 0; j < idx.size(); ++j)
        for (int c = 0; c < d; ++c) out.at(idx[j], c) = x.at(static_cast<int>(j), c);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, idx, out]() mutable {
            if (!x.grad) return;
            const int d2 = x.cols();
            for (std::size_t j = 0; j < idx.size(); ++j)
                for (int c = 0; c < d2; ++c)
                    (*x.grad)[j * static_cast<std::size_t>(d2) + static_cast<std::size_t>(c)] +=
                        (*out.grad)[static_cast<std::size_t>(idx[j] * d2 + c)];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_rows(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw contract_error("concat_rows needs at least one part");
    const int d = parts[0].cols();
    int total = 0;
    for (const auto& p : parts) {
        check_2d(p, "concat_rows");
        if (p.cols() != d) throw dim_error("concat_rows width mismatch");
        total += p.rows();
    }
    Tensor<T> out = Tensor<T>::zeros({total, d});
    int r = 0;
    for (const auto& p : parts) {
        std::copy(p.values->begin(), p.values->end(),
                  out.values->begin() + static_cast<std::ptrdiff_t>(r) * d);
        r += p.rows();
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad || p.node >= 0;
    if (tape && any) {
        out.ensure_grad();
        std::vector<int> ids;
        for (const auto& p : parts) ids.push_back(p.node);
        auto parts_copy = parts;
        out.node = tape->record(std::move(ids), [parts_copy, out]() mutable {
            const int d2 = out.cols();
            int row = 0;
            for (auto& p : parts_copy) {
                if (p.grad)
                    for (std::size_t i = 0; i < p.numel(); ++i)
                        (*p.grad)[i] += (*out.grad)[static_cast<std::size_t>(row) * d2 + i];
                row += p.rows();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> slice_cols(Tape<T>* tape, const Tensor<T>& x, int c0, int w) {
    check_2d(x, "slice_cols");
    if (c0 < 0 || w <= 0 || c0 + w > x.cols()) throw dim_error("slice_cols range out of bounds");
    const int m = x.rows();
    Tensor<T> out = Tensor<T>::zeros({m, w});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out, c0]() mutable {
            if (!x.grad) return;
            const int m2 = x.rows(), n2 = x.cols(), w2 = out.cols();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < w2; ++j)
                    (*x.grad)[static_cast<std::size_t>(i * n2 + c0 + j)] +=
                        (*out.grad)[static_cast<std::size_t>(i * w2 + j)];
        });
    }
    return out;
}

template <typename T>
Tensor<T> concat_cols(Tape<T>* tape, const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw contract_error("concat_cols needs at least one part");
    const int m = parts[0].rows();
    int total = 0;
    for (const auto& p : parts) {
        check_2d(p, "concat_cols");
        if (p.rows() != m) throw dim_error("concat_cols height mismatch");
        total += p.cols();
    }
    Tensor<T> out = Tensor<T>::zeros({m, total});
    int c = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < p.cols(); ++j) out.at(i, c + j) = p.at(i, j);
        c += p.cols();
    }
    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad || p.node >= 0;
    if (tape && any) {
        out.ensure_grad();
        std::vector<int> ids;
        for (const auto& p : parts) ids.push_back(p.node);
        auto parts_copy = parts;
        out.node = tape->record(std::move(ids), [parts_copy, out, m]() mutable {
            int col = 0;
            const int w = out.cols();
            for (auto& p : parts_copy) {
                if (p.grad)
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < p.cols(); ++j)
                            (*p.grad)[static_cast<std::size_t>(i * p.cols() + j)] +=
                                (*out.grad)[static_cast<std::size_t>(i * w + col + j)];
                col += p.cols();
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> reshape(Tape<T>* tape, const Tensor<T>& x, const Shape& s) {
    if (shape_numel(s) != x.numel())
        throw dim_error("reshape to " + shape_str(s) + " changes element count");
    Tensor<T> out;
    out.shape = s;
    out.values = std::make_shared<std::vector<T>>(*x.values);
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out]() mutable {
            if (!x.grad) return;
            for (std::size_t i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*out.grad)[i];
        });
    }
    return out;
}

// Per row i: a's row unless take_b[i], then b's row.
template <typename T>
Tensor<T> row_select_merge(Tape<T>* tape, const Tensor<T>& a, const Tensor<T>& b,
                           const std::vector<char>& take_b) {
    check_2d(a, "row_select_merge");
    if (a.shape != b.shape) throw dim_error("row_select_merge shape mismatch");
    if (take_b.size() != static_cast<std::size_t>(a.rows()))
        throw contract_error("row_select_merge flag count mismatch");
    const int m = a.rows(), d = a.cols();
    Tensor<T> out = Tensor<T>::zeros(a.shape);
    for (int i = 0; i < m; ++i) {
        const Tensor<T>& src = take_b[static_cast<std::size_t>(i)] ? b : a;
        for (int j = 0; j < d; ++j) out.at(i, j) = src.at(i, j);
    }
    if (detail::track(tape, {&a, &b})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&a, &b}), [a, b, out, take_b]() mutable {
            const int m2 = a.rows(), d2 = a.cols();
            for (int i = 0; i < m2; ++i) {
                const Tensor<T>& dst = take_b[static_cast<std::size_t>(i)] ? b : a;
                if (!dst.grad) continue;
                for (int j = 0; j < d2; ++j)
                    (*dst.grad)[static_cast<std::size_t>(i * d2 + j)] +=
                        (*out.grad)[static_cast<std::size_t>(i * d2 + j)];
            }
        });
    }
    return out;
}

// Repeats a [1,d] row `rows` times.
template <typename T>
Tensor<T> broadcast_row(Tape<T>* tape, const Tensor<T>& v, int rows) {
    check_2d(v, "broadcast_row");
    if (v.rows() != 1) throw dim_error("broadcast_row expects shape [1,d]");
    const int d = v.cols();
    Tensor<T> out = Tensor<T>::zeros({rows, d});
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = v.at(0, j);
    if (detail::track(tape, {&v})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&v}), [v, out]() mutable {
            if (!v.grad) return;
            const int m2 = out.rows(), d2 = out.cols();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < d2; ++j)
                    (*v.grad)[static_cast<std::size_t>(j)] +=
                        (*out.grad)[static_cast<std::size_t>(i * d2 + j)];
        });
    }
    return out;
}

// Rows scaled to unit L2 norm; eps keeps the zero row finite.
template <typename T>
Tensor<T> l2_normalize_rows(Tape<T>* tape, const Tensor<T>& x, T eps = T(1e-12)) {
    check_2d(x, "l2_normalize_rows");
    const int m = x.rows(), d = x.cols();
    Tensor<T> out = Tensor<T>::zeros(x.shape);
    auto norms = std::make_shared<std::vector<T>>(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        T ss = eps;
        for (int j = 0; j < d; ++j) ss += x.at(i, j) * x.at(i, j);
        const T n = std::sqrt(ss);
        (*norms)[static_cast<std::size_t>(i)] = n;
        for (int j = 0; j < d; ++j) out.at(i, j) = x.at(i, j) / n;
    }
    if (detail::track(tape, {&x})) {
        out.ensure_grad();
        out.node = tape->record(detail::node_ids<T>({&x}), [x, out, norms]() mutable {
            if (!x.grad) return;
            const int m2 = x.rows(), d2 = x.cols();
            for (int i = 0; i < m2; ++i) {
                const T n = (*norms)[static_cast<std::size_t>(i)];
                T dot = 0;
                for (int j = 0; j < d2; ++j)
                    dot += (*out.grad)[static_cast<std::size_t>(i * d2 + j)] * x.at(i, j);
                for (int j = 0; j < d2; ++j)
                    (*x.grad)[static_cast<std::size_t>(i * d2 + j)] +=
                        (*out.grad)[static_cast<std::size_t>(i * d2 + j)] / n -
                        x.at(i, j) * dot / (n * n * n);
            }
        });
    }
    return out;
}

// x @ W + b, the building block of every projection.
template <typename T>
Tensor<T> linear(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    return add_bias(tape, matmul(tape, x, w), b);
}

}  // namespace vlbt
