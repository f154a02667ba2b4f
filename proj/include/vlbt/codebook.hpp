#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/image.hpp"
#include "vlbt/rng.hpp"

namespace vlbt {

// K-means codebook over flattened patch vectors. Stands in for a learned
// image tokenizer: quantized patch indices are the MIM/MVLM prediction
// targets. Frozen after training and serialized with the checkpoint.
struct Codebook {
    int k = 0;
    int dim = 0;
    std::vector<float> centroids;  // [K, D]
    std::uint64_t trained_on = 0;  // fingerprint of the training patches

    bool trained() const { return k > 0; }
    const float* centroid(int i) const { return centroids.data() + static_cast<std::size_t>(i) * dim; }
};

inline std::uint64_t fingerprint_patches(const std::vector<float>& data) {
    // FNV-1a over the raw bytes.
    std::uint64_t h = 1469598103934665603ull;
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (std::size_t i = 0; i < data.size() * sizeof(float); ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace detail {

inline double sq_dist(const float* a, const float* b, int d) {
    double acc = 0;
    for (int i = 0; i < d; ++i) {
        const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += diff * diff;
    }
    return acc;
}

}  // namespace detail

// Lloyd iterations with k-means++ seeding. Deterministic per seed; empty
// clusters are reseeded to the farthest point, so the mean quantization
// error never increases between iterations.
inline Codebook train_codebook(const std::vector<float>& patches, int dim, int k, int iters,
                               std::uint64_t seed, std::vector<double>* error_trace = nullptr) {
    if (dim <= 0 || patches.size() % static_cast<std::size_t>(dim) != 0)
        throw config_error("patch matrix does not match patch dim");
    const int n = static_cast<int>(patches.size() / static_cast<std::size_t>(dim));
    if (k < 2) throw config_error("codebook size must be at least 2");
    if (n < k)
        throw config_error("need at least K=" + std::to_string(k) + " patches, got " +
                           std::to_string(n));
    Rng rng(seed);
    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.centroids.resize(static_cast<std::size_t>(k) * dim);
    cb.trained_on = fingerprint_patches(patches);
    auto patch = [&](int i) { return patches.data() + static_cast<std::size_t>(i) * dim; };
    auto centroid = [&](int i) { return cb.centroids.data() + static_cast<std::size_t>(i) * dim; };

    // k-means++: D^2-weighted seeding never picks a duplicate of an
    // existing centroid.
    std::vector<double> dist(static_cast<std::size_t>(n));
    {
        const int first = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
        std::copy(patch(first), patch(first) + dim, centroid(0));
        for (int i = 0; i < n; ++i)
            dist[static_cast<std::size_t>(i)] = detail::sq_dist(patch(i), centroid(0), dim);
        for (int c = 1; c < k; ++c) {
            double total = 0;
            for (double d : dist) total += d;
            int pick = -1;
            if (total <= 0) {
                // all points already coincide with centroids; fall back to
                // the first unused distinct point
                for (int i = 0; i < n && pick < 0; ++i)
                    if (dist[static_cast<std::size_t>(i)] > 0) pick = i;
                if (pick < 0)
                    throw config_error("fewer than K distinct patches; cannot seed codebook");
            } else {
                double r = rng.uniform() * total;
                for (int i = 0; i < n; ++i) {
                    r -= dist[static_cast<std::size_t>(i)];
                    if (r <= 0) {
                        pick = i;
                        break;
                    }
                }
                if (pick < 0) pick = n - 1;
            }
            std::copy(patch(pick), patch(pick) + dim, centroid(c));
            for (int i = 0; i < n; ++i)
                dist[static_cast<std::size_t>(i)] =
                    std::min(dist[static_cast<std::size_t>(i)],
                             detail::sq_dist(patch(i), centroid(c), dim));
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    std::vector<int> counts(static_cast<std::size_t>(k));
    for (int it = 0; it < iters; ++it) {
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::sq_dist(patch(i), centroid(0), dim);
            for (int c = 1; c < k; ++c) {
                const double d = detail::sq_dist(patch(i), centroid(c), dim);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            assign[static_cast<std::size_t>(i)] = best;
            dist[static_cast<std::size_t>(i)] = best_d;
        }
        if (error_trace) {
            double total = 0;
            for (double d : dist) total += d;
            error_trace->push_back(total / n);
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = assign[static_cast<std::size_t>(i)];
            counts[static_cast<std::size_t>(c)]++;
            double* s = sums.data() + static_cast<std::size_t>(c) * dim;
            const float* p = patch(i);
            for (int j = 0; j < dim; ++j) s[j] += p[j];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                float* ct = centroid(c);
                const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
                for (int j = 0; j < dim; ++j)
                    ct[j] = static_cast<float>(s[j] / counts[static_cast<std::size_t>(c)]);
            } else {
                // reseed an empty cluster to the current farthest point
                int far = 0;
                for (int i = 1; i < n; ++i)
                    if (dist[static_cast<std::size_t>(i)] > dist[static_cast<std::size_t>(far)])
                        far = i;
                std::copy(patch(far), patch(far) + dim, centroid(c));
                dist[static_cast<std::size_t>(far)] = 0;
            }
        }
    }
    return cb;
}

// Nearest-centroid index per patch; exact ties resolve to the lowest
// centroid index.
inline std::vector<int> quantize(const PatchGrid& grid, const Codebook& cb) {
    if (!cb.trained()) throw config_error("codebook is not trained");
    if (grid.patch_dim != cb.dim)
        throw dim_error("patch dim " + std::to_string(grid.patch_dim) +
                        " does not match codebook dim " + std::to_string(cb.dim));
    std::vector<int> tokens(static_cast<std::size_t>(grid.count()));
    for (int i = 0; i < grid.count(); ++i) {
        int best = 0;
        double best_d = detail::sq_dist(grid.patch(i), cb.centroid(0), cb.dim);
        for (int c = 1; c < cb.k; ++c) {
            const double d = detail::sq_dist(grid.patch(i), cb.centroid(c), cb.dim);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        tokens[static_cast<std::size_t>(i)] = best;
    }
    return tokens;
}

// Mean squared quantization error of a patch set under the codebook.
inline double quantization_error(const std::vector<float>& patches, const Codebook& cb) {
    const int n = static_cast<int>(patches.size() / static_cast<std::size_t>(cb.dim));
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const float* p = patches.data() + static_cast<std::size_t>(i) * cb.dim;
        double best = detail::sq_dist(p, cb.centroid(0), cb.dim);
        for (int c = 1; c < cb.k; ++c)
            best = std::min(best, detail::sq_dist(p, cb.centroid(c), cb.dim));
        total += best;
    }
    return n > 0 ? total / n : 0.0;
}

}  // namespace vlbt
