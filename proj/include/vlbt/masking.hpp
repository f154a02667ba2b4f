#pragma once

#include <cmath>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/rng.hpp"
#include "vlbt/text.hpp"

namespace vlbt {

enum class TextAction : int { Mask = 0, Random = 1, Keep = 2 };

struct TextMask {
    int position = 0;        // token-relative (0..M-1); never a special position
    TextAction action = TextAction::Mask;
    int original_id = 0;
    int replacement_id = 0;  // T_MASK, the drawn random id, or the original
};

struct MaskPlan {
    std::vector<TextMask> text;        // sorted by position
    std::vector<int> image_positions;  // sorted unique patch indices in [0,N)
    double text_ratio_used = 0.0;
    double image_ratio_used = 0.0;
};

struct MlmParams {
    double ratio = 0.15;
    double p_mask = 0.8;
    double p_random = 0.1;  // remainder keeps the original token
    bool use_actions = true;
};

// Deterministic count policy: max(1, floor(ratio * M)) positions, sampled
// without replacement; the action per position is stochastic.
inline MaskPlan plan_mlm(const TextTokens& tokens, Rng& rng, int vocab_size,
                         const MlmParams& params = {}) {
    MaskPlan plan;
    const int m = tokens.count();
    if (m == 0) return plan;
    const int count = std::max(1, static_cast<int>(std::floor(params.ratio * m)));
    const std::vector<int> positions = rng.sample_without_replacement(m, count);
    for (int pos : positions) {
        TextMask tm;
        tm.position = pos;
        tm.original_id = tokens.ids[static_cast<std::size_t>(pos)];
        if (params.use_actions) {
            const double u = rng.uniform();
            if (u < params.p_mask) {
                tm.action = TextAction::Mask;
            } else if (u < params.p_mask + params.p_random) {
                tm.action = TextAction::Random;
            } else {
                tm.action = TextAction::Keep;
            }
        } else {
            tm.action = TextAction::Mask;
        }
        switch (tm.action) {
            case TextAction::Mask:
                tm.replacement_id = T_MASK;
                break;
            case TextAction::Random:
                tm.replacement_id = kNumSpecials +
                                    static_cast<int>(rng.uniform_int(
                                        static_cast<std::uint64_t>(vocab_size - kNumSpecials)));
                break;
            case TextAction::Keep:
                tm.replacement_id = tm.original_id;
                break;
        }
        plan.text.push_back(tm);
    }
    plan.text_ratio_used = static_cast<double>(count) / m;
    return plan;
}

struct BlockMaskParams {
    int min_area = 4;          // clamped to N for tiny grids
    double min_aspect = 0.3;   // aspect sampled log-uniform in [min, 1/min]
    double max_area_frac = 0.5;  // per-block cap as a fraction of ratio*N
};

// Unions random rectangles until at least ceil(ratio*N) patches are
// masked. Rectangles are clipped to the grid; the realized ratio is
// recorded on the plan.
inline MaskPlan plan_blockwise(int n, int grid_h, int grid_w, double ratio, Rng& rng,
                               const BlockMaskParams& params = {}) {
    if (grid_h * grid_w != n)
        throw contract_error("block mask grid does not cover N patches");
    if (!(ratio > 0.0 && ratio < 1.0)) throw contract_error("mask ratio must be in (0,1)");
    MaskPlan plan;
    const int target = static_cast<int>(std::ceil(ratio * n));
    const int min_area = std::min(params.min_area, n);
    const int max_area =
        std::max(min_area, static_cast<int>(std::floor(ratio * n * params.max_area_frac)));
    std::vector<char> masked(static_cast<std::size_t>(n), 0);
    int total = 0;
    while (total < target) {
        const int area = min_area +
                         static_cast<int>(rng.uniform_int(
                             static_cast<std::uint64_t>(max_area - min_area + 1)));
        const double log_lo = std::log(params.min_aspect);
        const double aspect = std::exp(rng.uniform(log_lo, -log_lo));
        int bh = static_cast<int>(std::lround(std::sqrt(area * aspect)));
        int bw = static_cast<int>(std::lround(std::sqrt(area / aspect)));
        bh = std::min(std::max(bh, 1), grid_h);
        bw = std::min(std::max(bw, 1), grid_w);
        const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(grid_h - bh + 1)));
        const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(grid_w - bw + 1)));
        for (int y = y0; y < y0 + bh; ++y)
            for (int x = x0; x < x0 + bw; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y * grid_w + x);
                if (!masked[idx]) {
                    masked[idx] = 1;
                    ++total;
                }
            }
    }
    for (int i = 0; i < n; ++i)
        if (masked[static_cast<std::size_t>(i)]) plan.image_positions.push_back(i);
    plan.image_ratio_used = static_cast<double>(total) / n;
    return plan;
}

struct MvlmParams {
    double text_ratio = 0.5;
    double image_ratio = 0.4;
    bool text_use_actions = true;  // reuse the 80/10/10 scheme for the 50% text mask
    BlockMaskParams block;
};

// Joint plan: MLM machinery at 50% on the text side, block-wise masking
// at 40% on the image side. Text draws consume the rng first.
inline MaskPlan plan_mvlm(const TextTokens& tokens, int n, int grid_h, int grid_w, Rng& rng,
                          int vocab_size, const MvlmParams& params = {}) {
    MlmParams mlm;
    mlm.ratio = params.text_ratio;
    mlm.use_actions = params.text_use_actions;
    MaskPlan plan = plan_mlm(tokens, rng, vocab_size, mlm);
    MaskPlan img = plan_blockwise(n, grid_h, grid_w, params.image_ratio, rng, params.block);
    plan.image_positions = std::move(img.image_positions);
    plan.image_ratio_used = img.image_ratio_used;
    return plan;
}

}  // namespace vlbt
