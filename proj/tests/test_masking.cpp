#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "vlbt/masking.hpp"
#include "vlbt/synth.hpp"

using namespace vlbt;

namespace {

TextTokens tokens_of_length(int m) {
    TextTokens t;
    for (int i = 0; i < m; ++i) t.ids.push_back(kNumSpecials + kByteVocab + (i % 4));
    return t;
}

}  // namespace

TEST_CASE("plan_mlm deterministic count policy") {
    Rng rng(7);
    const MaskPlan p20 = plan_mlm(tokens_of_length(20), rng, 296);
    CHECK(p20.text.size() == 3);  // floor(0.15 * 20)

    const MaskPlan p1 = plan_mlm(tokens_of_length(1), rng, 296);
    CHECK(p1.text.size() == 1);  // max-with-1 policy

    const MaskPlan p0 = plan_mlm(tokens_of_length(0), rng, 296);
    CHECK(p0.text.empty());
}

TEST_CASE("plan_mlm positions are unique, in range, never specials") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform_int(16));
        const MaskPlan plan = plan_mlm(tokens_of_length(m), rng, 296);
        std::set<int> seen;
        for (const auto& tm : plan.text) {
            CHECK(tm.position >= 0);
            CHECK(tm.position < m);
            CHECK(seen.insert(tm.position).second);
            if (tm.action == TextAction::Random) {
                CHECK(tm.replacement_id >= kNumSpecials);
                CHECK(tm.replacement_id < 296);
            }
            if (tm.action == TextAction::Mask) CHECK(tm.replacement_id == T_MASK);
            if (tm.action == TextAction::Keep) CHECK(tm.replacement_id == tm.original_id);
        }
    }
}

TEST_CASE("plan_mlm action frequencies are 0.8/0.1/0.1 within binomial bounds") {
    Rng rng(13);
    int counts[3] = {0, 0, 0};
    int total = 0;
    while (total < 10000) {
        const MaskPlan plan = plan_mlm(tokens_of_length(16), rng, 296);
        for (const auto& tm : plan.text) {
            counts[static_cast<int>(tm.action)]++;
            ++total;
        }
    }
    const double n = total;
    CHECK(std::abs(counts[0] / n - 0.8) <= 0.02);
    CHECK(std::abs(counts[1] / n - 0.1) <= 0.02);
    CHECK(std::abs(counts[2] / n - 0.1) <= 0.02);
}

TEST_CASE("plan_mlm determinism: same seed, same plan") {
    Rng a(99), b(99);
    const MaskPlan pa = plan_mlm(tokens_of_length(12), a, 296);
    const MaskPlan pb = plan_mlm(tokens_of_length(12), b, 296);
    REQUIRE(pa.text.size() == pb.text.size());
    for (std::size_t i = 0; i < pa.text.size(); ++i) {
        CHECK(pa.text[i].position == pb.text[i].position);
        CHECK(pa.text[i].action == pb.text[i].action);
        CHECK(pa.text[i].replacement_id == pb.text[i].replacement_id);
    }
}

TEST_CASE("plan_blockwise masks at least the ceiling on a 14x14 grid") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const MaskPlan plan = plan_blockwise(196, 14, 14, 0.4, rng);
        CHECK(plan.image_positions.size() >= 79);  // ceil(0.4 * 196)
        std::set<int> unique(plan.image_positions.begin(), plan.image_positions.end());
        CHECK(unique.size() == plan.image_positions.size());
        for (int p : plan.image_positions) {
            CHECK(p >= 0);
            CHECK(p < 196);
        }
    }
}

TEST_CASE("plan_blockwise on 4x4: ceiling holds and mean realized ratio is sane") {
    Rng rng(19);
    double sum_ratio = 0;
    const int trials = 10000;
    for (int trial = 0; trial < trials; ++trial) {
        const MaskPlan plan = plan_blockwise(16, 4, 4, 0.4, rng);
        CHECK(plan.image_positions.size() >= 7);  // ceil(0.4 * 16)
        sum_ratio += plan.image_ratio_used;
    }
    const double mean = sum_ratio / trials;
    CHECK(mean >= 0.40);
    CHECK(mean <= 0.60);
}

TEST_CASE("plan_blockwise mean realized ratio on 14x14 is within [0.40, 0.60]") {
    Rng rng(23);
    double sum_ratio = 0;
    const int trials = 2000;
    for (int trial = 0; trial < trials; ++trial) {
        const MaskPlan plan = plan_blockwise(196, 14, 14, 0.4, rng);
        sum_ratio += plan.image_ratio_used;
    }
    const double mean = sum_ratio / trials;
    CHECK(mean >= 0.40);
    CHECK(mean <= 0.60);
}

namespace {

// Adjacent masked pairs per masked cell: contiguous block unions score
// higher than uniform masking of the same count.
double adjacency_score(const std::vector<int>& positions, int grid_h, int grid_w) {
    std::set<int> mask(positions.begin(), positions.end());
    int adjacent = 0;
    for (int p : positions) {
        const int y = p / grid_w, x = p % grid_w;
        if (x + 1 < grid_w && mask.count(p + 1)) ++adjacent;
        if (y + 1 < grid_h && mask.count(p + grid_w)) ++adjacent;
    }
    return static_cast<double>(adjacent) / static_cast<double>(positions.size());
}

}  // namespace

TEST_CASE("block-wise masks show positive spatial autocorrelation vs uniform") {
    Rng rng(29);
    double block_total = 0, uniform_total = 0;
    const int trials = 10000;
    for (int trial = 0; trial < trials; ++trial) {
        const MaskPlan plan = plan_blockwise(16, 4, 4, 0.4, rng);
        block_total += adjacency_score(plan.image_positions, 4, 4);
        const std::vector<int> uniform =
            rng.sample_without_replacement(16, static_cast<int>(plan.image_positions.size()));
        uniform_total += adjacency_score(uniform, 4, 4);
    }
    CHECK(block_total / trials > uniform_total / trials + 0.05);
}

TEST_CASE("plan_blockwise validates its preconditions") {
    Rng rng(31);
    CHECK_THROWS_AS(plan_blockwise(16, 4, 3, 0.4, rng), contract_error);
    CHECK_THROWS_AS(plan_blockwise(16, 4, 4, 0.0, rng), contract_error);
    CHECK_THROWS_AS(plan_blockwise(16, 4, 4, 1.0, rng), contract_error);
}

TEST_CASE("plan_mvlm combines 50% text and 40% block-wise image masking") {
    Rng rng(37);
    const MaskPlan plan = plan_mvlm(tokens_of_length(8), 16, 4, 4, rng, 296);
    CHECK(plan.text.size() == 4);                // floor(0.5 * 8)
    CHECK(plan.image_positions.size() >= 7);     // ceil(0.4 * 16)
    for (const auto& tm : plan.text) {
        CHECK(tm.position >= 0);
        CHECK(tm.position < 8);
    }
    for (int p : plan.image_positions) {
        CHECK(p >= 0);
        CHECK(p < 16);
    }
}

TEST_CASE("plan_mvlm without the 80/10/10 actions masks every chosen token") {
    Rng rng(41);
    MvlmParams params;
    params.text_use_actions = false;
    const MaskPlan plan = plan_mvlm(tokens_of_length(10), 16, 4, 4, rng, 296, params);
    for (const auto& tm : plan.text) {
        CHECK(tm.action == TextAction::Mask);
        CHECK(tm.replacement_id == T_MASK);
    }
}
