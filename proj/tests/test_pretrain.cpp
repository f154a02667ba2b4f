#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>

#include "vlbt/checkpoint.hpp"
#include "vlbt/pretrain.hpp"
#include "vlbt/runner.hpp"

using namespace vlbt;

namespace {

MoMEConfig small_config(int width = 32, int layers = 2) {
    MoMEConfig cfg;
    cfg.layers = layers;
    cfg.width = width;
    cfg.heads = 2;
    cfg.ffn_mult = 4;
    cfg.experts = ExpertSet::MoME;
    cfg.drop_path_rate = 0.0;
    cfg.max_text_positions = 18;
    cfg.max_image_positions = 17;
    cfg.text_vocab = 296;
    cfg.visual_vocab = 32;
    cfg.patch_dim = 192;
    return cfg;
}

PretrainData small_data(std::uint64_t seed, int n) {
    PretrainDataConfig dcfg;
    dcfg.n_texts = n;
    dcfg.n_images = n;
    dcfg.n_pairs = n;
    return make_pretrain_data(seed, dcfg, synthetic_vocab());
}

Codebook small_codebook(int k = 32) {
    // trained on an independent image set large enough to seed K centroids
    const auto images = gen_images(4242, 64, 32);
    std::vector<float> patches;
    for (const auto& img : images) {
        const PatchGrid g = patchify(img, 8);
        patches.insert(patches.end(), g.patches.begin(), g.patches.end());
    }
    return train_codebook(patches, 192, k, 25, 99);
}

}  // namespace

TEST_CASE("untrained losses sit near the uniform baselines") {
    const MoMEConfig cfg = small_config();
    Model<float> model = Model<float>::init(cfg, 7);
    const PretrainData data = small_data(5, 32);
    const Codebook cb = small_codebook();

    Rng rng(1);
    Tape<float> tape;
    TaskStats mlm_stats;
    Tensor<float> mlm = mlm_loss(&tape, model, data.texts, rng, {}, {}, &mlm_stats);
    CHECK(std::abs(mlm.at(0) - std::log(296.0)) <= 0.5);

    TaskStats mim_stats;
    Tensor<float> mim =
        mim_loss(&tape, model, cb, data.images, rng, 0.4, {}, {}, &mim_stats);
    CHECK(std::abs(mim.at(0) - std::log(32.0)) <= 0.5);

    TaskStats mvlm_stats;
    Tensor<float> mvlm =
        mvlm_loss(&tape, model, cb, data.pairs, rng, {}, {}, 1.0, 1.0, &mvlm_stats);
    CHECK(std::abs(mvlm.at(0) - (std::log(296.0) + std::log(32.0))) <= 1.0);
}

TEST_CASE("every mlm batch contributes at least one target per example") {
    const MoMEConfig cfg = small_config();
    Model<float> model = Model<float>::init(cfg, 11);
    const PretrainData data = small_data(13, 16);
    Rng rng(3);
    Tape<float> tape;
    TaskStats stats;
    mlm_loss(&tape, model, data.texts, rng, {}, {}, &stats);
    CHECK(stats.targets >= static_cast<int>(data.texts.size()));
    CHECK_THROWS_AS(mlm_loss(&tape, model, std::vector<TextTokens>{}, rng, {}, {}, nullptr),
                    contract_error);
}

TEST_CASE("mim targets come from the unmasked image") {
    const MoMEConfig cfg = small_config();
    Model<float> model = Model<float>::init(cfg, 13);
    const PretrainData data = small_data(17, 8);
    const Codebook cb = small_codebook();

    Rng rng_run(42), rng_replay(42);
    Tape<float> tape;
    TaskStats stats;
    mim_loss(&tape, model, cb, data.images, rng_run, 0.4, {}, {}, &stats);

    std::vector<int> expected;
    for (const auto& grid : data.images) {
        const std::vector<int> tokens = quantize(grid, cb);  // raw, pre-mask patches
        const MaskPlan plan =
            plan_blockwise(grid.count(), grid.grid_h, grid.grid_w, 0.4, rng_replay, {});
        for (int p : plan.image_positions)
            expected.push_back(tokens[static_cast<std::size_t>(p)]);
    }
    CHECK(stats.target_ids == expected);

    Codebook untrained;
    CHECK_THROWS_AS(mim_loss(&tape, model, untrained, data.images, rng_run, 0.4, {}, {}, nullptr),
                    config_error);
}

TEST_CASE("mvlm with image masking disabled reduces to the text term") {
    const MoMEConfig cfg = small_config();
    Model<float> model = Model<float>::init(cfg, 17);
    const PretrainData data = small_data(19, 4);
    const Codebook cb = small_codebook();
    MvlmParams params;
    params.image_ratio = 0.0;

    Rng rng_a(7), rng_b(7);
    Tape<float> tape;
    TaskStats stats;
    Tensor<float> loss = mvlm_loss(&tape, model, cb, data.pairs, rng_a, params, {}, 1.0, 1.0,
                                   &stats);
    CHECK(stats.image_accuracy == 0.0);

    // equals a pure text cross-entropy over the same plans
    std::vector<Tensor<float>> parts;
    std::vector<int> targets;
    for (const auto& [raw, grid] : data.pairs) {
        const TextTokens tokens = clip_tokens(raw, cfg);
        MlmParams mlm;
        mlm.ratio = 0.5;
        const MaskPlan plan = plan_mlm(tokens, rng_b, cfg.text_vocab, mlm);
        InputRepr<float> text = build_text_repr<float>(nullptr, model.emb, cfg, tokens);
        InputRepr<float> image = build_image_repr<float>(nullptr, model.emb, cfg, grid);
        InputRepr<float> pair = concat_pair<float>(nullptr, text, image);
        InputRepr<float> masked = apply_mask<float>(nullptr, model.emb, cfg, pair, plan);
        Tensor<float> enc = encode<float>(nullptr, model, masked, {});
        std::vector<int> rows;
        for (const auto& tm : plan.text) {
            rows.push_back(masked.token_row(tm.position));
            targets.push_back(tm.original_id);
        }
        parts.push_back(linear<float>(nullptr, gather_rows<float>(nullptr, enc, rows),
                                      model.head_mlm_w, model.head_mlm_b));
    }
    Tensor<float> expected =
        cross_entropy<float>(nullptr, concat_rows<float>(nullptr, parts), targets);
    CHECK(loss.at(0) == Catch::Approx(expected.at(0)).margin(1e-6));
}

TEST_CASE("train_step: single-task total equals that task's loss") {
    TrainConfig tc;
    tc.steps = 4;
    tc.n_txt = tc.n_img = tc.n_pair = 2;
    tc.seed = 7;
    tc.task_mlm = tc.task_mim = false;
    tc.task_mvlm = true;  // the MVLM-only ablation row
    tc.schedule = {1e-3, 1, 4};

    const MoMEConfig cfg = small_config(16, 1);
    Model<float> model = Model<float>::init(cfg, 7);
    AdamState<float> opt = AdamState<float>::init(model.params);
    const PretrainData data = small_data(23, 4);
    const Codebook cb = small_codebook();
    const StepReport report = train_step(model, opt, cb, data, 0, tc);
    REQUIRE(report.tasks.size() == 1);
    CHECK(report.tasks.count("mvlm") == 1);
    CHECK(report.total_loss == report.tasks.at("mvlm").loss);
}

TEST_CASE("train_step: all tasks report three entries and the sum") {
    TrainConfig tc;
    tc.steps = 4;
    tc.n_txt = tc.n_img = tc.n_pair = 2;
    tc.seed = 7;
    tc.schedule = {1e-3, 1, 4};

    const MoMEConfig cfg = small_config(16, 1);
    Model<float> model = Model<float>::init(cfg, 7);
    AdamState<float> opt = AdamState<float>::init(model.params);
    const PretrainData data = small_data(29, 4);
    const Codebook cb = small_codebook();
    const StepReport report = train_step(model, opt, cb, data, 0, tc);
    REQUIRE(report.tasks.size() == 3);
    const float expected = static_cast<float>(report.tasks.at("mlm").loss) +
                           static_cast<float>(report.tasks.at("mim").loss);
    const float total = expected + static_cast<float>(report.tasks.at("mvlm").loss);
    CHECK(report.total_loss == Catch::Approx(total).margin(1e-6));
}

TEST_CASE("two runs with one seed produce bit-identical parameters") {
    TrainConfig tc;
    tc.steps = 10;
    tc.n_txt = tc.n_img = tc.n_pair = 2;
    tc.seed = 11;
    tc.schedule = {1e-3, 2, 10};

    const MoMEConfig cfg = small_config(16, 1);
    const PretrainData data = small_data(31, 6);
    const Codebook cb = small_codebook();

    auto run = [&]() {
        Model<float> model = Model<float>::init(cfg, tc.seed);
        AdamState<float> opt = AdamState<float>::init(model.params);
        for (long long s = 0; s < tc.steps; ++s) train_step(model, opt, cb, data, s, tc);
        return model;
    };
    Model<float> a = run();
    Model<float> b = run();
    for (std::size_t i = 0; i < a.params.items().size(); ++i) {
        const auto& ta = a.params.items()[i].second;
        const auto& tb = b.params.items()[i].second;
        CHECK(std::memcmp(ta.data(), tb.data(), ta.numel() * sizeof(float)) == 0);
    }
}

TEST_CASE("non-finite loss aborts with the task name") {
    TrainConfig tc;
    tc.steps = 1;
    tc.n_txt = 2;
    tc.task_mim = tc.task_mvlm = false;
    tc.seed = 3;
    tc.schedule = {1e-3, 1, 1};

    const MoMEConfig cfg = small_config(16, 1);
    Model<float> model = Model<float>::init(cfg, 3);
    // blow up the embedding table so the forward overflows
    for (auto& v : *model.emb.word.values) v = 1e30f;
    AdamState<float> opt = AdamState<float>::init(model.params);
    const PretrainData data = small_data(37, 4);
    const Codebook cb = small_codebook();
    try {
        train_step(model, opt, cb, data, 0, tc);
        FAIL("expected numeric_error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("mlm") != std::string::npos);
    }
}

TEST_CASE("overfitting a single repeated text reaches high masked accuracy") {
    const MoMEConfig cfg = small_config(32, 1);
    Model<float> model = Model<float>::init(cfg, 5);
    AdamState<float> opt = AdamState<float>::init(model.params);
    const Vocab vocab = synthetic_vocab();
    const std::vector<TextTokens> batch(8, tokenize("two red circles and one blue square", vocab));

    AdamConfig adam;
    adam.weight_decay = 0.0;
    TaskStats stats;
    for (int step = 0; step < 200; ++step) {
        Rng rng = Rng(5).fork(static_cast<std::uint64_t>(step));
        model.params.zero_grad();
        Tape<float> tape;
        Tensor<float> loss = mlm_loss(&tape, model, batch, rng, {}, {}, &stats);
        tape.backward(loss);
        adam_step(model.params, opt, 2e-3, adam);
    }
    CHECK(stats.accuracy >= 0.95);
}

TEST_CASE("checkpoint round-trip is bit-exact and validates its header") {
    const MoMEConfig cfg = small_config(16, 1);
    Model<float> model = Model<float>::init(cfg, 43);
    const PretrainData data = small_data(41, 4);
    const Codebook cb = small_codebook(8);
    AdamState<float> opt = AdamState<float>::init(model.params);
    opt.step = 17;
    (*model.params.items()[0].second.values)[0] = 0.12345f;

    const std::string bytes = serialize_checkpoint(checkpoint_tensors(model, cb, &opt));
    const std::string path = "ckpt_roundtrip_test.vlbt";
    write_file(path, bytes);

    Model<float> restored = Model<float>::init(cfg, 99);
    Codebook cb2;
    AdamState<float> opt2 = AdamState<float>::init(restored.params);
    const LoadedCheckpoint ckpt = load_checkpoint(path);
    restore_model(restored, ckpt);
    cb2 = restore_codebook(ckpt);
    restore_optimizer(opt2, ckpt);

    for (std::size_t i = 0; i < model.params.items().size(); ++i) {
        const auto& ta = model.params.items()[i].second;
        const auto& tb = restored.params.items()[i].second;
        CHECK(std::memcmp(ta.data(), tb.data(), ta.numel() * sizeof(float)) == 0);
    }
    CHECK(cb2.k == cb.k);
    CHECK(std::memcmp(cb2.centroids.data(), cb.centroids.data(),
                      cb.centroids.size() * sizeof(float)) == 0);
    CHECK(cb2.trained_on == cb.trained_on);
    CHECK(opt2.step == 17);

    // saving the restored state reproduces the bytes exactly
    const std::string bytes2 = serialize_checkpoint(checkpoint_tensors(restored, cb2, &opt2));
    CHECK(bytes2 == bytes);

    // corrupting one header byte fails, nothing partially applied
    std::string corrupt = bytes;
    corrupt[1] = 'X';
    CHECK_THROWS_AS(parse_checkpoint(corrupt), format_error);
    std::string truncated = bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(parse_checkpoint(truncated), format_error);
    std::string version_bump = bytes;
    version_bump[4] = 2;
    CHECK_THROWS_AS(parse_checkpoint(version_bump), format_error);

    std::remove(path.c_str());
}

TEST_CASE("metrics log format") {
    std::ostringstream os;
    StepReport report;
    report.tasks["mlm"] = TaskStats{1.5, 0.25, 0.0, 4, {}};
    report.tasks["mvlm"] = TaskStats{2.0, 0.5, 0.1, 8, {}};
    write_step_metrics(os, 12, report);
    CHECK(os.str() == "12\tmlm\t1.500000\t0.2500\n12\tmvlm\t2.000000\t0.5000\n");
}
