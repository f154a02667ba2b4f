#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "vlbt/checkpoint.hpp"
#include "vlbt/config.hpp"
#include "vlbt/finetune.hpp"
#include "vlbt/grad_check.hpp"
#include "vlbt/pretrain.hpp"

namespace vlbt {

// Seed streams for the independent data splits of a run.
namespace seed_stream {
constexpr std::uint64_t kCodebook = 0x434F4445ull;
constexpr std::uint64_t kFtTrain = 0x46545452ull;
constexpr std::uint64_t kFtEval = 0x46544556ull;
constexpr std::uint64_t kCrossModal = 0x434D4F44ull;
}  // namespace seed_stream

struct RunPaths {
    std::string dir;
    std::string config_file() const { return dir + "/config.effective"; }
    std::string seed_file() const { return dir + "/seed.txt"; }
    std::string metrics_file() const { return dir + "/metrics.tsv"; }
    std::string checkpoint_file() const { return dir + "/checkpoint.vlbt"; }
    std::string report_file() const { return dir + "/report.tsv"; }
};

inline RunPaths prepare_run_dir(const std::string& out_dir, const Config& cfg,
                                std::uint64_t seed) {
    RunPaths paths{out_dir};
    std::filesystem::create_directories(out_dir);
    std::ofstream cf(paths.config_file());
    cf << echo_config(cfg);
    std::ofstream sf(paths.seed_file());
    sf << seed << "\n";
    return paths;
}

struct PretrainOutcome {
    Model<float> model;
    Codebook codebook;
    AdamState<float> opt;
    long long completed_steps = 0;
    RunPaths paths;
};

// Full pretraining run: deterministic data + codebook + model init, the
// step loop, metrics log, and the final checkpoint. `resume_from` picks
// up an earlier checkpoint of the same config and continues to `steps`
// (or halt_step).
inline PretrainOutcome run_pretrain(const Config& cfg, std::uint64_t seed,
                                    const std::string& out_dir,
                                    const std::string& resume_from = "") {
    const RunPaths paths = prepare_run_dir(out_dir, cfg, seed);
    const Vocab vocab = synthetic_vocab();
    const MoMEConfig mome = cfg.mome();
    const TrainConfig train_cfg = cfg.train(seed);
    const PretrainData data = make_pretrain_data(seed, cfg.data(seed), vocab);

    PretrainOutcome out;
    out.paths = paths;
    out.model = Model<float>::init(mome, seed);
    out.opt = AdamState<float>::init(out.model.params);
    long long start_step = 0;
    if (!resume_from.empty()) {
        const LoadedCheckpoint ckpt = load_checkpoint(resume_from);
        restore_model(out.model, ckpt);
        out.codebook = restore_codebook(ckpt);
        restore_optimizer(out.opt, ckpt);
        start_step = out.opt.step;
    } else {
        const bool needs_codebook = train_cfg.task_mim || (train_cfg.task_mvlm &&
                                                           train_cfg.mvlm.image_ratio > 0.0);
        if (needs_codebook) {
            const std::vector<float> patches =
                codebook_training_patches(data, static_cast<int>(cfg.codebook_images));
            out.codebook = train_codebook(patches, mome.patch_dim, mome.visual_vocab,
                                          static_cast<int>(cfg.codebook_iters),
                                          Rng(seed).fork(seed_stream::kCodebook).next_u64());
        }
    }

    long long end_step = cfg.steps;
    if (cfg.halt_step > 0) end_step = std::min(end_step, cfg.halt_step);

    std::ofstream metrics(paths.metrics_file(),
                          start_step > 0 ? std::ios::app : std::ios::trunc);
    for (long long step = start_step; step < end_step; ++step) {
        const StepReport report = train_step(out.model, out.opt, out.codebook, data, step,
                                             train_cfg);
        write_step_metrics(metrics, step, report);
    }
    out.completed_steps = end_step;
    save_checkpoint(paths.checkpoint_file(), out.model, out.codebook, &out.opt);
    return out;
}

struct FinetuneOutcome {
    std::map<std::string, double> metrics;
    RunPaths paths;
};

inline void write_report(const RunPaths& paths, const std::map<std::string, double>& metrics) {
    std::ofstream rf(paths.report_file());
    for (const auto& [k, v] : metrics) write_report_line(rf, k, v);
}

// Finetunes one downstream task from cfg.init_checkpoint (or from random
// init when empty), evaluates on a held-out split, writes report.tsv and
// a checkpoint with the backbone plus task head.
inline FinetuneOutcome run_finetune(const std::string& task, const Config& cfg,
                                    std::uint64_t seed, const std::string& out_dir) {
    const RunPaths paths = prepare_run_dir(out_dir, cfg, seed);
    const Vocab vocab = synthetic_vocab();
    const MoMEConfig mome = cfg.mome();
    const FinetuneConfig ft = cfg.finetune(seed);
    const int side = static_cast<int>(cfg.image_side);
    const int patch = static_cast<int>(cfg.patch_size);

    Model<float> model = Model<float>::init(mome, seed);
    Codebook codebook;
    if (!cfg.init_checkpoint.empty()) {
        const LoadedCheckpoint ckpt = load_checkpoint(cfg.init_checkpoint);
        restore_model(model, ckpt);
        codebook = restore_codebook(ckpt);
    }
    const std::uint64_t train_seed = Rng(seed).fork(seed_stream::kFtTrain).next_u64();
    const std::uint64_t eval_seed = Rng(seed).fork(seed_stream::kFtEval).next_u64();

    std::ofstream metrics(paths.metrics_file());
    FinetuneOutcome out;
    out.paths = paths;

    if (task == "vqa") {
        Heads<float> heads = add_vqa_head(model, ft.vqa_answers, seed);
        auto train = tokenize_vqa(gen_vqa(train_seed, static_cast<int>(cfg.ft_train_n), side),
                                  vocab, patch);
        auto held = tokenize_vqa(gen_vqa(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                 vocab, patch);
        finetune_vqa(model, heads, train, ft, &metrics);
        out.metrics["vqa_train_acc"] = eval_vqa(model, heads, train);
        out.metrics["vqa_heldout_acc"] = eval_vqa(model, heads, held);
    } else if (task == "nlvr") {
        Heads<float> heads = add_nlvr_head(model, seed);
        auto train = tokenize_nlvr(gen_nlvr(train_seed, static_cast<int>(cfg.ft_train_n), side),
                                   vocab, patch);
        auto held = tokenize_nlvr(gen_nlvr(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                  vocab, patch);
        finetune_nlvr(model, heads, train, ft, &metrics);
        out.metrics["nlvr_train_acc"] = eval_nlvr(model, heads, train);
        out.metrics["nlvr_heldout_acc"] = eval_nlvr(model, heads, held);
    } else if (task == "retrieval") {
        Heads<float> heads = add_retrieval_heads(model, ft.embed_dim, seed);
        auto train = tokenize_pairs(
            gen_retrieval(train_seed, static_cast<int>(cfg.retrieval_train_n), side), vocab,
            patch);
        auto held = tokenize_pairs(
            gen_retrieval(eval_seed, static_cast<int>(cfg.retrieval_eval_n), side), vocab, patch);
        finetune_retrieval(model, heads, train, ft, &metrics);
        const RetrievalReport report = eval_retrieval(model, heads, held, ft.rerank_k);
        out.metrics["retrieval_t2i_r1"] = report.text_to_image_r1;
        out.metrics["retrieval_i2t_r1"] = report.image_to_text_r1;
        out.metrics["retrieval_t2i_r5"] = report.text_to_image_r5;
        out.metrics["retrieval_i2t_r5"] = report.image_to_text_r5;
    } else if (task == "imgcls") {
        Heads<float> heads = add_imgcls_head(model, ft.imgcls_classes, seed);
        auto train = tokenize_imgcls(gen_imgcls(train_seed, static_cast<int>(cfg.ft_train_n), side),
                                     patch);
        auto held = tokenize_imgcls(gen_imgcls(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                    patch);
        finetune_imgcls(model, heads, train, ft, &metrics);
        out.metrics["imgcls_train_acc"] = eval_imgcls(model, heads, train);
        out.metrics["imgcls_heldout_acc"] = eval_imgcls(model, heads, held);
    } else {
        throw usage_error("unknown finetune task '" + task +
                          "' (expected vqa, nlvr, retrieval, imgcls)");
    }
    write_report(paths, out.metrics);
    save_checkpoint(paths.checkpoint_file(), model, codebook, nullptr);
    return out;
}

// Evaluation-only entry: restores a finetuned checkpoint (or a pretrained
// one for the cross-modal probe) and reports held-out metrics.
inline FinetuneOutcome run_eval(const std::string& task, const Config& cfg, std::uint64_t seed,
                                const std::string& out_dir) {
    const RunPaths paths = prepare_run_dir(out_dir, cfg, seed);
    if (cfg.eval_checkpoint.empty()) throw config_error("eval requires eval_checkpoint");
    const Vocab vocab = synthetic_vocab();
    const MoMEConfig mome = cfg.mome();
    const FinetuneConfig ft = cfg.finetune(seed);
    const int side = static_cast<int>(cfg.image_side);
    const int patch = static_cast<int>(cfg.patch_size);
    const std::uint64_t eval_seed = Rng(seed).fork(seed_stream::kFtEval).next_u64();

    Model<float> model = Model<float>::init(mome, seed);
    FinetuneOutcome out;
    out.paths = paths;
    const LoadedCheckpoint ckpt = load_checkpoint(cfg.eval_checkpoint);

    if (task == "vqa") {
        Heads<float> heads = add_vqa_head(model, ft.vqa_answers, seed);
        restore_model(model, ckpt);
        auto held = tokenize_vqa(gen_vqa(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                 vocab, patch);
        out.metrics["vqa_heldout_acc"] = eval_vqa(model, heads, held);
    } else if (task == "nlvr") {
        Heads<float> heads = add_nlvr_head(model, seed);
        restore_model(model, ckpt);
        auto held = tokenize_nlvr(gen_nlvr(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                  vocab, patch);
        out.metrics["nlvr_heldout_acc"] = eval_nlvr(model, heads, held);
    } else if (task == "retrieval") {
        Heads<float> heads = add_retrieval_heads(model, ft.embed_dim, seed);
        restore_model(model, ckpt);
        auto held = tokenize_pairs(
            gen_retrieval(eval_seed, static_cast<int>(cfg.retrieval_eval_n), side), vocab, patch);
        const RetrievalReport report = eval_retrieval(model, heads, held, ft.rerank_k);
        out.metrics["retrieval_t2i_r1"] = report.text_to_image_r1;
        out.metrics["retrieval_i2t_r1"] = report.image_to_text_r1;
        out.metrics["retrieval_t2i_r5"] = report.text_to_image_r5;
        out.metrics["retrieval_i2t_r5"] = report.image_to_text_r5;
    } else if (task == "imgcls") {
        Heads<float> heads = add_imgcls_head(model, ft.imgcls_classes, seed);
        restore_model(model, ckpt);
        auto held = tokenize_imgcls(gen_imgcls(eval_seed, static_cast<int>(cfg.ft_eval_n), side),
                                    patch);
        out.metrics["imgcls_heldout_acc"] = eval_imgcls(model, heads, held);
    } else if (task == "crossmodal") {
        restore_model(model, ckpt);  // pretrained checkpoint, no task head
        const std::uint64_t cm_seed = Rng(seed).fork(seed_stream::kCrossModal).next_u64();
        auto held = tokenize_pairs(gen_pairs(cm_seed, static_cast<int>(cfg.ft_eval_n), side),
                                   vocab, patch);
        const CrossModalReport report =
            cross_modal_masked_word_accuracy(model, held, vocab, cm_seed);
        out.metrics["crossmodal_acc_image"] = report.accuracy_with_image;
        out.metrics["crossmodal_acc_noise"] = report.accuracy_with_noise;
        out.metrics["crossmodal_predictions"] = report.predictions;
    } else {
        throw usage_error("unknown eval task '" + task + "'");
    }
    write_report(paths, out.metrics);
    return out;
}

// Full-model gradient check: 2-block width-16 MoME model, one image-text
// pair, a fixed MVLM mask plan, 64-bit arithmetic. Every parameter tensor
// is compared against central finite differences.
inline GradCheckReport<double> grad_check_full_model(double h = 1e-3, double tol = 1e-3,
                                                     std::uint64_t seed = 7) {
    MoMEConfig cfg;
    cfg.layers = 2;
    cfg.width = 16;
    cfg.heads = 2;
    cfg.ffn_mult = 4;
    cfg.experts = ExpertSet::MoME;
    cfg.drop_path_rate = 0.0;
    cfg.max_text_positions = 18;
    cfg.max_image_positions = 17;
    cfg.text_vocab = synthetic_vocab().size();
    cfg.visual_vocab = 8;
    cfg.patch_dim = 192;

    const Vocab vocab = synthetic_vocab();
    Model<double> model = Model<double>::init(cfg, seed);

    const auto pairs = gen_pairs(Rng(seed).fork(1).next_u64(), 8, 32);
    const TextTokens tokens = clip_tokens(tokenize(pairs[0].caption, vocab), cfg);
    const PatchGrid grid = patchify(pairs[0].image, 8);

    // Visual targets from a tiny codebook; trained on several images so
    // k-means has enough distinct patches to seed from.
    std::vector<float> cb_patches;
    for (const auto& p : pairs) {
        const PatchGrid g = patchify(p.image, 8);
        cb_patches.insert(cb_patches.end(), g.patches.begin(), g.patches.end());
    }
    const Codebook cb = train_codebook(cb_patches, grid.patch_dim, cfg.visual_vocab, 10,
                                       Rng(seed).fork(seed_stream::kCodebook).next_u64());
    const std::vector<int> visual_tokens = quantize(grid, cb);

    Rng plan_rng = Rng(seed).fork(2);
    const MaskPlan plan = plan_mvlm(tokens, grid.count(), grid.grid_h, grid.grid_w, plan_rng,
                                    cfg.text_vocab);

    auto loss_fn = [&](Tape<double>* tape) {
        InputRepr<double> text = build_text_repr(tape, model.emb, model.cfg, tokens);
        InputRepr<double> image = build_image_repr(tape, model.emb, model.cfg, grid);
        InputRepr<double> pair = concat_pair(tape, text, image);
        InputRepr<double> masked = apply_mask(tape, model.emb, model.cfg, pair, plan);
        Tensor<double> enc = encode(tape, model, masked, {});
        std::vector<int> text_rows, text_targets, image_rows, image_targets;
        for (const auto& tm : plan.text) {
            text_rows.push_back(masked.token_row(tm.position));
            text_targets.push_back(tm.original_id);
        }
        for (int p : plan.image_positions) {
            image_rows.push_back(masked.patch_row(p));
            image_targets.push_back(visual_tokens[static_cast<std::size_t>(p)]);
        }
        Tensor<double> text_logits =
            linear(tape, gather_rows(tape, enc, text_rows), model.head_mlm_w, model.head_mlm_b);
        Tensor<double> image_logits =
            linear(tape, gather_rows(tape, enc, image_rows), model.head_mim_w, model.head_mim_b);
        return add(tape, cross_entropy(tape, text_logits, text_targets),
                   cross_entropy(tape, image_logits, image_targets));
    };
    return grad_check(loss_fn, model.params.items(), h, tol);
}

}  // namespace vlbt
