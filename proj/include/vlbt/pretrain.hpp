#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "vlbt/codebook.hpp"
#include "vlbt/masking.hpp"
#include "vlbt/model.hpp"
#include "vlbt/optim.hpp"
#include "vlbt/synth.hpp"
#include "vlbt/text.hpp"

namespace vlbt {

struct TrainConfig {
    long long steps = 2000;
    int n_img = 8;
    int n_txt = 8;
    int n_pair = 8;
    std::uint64_t seed = 7;
    bool task_mlm = true;
    bool task_mim = true;
    bool task_mvlm = true;
    ScheduleConfig schedule;
    AdamConfig adam;
    MlmParams mlm;
    MvlmParams mvlm;
    double mim_ratio = 0.4;
    BlockMaskParams block;
    double mvlm_text_weight = 1.0;
    double mvlm_image_weight = 1.0;

    void validate() const {
        if (!task_mlm && !task_mim && !task_mvlm)
            throw config_error("at least one pretraining task must be enabled");
        if (schedule.warmup_steps > schedule.total_steps)
            throw config_error("warmup_steps exceeds steps");
    }
};

struct TaskStats {
    double loss = 0.0;
    double accuracy = 0.0;
    double image_accuracy = 0.0;  // MVLM only
    int targets = 0;
    std::vector<int> target_ids;  // flattened, batch order
};

struct StepReport {
    std::map<std::string, TaskStats> tasks;
    double total_loss = 0.0;
    double lr = 0.0;
};

namespace detail {

inline int argmax_row(const float* p, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return best;
}
inline int argmax_row(const double* p, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

template <typename T>
double accuracy_of(const Tensor<T>& logits, const std::vector<int>& targets) {
    if (targets.empty()) return 0.0;
    int hits = 0;
    for (int i = 0; i < logits.rows(); ++i)
        if (argmax_row(logits.data() + static_cast<std::size_t>(i) * logits.cols(),
                       logits.cols()) == targets[static_cast<std::size_t>(i)])
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(targets.size());
}

}  // namespace detail

// MLM: mask 15% of monomodal text, predict originals at masked positions.
template <typename T>
Tensor<T> mlm_loss(Tape<T>* tape, const Model<T>& model, const std::vector<TextTokens>& texts,
                   Rng& rng, const MlmParams& params, const EncodeOptions& opt,
                   TaskStats* stats = nullptr) {
    if (texts.empty()) throw contract_error("mlm_loss on an empty batch");
    std::vector<Tensor<T>> logit_parts;
    std::vector<int> targets;
    for (const auto& raw : texts) {
        const TextTokens tokens = clip_tokens(raw, model.cfg);
        const MaskPlan plan = plan_mlm(tokens, rng, model.cfg.text_vocab, params);
        InputRepr<T> repr = build_text_repr(tape, model.emb, model.cfg, tokens);
        InputRepr<T> masked = apply_mask(tape, model.emb, model.cfg, repr, plan);
        Tensor<T> enc = encode(tape, model, masked, opt);
        std::vector<int> rows;
        for (const auto& tm : plan.text) {
            rows.push_back(masked.token_row(tm.position));
            targets.push_back(tm.original_id);
        }
        if (rows.empty()) continue;
        Tensor<T> hidden = gather_rows(tape, enc, rows);
        logit_parts.push_back(linear(tape, hidden, model.head_mlm_w, model.head_mlm_b));
    }
    if (logit_parts.empty()) throw contract_error("mlm batch produced no mask targets");
    Tensor<T> logits =
        logit_parts.size() == 1 ? logit_parts[0] : concat_rows(tape, logit_parts);
    Tensor<T> loss = cross_entropy(tape, logits, targets);
    if (stats) {
        stats->loss = static_cast<double>(loss.at(0));
        stats->accuracy = detail::accuracy_of(logits, targets);
        stats->targets = static_cast<int>(targets.size());
        stats->target_ids = targets;
    }
    return loss;
}

// MIM: block-wise mask 40% of patches, predict the visual tokens the
// codebook assigns to the *unmasked* image.
template <typename T>
Tensor<T> mim_loss(Tape<T>* tape, const Model<T>& model, const Codebook& codebook,
                   const std::vector<PatchGrid>& images, Rng& rng, double ratio,
                   const BlockMaskParams& block, const EncodeOptions& opt,
                   TaskStats* stats = nullptr) {
    if (images.empty()) throw contract_error("mim_loss on an empty batch");
    if (!codebook.trained()) throw config_error("mim_loss requires a trained codebook");
    std::vector<Tensor<T>> logit_parts;
    std::vector<int> targets;
    for (const auto& grid : images) {
        const std::vector<int> visual_tokens = quantize(grid, codebook);
        const MaskPlan plan =
            plan_blockwise(grid.count(), grid.grid_h, grid.grid_w, ratio, rng, block);
        InputRepr<T> repr = build_image_repr(tape, model.emb, model.cfg, grid);
        InputRepr<T> masked = apply_mask(tape, model.emb, model.cfg, repr, plan);
        Tensor<T> enc = encode(tape, model, masked, opt);
        std::vector<int> rows;
        for (int p : plan.image_positions) {
            rows.push_back(masked.patch_row(p));
            targets.push_back(visual_tokens[static_cast<std::size_t>(p)]);
        }
        Tensor<T> hidden = gather_rows(tape, enc, rows);
        logit_parts.push_back(linear(tape, hidden, model.head_mim_w, model.head_mim_b));
    }
    Tensor<T> logits =
        logit_parts.size() == 1 ? logit_parts[0] : concat_rows(tape, logit_parts);
    Tensor<T> loss = cross_entropy(tape, logits, targets);
    if (stats) {
        stats->loss = static_cast<double>(loss.at(0));
        stats->accuracy = detail::accuracy_of(logits, targets);
        stats->targets = static_cast<int>(targets.size());
        stats->target_ids = targets;
    }
    return loss;
}

// MVLM: joint 50% text masking and 40% block-wise image masking on pairs;
// loss is text CE plus image CE at (configurable) unit weights.
template <typename T>
Tensor<T> mvlm_loss(Tape<T>* tape, const Model<T>& model, const Codebook& codebook,
                    const std::vector<std::pair<TextTokens, PatchGrid>>& pairs, Rng& rng,
                    const MvlmParams& params, const EncodeOptions& opt,
                    double text_weight = 1.0, double image_weight = 1.0,
                    TaskStats* stats = nullptr) {
    if (pairs.empty()) throw contract_error("mvlm_loss on an empty batch");
    const bool mask_image = params.image_ratio > 0.0;
    if (mask_image && !codebook.trained())
        throw config_error("mvlm_loss requires a trained codebook");
    std::vector<Tensor<T>> text_logit_parts, image_logit_parts;
    std::vector<int> text_targets, image_targets;
    for (const auto& [raw, grid] : pairs) {
        const TextTokens tokens = clip_tokens(raw, model.cfg);
        MaskPlan plan;
        if (mask_image) {
            plan = plan_mvlm(tokens, grid.count(), grid.grid_h, grid.grid_w, rng,
                             model.cfg.text_vocab, params);
        } else {
            MlmParams mlm;
            mlm.ratio = params.text_ratio;
            mlm.use_actions = params.text_use_actions;
            plan = plan_mlm(tokens, rng, model.cfg.text_vocab, mlm);
        }
        std::vector<int> visual_tokens;
        if (mask_image) visual_tokens = quantize(grid, codebook);
        InputRepr<T> text_repr = build_text_repr(tape, model.emb, model.cfg, tokens);
        InputRepr<T> image_repr = build_image_repr(tape, model.emb, model.cfg, grid);
        InputRepr<T> pair_repr = concat_pair(tape, text_repr, image_repr);
        InputRepr<T> masked = apply_mask(tape, model.emb, model.cfg, pair_repr, plan);
        Tensor<T> enc = encode(tape, model, masked, opt);
        std::vector<int> text_rows, image_rows;
        for (const auto& tm : plan.text) {
            text_rows.push_back(masked.token_row(tm.position));
            text_targets.push_back(tm.original_id);
        }
        for (int p : plan.image_positions) {
            image_rows.push_back(masked.patch_row(p));
            image_targets.push_back(visual_tokens[static_cast<std::size_t>(p)]);
        }
        if (!text_rows.empty()) {
            Tensor<T> hidden = gather_rows(tape, enc, text_rows);
            text_logit_parts.push_back(linear(tape, hidden, model.head_mlm_w, model.head_mlm_b));
        }
        if (!image_rows.empty()) {
            Tensor<T> hidden = gather_rows(tape, enc, image_rows);
            image_logit_parts.push_back(linear(tape, hidden, model.head_mim_w, model.head_mim_b));
        }
    }
    if (text_logit_parts.empty()) throw contract_error("mvlm batch produced no text targets");
    Tensor<T> text_logits = text_logit_parts.size() == 1 ? text_logit_parts[0]
                                                         : concat_rows(tape, text_logit_parts);
    Tensor<T> loss = cross_entropy(tape, text_logits, text_targets);
    if (text_weight != 1.0) loss = scale(tape, loss, static_cast<T>(text_weight));
    double image_acc = 0.0;
    if (!image_logit_parts.empty()) {
        Tensor<T> image_logits = image_logit_parts.size() == 1
                                     ? image_logit_parts[0]
                                     : concat_rows(tape, image_logit_parts);
        Tensor<T> image_loss = cross_entropy(tape, image_logits, image_targets);
        image_acc = detail::accuracy_of(image_logits, image_targets);
        if (image_weight != 1.0) image_loss = scale(tape, image_loss, static_cast<T>(image_weight));
        loss = add(tape, loss, image_loss);
    }
    if (stats) {
        stats->loss = static_cast<double>(loss.at(0));
        stats->accuracy = detail::accuracy_of(text_logits, text_targets);
        stats->image_accuracy = image_acc;
        stats->targets = static_cast<int>(text_targets.size() + image_targets.size());
        stats->target_ids = text_targets;
        stats->target_ids.insert(stats->target_ids.end(), image_targets.begin(),
                                 image_targets.end());
    }
    return loss;
}

// In-memory pretraining corpus, already tokenized and patchified.
struct PretrainData {
    std::vector<TextTokens> texts;
    std::vector<PatchGrid> images;
    std::vector<std::pair<TextTokens, PatchGrid>> pairs;
};

struct PretrainDataConfig {
    int n_texts = 256;
    int n_images = 256;
    int n_pairs = 256;
    int image_side = 32;
    int patch_size = 8;
};

inline PretrainData make_pretrain_data(std::uint64_t seed, const PretrainDataConfig& cfg,
                                       const Vocab& vocab) {
    PretrainData data;
    Rng base(seed);
    const auto texts = gen_texts(base.fork(0x54455854ull).next_u64(), cfg.n_texts, cfg.image_side);
    for (const auto& t : texts) data.texts.push_back(tokenize(t, vocab));
    const auto images =
        gen_images(base.fork(0x494D4745ull).next_u64(), cfg.n_images, cfg.image_side);
    for (const auto& img : images) data.images.push_back(patchify(img, cfg.patch_size));
    const auto pairs = gen_pairs(base.fork(0x50414952ull).next_u64(), cfg.n_pairs, cfg.image_side);
    for (const auto& p : pairs)
        data.pairs.emplace_back(tokenize(p.caption, vocab), patchify(p.image, cfg.patch_size));
    return data;
}

// Patches of the first images, flattened, for codebook training.
inline std::vector<float> codebook_training_patches(const PretrainData& data, int max_images = 64) {
    std::vector<float> out;
    const int n = std::min<int>(max_images, static_cast<int>(data.images.size()));
    for (int i = 0; i < n; ++i) {
        const auto& g = data.images[static_cast<std::size_t>(i)];
        out.insert(out.end(), g.patches.begin(), g.patches.end());
    }
    return out;
}

template <typename V>
std::vector<V> batch_slice(const std::vector<V>& data, long long step, int batch) {
    std::vector<V> out;
    if (data.empty()) throw contract_error("batch_slice on an empty dataset");
    for (int j = 0; j < batch; ++j)
        out.push_back(data[static_cast<std::size_t>((step * batch + j) %
                                                    static_cast<long long>(data.size()))]);
    return out;
}

// One optimizer step over the mixed batch: the enabled task losses are
// summed, a single backward pass runs, and Adam applies the scheduled
// learning rate. The per-step rng derives from (seed, step), so resumed
// runs replay identical masks and batches.
inline StepReport train_step(Model<float>& model, AdamState<float>& opt_state,
                             const Codebook& codebook, const PretrainData& data, long long step,
                             const TrainConfig& cfg) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).fork(0x53544550ull).fork(static_cast<std::uint64_t>(step));
    model.params.zero_grad();
    Tape<float> tape;
    EncodeOptions opt;
    opt.training = true;
    opt.rng = &rng;

    StepReport report;
    Tensor<float> total;
    bool first = true;
    auto accumulate = [&](const char* task, Tensor<float> loss, const TaskStats& stats) {
        if (std::isnan(static_cast<double>(loss.at(0))) ||
            std::isinf(static_cast<double>(loss.at(0))))
            throw numeric_error(std::string("non-finite loss in task ") + task + " at step " +
                                std::to_string(step));
        report.tasks[task] = stats;
        total = first ? loss : add(&tape, total, loss);
        first = false;
    };

    if (cfg.task_mlm) {
        TaskStats stats;
        auto batch = batch_slice(data.texts, step, cfg.n_txt);
        Tensor<float> loss = mlm_loss(&tape, model, batch, rng, cfg.mlm, opt, &stats);
        accumulate("mlm", loss, stats);
    }
    if (cfg.task_mim) {
        TaskStats stats;
        auto batch = batch_slice(data.images, step, cfg.n_img);
        Tensor<float> loss =
            mim_loss(&tape, model, codebook, batch, rng, cfg.mim_ratio, cfg.block, opt, &stats);
        accumulate("mim", loss, stats);
    }
    if (cfg.task_mvlm) {
        TaskStats stats;
        auto batch = batch_slice(data.pairs, step, cfg.n_pair);
        Tensor<float> loss = mvlm_loss(&tape, model, codebook, batch, rng, cfg.mvlm, opt,
                                       cfg.mvlm_text_weight, cfg.mvlm_image_weight, &stats);
        accumulate("mvlm", loss, stats);
    }

    report.total_loss = static_cast<double>(total.at(0));
    tape.backward(total);
    report.lr = lr_at_step(step, cfg.schedule);
    adam_step(model.params, opt_state, report.lr, cfg.adam);
    return report;
}

inline void write_metrics_line(std::ostream& os, long long step, const std::string& task,
                               double loss, double acc) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%lld\t%s\t%.6f\t%.4f", step, task.c_str(), loss, acc);
    os << buf << '\n';
}

inline void write_step_metrics(std::ostream& os, long long step, const StepReport& report) {
    for (const auto& [task, stats] : report.tasks)
        write_metrics_line(os, step, task, stats.loss, stats.accuracy);
}

}  // namespace vlbt
