#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vlbt/model.hpp"
#include "vlbt/optim.hpp"
#include "vlbt/pretrain.hpp"
#include "vlbt/synth.hpp"

namespace vlbt {

// Task heads created at finetune time. Parameters are appended to the
// model's store so checkpoints carry backbone and head together.
template <typename T>
struct Heads {
    int embed_dim = 0;  // d_e for the dual-encoder projections
    Tensor<T> cls_w, cls_b;        // d -> answers (fusion classification)
    Tensor<T> nlvr_w, nlvr_b;      // 2d -> 2
    Tensor<T> itm_w, itm_b;        // d -> 2
    Tensor<T> img_proj, txt_proj;  // d -> d_e, bias-free
    Tensor<T> log_tau;             // temperature: tau = exp(log_tau) > 0
    Tensor<T> imgcls_w, imgcls_b;  // d -> classes
};

namespace detail {

template <typename T>
Rng head_rng(std::uint64_t seed) {
    return Rng(seed).fork(0x48454144ull);
}

}  // namespace detail

template <typename T>
Heads<T> add_vqa_head(Model<T>& model, int answers, std::uint64_t seed) {
    Heads<T> h;
    Rng rng = detail::head_rng<T>(seed);
    h.cls_w = model.params.add("head/vqa/w",
                               detail::init_trunc_normal<T>({model.cfg.width, answers}, rng));
    h.cls_b = model.params.add("head/vqa/b", Tensor<T>::zeros({answers}));
    return h;
}

template <typename T>
Heads<T> add_nlvr_head(Model<T>& model, std::uint64_t seed) {
    Heads<T> h;
    Rng rng = detail::head_rng<T>(seed);
    h.nlvr_w = model.params.add("head/nlvr/w",
                                detail::init_trunc_normal<T>({2 * model.cfg.width, 2}, rng));
    h.nlvr_b = model.params.add("head/nlvr/b", Tensor<T>::zeros({2}));
    return h;
}

template <typename T>
Heads<T> add_retrieval_heads(Model<T>& model, int embed_dim, std::uint64_t seed) {
    if (embed_dim > model.cfg.width)
        throw config_error("retrieval embed dim must not exceed model width");
    Heads<T> h;
    h.embed_dim = embed_dim;
    Rng rng = detail::head_rng<T>(seed);
    h.img_proj = model.params.add(
        "head/itc/img_proj", detail::init_trunc_normal<T>({model.cfg.width, embed_dim}, rng));
    h.txt_proj = model.params.add(
        "head/itc/txt_proj", detail::init_trunc_normal<T>({model.cfg.width, embed_dim}, rng));
    h.log_tau = model.params.add("head/itc/log_tau",
                                 Tensor<T>::from({1}, {static_cast<T>(std::log(1.0 / 0.07))}));
    h.itm_w = model.params.add("head/itm/w",
                               detail::init_trunc_normal<T>({model.cfg.width, 2}, rng));
    h.itm_b = model.params.add("head/itm/b", Tensor<T>::zeros({2}));
    return h;
}

template <typename T>
Heads<T> add_imgcls_head(Model<T>& model, int classes, std::uint64_t seed) {
    Heads<T> h;
    Rng rng = detail::head_rng<T>(seed);
    h.imgcls_w = model.params.add(
        "head/imgcls/w", detail::init_trunc_normal<T>({model.cfg.width, classes}, rng));
    h.imgcls_b = model.params.add("head/imgcls/b", Tensor<T>::zeros({classes}));
    return h;
}

// --------------------------------------------------------------------------
// Task forwards (no masking on any finetune path)
// --------------------------------------------------------------------------

template <typename T>
Tensor<T> encode_pair(Tape<T>* tape, const Model<T>& model, const TextTokens& tokens,
                      const PatchGrid& grid, const EncodeOptions& opt) {
    InputRepr<T> text = build_text_repr(tape, model.emb, model.cfg, clip_tokens(tokens, model.cfg));
    InputRepr<T> image = build_image_repr(tape, model.emb, model.cfg, grid);
    return encode(tape, model, concat_pair(tape, text, image), opt);
}

// Fusion classification: the final T_CLS vector of the jointly encoded
// pair feeds the classifier.
template <typename T>
Tensor<T> fusion_classify(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                          const TextTokens& question, const PatchGrid& image,
                          const EncodeOptions& opt = {}) {
    Tensor<T> enc = encode_pair(tape, model, question, image, opt);
    Tensor<T> cls = gather_rows(tape, enc, {0});
    return linear(tape, cls, heads.cls_w, heads.cls_b);
}

// NLVR2-style: encode (text, left) and (text, right), concatenate the two
// T_CLS vectors, classify true/false.
template <typename T>
Tensor<T> nlvr_forward(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                       const PatchGrid& left, const PatchGrid& right, const TextTokens& text,
                       const EncodeOptions& opt = {}) {
    Tensor<T> enc_left = encode_pair(tape, model, text, left, opt);
    Tensor<T> enc_right = encode_pair(tape, model, text, right, opt);
    Tensor<T> cls_left = gather_rows(tape, enc_left, {0});
    Tensor<T> cls_right = gather_rows(tape, enc_right, {0});
    Tensor<T> joined = concat_cols<T>(tape, {cls_left, cls_right});
    return linear(tape, joined, heads.nlvr_w, heads.nlvr_b);
}

// Dual-encoder embeddings: final T_CLS / I_CLS vectors through the
// projections, L2-normalized. Rows align with the batch order.
template <typename T>
Tensor<T> text_embeddings(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                          const std::vector<TextTokens>& texts, const EncodeOptions& opt = {}) {
    std::vector<Tensor<T>> rows;
    for (const auto& t : texts) {
        InputRepr<T> repr = build_text_repr(tape, model.emb, model.cfg, clip_tokens(t, model.cfg));
        Tensor<T> enc = encode(tape, model, repr, opt);
        rows.push_back(matmul(tape, gather_rows(tape, enc, {0}), heads.txt_proj));
    }
    return l2_normalize_rows(tape, rows.size() == 1 ? rows[0] : concat_rows(tape, rows));
}

template <typename T>
Tensor<T> image_embeddings(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                           const std::vector<PatchGrid>& images, const EncodeOptions& opt = {}) {
    std::vector<Tensor<T>> rows;
    for (const auto& g : images) {
        InputRepr<T> repr = build_image_repr(tape, model.emb, model.cfg, g);
        Tensor<T> enc = encode(tape, model, repr, opt);
        rows.push_back(matmul(tape, gather_rows(tape, enc, {0}), heads.img_proj));
    }
    return l2_normalize_rows(tape, rows.size() == 1 ? rows[0] : concat_rows(tape, rows));
}

// Image-text contrast: symmetric cross-entropy over the temperature-scaled
// similarity matrix with matched pairs on the diagonal.
template <typename T>
Tensor<T> itc_loss(Tape<T>* tape, const Heads<T>& heads, const Tensor<T>& text_emb,
                   const Tensor<T>& image_emb) {
    if (text_emb.rows() != image_emb.rows()) throw dim_error("itc batch size mismatch");
    const int b = text_emb.rows();
    if (b == 1)
        std::cerr << "warning: itc_loss on a single-pair batch is identically zero\n";
    Tensor<T> tau = exp_of(tape, heads.log_tau);
    Tensor<T> sims = scale_by(tape, matmul(tape, text_emb, transpose(tape, image_emb)), tau);
    std::vector<int> diag(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) diag[static_cast<std::size_t>(i)] = i;
    Tensor<T> loss_rows = cross_entropy(tape, sims, diag);
    Tensor<T> loss_cols = cross_entropy(tape, transpose(tape, sims), diag);
    return scale(tape, add(tape, loss_rows, loss_cols), T(0.5));
}

// Temperature-scaled similarity values (no tape) used for hard-negative
// sampling and for dual-encoder retrieval scores.
template <typename T>
std::vector<std::vector<double>> similarity_matrix(const Tensor<T>& text_emb,
                                                   const Tensor<T>& image_emb, double tau) {
    const int rows = text_emb.rows(), cols = image_emb.rows(), d = text_emb.cols();
    std::vector<std::vector<double>> sims(static_cast<std::size_t>(rows),
                                          std::vector<double>(static_cast<std::size_t>(cols)));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            double acc = 0;
            for (int c = 0; c < d; ++c)
                acc += static_cast<double>(text_emb.at(i, c)) *
                       static_cast<double>(image_emb.at(j, c));
            sims[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = tau * acc;
        }
    return sims;
}

// Draws one in-batch hard negative for row i: candidate j != i with
// probability proportional to softmax(sims[i][j]) over the off-diagonal.
inline int sample_hard_negative(const std::vector<double>& sims_row, int i, Rng& rng) {
    const int b = static_cast<int>(sims_row.size());
    if (b < 2) throw contract_error("hard-negative sampling needs at least two candidates");
    double mx = -1e300;
    for (int j = 0; j < b; ++j)
        if (j != i) mx = std::max(mx, sims_row[static_cast<std::size_t>(j)]);
    double total = 0;
    std::vector<double> weights(static_cast<std::size_t>(b), 0.0);
    for (int j = 0; j < b; ++j) {
        if (j == i) continue;
        const double w = std::exp(sims_row[static_cast<std::size_t>(j)] - mx);
        weights[static_cast<std::size_t>(j)] = w;
        total += w;
    }
    double r = rng.uniform() * total;
    for (int j = 0; j < b; ++j) {
        if (j == i) continue;
        r -= weights[static_cast<std::size_t>(j)];
        if (r <= 0) return j;
    }
    return i == b - 1 ? b - 2 : b - 1;
}

// Image-text matching with in-batch hard negatives: for each text one
// negative image is drawn with probability proportional to the softmax of
// its ITC similarities (diagonal excluded); positives and negatives are
// fused and classified match / no-match.
template <typename T>
Tensor<T> itm_loss(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                   const std::vector<TextTokens>& texts, const std::vector<PatchGrid>& images,
                   const Tensor<T>& text_emb, const Tensor<T>& image_emb, Rng& rng,
                   const EncodeOptions& opt = {}) {
    const int b = static_cast<int>(texts.size());
    if (b < 2) throw contract_error("itm_loss needs at least two pairs for negatives");
    const double tau = std::exp(static_cast<double>(heads.log_tau.at(0)));
    const auto sims = similarity_matrix(text_emb, image_emb, tau);

    std::vector<Tensor<T>> logit_rows;
    std::vector<int> labels;
    for (int i = 0; i < b; ++i) {
        // positive pair
        Tensor<T> enc = encode_pair(tape, model, texts[static_cast<std::size_t>(i)],
                                    images[static_cast<std::size_t>(i)], opt);
        logit_rows.push_back(
            linear(tape, gather_rows(tape, enc, {0}), heads.itm_w, heads.itm_b));
        labels.push_back(1);
        const int pick = sample_hard_negative(sims[static_cast<std::size_t>(i)], i, rng);
        Tensor<T> neg = encode_pair(tape, model, texts[static_cast<std::size_t>(i)],
                                    images[static_cast<std::size_t>(pick)], opt);
        logit_rows.push_back(
            linear(tape, gather_rows(tape, neg, {0}), heads.itm_w, heads.itm_b));
        labels.push_back(0);
    }
    Tensor<T> logits = concat_rows(tape, logit_rows);
    return cross_entropy(tape, logits, labels);
}

// Match probability of one (text, image) pair under the ITM head.
template <typename T>
double itm_match_score(const Model<T>& model, const Heads<T>& heads, const TextTokens& text,
                       const PatchGrid& image) {
    Tensor<T> enc = encode_pair<T>(nullptr, model, text, image, {});
    Tensor<T> logits =
        linear<T>(nullptr, gather_rows<T>(nullptr, enc, {0}), heads.itm_w, heads.itm_b);
    const double a = static_cast<double>(logits.at(0, 0));
    const double m = static_cast<double>(logits.at(0, 1));
    const double mx = std::max(a, m);
    const double ea = std::exp(a - mx), em = std::exp(m - mx);
    return em / (ea + em);
}

// Average pooling over all final vectors (I_CLS included), then a linear
// classifier.
template <typename T>
Tensor<T> avgpool_classify(Tape<T>* tape, const Model<T>& model, const Heads<T>& heads,
                           const PatchGrid& image, const EncodeOptions& opt = {}) {
    InputRepr<T> repr = build_image_repr(tape, model.emb, model.cfg, image);
    Tensor<T> enc = encode(tape, model, repr, opt);
    return linear(tape, mean_rows(tape, enc), heads.imgcls_w, heads.imgcls_b);
}

// --------------------------------------------------------------------------
// Retrieval: dual-encoder shortlist, fusion rerank
// --------------------------------------------------------------------------

struct RetrievalIndex {
    std::vector<std::vector<float>> image_rows;  // normalized [n][d_e]
    std::vector<std::vector<float>> text_rows;
    double tau = 1.0;
};

template <typename T>
RetrievalIndex build_retrieval_index(const Model<T>& model, const Heads<T>& heads,
                                     const std::vector<TextTokens>& texts,
                                     const std::vector<PatchGrid>& images) {
    RetrievalIndex index;
    index.tau = std::exp(static_cast<double>(heads.log_tau.at(0)));
    Tensor<T> timg = image_embeddings<T>(nullptr, model, heads, images, {});
    Tensor<T> ttxt = text_embeddings<T>(nullptr, model, heads, texts, {});
    for (int i = 0; i < timg.rows(); ++i) {
        std::vector<float> row(static_cast<std::size_t>(timg.cols()));
        for (int c = 0; c < timg.cols(); ++c) row[static_cast<std::size_t>(c)] =
            static_cast<float>(timg.at(i, c));
        index.image_rows.push_back(std::move(row));
    }
    for (int i = 0; i < ttxt.rows(); ++i) {
        std::vector<float> row(static_cast<std::size_t>(ttxt.cols()));
        for (int c = 0; c < ttxt.cols(); ++c) row[static_cast<std::size_t>(c)] =
            static_cast<float>(ttxt.at(i, c));
        index.text_rows.push_back(std::move(row));
    }
    return index;
}

// Stage 1: cosine top-k, ties by lower id. Returns candidate ids in
// shortlist order.
inline std::vector<int> dual_encoder_topk(const std::vector<float>& query,
                                          const std::vector<std::vector<float>>& index_rows,
                                          int k) {
    if (index_rows.empty()) throw contract_error("retrieval index is empty");
    if (k > static_cast<int>(index_rows.size()))
        throw contract_error("rerank k exceeds candidate count");
    std::vector<std::pair<double, int>> scored;
    for (std::size_t i = 0; i < index_rows.size(); ++i) {
        double acc = 0;
        for (std::size_t c = 0; c < query.size(); ++c) acc += query[c] * index_rows[i][c];
        scored.emplace_back(-acc, static_cast<int>(i));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    for (int i = 0; i < k; ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
    return out;
}

// Stage 2: ITM positive-class scores order the shortlist; ties keep the
// stage-1 order.
template <typename T>
std::vector<int> rerank_retrieve(const Model<T>& model, const Heads<T>& heads,
                                 const std::vector<float>& query_emb,
                                 const std::vector<std::vector<float>>& candidate_rows, int k,
                                 const std::function<double(int)>& fusion_score) {
    const std::vector<int> shortlist = dual_encoder_topk(query_emb, candidate_rows, k);
    std::vector<std::pair<double, int>> scored;  // (-score, stage1 rank)
    for (std::size_t r = 0; r < shortlist.size(); ++r)
        scored.emplace_back(-fusion_score(shortlist[r]), static_cast<int>(r));
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<int> out;
    for (const auto& [neg_score, rank] : scored)
        out.push_back(shortlist[static_cast<std::size_t>(rank)]);
    (void)model;
    (void)heads;
    return out;
}

// Fraction of queries whose gold id appears in the top k of its ranking.
inline double recall_at_k(const std::vector<std::vector<int>>& rankings,
                          const std::vector<int>& gold, int k) {
    if (rankings.size() != gold.size())
        throw contract_error("recall_at_k needs one gold id per query");
    if (rankings.empty()) return 0.0;
    int hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        if (gold[q] < 0) throw contract_error("query without gold id");
        const auto& r = rankings[q];
        const int limit = std::min<int>(k, static_cast<int>(r.size()));
        for (int i = 0; i < limit; ++i)
            if (r[static_cast<std::size_t>(i)] == gold[q]) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// --------------------------------------------------------------------------
// Finetuning drivers
// --------------------------------------------------------------------------

struct FinetuneConfig {
    long long steps = 600;
    int batch = 16;
    std::uint64_t seed = 7;
    ScheduleConfig schedule{1e-3, 60, 600};
    AdamConfig adam{0.9, 0.999, 1e-8, 0.01};
    int vqa_answers = 12;
    int imgcls_classes = kImgClsClasses;
    int embed_dim = 32;
    int rerank_k = 8;
};

struct TokenizedVqa {
    TextTokens question;
    PatchGrid image;
    int answer;
};
struct TokenizedNlvr {
    PatchGrid left, right;
    TextTokens statement;
    int label;
};
struct TokenizedPair {
    TextTokens caption;
    PatchGrid image;
};
struct TokenizedImgCls {
    PatchGrid image;
    int label;
};

inline std::vector<TokenizedVqa> tokenize_vqa(const std::vector<VqaExample>& v, const Vocab& vocab,
                                              int patch) {
    std::vector<TokenizedVqa> out;
    for (const auto& e : v)
        out.push_back({tokenize(e.question, vocab), patchify(e.image, patch), e.answer});
    return out;
}
inline std::vector<TokenizedNlvr> tokenize_nlvr(const std::vector<NlvrExample>& v,
                                                const Vocab& vocab, int patch) {
    std::vector<TokenizedNlvr> out;
    for (const auto& e : v)
        out.push_back({patchify(e.left, patch), patchify(e.right, patch),
                       tokenize(e.statement, vocab), e.label});
    return out;
}
inline std::vector<TokenizedPair> tokenize_pairs(const std::vector<PairExample>& v,
                                                 const Vocab& vocab, int patch) {
    std::vector<TokenizedPair> out;
    for (const auto& e : v) out.push_back({tokenize(e.caption, vocab), patchify(e.image, patch)});
    return out;
}
inline std::vector<TokenizedImgCls> tokenize_imgcls(const std::vector<ImgClsExample>& v,
                                                    int patch) {
    std::vector<TokenizedImgCls> out;
    for (const auto& e : v) out.push_back({patchify(e.image, patch), e.label});
    return out;
}

namespace detail {

template <typename LossFn>
void finetune_loop(Model<float>& model, const FinetuneConfig& cfg, LossFn&& step_loss,
                   std::ostream* metrics = nullptr, const std::string& task = "finetune") {
    AdamState<float> opt = AdamState<float>::init(model.params);
    for (long long step = 0; step < cfg.steps; ++step) {
        Rng rng = Rng(cfg.seed).fork(0x46545354ull).fork(static_cast<std::uint64_t>(step));
        model.params.zero_grad();
        Tape<float> tape;
        EncodeOptions eopt;
        eopt.training = true;
        eopt.rng = &rng;
        Tensor<float> loss = step_loss(&tape, step, rng, eopt);
        if (std::isnan(static_cast<double>(loss.at(0))) ||
            std::isinf(static_cast<double>(loss.at(0))))
            throw numeric_error("non-finite finetune loss at step " + std::to_string(step));
        tape.backward(loss);
        adam_step(model.params, opt, lr_at_step(step, cfg.schedule), cfg.adam);
        if (metrics)
            write_metrics_line(*metrics, step, task, static_cast<double>(loss.at(0)), 0.0);
    }
}

}  // namespace detail

inline void finetune_vqa(Model<float>& model, Heads<float>& heads,
                         const std::vector<TokenizedVqa>& train, const FinetuneConfig& cfg,
                         std::ostream* metrics = nullptr) {
    detail::finetune_loop(
        model, cfg,
        [&](Tape<float>* tape, long long step, Rng& rng, const EncodeOptions& opt) {
            (void)rng;
            auto batch = batch_slice(train, step, cfg.batch);
            std::vector<Tensor<float>> rows;
            std::vector<int> labels;
            for (const auto& ex : batch) {
                rows.push_back(fusion_classify(tape, model, heads, ex.question, ex.image, opt));
                labels.push_back(ex.answer);
            }
            return cross_entropy(tape, concat_rows(tape, rows), labels);
        },
        metrics, "vqa");
}

inline double eval_vqa(const Model<float>& model, const Heads<float>& heads,
                       const std::vector<TokenizedVqa>& data) {
    int hits = 0;
    for (const auto& ex : data) {
        Tensor<float> logits =
            fusion_classify<float>(nullptr, model, heads, ex.question, ex.image, {});
        if (detail::argmax_row(logits.data(), logits.cols()) == ex.answer) ++hits;
    }
    return data.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.size());
}

inline void finetune_nlvr(Model<float>& model, Heads<float>& heads,
                          const std::vector<TokenizedNlvr>& train, const FinetuneConfig& cfg,
                          std::ostream* metrics = nullptr) {
    detail::finetune_loop(
        model, cfg,
        [&](Tape<float>* tape, long long step, Rng& rng, const EncodeOptions& opt) {
            (void)rng;
            auto batch = batch_slice(train, step, cfg.batch);
            std::vector<Tensor<float>> rows;
            std::vector<int> labels;
            for (const auto& ex : batch) {
                rows.push_back(
                    nlvr_forward(tape, model, heads, ex.left, ex.right, ex.statement, opt));
                labels.push_back(ex.label);
            }
            return cross_entropy(tape, concat_rows(tape, rows), labels);
        },
        metrics, "nlvr");
}

inline double eval_nlvr(const Model<float>& model, const Heads<float>& heads,
                        const std::vector<TokenizedNlvr>& data) {
    int hits = 0;
    for (const auto& ex : data) {
        Tensor<float> logits =
            nlvr_forward<float>(nullptr, model, heads, ex.left, ex.right, ex.statement, {});
        if (detail::argmax_row(logits.data(), logits.cols()) == ex.label) ++hits;
    }
    return data.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.size());
}

inline void finetune_retrieval(Model<float>& model, Heads<float>& heads,
                               const std::vector<TokenizedPair>& train, const FinetuneConfig& cfg,
                               std::ostream* metrics = nullptr) {
    detail::finetune_loop(
        model, cfg,
        [&](Tape<float>* tape, long long step, Rng& rng, const EncodeOptions& opt) {
            auto batch = batch_slice(train, step, cfg.batch);
            std::vector<TextTokens> texts;
            std::vector<PatchGrid> images;
            for (const auto& ex : batch) {
                texts.push_back(ex.caption);
                images.push_back(ex.image);
            }
            Tensor<float> temb = text_embeddings(tape, model, heads, texts, opt);
            Tensor<float> iemb = image_embeddings(tape, model, heads, images, opt);
            Tensor<float> contrast = itc_loss(tape, heads, temb, iemb);
            Tensor<float> matching =
                itm_loss(tape, model, heads, texts, images, temb, iemb, rng, opt);
            return add(tape, contrast, matching);
        },
        metrics, "retrieval");
}

struct RetrievalReport {
    double text_to_image_r1 = 0.0;
    double image_to_text_r1 = 0.0;
    double text_to_image_r5 = 0.0;
    double image_to_text_r5 = 0.0;
};

// Two-stage evaluation over a held-out corpus: gold pair shares the index.
inline RetrievalReport eval_retrieval(const Model<float>& model, const Heads<float>& heads,
                                      const std::vector<TokenizedPair>& data, int k) {
    std::vector<TextTokens> texts;
    std::vector<PatchGrid> images;
    for (const auto& ex : data) {
        texts.push_back(ex.caption);
        images.push_back(ex.image);
    }
    const RetrievalIndex index = build_retrieval_index(model, heads, texts, images);
    const int n = static_cast<int>(data.size());
    std::vector<std::vector<int>> t2i, i2t;
    std::vector<int> gold(static_cast<std::size_t>(n));
    for (int q = 0; q < n; ++q) {
        gold[static_cast<std::size_t>(q)] = q;
        t2i.push_back(rerank_retrieve<float>(
            model, heads, index.text_rows[static_cast<std::size_t>(q)], index.image_rows, k,
            [&](int cand) {
                return itm_match_score(model, heads, texts[static_cast<std::size_t>(q)],
                                       images[static_cast<std::size_t>(cand)]);
            }));
        i2t.push_back(rerank_retrieve<float>(
            model, heads, index.image_rows[static_cast<std::size_t>(q)], index.text_rows, k,
            [&](int cand) {
                return itm_match_score(model, heads, texts[static_cast<std::size_t>(cand)],
                                       images[static_cast<std::size_t>(q)]);
            }));
    }
    RetrievalReport report;
    report.text_to_image_r1 = recall_at_k(t2i, gold, 1);
    report.image_to_text_r1 = recall_at_k(i2t, gold, 1);
    report.text_to_image_r5 = recall_at_k(t2i, gold, 5);
    report.image_to_text_r5 = recall_at_k(i2t, gold, 5);
    return report;
}

inline void finetune_imgcls(Model<float>& model, Heads<float>& heads,
                            const std::vector<TokenizedImgCls>& train, const FinetuneConfig& cfg,
                            std::ostream* metrics = nullptr) {
    detail::finetune_loop(
        model, cfg,
        [&](Tape<float>* tape, long long step, Rng& rng, const EncodeOptions& opt) {
            (void)rng;
            auto batch = batch_slice(train, step, cfg.batch);
            std::vector<Tensor<float>> rows;
            std::vector<int> labels;
            for (const auto& ex : batch) {
                rows.push_back(avgpool_classify(tape, model, heads, ex.image, opt));
                labels.push_back(ex.label);
            }
            return cross_entropy(tape, concat_rows(tape, rows), labels);
        },
        metrics, "imgcls");
}

inline double eval_imgcls(const Model<float>& model, const Heads<float>& heads,
                          const std::vector<TokenizedImgCls>& data) {
    int hits = 0;
    for (const auto& ex : data) {
        Tensor<float> logits = avgpool_classify<float>(nullptr, model, heads, ex.image, {});
        if (detail::argmax_row(logits.data(), logits.cols()) == ex.label) ++hits;
    }
    return data.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(data.size());
}

// --------------------------------------------------------------------------
// Cross-modal diagnostic: masked-word accuracy with the true image vs a
// noise image. Every caption word (except "and") is masked in turn and
// predicted through the MLM head on the jointly encoded pair.
// --------------------------------------------------------------------------

struct CrossModalReport {
    double accuracy_with_image = 0.0;
    double accuracy_with_noise = 0.0;
    int predictions = 0;
};

inline CrossModalReport cross_modal_masked_word_accuracy(const Model<float>& model,
                                                         const std::vector<TokenizedPair>& pairs,
                                                         const Vocab& vocab,
                                                         std::uint64_t noise_seed) {
    CrossModalReport report;
    const int and_id = vocab.word_id("and");
    Rng noise_rng = Rng(noise_seed).fork(0x4E4F4953ull);
    int hits_img = 0, hits_noise = 0, total = 0;
    for (const auto& ex : pairs) {
        const TextTokens tokens = clip_tokens(ex.caption, model.cfg);
        const int side = ex.image.grid_h * ex.image.patch_size;
        RawImage noise = render_noise(noise_rng, side);
        const PatchGrid noise_grid = patchify(noise, ex.image.patch_size);
        for (int pos = 0; pos < tokens.count(); ++pos) {
            const int original = tokens.ids[static_cast<std::size_t>(pos)];
            if (original == and_id) continue;
            TextTokens corrupted = tokens;
            corrupted.ids[static_cast<std::size_t>(pos)] = T_MASK;
            for (int variant = 0; variant < 2; ++variant) {
                const PatchGrid& grid = variant == 0 ? ex.image : noise_grid;
                Tensor<float> enc = encode_pair<float>(nullptr, model, corrupted, grid, {});
                Tensor<float> hidden = gather_rows<float>(nullptr, enc, {1 + pos});
                Tensor<float> logits =
                    linear<float>(nullptr, hidden, model.head_mlm_w, model.head_mlm_b);
                const bool hit = detail::argmax_row(logits.data(), logits.cols()) == original;
                if (variant == 0 && hit) ++hits_img;
                if (variant == 1 && hit) ++hits_noise;
            }
            ++total;
        }
    }
    report.predictions = total;
    if (total > 0) {
        report.accuracy_with_image = static_cast<double>(hits_img) / total;
        report.accuracy_with_noise = static_cast<double>(hits_noise) / total;
    }
    return report;
}

// Line-based evaluation report: "metric<TAB>value".
inline void write_report_line(std::ostream& os, const std::string& metric, double value) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%s\t%.6f", metric.c_str(), value);
    os << buf << '\n';
}

}  // namespace vlbt
