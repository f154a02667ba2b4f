#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/image.hpp"
#include "vlbt/masking.hpp"
#include "vlbt/rng.hpp"
#include "vlbt/tensor.hpp"
#include "vlbt/text.hpp"

namespace vlbt {

enum class Modality : int { Text = 0, Image = 1 };
enum class ReprKind : int { TextOnly = 0, ImageOnly = 1, Pair = 2 };
enum class ExpertSet : int { MoME = 0, Standard = 1 };

struct MoMEConfig {
    int layers = 2;
    int width = 64;
    int heads = 4;
    int ffn_mult = 4;
    ExpertSet experts = ExpertSet::MoME;
    double drop_path_rate = 0.1;
    int max_text_positions = 18;   // text length including T_CLS/T_SEP
    int max_image_positions = 17;  // 1 + N
    int text_vocab = 296;
    int visual_vocab = 32;  // codebook size K
    int patch_dim = 192;    // P*P*C

    int ffn_width() const { return width * ffn_mult; }
    int expert_count() const { return experts == ExpertSet::MoME ? 2 : 1; }

    void validate() const {
        if (width % heads != 0) throw config_error("width must be divisible by heads");
        if (drop_path_rate < 0.0 || drop_path_rate >= 1.0)
            throw config_error("drop_path_rate must be in [0,1)");
        if (layers < 1 || width < 1 || heads < 1) throw config_error("bad model dimensions");
        if (text_vocab <= kNumSpecials) throw config_error("text vocab too small");
    }
};

// Ordered, named parameter registry. Order is the creation order, which
// fixes the initialization draw sequence and the checkpoint layout.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> t) {
        if (index_.count(name)) throw contract_error("duplicate parameter name: " + name);
        t.ensure_grad();
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
        return items_.back().second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw contract_error("unknown parameter: " + name);
        return items_[it->second].second;
    }

    std::vector<std::pair<std::string, Tensor<T>>>& items() { return items_; }
    const std::vector<std::pair<std::string, Tensor<T>>>& items() const { return items_; }

    std::size_t tensor_count() const { return items_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : items_) t.zero_grad();
    }

private:
    std::vector<std::pair<std::string, Tensor<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct ExpertParams {
    Tensor<T> w1, b1, w2, b2;
};

// One attention set per block, shared across modalities; the FFN is a
// pool of modality experts selected by hard routing.
template <typename T>
struct BlockParams {
    Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
    std::vector<ExpertParams<T>> experts;  // MoME: [img, txt]; Standard: [shared]
};

template <typename T>
struct EmbeddingParams {
    Tensor<T> word;     // [V_t, d]
    Tensor<T> t_pos;    // [maxT, d]
    Tensor<T> patch_w;  // [D, d]
    Tensor<T> patch_b;  // [d]
    Tensor<T> i_cls;    // [1, d]
    Tensor<T> i_mask;   // [1, d]
    Tensor<T> v_pos;    // [maxI, d]
};

namespace detail {

template <typename T>
Tensor<T> init_trunc_normal(const Shape& shape, Rng& rng, double sigma = 0.02) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        (*t.values)[i] = static_cast<T>(rng.truncated_normal(sigma));
    return t;
}

template <typename T>
Tensor<T> init_const(const Shape& shape, T v) {
    Tensor<T> t = Tensor<T>::zeros(shape);
    std::fill(t.values->begin(), t.values->end(), v);
    return t;
}

}  // namespace detail

template <typename T>
struct Model {
    MoMEConfig cfg;
    ParamStore<T> params;
    EmbeddingParams<T> emb;
    std::vector<BlockParams<T>> blocks;
    Tensor<T> final_ln_g, final_ln_b;
    Tensor<T> head_mlm_w, head_mlm_b;  // d -> V_t
    Tensor<T> head_mim_w, head_mim_b;  // d -> K

    static const char* expert_name(const MoMEConfig& cfg, int e) {
        if (cfg.experts == ExpertSet::Standard) return "ffn";
        return e == 0 ? "ffn_img" : "ffn_txt";
    }

    static Model init(const MoMEConfig& cfg, std::uint64_t seed) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        Rng rng = Rng(seed).fork(0x494E4954ull);  // init stream
        const int d = cfg.width;
        auto tn = [&](const Shape& s) { return detail::init_trunc_normal<T>(s, rng); };
        auto zeros = [&](const Shape& s) { return Tensor<T>::zeros(s); };
        auto ones = [&](const Shape& s) { return detail::init_const<T>(s, T(1)); };

        m.emb.word = m.params.add("emb/word", tn({cfg.text_vocab, d}));
        m.emb.t_pos = m.params.add("emb/t_pos", tn({cfg.max_text_positions, d}));
        m.emb.patch_w = m.params.add("emb/patch_w", tn({cfg.patch_dim, d}));
        m.emb.patch_b = m.params.add("emb/patch_b", zeros({d}));
        m.emb.i_cls = m.params.add("emb/i_cls", tn({1, d}));
        m.emb.i_mask = m.params.add("emb/i_mask", tn({1, d}));
        m.emb.v_pos = m.params.add("emb/v_pos", tn({cfg.max_image_positions, d}));

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "blk" + std::to_string(l) + "/";
            BlockParams<T> blk;
            blk.wq = m.params.add(p + "attn/wq", tn({d, d}));
            blk.bq = m.params.add(p + "attn/bq", zeros({d}));
            blk.wk = m.params.add(p + "attn/wk", tn({d, d}));
            blk.bk = m.params.add(p + "attn/bk", zeros({d}));
            blk.wv = m.params.add(p + "attn/wv", tn({d, d}));
            blk.bv = m.params.add(p + "attn/bv", zeros({d}));
            blk.wo = m.params.add(p + "attn/wo", tn({d, d}));
            blk.bo = m.params.add(p + "attn/bo", zeros({d}));
            blk.ln1_g = m.params.add(p + "ln1/g", ones({d}));
            blk.ln1_b = m.params.add(p + "ln1/b", zeros({d}));
            blk.ln2_g = m.params.add(p + "ln2/g", ones({d}));
            blk.ln2_b = m.params.add(p + "ln2/b", zeros({d}));
            for (int e = 0; e < cfg.expert_count(); ++e) {
                const std::string ep = p + expert_name(cfg, e) + "/";
                ExpertParams<T> ex;
                ex.w1 = m.params.add(ep + "w1", tn({d, cfg.ffn_width()}));
                ex.b1 = m.params.add(ep + "b1", zeros({cfg.ffn_width()}));
                ex.w2 = m.params.add(ep + "w2", tn({cfg.ffn_width(), d}));
                ex.b2 = m.params.add(ep + "b2", zeros({d}));
                blk.experts.push_back(ex);
            }
            m.blocks.push_back(blk);
        }
        m.final_ln_g = m.params.add("final_ln/g", ones({d}));
        m.final_ln_b = m.params.add("final_ln/b", zeros({d}));
        m.head_mlm_w = m.params.add("head/mlm/w", tn({d, cfg.text_vocab}));
        m.head_mlm_b = m.params.add("head/mlm/b", zeros({cfg.text_vocab}));
        m.head_mim_w = m.params.add("head/mim/w", tn({d, cfg.visual_vocab}));
        m.head_mim_b = m.params.add("head/mim/b", zeros({cfg.visual_vocab}));
        return m;
    }

    // Re-attach the struct handles to the store after checkpoint load.
    void rebind() {
        emb.word = params.get("emb/word");
        emb.t_pos = params.get("emb/t_pos");
        emb.patch_w = params.get("emb/patch_w");
        emb.patch_b = params.get("emb/patch_b");
        emb.i_cls = params.get("emb/i_cls");
        emb.i_mask = params.get("emb/i_mask");
        emb.v_pos = params.get("emb/v_pos");
        blocks.clear();
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "blk" + std::to_string(l) + "/";
            BlockParams<T> blk;
            blk.wq = params.get(p + "attn/wq");
            blk.bq = params.get(p + "attn/bq");
            blk.wk = params.get(p + "attn/wk");
            blk.bk = params.get(p + "attn/bk");
            blk.wv = params.get(p + "attn/wv");
            blk.bv = params.get(p + "attn/bv");
            blk.wo = params.get(p + "attn/wo");
            blk.bo = params.get(p + "attn/bo");
            blk.ln1_g = params.get(p + "ln1/g");
            blk.ln1_b = params.get(p + "ln1/b");
            blk.ln2_g = params.get(p + "ln2/g");
            blk.ln2_b = params.get(p + "ln2/b");
            for (int e = 0; e < cfg.expert_count(); ++e) {
                const std::string ep = p + expert_name(cfg, e) + "/";
                blk.experts.push_back(ExpertParams<T>{params.get(ep + "w1"), params.get(ep + "b1"),
                                                      params.get(ep + "w2"), params.get(ep + "b2")});
            }
            blocks.push_back(blk);
        }
        final_ln_g = params.get("final_ln/g");
        final_ln_b = params.get("final_ln/b");
        head_mlm_w = params.get("head/mlm/w");
        head_mlm_b = params.get("head/mlm/b");
        head_mim_w = params.get("head/mim/w");
        head_mim_b = params.get("head/mim/b");
    }
};

// Closed-form parameter count for a config (pretraining model: embeddings,
// blocks, final norm, MLM/MIM heads).
inline std::size_t parameter_census(const MoMEConfig& cfg) {
    const std::size_t d = static_cast<std::size_t>(cfg.width);
    const std::size_t f = static_cast<std::size_t>(cfg.ffn_width());
    const std::size_t vt = static_cast<std::size_t>(cfg.text_vocab);
    const std::size_t k = static_cast<std::size_t>(cfg.visual_vocab);
    const std::size_t emb = vt * d + static_cast<std::size_t>(cfg.max_text_positions) * d +
                            static_cast<std::size_t>(cfg.patch_dim) * d + d + d + d +
                            static_cast<std::size_t>(cfg.max_image_positions) * d;
    const std::size_t attn = 4 * (d * d + d);
    const std::size_t norms = 2 * (2 * d);
    const std::size_t expert = d * f + f + f * d + d;
    const std::size_t per_block =
        attn + norms + static_cast<std::size_t>(cfg.expert_count()) * expert;
    const std::size_t heads = (d * vt + vt) + (d * k + k);
    return emb + static_cast<std::size_t>(cfg.layers) * per_block + 2 * d + heads;
}

// --------------------------------------------------------------------------
// Input representations
// --------------------------------------------------------------------------

template <typename T>
struct InputRepr {
    ReprKind kind = ReprKind::TextOnly;
    Tensor<T> embeddings;  // [L, d]
    std::vector<Modality> tags;
    std::vector<char> valid;
    // Raw content kept for masking and for loss targets.
    std::vector<int> token_ids;         // with specials (text block), original ids
    std::vector<int> masked_token_ids;  // corrupted ids after apply_mask
    std::shared_ptr<const PatchGrid> grid;
    std::vector<char> masked_patches;   // per patch, after apply_mask

    int length() const { return static_cast<int>(tags.size()); }
    int text_block_len() const { return static_cast<int>(token_ids.size()); }
    // Row of patch i within this representation.
    int patch_row(int patch_index) const {
        const int off = kind == ReprKind::Pair ? text_block_len() : 0;
        return off + 1 + patch_index;
    }
    // Row of text token position p (token-relative) within this repr.
    int token_row(int token_position) const { return 1 + token_position; }
};

inline std::vector<int> iota_ids(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

// Clips raw tokens to what the position table can hold so mask plans and
// representations always agree on M.
inline TextTokens clip_tokens(const TextTokens& tokens, const MoMEConfig& cfg) {
    TextTokens out = tokens;
    const int max_tokens = cfg.max_text_positions - 2;
    if (out.count() > max_tokens) out.ids.resize(static_cast<std::size_t>(max_tokens));
    return out;
}

// H^w: [T_CLS] w_1..w_M [T_SEP] word embeddings plus text position
// embeddings. Overlength text truncates, keeping T_SEP.
template <typename T>
InputRepr<T> build_text_repr(Tape<T>* tape, const EmbeddingParams<T>& emb, const MoMEConfig& cfg,
                             const TextTokens& tokens) {
    InputRepr<T> repr;
    repr.kind = ReprKind::TextOnly;
    std::vector<int> ids;
    ids.push_back(T_CLS);
    const int max_tokens = cfg.max_text_positions - 2;
    for (int i = 0; i < tokens.count() && i < max_tokens; ++i)
        ids.push_back(tokens.ids[static_cast<std::size_t>(i)]);
    ids.push_back(T_SEP);
    for (int id : ids)
        if (id < 0 || id >= cfg.text_vocab)
            throw contract_error("token id " + std::to_string(id) + " outside vocab");
    repr.token_ids = ids;
    repr.masked_token_ids = ids;
    const int l = static_cast<int>(ids.size());
    Tensor<T> words = gather_rows(tape, emb.word, ids);
    Tensor<T> pos = gather_rows(tape, emb.t_pos, iota_ids(l));
    repr.embeddings = add(tape, words, pos);
    repr.tags.assign(static_cast<std::size_t>(l), Modality::Text);
    repr.valid.assign(static_cast<std::size_t>(l), 1);
    return repr;
}

namespace detail {

// Shared by the plain and masked image paths: masked patch rows are
// replaced by the learnable mask embedding before positions are added.
template <typename T>
Tensor<T> image_rows(Tape<T>* tape, const EmbeddingParams<T>& emb, const PatchGrid& grid,
                     const std::vector<char>& masked) {
    const int n = grid.count();
    std::vector<T> flat(grid.patches.begin(), grid.patches.end());
    Tensor<T> patches = Tensor<T>::from({n, grid.patch_dim}, std::move(flat));
    Tensor<T> proj = add_bias(tape, matmul(tape, patches, emb.patch_w), emb.patch_b);
    Tensor<T> base = concat_rows<T>(tape, {emb.i_cls, proj});
    if (!masked.empty()) {
        std::vector<char> take_mask(static_cast<std::size_t>(n + 1), 0);
        bool any = false;
        for (int i = 0; i < n; ++i)
            if (masked[static_cast<std::size_t>(i)]) {
                take_mask[static_cast<std::size_t>(i + 1)] = 1;
                any = true;
            }
        if (any) {
            Tensor<T> mask_rows = broadcast_row(tape, emb.i_mask, n + 1);
            base = row_select_merge(tape, base, mask_rows, take_mask);
        }
    }
    Tensor<T> pos = gather_rows(tape, emb.v_pos, iota_ids(n + 1));
    return add(tape, base, pos);
}

}  // namespace detail

// H^v: [I_CLS] + projected patches plus image position embeddings.
template <typename T>
InputRepr<T> build_image_repr(Tape<T>* tape, const EmbeddingParams<T>& emb, const MoMEConfig& cfg,
                              const PatchGrid& grid) {
    if (grid.count() + 1 > cfg.max_image_positions)
        throw config_error("image has " + std::to_string(grid.count()) +
                           " patches; position table holds " +
                           std::to_string(cfg.max_image_positions - 1));
    if (grid.patch_dim != cfg.patch_dim)
        throw config_error("patch dim mismatch: grid " + std::to_string(grid.patch_dim) +
                           " vs config " + std::to_string(cfg.patch_dim));
    InputRepr<T> repr;
    repr.kind = ReprKind::ImageOnly;
    repr.grid = std::make_shared<PatchGrid>(grid);
    repr.embeddings = detail::image_rows(tape, emb, grid, {});
    const int l = grid.count() + 1;
    repr.tags.assign(static_cast<std::size_t>(l), Modality::Image);
    repr.valid.assign(static_cast<std::size_t>(l), 1);
    return repr;
}

// H^vl = [H^w ; H^v]: text block first.
template <typename T>
InputRepr<T> concat_pair(Tape<T>* tape, const InputRepr<T>& text, const InputRepr<T>& image) {
    if (text.kind != ReprKind::TextOnly || image.kind != ReprKind::ImageOnly)
        throw contract_error("concat_pair expects a TEXT_ONLY and an IMAGE_ONLY representation");
    if (text.embeddings.cols() != image.embeddings.cols())
        throw dim_error("concat_pair width mismatch");
    InputRepr<T> repr;
    repr.kind = ReprKind::Pair;
    repr.embeddings = concat_rows<T>(tape, {text.embeddings, image.embeddings});
    repr.tags = text.tags;
    repr.tags.insert(repr.tags.end(), image.tags.begin(), image.tags.end());
    repr.valid = text.valid;
    repr.valid.insert(repr.valid.end(), image.valid.begin(), image.valid.end());
    repr.token_ids = text.token_ids;
    repr.masked_token_ids = text.masked_token_ids;
    repr.grid = image.grid;
    repr.masked_patches = image.masked_patches;
    return repr;
}

// Applies a MaskPlan: text positions are re-embedded with their
// replacement ids (position embedding re-added), masked image patches are
// replaced by the shared mask embedding. Original ids/patches stay on the
// returned representation as prediction targets.
template <typename T>
InputRepr<T> apply_mask(Tape<T>* tape, const EmbeddingParams<T>& emb, const MoMEConfig& cfg,
                        const InputRepr<T>& repr, const MaskPlan& plan) {
    InputRepr<T> out = repr;
    const bool has_text = repr.kind != ReprKind::ImageOnly;
    const bool has_image = repr.kind != ReprKind::TextOnly;
    const int m = has_text ? repr.text_block_len() - 2 : 0;

    std::vector<int> masked_ids = repr.token_ids;
    for (const auto& tm : plan.text) {
        if (!has_text) throw contract_error("text mask on an image-only representation");
        if (tm.position < 0 || tm.position >= m)
            throw contract_error("text mask position " + std::to_string(tm.position) +
                                 " outside tokens [0," + std::to_string(m) + ")");
        masked_ids[static_cast<std::size_t>(tm.position + 1)] = tm.replacement_id;
    }
    std::vector<char> masked_patches;
    if (has_image) masked_patches.assign(static_cast<std::size_t>(repr.grid->count()), 0);
    for (int p : plan.image_positions) {
        if (!has_image) throw contract_error("image mask on a text-only representation");
        if (p < 0 || p >= repr.grid->count())
            throw contract_error("image mask position " + std::to_string(p) +
                                 " outside patches [0," + std::to_string(repr.grid->count()) + ")");
        masked_patches[static_cast<std::size_t>(p)] = 1;
    }

    Tensor<T> text_rows, image_rows;
    if (has_text) {
        Tensor<T> words = gather_rows(tape, emb.word, masked_ids);
        Tensor<T> pos =
            gather_rows(tape, emb.t_pos, iota_ids(static_cast<int>(masked_ids.size())));
        text_rows = add(tape, words, pos);
        out.masked_token_ids = masked_ids;
    }
    if (has_image) {
        image_rows = detail::image_rows(tape, emb, *repr.grid, masked_patches);
        out.masked_patches = masked_patches;
    }
    switch (repr.kind) {
        case ReprKind::TextOnly: out.embeddings = text_rows; break;
        case ReprKind::ImageOnly: out.embeddings = image_rows; break;
        case ReprKind::Pair:
            out.embeddings = concat_rows<T>(tape, {text_rows, image_rows});
            break;
    }
    (void)cfg;
    return out;
}

// --------------------------------------------------------------------------
// MoME Transformer blocks
// --------------------------------------------------------------------------

// Bidirectional multi-head self-attention; invalid key positions receive
// -1e30 scores so their weight underflows to exactly zero.
template <typename T>
Tensor<T> attention(Tape<T>* tape, const Tensor<T>& x, const std::vector<char>& valid,
                    const BlockParams<T>& blk, int heads) {
    check_2d(x, "attention");
    const int l = x.rows(), d = x.cols();
    if (d % heads != 0) throw config_error("width not divisible by heads");
    if (valid.size() != static_cast<std::size_t>(l))
        throw contract_error("attention valid-flag count mismatch");
    bool any_valid = false;
    for (char v : valid) any_valid = any_valid || v;
    if (!any_valid) throw contract_error("attention requires at least one valid position");

    const int dh = d / heads;
    Tensor<T> q = linear(tape, x, blk.wq, blk.bq);
    Tensor<T> k = linear(tape, x, blk.wk, blk.bk);
    Tensor<T> v = linear(tape, x, blk.wv, blk.bv);

    Tensor<T> mask = Tensor<T>::zeros({l, l});
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j)
            if (!valid[static_cast<std::size_t>(j)]) mask.at(i, j) = T(-1e30);

    std::vector<Tensor<T>> ctx;
    const T scaling = T(1) / std::sqrt(static_cast<T>(dh));
    for (int h = 0; h < heads; ++h) {
        Tensor<T> qh = slice_cols(tape, q, h * dh, dh);
        Tensor<T> kh = slice_cols(tape, k, h * dh, dh);
        Tensor<T> vh = slice_cols(tape, v, h * dh, dh);
        Tensor<T> scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), scaling);
        scores = add(tape, scores, mask);
        Tensor<T> weights = softmax(tape, scores, -1);
        ctx.push_back(matmul(tape, weights, vh));
    }
    Tensor<T> merged = heads == 1 ? ctx[0] : concat_cols(tape, ctx);
    return linear(tape, merged, blk.wo, blk.bo);
}

// Hard routing: each position runs exactly one expert FFN, chosen by its
// modality tag. Positions of other modalities never touch the expert's
// parameters, so off-modality outputs are bit-identical under expert
// perturbations.
template <typename T>
Tensor<T> route_ffn(Tape<T>* tape, const Tensor<T>& x, const std::vector<Modality>& tags,
                    const BlockParams<T>& blk, const MoMEConfig& cfg) {
    check_2d(x, "route_ffn");
    const int l = x.rows();
    if (tags.size() != static_cast<std::size_t>(l))
        throw contract_error("route_ffn tag count mismatch");

    auto expert_for = [&](Modality m) -> std::size_t {
        const std::size_t e =
            cfg.experts == ExpertSet::Standard ? 0 : (m == Modality::Image ? 0 : 1);
        if (e >= blk.experts.size())
            throw config_error("no expert configured for tag " +
                               std::to_string(static_cast<int>(m)));
        return e;
    };
    auto apply_expert = [&](const Tensor<T>& in, const ExpertParams<T>& ex) {
        Tensor<T> h = gelu(tape, linear(tape, in, ex.w1, ex.b1));
        return linear(tape, h, ex.w2, ex.b2);
    };

    if (cfg.experts == ExpertSet::Standard) {
        if (blk.experts.empty()) throw config_error("standard mode requires one shared expert");
        return apply_expert(x, blk.experts[0]);
    }

    std::vector<std::vector<int>> routed(blk.experts.size());
    for (int i = 0; i < l; ++i)
        routed[expert_for(tags[static_cast<std::size_t>(i)])].push_back(i);

    Tensor<T> out;
    bool first = true;
    for (std::size_t e = 0; e < blk.experts.size(); ++e) {
        if (routed[e].empty()) continue;
        Tensor<T> xe = gather_rows(tape, x, routed[e]);
        Tensor<T> ye = apply_expert(xe, blk.experts[e]);
        Tensor<T> placed = scatter_rows(tape, ye, routed[e], l);
        out = first ? placed : add(tape, out, placed);
        first = false;
    }
    return out;
}

struct EncodeOptions {
    bool training = false;
    Rng* rng = nullptr;  // required when training with drop_path_rate > 0
};

// Pre-norm residual block with stochastic depth. The whole residual
// branch of one example is dropped with probability p_l, and kept
// branches are scaled by 1/(1-p_l); evaluation is the identity.
template <typename T>
Tensor<T> mome_block(Tape<T>* tape, Tensor<T> x, const std::vector<Modality>& tags,
                     const std::vector<char>& valid, const BlockParams<T>& blk,
                     const MoMEConfig& cfg, int layer_index, const EncodeOptions& opt) {
    double p = 0.0;
    if (cfg.layers > 1)
        p = cfg.drop_path_rate * static_cast<double>(layer_index) / (cfg.layers - 1);
    const bool stochastic = opt.training && p > 0.0;
    if (stochastic && !opt.rng)
        throw contract_error("training with stochastic depth requires an rng");

    auto residual = [&](const Tensor<T>& input, auto&& branch_fn) {
        if (stochastic) {
            const bool drop = opt.rng->bernoulli(p);
            if (drop) return input;
            Tensor<T> branch = branch_fn(input);
            return add(tape, input, scale(tape, branch, T(1.0 / (1.0 - p))));
        }
        Tensor<T> branch = branch_fn(input);
        return add(tape, input, branch);
    };

    x = residual(x, [&](const Tensor<T>& in) {
        return attention(tape, layer_norm(tape, in, blk.ln1_g, blk.ln1_b), valid, blk, cfg.heads);
    });
    x = residual(x, [&](const Tensor<T>& in) {
        return route_ffn(tape, layer_norm(tape, in, blk.ln2_g, blk.ln2_b), tags, blk, cfg);
    });
    return x;
}

// Full encoder: all blocks plus the final layer norm. The same entry
// point serves image-only, text-only, and pair inputs; the attention
// parameters are the same tensors in every case.
template <typename T>
Tensor<T> encode(Tape<T>* tape, const Model<T>& model, const InputRepr<T>& repr,
                 const EncodeOptions& opt = {}) {
    Tensor<T> x = repr.embeddings;
    for (int l = 0; l < model.cfg.layers; ++l)
        x = mome_block(tape, x, repr.tags, repr.valid, model.blocks[static_cast<std::size_t>(l)],
                       model.cfg, l, opt);
    return layer_norm(tape, x, model.final_ln_g, model.final_ln_b);
}

}  // namespace vlbt
