#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "vlbt/errors.hpp"

namespace vlbt {

// Reserved special token ids.
enum SpecialToken : int { T_CLS = 0, T_SEP = 1, T_MASK = 2, T_PAD = 3 };
constexpr int kNumSpecials = 4;
constexpr int kByteVocab = 256;

struct TextTokens {
    std::vector<int> ids;  // excludes specials
    int count() const { return static_cast<int>(ids.size()); }
};

// Byte-level vocabulary with an optional word lexicon on top:
// ids 0..3 specials, 4..259 raw bytes, 260.. lexicon words.
class Vocab {
public:
    Vocab() = default;

    explicit Vocab(const std::vector<std::string>& lexicon) {
        for (const auto& w : lexicon) add_word(w);
    }

    void add_word(const std::string& w) {
        if (word_to_id_.count(w)) return;
        word_to_id_[w] = kNumSpecials + kByteVocab + static_cast<int>(words_.size());
        words_.push_back(w);
    }

    int size() const { return kNumSpecials + kByteVocab + static_cast<int>(words_.size()); }
    int lexicon_size() const { return static_cast<int>(words_.size()); }

    bool has_word(const std::string& w) const { return word_to_id_.count(w) != 0; }

    int word_id(const std::string& w) const {
        auto it = word_to_id_.find(w);
        if (it == word_to_id_.end()) throw contract_error("word not in lexicon: " + w);
        return it->second;
    }

    static int byte_id(unsigned char b) { return kNumSpecials + static_cast<int>(b); }

    std::string token_str(int id) const {
        if (id == T_CLS) return "[T_CLS]";
        if (id == T_SEP) return "[T_SEP]";
        if (id == T_MASK) return "[MASK]";
        if (id == T_PAD) return "[PAD]";
        if (id < kNumSpecials + kByteVocab)
            return std::string(1, static_cast<char>(id - kNumSpecials));
        const int w = id - kNumSpecials - kByteVocab;
        if (w < 0 || w >= static_cast<int>(words_.size()))
            throw contract_error("token id out of range: " + std::to_string(id));
        return words_[static_cast<std::size_t>(w)];
    }

    const std::vector<std::string>& words() const { return words_; }

private:
    std::unordered_map<std::string, int> word_to_id_;
    std::vector<std::string> words_;
};

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

// Whitespace-split word lookup when every word is known; otherwise the
// whole string falls back to its raw bytes (total, never fails).
inline TextTokens tokenize(const std::string& text, const Vocab& vocab) {
    TextTokens t;
    const auto words = split_words(text);
    bool all_known = true;
    for (const auto& w : words)
        if (!vocab.has_word(w)) {
            all_known = false;
            break;
        }
    if (all_known) {
        for (const auto& w : words) t.ids.push_back(vocab.word_id(w));
    } else {
        for (unsigned char b : text) t.ids.push_back(Vocab::byte_id(b));
    }
    return t;
}

inline std::string detokenize(const TextTokens& t, const Vocab& vocab) {
    std::string out;
    bool word_mode = false;
    for (std::size_t i = 0; i < t.ids.size(); ++i) {
        const int id = t.ids[i];
        if (id >= kNumSpecials + kByteVocab) {
            if (!out.empty() && word_mode) out.push_back(' ');
            out += vocab.token_str(id);
            word_mode = true;
        } else if (id >= kNumSpecials) {
            out.push_back(static_cast<char>(id - kNumSpecials));
            word_mode = false;
        } else {
            out += vocab.token_str(id);
            word_mode = true;
        }
    }
    return out;
}

}  // namespace vlbt
