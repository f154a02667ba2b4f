#pragma once

#include <array>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "vlbt/image.hpp"
#include "vlbt/rng.hpp"
#include "vlbt/text.hpp"

namespace vlbt {

// Every word the synthetic caption/question/statement templates can emit.
// The order is fixed: it defines vocabulary ids 260.. and therefore the
// text vocabulary size.
inline const std::vector<std::string>& synthetic_lexicon() {
    static const std::vector<std::string> words = {
        "one",  "two",   "three",  "red",     "green",    "blue",
        "circle", "circles", "square", "squares", "triangle", "triangles",
        "and",  "how",   "many",   "shapes",  "are",      "in",
        "the",  "image", "is",     "there",   "a",        "what",
        "color", "left", "has",    "more",    "than",     "right",
        "both", "images", "have",  "same",    "number",   "of"};
    return words;
}

inline Vocab synthetic_vocab() { return Vocab(synthetic_lexicon()); }

// Closed VQA answer set (12 classes).
inline const std::vector<std::string>& vqa_answers() {
    static const std::vector<std::string> answers = {
        "one", "two", "three", "red", "green", "blue",
        "circle", "square", "triangle", "yes", "no", "none"};
    return answers;
}

inline int vqa_answer_id(const std::string& a) {
    const auto& all = vqa_answers();
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i] == a) return static_cast<int>(i);
    throw contract_error("unknown vqa answer: " + a);
}

constexpr int kImgClsClasses = 9;  // color x shape

inline const char* count_word(int n) {
    switch (n) {
        case 1: return "one";
        case 2: return "two";
        case 3: return "three";
        default: throw contract_error("count_word supports 1..3");
    }
}

// Canonical caption: shapes grouped by (color, kind) in fixed order,
// "two red circles and one blue square". Deterministic per scene.
inline std::string caption_for(const SceneSpec& scene) {
    std::map<std::pair<int, int>, int> groups;
    for (const auto& s : scene.shapes)
        groups[{static_cast<int>(s.color), static_cast<int>(s.kind)}]++;
    std::string out;
    for (const auto& [key, n] : groups) {
        if (!out.empty()) out += " and ";
        out += count_word(n);
        out += " ";
        out += color_word(static_cast<ShapeColor>(key.first));
        out += " ";
        out += shape_word(static_cast<ShapeKind>(key.second), n > 1);
    }
    return out;
}

struct PairExample {
    RawImage image;
    std::string caption;
};

struct VqaExample {
    RawImage image;
    std::string question;
    int answer = 0;
};

struct NlvrExample {
    RawImage left;
    RawImage right;
    std::string statement;
    int label = 0;  // 0 false, 1 true
};

struct ImgClsExample {
    RawImage image;
    int label = 0;  // color * 3 + kind
};

namespace detail {

inline int env_threads() {
    const char* s = std::getenv("VLBT_THREADS");
    if (!s) return 1;
    const int n = std::atoi(s);
    return n > 0 ? n : 1;
}

// Deterministic regardless of thread count: item i depends only on
// rng.fork(i).
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
    const int threads = std::min(env_threads(), n > 0 ? n : 1);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([t, n, threads, &fn]() {
            for (int i = t; i < n; i += threads) fn(i);
        });
    for (auto& th : pool) th.join();
}

}  // namespace detail

inline SceneSpec sample_scene_any(Rng& rng, int side) {
    const int n = 1 + static_cast<int>(rng.uniform_int(3));
    return sample_scene(rng, side, n);
}

inline std::vector<PairExample> gen_pairs(std::uint64_t seed, int n, int side) {
    std::vector<PairExample> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        const SceneSpec scene = sample_scene_any(rng, side);
        out[static_cast<std::size_t>(i)] = {render_scene(scene, side), caption_for(scene)};
    });
    return out;
}

inline std::vector<RawImage> gen_images(std::uint64_t seed, int n, int side) {
    std::vector<RawImage> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = render_scene(sample_scene_any(rng, side), side);
    });
    return out;
}

inline std::vector<std::string> gen_texts(std::uint64_t seed, int n, int side) {
    std::vector<std::string> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = caption_for(sample_scene_any(rng, side));
    });
    return out;
}

inline int count_color(const SceneSpec& scene, ShapeColor c) {
    int n = 0;
    for (const auto& s : scene.shapes)
        if (s.color == c) ++n;
    return n;
}

inline bool has_combo(const SceneSpec& scene, ShapeColor c, ShapeKind k) {
    for (const auto& s : scene.shapes)
        if (s.color == c && s.kind == k) return true;
    return false;
}

// Four question templates, rotated by index. Answers are consistent with
// the rendered scene by construction.
inline VqaExample make_vqa(Rng& rng, int side, int qtype) {
    VqaExample ex;
    if (qtype == 2) {
        // "what color is the X": unique shape kind, so use a single shape.
        const SceneSpec scene = sample_scene(rng, side, 1);
        ex.image = render_scene(scene, side);
        const auto& s = scene.shapes[0];
        ex.question = std::string("what color is the ") + shape_word(s.kind, false);
        ex.answer = vqa_answer_id(color_word(s.color));
        return ex;
    }
    const SceneSpec scene = sample_scene_any(rng, side);
    ex.image = render_scene(scene, side);
    if (qtype == 0) {
        ex.question = "how many shapes are in the image";
        ex.answer = vqa_answer_id(count_word(static_cast<int>(scene.shapes.size())));
    } else if (qtype == 1) {
        const auto c = static_cast<ShapeColor>(rng.uniform_int(3));
        const auto k = static_cast<ShapeKind>(rng.uniform_int(3));
        ex.question = std::string("is there a ") + color_word(c) + " " + shape_word(k, false);
        ex.answer = vqa_answer_id(has_combo(scene, c, k) ? "yes" : "no");
    } else {
        const auto c = static_cast<ShapeColor>(rng.uniform_int(3));
        ex.question = std::string("how many ") + color_word(c) + " shapes are in the image";
        const int n = count_color(scene, c);
        ex.answer = vqa_answer_id(n == 0 ? "none" : count_word(n));
    }
    return ex;
}

inline std::vector<VqaExample> gen_vqa(std::uint64_t seed, int n, int side) {
    std::vector<VqaExample> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = make_vqa(rng, side, i % 4);
    });
    return out;
}

inline NlvrExample make_nlvr(Rng& rng, int side, int stype) {
    NlvrExample ex;
    const SceneSpec left = sample_scene_any(rng, side);
    const SceneSpec right = sample_scene_any(rng, side);
    ex.left = render_scene(left, side);
    ex.right = render_scene(right, side);
    const int cl = static_cast<int>(left.shapes.size());
    const int cr = static_cast<int>(right.shapes.size());
    if (stype == 0) {
        ex.statement = "left image has more shapes than right image";
        ex.label = cl > cr ? 1 : 0;
    } else if (stype == 1) {
        ex.statement = "right image has more shapes than left image";
        ex.label = cr > cl ? 1 : 0;
    } else {
        ex.statement = "both images have the same number of shapes";
        ex.label = cl == cr ? 1 : 0;
    }
    return ex;
}

inline std::vector<NlvrExample> gen_nlvr(std::uint64_t seed, int n, int side) {
    std::vector<NlvrExample> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        out[static_cast<std::size_t>(i)] = make_nlvr(rng, side, i % 3);
    });
    return out;
}

inline std::vector<ImgClsExample> gen_imgcls(std::uint64_t seed, int n, int side) {
    std::vector<ImgClsExample> out(static_cast<std::size_t>(n));
    Rng base(seed);
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        const SceneSpec scene = sample_scene(rng, side, 1);
        const auto& s = scene.shapes[0];
        out[static_cast<std::size_t>(i)] = {render_scene(scene, side),
                                            static_cast<int>(s.color) * 3 +
                                                static_cast<int>(s.kind)};
    });
    return out;
}

// All (color, kind) multisets of size 1..3, 219 in total. Retrieval
// datasets draw distinct multisets so every caption is unique.
inline std::vector<std::vector<std::pair<int, int>>> all_shape_multisets() {
    std::vector<std::vector<std::pair<int, int>>> out;
    auto combo = [](int idx) { return std::pair<int, int>{idx / 3, idx % 3}; };
    for (int a = 0; a < 9; ++a) out.push_back({combo(a)});
    for (int a = 0; a < 9; ++a)
        for (int b = a; b < 9; ++b) out.push_back({combo(a), combo(b)});
    for (int a = 0; a < 9; ++a)
        for (int b = a; b < 9; ++b)
            for (int c = b; c < 9; ++c) out.push_back({combo(a), combo(b), combo(c)});
    return out;
}

// Renders a scene realizing the given multiset; placement still random.
inline SceneSpec scene_for_multiset(Rng& rng, int side,
                                    const std::vector<std::pair<int, int>>& multiset) {
    SceneSpec scene;
    scene.bg_byte = 20 + static_cast<int>(rng.uniform_int(40));
    const int q = side / 2;
    std::vector<int> cells = rng.sample_without_replacement(4, static_cast<int>(multiset.size()));
    for (std::size_t i = 0; i < multiset.size(); ++i) {
        ShapeSpec s;
        s.color = static_cast<ShapeColor>(multiset[i].first);
        s.kind = static_cast<ShapeKind>(multiset[i].second);
        s.half = 5 + static_cast<int>(rng.uniform_int(2));
        const int cell = cells[i];
        const int x0 = (cell % 2) * q;
        const int y0 = (cell / 2) * q;
        const int margin = s.half + 1;
        s.cx = x0 + margin +
               static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(q - 2 * margin + 1)));
        s.cy = y0 + margin +
               static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(q - 2 * margin + 1)));
        scene.shapes.push_back(s);
    }
    return scene;
}

inline std::vector<PairExample> gen_retrieval(std::uint64_t seed, int n, int side) {
    auto multisets = all_shape_multisets();
    if (n > static_cast<int>(multisets.size()))
        throw config_error("retrieval dataset supports at most " +
                           std::to_string(multisets.size()) + " unique captions, asked for " +
                           std::to_string(n));
    Rng base(seed);
    Rng shuffler = base.fork(0x52455452ull);  // distinct stream for the multiset order
    for (int i = static_cast<int>(multisets.size()) - 1; i > 0; --i) {
        const int j = static_cast<int>(shuffler.uniform_int(static_cast<std::uint64_t>(i + 1)));
        std::swap(multisets[static_cast<std::size_t>(i)], multisets[static_cast<std::size_t>(j)]);
    }
    std::vector<PairExample> out(static_cast<std::size_t>(n));
    detail::parallel_for(n, [&](int i) {
        Rng rng = base.fork(static_cast<std::uint64_t>(i));
        const SceneSpec scene = scene_for_multiset(rng, side, multisets[static_cast<std::size_t>(i)]);
        out[static_cast<std::size_t>(i)] = {render_scene(scene, side), caption_for(scene)};
    });
    return out;
}

// --------------------------------------------------------------------------
// Dataset files: one record per line, tab-separated fields, images as
// "h w c <hex>" dumps. Layout per task is documented in the README.
// --------------------------------------------------------------------------

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == '\t') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline void write_dataset(std::ostream& os, const std::vector<PairExample>& v) {
    for (const auto& e : v) os << image_to_hex(e.image) << '\t' << e.caption << '\n';
}
inline void write_dataset(std::ostream& os, const std::vector<RawImage>& v) {
    for (const auto& e : v) os << image_to_hex(e) << '\n';
}
inline void write_dataset(std::ostream& os, const std::vector<std::string>& v) {
    for (const auto& e : v) os << e << '\n';
}
inline void write_dataset(std::ostream& os, const std::vector<VqaExample>& v) {
    for (const auto& e : v)
        os << image_to_hex(e.image) << '\t' << e.question << '\t' << e.answer << '\n';
}
inline void write_dataset(std::ostream& os, const std::vector<NlvrExample>& v) {
    for (const auto& e : v)
        os << image_to_hex(e.left) << '\t' << image_to_hex(e.right) << '\t' << e.statement
           << '\t' << e.label << '\n';
}
inline void write_dataset(std::ostream& os, const std::vector<ImgClsExample>& v) {
    for (const auto& e : v) os << image_to_hex(e.image) << '\t' << e.label << '\n';
}

template <typename T>
void write_dataset_file(const std::string& path, const std::vector<T>& v) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open dataset file for writing: " + path);
    write_dataset(os, v);
}

inline std::vector<PairExample> read_pairs_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open dataset file: " + path);
    std::vector<PairExample> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 2) throw format_error("pairs record needs 2 fields");
        out.push_back({image_from_hex(fields[0]), fields[1]});
    }
    return out;
}

}  // namespace vlbt
