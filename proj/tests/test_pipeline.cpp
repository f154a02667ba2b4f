#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <set>
#include <sstream>

#include "vlbt/image.hpp"
#include "vlbt/synth.hpp"
#include "vlbt/text.hpp"

using namespace vlbt;

namespace {

// Test-side label oracle: recount shapes from rendered pixels. A shape
// pixel has a saturated channel; connected components (4-neighborhood)
// give the count, the dominant channel the color, and the bounding-box
// fill ratio the kind.
struct DetectedShape {
    ShapeColor color;
    ShapeKind kind;
};

std::vector<DetectedShape> detect_shapes(const RawImage& img) {
    const int h = img.height, w = img.width;
    std::vector<int> comp(static_cast<std::size_t>(h) * w, -1);
    auto is_shape = [&](int y, int x) {
        return img.at(y, x, 0) > 0.5f || img.at(y, x, 1) > 0.5f || img.at(y, x, 2) > 0.5f;
    };
    std::vector<DetectedShape> out;
    int next = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!is_shape(y, x) || comp[static_cast<std::size_t>(y * w + x)] >= 0) continue;
            // flood fill
            std::vector<std::pair<int, int>> stack{{y, x}};
            comp[static_cast<std::size_t>(y * w + x)] = next;
            int min_x = x, max_x = x, min_y = y, max_y = y, area = 0;
            double sum_r = 0, sum_g = 0, sum_b = 0;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                ++area;
                sum_r += img.at(cy, cx, 0);
                sum_g += img.at(cy, cx, 1);
                sum_b += img.at(cy, cx, 2);
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
                const int dy[] = {1, -1, 0, 0}, dx[] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    const int ny = cy + dy[d], nx = cx + dx[d];
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    if (!is_shape(ny, nx)) continue;
                    if (comp[static_cast<std::size_t>(ny * w + nx)] >= 0) continue;
                    comp[static_cast<std::size_t>(ny * w + nx)] = next;
                    stack.emplace_back(ny, nx);
                }
            }
            DetectedShape ds;
            ds.color = sum_r > sum_g && sum_r > sum_b
                           ? ShapeColor::Red
                           : (sum_g > sum_b ? ShapeColor::Green : ShapeColor::Blue);
            const double bbox = static_cast<double>(max_x - min_x + 1) * (max_y - min_y + 1);
            const double fill = area / bbox;
            // rasterized fill ratios: square ~1.0, circle ~0.67, triangle ~0.50
            ds.kind = fill > 0.90 ? ShapeKind::Square
                                  : (fill > 0.60 ? ShapeKind::Circle : ShapeKind::Triangle);
            out.push_back(ds);
            ++next;
        }
    return out;
}

}  // namespace

TEST_CASE("patchify shapes and the 224/16 formula") {
    RawImage big = RawImage::filled(224, 224, 0.5f);
    const PatchGrid g = patchify(big, 16);
    CHECK(g.count() == 196);
    CHECK(g.grid_h == 14);

    RawImage tiny = RawImage::filled(16, 16, 0.25f);
    const PatchGrid single = patchify(tiny, 16);
    CHECK(single.count() == 1);
    CHECK(single.patch_dim == 16 * 16 * 3);
    for (int i = 0; i < single.patch_dim; ++i) CHECK(single.patch(0)[i] == 0.25f);

    RawImage mid = RawImage::filled(32, 32, 0.1f);
    const PatchGrid grid = patchify(mid, 8);
    CHECK(grid.count() == 16);
    CHECK(grid.grid_h == 4);
    CHECK(grid.grid_w == 4);

    CHECK_THROWS_AS(patchify(RawImage::filled(30, 32, 0.f), 8), config_error);
}

TEST_CASE("patchify then unpatchify is the identity on pixels") {
    Rng rng(7);
    RawImage img = render_scene(sample_scene(rng, 32, 3), 32);
    const PatchGrid g = patchify(img, 8);
    const RawImage back = unpatchify(g);
    REQUIRE(back.pixels.size() == img.pixels.size());
    CHECK(std::memcmp(back.pixels.data(), img.pixels.data(),
                      img.pixels.size() * sizeof(float)) == 0);
}

TEST_CASE("tokenizer lexicon and byte fallback") {
    const Vocab vocab = synthetic_vocab();
    CHECK(vocab.size() == 296);

    const TextTokens empty = tokenize("", vocab);
    CHECK(empty.count() == 0);

    const TextTokens lex = tokenize("red circle", vocab);
    REQUIRE(lex.count() == 2);
    CHECK(lex.ids[0] == vocab.word_id("red"));
    CHECK(lex.ids[1] == vocab.word_id("circle"));

    const std::string arbitrary = "zx9 \xC3\xA9!";
    const TextTokens bytes = tokenize(arbitrary, vocab);
    CHECK(bytes.count() == static_cast<int>(arbitrary.size()));
    for (std::size_t i = 0; i < arbitrary.size(); ++i)
        CHECK(bytes.ids[i] == Vocab::byte_id(static_cast<unsigned char>(arbitrary[i])));
}

TEST_CASE("tokenizer round-trips lexicon captions and raw bytes") {
    const Vocab vocab = synthetic_vocab();
    const std::string caption = "two red circles and one blue square";
    CHECK(detokenize(tokenize(caption, vocab), vocab) == caption);
    const std::string raw = "free-form 123!";
    CHECK(detokenize(tokenize(raw, vocab), vocab) == raw);
}

TEST_CASE("synthetic generation is deterministic per seed") {
    const auto a = gen_pairs(7, 16, 32);
    const auto b = gen_pairs(7, 16, 32);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].caption == b[i].caption);
        CHECK(std::memcmp(a[i].image.pixels.data(), b[i].image.pixels.data(),
                          a[i].image.pixels.size() * sizeof(float)) == 0);
    }
    const auto c = gen_pairs(8, 16, 32);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i].caption != c[i].caption;
    CHECK(any_diff);
}

TEST_CASE("imgcls label set covers exactly shape x color") {
    const auto data = gen_imgcls(3, 200, 32);
    std::set<int> labels;
    for (const auto& e : data) {
        CHECK(e.label >= 0);
        CHECK(e.label < kImgClsClasses);
        labels.insert(e.label);
    }
    CHECK(labels.size() == static_cast<std::size_t>(kImgClsClasses));
}

TEST_CASE("labels are consistent with renderings: counting oracle") {
    Rng rng(19);
    // scenes: the oracle recovers count, colors, kinds
    for (int trial = 0; trial < 50; ++trial) {
        Rng srng = rng.fork(static_cast<std::uint64_t>(trial));
        const SceneSpec scene = sample_scene_any(srng, 32);
        const RawImage img = render_scene(scene, 32);
        const auto detected = detect_shapes(img);
        REQUIRE(detected.size() == scene.shapes.size());
        std::multiset<std::pair<int, int>> expected, got;
        for (const auto& s : scene.shapes)
            expected.insert({static_cast<int>(s.color), static_cast<int>(s.kind)});
        for (const auto& d : detected)
            got.insert({static_cast<int>(d.color), static_cast<int>(d.kind)});
        CHECK(expected == got);
    }
}

TEST_CASE("nlvr truth values match the pixel-counting oracle") {
    const auto data = gen_nlvr(23, 120, 32);
    for (const auto& e : data) {
        const int cl = static_cast<int>(detect_shapes(e.left).size());
        const int cr = static_cast<int>(detect_shapes(e.right).size());
        int truth;
        if (e.statement.find("left image has more") == 0) {
            truth = cl > cr ? 1 : 0;
        } else if (e.statement.find("right image has more") == 0) {
            truth = cr > cl ? 1 : 0;
        } else {
            truth = cl == cr ? 1 : 0;
        }
        CHECK(truth == e.label);
    }
}

TEST_CASE("vqa answers are consistent with the rendered scene") {
    const auto data = gen_vqa(29, 160, 32);
    const auto& answers = vqa_answers();
    for (const auto& e : data) {
        const auto detected = detect_shapes(e.image);
        const std::string& answer = answers[static_cast<std::size_t>(e.answer)];
        if (e.question == "how many shapes are in the image") {
            CHECK(answer == count_word(static_cast<int>(detected.size())));
        } else if (e.question.rfind("what color is the", 0) == 0) {
            REQUIRE(detected.size() == 1);
            CHECK(answer == color_word(detected[0].color));
        }
    }
}

TEST_CASE("retrieval dataset has unique captions") {
    const auto data = gen_retrieval(31, 64, 32);
    std::set<std::string> captions;
    for (const auto& e : data) captions.insert(e.caption);
    CHECK(captions.size() == data.size());
    CHECK_THROWS_AS(gen_retrieval(31, 500, 32), config_error);
}

TEST_CASE("image hex round-trip is lossless") {
    Rng rng(37);
    const RawImage img = render_scene(sample_scene(rng, 32, 2), 32);
    const RawImage back = image_from_hex(image_to_hex(img));
    CHECK(back.height == img.height);
    CHECK(std::memcmp(back.pixels.data(), img.pixels.data(),
                      img.pixels.size() * sizeof(float)) == 0);
    CHECK_THROWS_AS(image_from_hex("32 32 3 zz"), format_error);
    CHECK_THROWS_AS(image_from_hex("4 4 3 ab"), format_error);
}

TEST_CASE("pairs dataset file round-trip") {
    const auto data = gen_pairs(41, 8, 32);
    std::ostringstream os;
    write_dataset(os, data);
    const std::string tmp = "pairs_roundtrip_test.tsv";
    write_dataset_file(tmp, data);
    const auto back = read_pairs_file(tmp);
    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].caption == data[i].caption);
        CHECK(std::memcmp(back[i].image.pixels.data(), data[i].image.pixels.data(),
                          data[i].image.pixels.size() * sizeof(float)) == 0);
    }
    std::remove(tmp.c_str());
}
