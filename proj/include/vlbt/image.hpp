#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "vlbt/errors.hpp"
#include "vlbt/rng.hpp"

namespace vlbt {

// Pixels are row-major [H,W,C] floats in [0,1], quantized to 1/255 steps
// so the hex dataset encoding is lossless.
struct RawImage {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> pixels;

    float at(int y, int x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }
    float& at(int y, int x, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
    }

    static RawImage filled(int h, int w, float value) {
        RawImage img;
        img.height = h;
        img.width = w;
        img.pixels.assign(static_cast<std::size_t>(h) * w * 3, value);
        return img;
    }
};

inline float quantize_level(int byte) { return static_cast<float>(byte) / 255.0f; }
inline int level_byte(float v) { return static_cast<int>(std::lround(v * 255.0f)); }

struct PatchGrid {
    int patch_size = 0;   // P
    int grid_h = 0;       // patches per column
    int grid_w = 0;       // patches per row
    int patch_dim = 0;    // P*P*C
    std::vector<float> patches;  // [N, P*P*C] row-major, patch order top-left to bottom-right

    int count() const { return grid_h * grid_w; }
    const float* patch(int i) const { return patches.data() + static_cast<std::size_t>(i) * patch_dim; }
};

// Splits the image into non-overlapping P x P patches in row-major order.
// Within a patch, pixels keep their (y, x, c) layout.
inline PatchGrid patchify(const RawImage& img, int patch_size) {
    if (patch_size <= 0 || img.height % patch_size != 0 || img.width % patch_size != 0)
        throw config_error("image " + std::to_string(img.height) + "x" +
                           std::to_string(img.width) + " not divisible by patch size " +
                           std::to_string(patch_size));
    if (img.channels != 3) throw config_error("images must have 3 channels");
    PatchGrid g;
    g.patch_size = patch_size;
    g.grid_h = img.height / patch_size;
    g.grid_w = img.width / patch_size;
    g.patch_dim = patch_size * patch_size * img.channels;
    g.patches.resize(static_cast<std::size_t>(g.count()) * g.patch_dim);
    std::size_t out = 0;
    for (int gy = 0; gy < g.grid_h; ++gy)
        for (int gx = 0; gx < g.grid_w; ++gx)
            for (int py = 0; py < patch_size; ++py)
                for (int px = 0; px < patch_size; ++px)
                    for (int c = 0; c < img.channels; ++c)
                        g.patches[out++] = img.at(gy * patch_size + py, gx * patch_size + px, c);
    return g;
}

inline RawImage unpatchify(const PatchGrid& g) {
    RawImage img = RawImage::filled(g.grid_h * g.patch_size, g.grid_w * g.patch_size, 0.0f);
    std::size_t in = 0;
    for (int gy = 0; gy < g.grid_h; ++gy)
        for (int gx = 0; gx < g.grid_w; ++gx)
            for (int py = 0; py < g.patch_size; ++py)
                for (int px = 0; px < g.patch_size; ++px)
                    for (int c = 0; c < 3; ++c)
                        img.at(gy * g.patch_size + py, gx * g.patch_size + px, c) = g.patches[in++];
    return img;
}

// --------------------------------------------------------------------------
// Synthetic shape rendering. Canvases hold 1..3 saturated colored shapes on
// a uniform gray background; captions and labels derive from the same
// ShapeSpec list, so they are consistent with the pixels by construction.
// --------------------------------------------------------------------------

enum class ShapeKind : int { Circle = 0, Square = 1, Triangle = 2 };
enum class ShapeColor : int { Red = 0, Green = 1, Blue = 2 };

struct ShapeSpec {
    ShapeKind kind;
    ShapeColor color;
    int cx = 0;      // center, pixels
    int cy = 0;
    int half = 5;    // half-extent, pixels
};

inline const char* shape_word(ShapeKind k, bool plural) {
    switch (k) {
        case ShapeKind::Circle: return plural ? "circles" : "circle";
        case ShapeKind::Square: return plural ? "squares" : "square";
        default: return plural ? "triangles" : "triangle";
    }
}

inline const char* color_word(ShapeColor c) {
    switch (c) {
        case ShapeColor::Red: return "red";
        case ShapeColor::Green: return "green";
        default: return "blue";
    }
}

inline void shape_rgb(ShapeColor c, float rgb[3]) {
    const float hi = quantize_level(230);
    const float lo = quantize_level(25);
    rgb[0] = c == ShapeColor::Red ? hi : lo;
    rgb[1] = c == ShapeColor::Green ? hi : lo;
    rgb[2] = c == ShapeColor::Blue ? hi : lo;
}

inline bool shape_covers(const ShapeSpec& s, int x, int y) {
    const int dx = x - s.cx;
    const int dy = y - s.cy;
    switch (s.kind) {
        case ShapeKind::Circle:
            return dx * dx + dy * dy <= s.half * s.half;
        case ShapeKind::Square:
            return std::abs(dx) <= s.half && std::abs(dy) <= s.half;
        default: {  // upward triangle: apex on top, base at the bottom
            if (dy < -s.half || dy > s.half) return false;
            const int row_half = (dy + s.half) / 2;
            return std::abs(dx) <= row_half;
        }
    }
}

inline void draw_shape(RawImage& img, const ShapeSpec& s) {
    float rgb[3];
    shape_rgb(s.color, rgb);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (shape_covers(s, x, y))
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
}

// Canvas cells used for non-overlapping placement: the four quadrants of
// a 32x32 canvas, shuffled per image.
inline RawImage render_shapes(int side, const std::vector<ShapeSpec>& shapes, int bg_byte) {
    RawImage img = RawImage::filled(side, side, quantize_level(bg_byte));
    for (const auto& s : shapes) draw_shape(img, s);
    return img;
}

// Draws 1..3 shapes placed in distinct quadrants. Deterministic per Rng.
struct SceneSpec {
    std::vector<ShapeSpec> shapes;
    int bg_byte = 30;
};

inline SceneSpec sample_scene(Rng& rng, int side, int n_shapes) {
    SceneSpec scene;
    scene.bg_byte = 20 + static_cast<int>(rng.uniform_int(40));  // [20,59]
    const int q = side / 2;
    std::vector<int> cells = rng.sample_without_replacement(4, n_shapes);
    // sample_without_replacement returns sorted cells; shuffle order is
    // irrelevant because cells are distinct.
    for (int i = 0; i < n_shapes; ++i) {
        ShapeSpec s;
        s.kind = static_cast<ShapeKind>(rng.uniform_int(3));
        s.color = static_cast<ShapeColor>(rng.uniform_int(3));
        s.half = 5 + static_cast<int>(rng.uniform_int(2));  // 5..6 -> 11..13 px across
        const int cell = cells[static_cast<std::size_t>(i)];
        const int x0 = (cell % 2) * q;
        const int y0 = (cell / 2) * q;
        const int margin = s.half + 1;
        s.cx = x0 + margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(q - 2 * margin + 1)));
        s.cy = y0 + margin + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(q - 2 * margin + 1)));
        scene.shapes.push_back(s);
    }
    return scene;
}

inline RawImage render_scene(const SceneSpec& scene, int side) {
    return render_shapes(side, scene.shapes, scene.bg_byte);
}

// Uniform noise canvas (used as the mismatched-image control in
// cross-modal evaluations).
inline RawImage render_noise(Rng& rng, int side) {
    RawImage img = RawImage::filled(side, side, 0.0f);
    for (auto& p : img.pixels) p = quantize_level(static_cast<int>(rng.uniform_int(256)));
    return img;
}

// --------------------------------------------------------------------------
// Hex image serialization: "h w c XX.." with two hex digits per channel
// byte, row-major. Lossless for 1/255-quantized pixels.
// --------------------------------------------------------------------------

inline std::string image_to_hex(const RawImage& img) {
    static const char* digits = "0123456789abcdef";
    std::string out = std::to_string(img.height) + " " + std::to_string(img.width) + " " +
                      std::to_string(img.channels) + " ";
    out.reserve(out.size() + img.pixels.size() * 2);
    for (float v : img.pixels) {
        const int b = level_byte(v);
        out.push_back(digits[(b >> 4) & 0xF]);
        out.push_back(digits[b & 0xF]);
    }
    return out;
}

inline int hex_digit(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw format_error(std::string("bad hex digit '") + c + "'");
}

inline RawImage image_from_hex(const std::string& field) {
    int h = 0, w = 0, c = 0;
    std::size_t pos = 0;
    auto read_int = [&](const char* what) {
        int v = 0;
        bool any = false;
        while (pos < field.size() && field[pos] >= '0' && field[pos] <= '9') {
            v = v * 10 + (field[pos] - '0');
            ++pos;
            any = true;
        }
        if (!any || pos >= field.size() || field[pos] != ' ')
            throw format_error(std::string("bad image header: missing ") + what);
        ++pos;
        return v;
    };
    h = read_int("height");
    w = read_int("width");
    c = read_int("channels");
    if (c != 3) throw format_error("image field must have 3 channels");
    const std::size_t n = static_cast<std::size_t>(h) * w * c;
    if (field.size() - pos != n * 2) throw format_error("image hex payload has wrong length");
    RawImage img;
    img.height = h;
    img.width = w;
    img.channels = c;
    img.pixels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int byte = hex_digit(field[pos + 2 * i]) * 16 + hex_digit(field[pos + 2 * i + 1]);
        img.pixels[i] = quantize_level(byte);
    }
    return img;
}

}  // namespace vlbt
