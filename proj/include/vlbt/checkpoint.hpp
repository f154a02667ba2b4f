#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "vlbt/codebook.hpp"
#include "vlbt/errors.hpp"
#include "vlbt/model.hpp"
#include "vlbt/optim.hpp"

namespace vlbt {

// Checkpoint container: magic "VLBT", u32 version, u32 tensor count, then
// per tensor u16 name length, UTF-8 name, u8 rank, u64 dims, 32-bit
// little-endian floats. Codebook tensors live under "cb/", optimizer
// moments and the step counter under "opt/".
constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensorF32 {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : dims) n *= static_cast<std::size_t>(d);
        return n;
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(byte()); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(byte() | (byte() << 8)); }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        if (pos_ + n > buf_.size()) throw format_error("checkpoint truncated");
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == buf_.size(); }

private:
    unsigned byte() {
        if (pos_ >= buf_.size()) throw format_error("checkpoint truncated");
        return static_cast<unsigned char>(buf_[pos_++]);
    }
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const std::vector<NamedTensorF32>& tensors) {
    std::string out;
    out += "VLBT";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (t.name.size() > 0xFFFF) throw format_error("tensor name too long: " + t.name);
        detail::put_u16(out, static_cast<std::uint16_t>(t.name.size()));
        out += t.name;
        if (t.dims.size() > 0xFF) throw format_error("tensor rank too large");
        out.push_back(static_cast<char>(t.dims.size()));
        for (auto d : t.dims) detail::put_u64(out, d);
        if (t.numel() != t.data.size()) throw format_error("tensor data does not match dims");
        for (float f : t.data) detail::put_f32(out, f);
    }
    return out;
}

inline std::vector<NamedTensorF32> parse_checkpoint(const std::string& buf) {
    detail::Reader r(buf);
    if (r.bytes(4) != "VLBT") throw format_error("bad checkpoint magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw format_error("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<NamedTensorF32> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensorF32 t;
        const std::uint16_t name_len = r.u16();
        t.name = r.bytes(name_len);
        const std::uint8_t rank = r.u8();
        for (std::uint8_t d = 0; d < rank; ++d) t.dims.push_back(r.u64());
        const std::size_t n = t.numel();
        t.data.resize(n);
        for (std::size_t j = 0; j < n; ++j) t.data[j] = r.f32();
        tensors.push_back(std::move(t));
    }
    if (!r.done()) throw format_error("trailing bytes after checkpoint payload");
    return tensors;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open for writing: " + path);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw format_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return buf;
}

namespace detail {

inline NamedTensorF32 tensor_record(const std::string& name, const Shape& shape,
                                    const std::vector<float>& data) {
    NamedTensorF32 t;
    t.name = name;
    for (int d : shape) t.dims.push_back(static_cast<std::uint64_t>(d));
    t.data = data;
    return t;
}

}  // namespace detail

// Model parameters + codebook + optimizer state, in store order so the
// bytes are reproducible.
inline std::vector<NamedTensorF32> checkpoint_tensors(const Model<float>& model,
                                                      const Codebook& codebook,
                                                      const AdamState<float>* opt) {
    std::vector<NamedTensorF32> out;
    for (const auto& [name, t] : model.params.items())
        out.push_back(detail::tensor_record(name, t.shape, *t.values));
    if (codebook.trained()) {
        out.push_back(detail::tensor_record("cb/centroids", {codebook.k, codebook.dim},
                                            codebook.centroids));
        // fingerprint bytes stored as eight small floats
        std::vector<float> fp(8);
        for (int i = 0; i < 8; ++i)
            fp[static_cast<std::size_t>(i)] =
                static_cast<float>((codebook.trained_on >> (8 * i)) & 0xFF);
        out.push_back(detail::tensor_record("cb/fingerprint", {8}, fp));
    }
    if (opt) {
        out.push_back(detail::tensor_record("opt/step", {1},
                                            {static_cast<float>(opt->step)}));
        for (std::size_t i = 0; i < opt->names.size(); ++i) {
            out.push_back(detail::tensor_record(
                "opt/m/" + opt->names[i],
                {static_cast<int>(opt->m[i].size())}, opt->m[i]));
            out.push_back(detail::tensor_record(
                "opt/v/" + opt->names[i],
                {static_cast<int>(opt->v[i].size())}, opt->v[i]));
        }
    }
    return out;
}

inline void save_checkpoint(const std::string& path, const Model<float>& model,
                            const Codebook& codebook, const AdamState<float>* opt = nullptr) {
    write_file(path, serialize_checkpoint(checkpoint_tensors(model, codebook, opt)));
}

struct LoadedCheckpoint {
    std::vector<NamedTensorF32> tensors;

    const NamedTensorF32* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    return LoadedCheckpoint{parse_checkpoint(read_file(path))};
}

// Applies model tensors (and codebook if present) onto a freshly built
// model. Missing or shape-mismatched tensors are format errors; nothing
// is applied until everything checks out (the parse already validated
// the whole file).
inline void restore_model(Model<float>& model, const LoadedCheckpoint& ckpt,
                          bool allow_extra_model_tensors = false) {
    for (auto& [name, t] : model.params.items()) {
        const NamedTensorF32* rec = ckpt.find(name);
        if (!rec) throw format_error("checkpoint is missing tensor: " + name);
        if (rec->numel() != t.numel())
            throw format_error("checkpoint tensor " + name + " has wrong size");
        std::copy(rec->data.begin(), rec->data.end(), t.values->begin());
    }
    if (!allow_extra_model_tensors) {
        for (const auto& rec : ckpt.tensors) {
            if (rec.name.rfind("cb/", 0) == 0 || rec.name.rfind("opt/", 0) == 0) continue;
            if (!model.params.has(rec.name))
                throw format_error("checkpoint has unexpected tensor: " + rec.name);
        }
    }
}

inline Codebook restore_codebook(const LoadedCheckpoint& ckpt) {
    Codebook cb;
    const NamedTensorF32* cent = ckpt.find("cb/centroids");
    if (!cent) return cb;  // untrained
    if (cent->dims.size() != 2) throw format_error("cb/centroids must be rank 2");
    cb.k = static_cast<int>(cent->dims[0]);
    cb.dim = static_cast<int>(cent->dims[1]);
    cb.centroids = cent->data;
    const NamedTensorF32* fp = ckpt.find("cb/fingerprint");
    if (fp && fp->data.size() == 8) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(
                     static_cast<unsigned char>(fp->data[static_cast<std::size_t>(i)]))
                 << (8 * i);
        cb.trained_on = v;
    }
    return cb;
}

inline void restore_optimizer(AdamState<float>& opt, const LoadedCheckpoint& ckpt) {
    const NamedTensorF32* step = ckpt.find("opt/step");
    if (!step) throw format_error("checkpoint has no optimizer state");
    opt.step = static_cast<long long>(step->data.at(0));
    for (std::size_t i = 0; i < opt.names.size(); ++i) {
        const NamedTensorF32* m = ckpt.find("opt/m/" + opt.names[i]);
        const NamedTensorF32* v = ckpt.find("opt/v/" + opt.names[i]);
        if (!m || !v) throw format_error("checkpoint optimizer state missing " + opt.names[i]);
        if (m->data.size() != opt.m[i].size() || v->data.size() != opt.v[i].size())
            throw format_error("optimizer moment size mismatch for " + opt.names[i]);
        opt.m[i] = m->data;
        opt.v[i] = v->data;
    }
}

}  // namespace vlbt
