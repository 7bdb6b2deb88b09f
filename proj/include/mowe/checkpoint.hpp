// Self-describing binary checkpoint container. Byte layout is documented in
// docs/checkpoint_format.md; integers and floats are little-endian.
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mowe/model.hpp"

namespace mowe {

namespace detail {

constexpr char kCheckpointMagic[4] = {'M', 'O', 'W', 'E'};
constexpr uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 | static_cast<uint32_t>(b[2]) << 16 |
           static_cast<uint32_t>(b[3]) << 24;
}

inline void write_f64_block(std::ostream& out, const std::vector<double>& v) {
    static_assert(sizeof(double) == 8);
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    } else {
        for (double d : v) {
            uint64_t u;
            std::memcpy(&u, &d, 8);
            unsigned char b[8];
            for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
            out.write(reinterpret_cast<const char*>(b), 8);
        }
    }
}

inline void read_f64_block(std::istream& in, std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * 8));
    } else {
        for (double& d : v) {
            unsigned char b[8];
            in.read(reinterpret_cast<char*>(b), 8);
            uint64_t u = 0;
            for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
            std::memcpy(&d, &u, 8);
        }
    }
}

}  // namespace detail

struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> meta;  // ordered key=value lines
    std::vector<NamedParam> blobs;

    const std::string* find_meta(const std::string& key) const {
        for (const auto& kv : meta)
            if (kv.first == key) return &kv.second;
        return nullptr;
    }

    const Tensor* find_blob(const std::string& name) const {
        for (const auto& b : blobs)
            if (b.name == name) return &b.tensor;
        return nullptr;
    }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParamError("save_checkpoint: cannot open " + path);
    out.write(detail::kCheckpointMagic, 4);
    detail::write_u32(out, detail::kCheckpointVersion);

    std::string config_text;
    for (const auto& kv : ckpt.meta) config_text += kv.first + "=" + kv.second + "\n";
    detail::write_u32(out, static_cast<uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));

    detail::write_u32(out, static_cast<uint32_t>(ckpt.blobs.size()));
    for (const auto& blob : ckpt.blobs) {
        detail::write_u32(out, static_cast<uint32_t>(blob.name.size()));
        out.write(blob.name.data(), static_cast<std::streamsize>(blob.name.size()));
        detail::write_u32(out, static_cast<uint32_t>(blob.tensor.rank()));
        for (int i = 0; i < blob.tensor.rank(); ++i) detail::write_u32(out, static_cast<uint32_t>(blob.tensor.dim(i)));
        detail::write_f64_block(out, blob.tensor.vec());
    }
    if (!out) throw ParamError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParamError("load_checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw ParamError("load_checkpoint: not a checkpoint file: " + path);
    uint32_t version = detail::read_u32(in);
    if (version != detail::kCheckpointVersion)
        throw ParamError("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint ckpt;
    uint32_t config_len = detail::read_u32(in);
    std::string config_text(config_len, '\0');
    in.read(config_text.data(), config_len);
    size_t pos = 0;
    while (pos < config_text.size()) {
        size_t nl = config_text.find('\n', pos);
        if (nl == std::string::npos) nl = config_text.size();
        std::string line = config_text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) throw ParamError("load_checkpoint: malformed meta line: " + line);
        ckpt.meta.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    uint32_t n_blobs = detail::read_u32(in);
    for (uint32_t i = 0; i < n_blobs; ++i) {
        uint32_t name_len = detail::read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t ndim = detail::read_u32(in);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = static_cast<int>(detail::read_u32(in));
        Tensor t(shape);
        detail::read_f64_block(in, t.vec());
        if (!in) throw ParamError("load_checkpoint: truncated blob " + name);
        ckpt.blobs.push_back({std::move(name), std::move(t)});
    }
    return ckpt;
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint

inline Checkpoint model_to_checkpoint(const MoweModel& model,
                                      const std::vector<std::pair<std::string, std::string>>& extra_meta = {}) {
    Checkpoint ckpt;
    ckpt.meta.emplace_back("format", "mowe-model");
    for (const auto& kv : model.cfg.to_kv()) ckpt.meta.emplace_back("model." + kv.first, kv.second);
    for (const auto& kv : extra_meta) ckpt.meta.push_back(kv);
    for (const auto& p : model.params()) ckpt.blobs.push_back(p);
    return ckpt;
}

inline ModelConfig config_from_checkpoint(const Checkpoint& ckpt) {
    ModelConfig cfg;
    for (const auto& kv : ckpt.meta)
        if (kv.first.rfind("model.", 0) == 0) cfg.apply_kv(kv.first.substr(6), kv.second);
    cfg.validate();
    return cfg;
}

inline void load_model_params(MoweModel& model, const Checkpoint& ckpt) {
    for (auto& p : model.params()) {
        const Tensor* blob = ckpt.find_blob(p.name);
        if (!blob) throw ParamError("checkpoint: missing parameter " + p.name);
        if (!same_shape(blob->shape(), p.tensor.shape()))
            throw ParamError("checkpoint: shape mismatch for " + p.name);
        p.tensor.vec() = blob->vec();
    }
}

inline MoweModel model_from_checkpoint(const Checkpoint& ckpt) {
    MoweModel model(config_from_checkpoint(ckpt));
    load_model_params(model, ckpt);
    return model;
}

}  // namespace mowe
