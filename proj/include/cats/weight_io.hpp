#pragma once

// Binary weight-file format (little-endian, magic "CSPC"):
//
//   "CSPC" | u32 version | 8 x u32 model config | u32 tensor_count
//   | u64 data_start | tensor table | padding | tensor data
//
// Table entry: u32 name_len, name bytes, i32 layer (-1 for non-layer
// tensors), u64 offset (relative to data_start), u64 length in bytes.
// Values are raw fp32. Every tensor starts 64-byte aligned and the tensors of
// one transformer layer are written back to back in layer order, so each
// layer is a single contiguous extent a streaming simulator can move whole.
// Adapter tensors are appended after the target under "adapter.dm.*" /
// "adapter.sv.*".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cats/adapter.hpp"
#include "cats/error.hpp"
#include "cats/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts unsupported");

namespace cats {

inline constexpr char kWeightMagic[4] = {'C', 'S', 'P', 'C'};
inline constexpr uint32_t kWeightVersion = 1;
inline constexpr uint64_t kWeightAlign = 64;

struct TensorRecord {
    std::string name;
    int32_t layer = -1;     // 1-based layer index, -1 for non-layer tensors
    uint64_t offset = 0;    // relative to data_start
    uint64_t length = 0;    // bytes
};

struct WeightFileInfo {
    uint32_t version = kWeightVersion;
    ModelConfig cfg;
    std::vector<TensorRecord> table;
    uint64_t data_start = 0;
    uint64_t file_bytes = 0;

    const TensorRecord &find(const std::string &name) const {
        for (const auto &t : table)
            if (t.name == name) return t;
        throw io_error("weight file: missing tensor " + name);
    }

    // a layer's contiguous extent [first byte, last byte) relative to data_start
    std::pair<uint64_t, uint64_t> layer_extent(int layer) const {
        uint64_t lo = UINT64_MAX, hi = 0;
        for (const auto &t : table) {
            if (t.layer != layer) continue;
            lo = std::min(lo, t.offset);
            hi = std::max(hi, t.offset + t.length);
        }
        if (lo == UINT64_MAX) throw io_error("weight file: no tensors for layer " + std::to_string(layer));
        return {lo, hi};
    }

    int64_t layer_params(int layer) const {
        int64_t n = 0;
        for (const auto &t : table)
            if (t.layer == layer) n += static_cast<int64_t>(t.length / 4);
        return n;
    }

    int64_t prefix_params(const std::string &prefix) const {
        int64_t n = 0;
        for (const auto &t : table)
            if (t.name.rfind(prefix, 0) == 0) n += static_cast<int64_t>(t.length / 4);
        return n;
    }
};

namespace detail {

struct TensorOut {
    std::string name;
    int32_t layer;
    const float *data;
    uint64_t count;
};

inline void collect(std::vector<TensorOut> &out, const Weights &w, const AdapterWeights &dm,
                    const AdapterWeights &sv) {
    auto mat = [&](const std::string &n, int32_t l, const Matf &m) {
        out.push_back({n, l, m.data.data(), m.data.size()});
    };
    auto vec = [&](const std::string &n, int32_t l, const std::vector<float> &v) {
        out.push_back({n, l, v.data(), v.size()});
    };
    mat("embed.tok", -1, w.tok_embed);
    for (int l = 1; l <= w.cfg.n_layers; ++l) {
        const LayerWeights &lw = w.layers[l - 1];
        const std::string p = "layer." + std::to_string(l) + ".";
        mat(p + "attn.wq", l, lw.wq);
        mat(p + "attn.wk", l, lw.wk);
        mat(p + "attn.wv", l, lw.wv);
        mat(p + "attn.wo", l, lw.wo);
        mat(p + "mlp.w1", l, lw.w1);
        mat(p + "mlp.w2", l, lw.w2);
        vec(p + "norm.attn", l, lw.norm_attn);
        vec(p + "norm.mlp", l, lw.norm_mlp);
    }
    vec("norm.final", -1, w.norm_final);
    mat("head.lm", -1, w.lm_head);
    auto adapter = [&](const std::string &p, const AdapterWeights &a) {
        vec(p + "norm.in", -1, a.norm_in);
        vec(p + "norm.out", -1, a.norm_out);
        mat(p + "attn.wq", -1, a.wq);
        mat(p + "attn.wk", -1, a.wk);
        mat(p + "attn.wv", -1, a.wv);
        mat(p + "attn.wo", -1, a.wo);
    };
    adapter("adapter.dm.", dm);
    adapter("adapter.sv.", sv);
}

template <typename T>
void put(std::ostream &os, T v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T get(std::istream &is) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) throw io_error("weight file: truncated");
    return v;
}

inline uint64_t align_up(uint64_t x, uint64_t a) { return (x + a - 1) / a * a; }

}  // namespace detail

inline void save_model_file(const std::string &path, const Weights &w, const AdapterWeights &dm,
                            const AdapterWeights &sv) {
    w.cfg.validate();
    std::vector<detail::TensorOut> tensors;
    detail::collect(tensors, w, dm, sv);

    // lay out data offsets (relative, 64-byte aligned each)
    std::vector<TensorRecord> table;
    uint64_t off = 0;
    for (const auto &t : tensors) {
        off = detail::align_up(off, kWeightAlign);
        table.push_back({t.name, t.layer, off, t.count * 4});
        off += t.count * 4;
    }

    uint64_t header_bytes = 4 + 4 + 8 * 4 + 4 + 8;
    for (const auto &r : table) header_bytes += 4 + r.name.size() + 4 + 8 + 8;
    const uint64_t data_start = detail::align_up(header_bytes, kWeightAlign);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open " + path + " for writing");
    os.write(kWeightMagic, 4);
    detail::put<uint32_t>(os, kWeightVersion);
    const ModelConfig &c = w.cfg;
    for (const int v : {c.n_layers, c.d_model, c.n_heads, c.vocab_size, c.max_seq, c.l_dm, c.l_sv,
                        c.bytes_per_param})
        detail::put<uint32_t>(os, static_cast<uint32_t>(v));
    detail::put<uint32_t>(os, static_cast<uint32_t>(table.size()));
    detail::put<uint64_t>(os, data_start);
    for (const auto &r : table) {
        detail::put<uint32_t>(os, static_cast<uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        detail::put<int32_t>(os, r.layer);
        detail::put<uint64_t>(os, r.offset);
        detail::put<uint64_t>(os, r.length);
    }
    // pad to data_start, then emit tensors at their aligned offsets
    uint64_t cur = header_bytes;
    while (cur < data_start) {
        os.put(0);
        ++cur;
    }
    uint64_t rel = 0;
    for (size_t i = 0; i < tensors.size(); ++i) {
        while (rel < table[i].offset) {
            os.put(0);
            ++rel;
        }
        os.write(reinterpret_cast<const char *>(tensors[i].data),
                 static_cast<std::streamsize>(table[i].length));
        rel += table[i].length;
    }
    if (!os) throw io_error("short write to " + path);
}

inline WeightFileInfo read_file_info(std::istream &is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kWeightMagic, 4) != 0)
        throw io_error("not a weight file (bad magic)");
    WeightFileInfo info;
    info.version = detail::get<uint32_t>(is);
    if (info.version != kWeightVersion)
        throw io_error("unsupported weight file version " + std::to_string(info.version));
    ModelConfig &c = info.cfg;
    c.n_layers = static_cast<int>(detail::get<uint32_t>(is));
    c.d_model = static_cast<int>(detail::get<uint32_t>(is));
    c.n_heads = static_cast<int>(detail::get<uint32_t>(is));
    c.vocab_size = static_cast<int>(detail::get<uint32_t>(is));
    c.max_seq = static_cast<int>(detail::get<uint32_t>(is));
    c.l_dm = static_cast<int>(detail::get<uint32_t>(is));
    c.l_sv = static_cast<int>(detail::get<uint32_t>(is));
    c.bytes_per_param = static_cast<int>(detail::get<uint32_t>(is));
    const uint32_t count = detail::get<uint32_t>(is);
    info.data_start = detail::get<uint64_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        TensorRecord r;
        const uint32_t len = detail::get<uint32_t>(is);
        r.name.resize(len);
        is.read(r.name.data(), len);
        r.layer = detail::get<int32_t>(is);
        r.offset = detail::get<uint64_t>(is);
        r.length = detail::get<uint64_t>(is);
        if (!is) throw io_error("weight file: truncated table");
        info.table.push_back(std::move(r));
    }
    return info;
}

inline WeightFileInfo read_file_info(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    WeightFileInfo info = read_file_info(is);
    is.seekg(0, std::ios::end);
    info.file_bytes = static_cast<uint64_t>(is.tellg());
    return info;
}

struct LoadedModel {
    Weights w;
    AdapterWeights dm, sv;
    WeightFileInfo info;
};

inline LoadedModel load_model_file(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    LoadedModel m;
    m.info = read_file_info(is);
    const ModelConfig &c = m.info.cfg;
    c.validate();

    auto read_into = [&](const std::string &name, float *dst, uint64_t expect_count) {
        const TensorRecord &r = m.info.find(name);
        if (r.length != expect_count * 4)
            throw io_error("weight file: tensor " + name + " has " + std::to_string(r.length) +
                           " bytes, expected " + std::to_string(expect_count * 4));
        is.seekg(static_cast<std::streamoff>(m.info.data_start + r.offset));
        is.read(reinterpret_cast<char *>(dst), static_cast<std::streamsize>(r.length));
        if (!is) throw io_error("weight file: truncated tensor " + name);
    };
    auto read_mat = [&](const std::string &name, Matf &mat, int r0, int c0) {
        mat = Matf(r0, c0);
        read_into(name, mat.data.data(), mat.data.size());
    };
    auto read_vec = [&](const std::string &name, std::vector<float> &v, int n) {
        v.assign(n, 0.0f);
        read_into(name, v.data(), v.size());
    };

    m.w.cfg = c;
    read_mat("embed.tok", m.w.tok_embed, c.vocab_size, c.d_model);
    m.w.layers.resize(c.n_layers);
    for (int l = 1; l <= c.n_layers; ++l) {
        LayerWeights &lw = m.w.layers[l - 1];
        const std::string p = "layer." + std::to_string(l) + ".";
        read_mat(p + "attn.wq", lw.wq, c.d_model, c.d_model);
        read_mat(p + "attn.wk", lw.wk, c.d_model, c.d_model);
        read_mat(p + "attn.wv", lw.wv, c.d_model, c.d_model);
        read_mat(p + "attn.wo", lw.wo, c.d_model, c.d_model);
        read_mat(p + "mlp.w1", lw.w1, c.d_model, c.d_ff());
        read_mat(p + "mlp.w2", lw.w2, c.d_ff(), c.d_model);
        read_vec(p + "norm.attn", lw.norm_attn, c.d_model);
        read_vec(p + "norm.mlp", lw.norm_mlp, c.d_model);
    }
    read_vec("norm.final", m.w.norm_final, c.d_model);
    read_mat("head.lm", m.w.lm_head, c.d_model, c.vocab_size);
    auto read_adapter = [&](const std::string &p, AdapterWeights &a) {
        read_vec(p + "norm.in", a.norm_in, c.d_model);
        read_vec(p + "norm.out", a.norm_out, c.d_model);
        read_mat(p + "attn.wq", a.wq, c.d_model, c.d_model);
        read_mat(p + "attn.wk", a.wk, c.d_model, c.d_model);
        read_mat(p + "attn.wv", a.wv, c.d_model, c.d_model);
        read_mat(p + "attn.wo", a.wo, c.d_model, c.d_model);
    };
    read_adapter("adapter.dm.", m.dm);
    read_adapter("adapter.sv.", m.sv);
    return m;
}

}  // namespace cats
