#pragma once

// Bolt-on adapters for the draft and shallow-verify exits: rms-norm, one
// multi-head attention over the adapter's own KV (keys built from the target's
// boundary hidden states), residual, rms-norm out. The out-projection starts
// at zero so an untrained adapter passes the normed residual through
// unchanged. Decoding happens through the target's shared LM head; adapters
// own no head of their own.
//
// Weights are templated on the scalar so the trainer can instantiate the
// exact same forward in double precision.

#include <cstdint>
#include <span>
#include <vector>

#include "cats/attn.hpp"
#include "cats/error.hpp"
#include "cats/kv_cache.hpp"
#include "cats/matrix.hpp"
#include "cats/model.hpp"

namespace cats {

template <typename T>
struct AdapterW {
    std::vector<T> norm_in, norm_out;  // d_model each
    Mat<T> wq, wk, wv, wo;             // d_model x d_model

    int d() const { return wq.rows; }

    int64_t param_count() const {
        return 4LL * wq.rows * wq.cols + static_cast<int64_t>(norm_in.size()) +
               static_cast<int64_t>(norm_out.size());
    }
};

using AdapterWeights = AdapterW<float>;

inline AdapterWeights init_adapter(const ModelConfig &cfg, uint64_t seed) {
    Rng rng(seed);
    AdapterWeights a;
    const int d = cfg.d_model;
    a.norm_in.assign(d, 1.0f);
    a.norm_out.assign(d, 1.0f);
    a.wq = Matf(d, d);
    a.wk = Matf(d, d);
    a.wv = Matf(d, d);
    a.wo = Matf(d, d);  // zero-init: residual passthrough until trained
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    detail::fill_gauss(a.wq, rng, scale);
    detail::fill_gauss(a.wk, rng, scale);
    detail::fill_gauss(a.wv, rng, scale);
    return a;
}

// One-layer cache wrapper for an adapter.
template <typename T>
KvCacheT<T> make_adapter_cache(const ModelConfig &cfg) {
    return KvCacheT<T>(1, cfg.d_model);
}

// h_in: boundary hidden rows (n x d). Appends this call's K/V to the adapter
// cache and returns output rows ready for the shared head.
template <typename T>
Mat<T> adapter_forward(const AdapterW<T> &a, const Mat<T> &h_in,
                       std::span<const int32_t> positions, std::span<const int32_t> tags,
                       const AttnSpec &attn, KvCacheT<T> &kv, int n_heads) {
    if (h_in.cols != a.d()) throw invalid_input("adapter_forward: width mismatch");
    if (kv.n_layers() != 1 || kv.d != a.d())
        throw invalid_input("adapter_forward: cache shape mismatch");
    const Mat<T> u = rms_norm_rows(h_in, std::span<const T>(a.norm_in));
    const Mat<T> q = matmul(u, a.wq);
    const Mat<T> kx = matmul(u, a.wk);
    const Mat<T> vx = matmul(u, a.wv);
    const Mat<T> ao = masked_attention(q, kx, vx, kv.layers[0], attn, n_heads, positions, tags);
    Mat<T> r = h_in;
    add_inplace(r, matmul(ao, a.wo));
    return rms_norm_rows(r, std::span<const T>(a.norm_out));
}

template <typename U, typename T>
AdapterW<U> cast_adapter(const AdapterW<T> &a) {
    AdapterW<U> o;
    o.norm_in.assign(a.norm_in.begin(), a.norm_in.end());
    o.norm_out.assign(a.norm_out.begin(), a.norm_out.end());
    o.wq = cast_mat<U>(a.wq);
    o.wk = cast_mat<U>(a.wk);
    o.wv = cast_mat<U>(a.wv);
    o.wo = cast_mat<U>(a.wo);
    return o;
}

}  // namespace cats
