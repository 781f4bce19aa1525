#pragma once

// Masked multi-head attention over a KvLayer. One code path serves every
// stage: plain causal decode, batched chain verification, and tree-masked
// verification. A query row may attend
//   - every committed cache slot,
//   - speculative cache slots whose tag is listed in spec_allow[row],
//   - batch rows j (this call's new tokens) where batch(row, j) is set.
// Keys are visited in slot order (committed prefix ascending, then insertion
// order), which matches plain sequential decoding for every legal tree query,
// so batched and token-at-a-time paths agree bitwise.

#include <cstdint>
#include <span>
#include <vector>

#include "cats/error.hpp"
#include "cats/kv_cache.hpp"
#include "cats/matrix.hpp"

namespace cats {

struct AttnSpec {
    Mat<uint8_t> batch;                            // n x n allow matrix (diagonal must be set)
    std::vector<std::vector<int32_t>> spec_allow;  // per row: visible speculative tags

    static AttnSpec causal(int n) {
        AttnSpec a;
        a.batch = Mat<uint8_t>(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j <= i; ++j) a.batch.at(i, j) = 1;
        a.spec_allow.resize(n);
        return a;
    }

    static AttnSpec diagonal(int n) {
        AttnSpec a;
        a.batch = Mat<uint8_t>(n, n);
        for (int i = 0; i < n; ++i) a.batch.at(i, i) = 1;
        a.spec_allow.resize(n);
        return a;
    }

    void validate(int n) const {
        if (batch.rows != n || batch.cols != n)
            throw invalid_input("AttnSpec: mask shape does not match batch");
        if (static_cast<int>(spec_allow.size()) != n)
            throw invalid_input("AttnSpec: spec_allow size does not match batch");
        for (int i = 0; i < n; ++i)
            if (!batch.at(i, i)) throw invalid_input("AttnSpec: row may not mask itself");
    }
};

// Appends this call's K/V rows to the layer, then attends. q/k/v are n x d
// (already projected); returns the n x d attention output.
template <typename T>
Mat<T> masked_attention(const Mat<T> &q, const Mat<T> &k_new, const Mat<T> &v_new,
                        KvLayer<T> &cache, const AttnSpec &attn, int n_heads,
                        std::span<const int32_t> positions, std::span<const int32_t> tags) {
    const int n = q.rows;
    const int d = q.cols;
    if (k_new.rows != n || v_new.rows != n || k_new.cols != d || v_new.cols != d)
        throw invalid_input("masked_attention: q/k/v shape mismatch");
    if (static_cast<int>(positions.size()) != n || static_cast<int>(tags.size()) != n)
        throw invalid_input("masked_attention: positions/tags size mismatch");
    if (d % n_heads != 0) throw invalid_input("masked_attention: d not divisible by heads");
    attn.validate(n);

    const int n0 = cache.size();
    for (int i = 0; i < n; ++i)
        cache.append(k_new.row_span(i), v_new.row_span(i), positions[i], tags[i]);

    const int dh = d / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    Mat<T> out(n, d);
    std::vector<int> allowed;
    std::vector<T> score;
    for (int i = 0; i < n; ++i) {
        allowed.clear();
        for (int s = 0; s < n0; ++s) {
            const int32_t t = cache.tag[s];
            bool ok = (t == kTagCommitted);
            if (!ok)
                for (const int32_t a : attn.spec_allow[i])
                    if (a == t) { ok = true; break; }
            if (ok) allowed.push_back(s);
        }
        for (int j = 0; j < n; ++j)
            if (attn.batch.at(i, j)) allowed.push_back(n0 + j);

        const T *qi = q.row(i);
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            score.assign(allowed.size(), T(0));
            T mx = T(0);
            for (size_t a = 0; a < allowed.size(); ++a) {
                const T *kr = cache.k.data() + static_cast<size_t>(allowed[a]) * d + off;
                T acc = T(0);
                for (int e = 0; e < dh; ++e) acc += qi[off + e] * kr[e];
                score[a] = acc * scale;
                if (a == 0 || score[a] > mx) mx = score[a];
            }
            T denom = T(0);
            for (T &sv : score) {
                sv = std::exp(sv - mx);
                denom += sv;
            }
            T *oi = out.row(i) + off;
            for (size_t a = 0; a < allowed.size(); ++a) {
                const T w = score[a] / denom;
                const T *vr = cache.v.data() + static_cast<size_t>(allowed[a]) * d + off;
                for (int e = 0; e < dh; ++e) oi[e] += w * vr[e];
            }
        }
    }
    return out;
}

}  // namespace cats
