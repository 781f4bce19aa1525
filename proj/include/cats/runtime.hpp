#pragma once

// Layer-range forward runtime. The whole cascade is expressed as
// forward_range calls over [l_from, l_to] so the same code serves drafting
// (layers 1..l_dm), shallow verification (l_dm+1..l_sv), correction
// re-forwarding (1..l_sv under a tree mask) and the final pass (l_sv+1..n).
// Chaining ranges reproduces the monolithic forward bit-for-bit.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "cats/attn.hpp"
#include "cats/error.hpp"
#include "cats/kv_cache.hpp"
#include "cats/matrix.hpp"
#include "cats/model.hpp"

namespace cats {

struct Hidden {
    Matf x;         // n_rows x d_model
    int layer = 0;  // produced by this layer (0 = embedding output)
};

inline void silu_inplace(Matf &m) {
    for (auto &v : m.data) v = v / (1.0f + std::exp(-v));
}

struct Model {
    ModelConfig cfg;
    Weights w;
    Matf pos_table;  // max_seq x d_model, sinusoidal

    explicit Model(Weights weights) : cfg(weights.cfg), w(std::move(weights)) {
        cfg.validate();
        pos_table = Matf(cfg.max_seq, cfg.d_model);
        for (int p = 0; p < cfg.max_seq; ++p) {
            float *r = pos_table.row(p);
            for (int i = 0; i < cfg.d_model / 2; ++i) {
                const double freq = std::pow(10000.0, -2.0 * i / cfg.d_model);
                r[2 * i] = static_cast<float>(std::sin(p * freq));
                r[2 * i + 1] = static_cast<float>(std::cos(p * freq));
            }
        }
    }

    KvCache make_cache() const { return KvCache(cfg.n_layers, cfg.d_model); }

    Hidden embed(std::span<const Token> toks, std::span<const int32_t> positions) const {
        if (toks.size() != positions.size()) throw invalid_input("embed: size mismatch");
        Hidden h;
        h.x = Matf(static_cast<int>(toks.size()), cfg.d_model);
        h.layer = 0;
        for (size_t i = 0; i < toks.size(); ++i) {
            if (toks[i] < 0 || toks[i] >= cfg.vocab_size)
                throw invalid_input("embed: token id out of range");
            if (positions[i] < 0 || positions[i] >= cfg.max_seq)
                throw invalid_input("embed: position beyond max_seq");
            const float *e = w.tok_embed.row(toks[i]);
            const float *p = pos_table.row(positions[i]);
            float *r = h.x.row(static_cast<int>(i));
            for (int j = 0; j < cfg.d_model; ++j) r[j] = e[j] + p[j];
        }
        return h;
    }

    // Runs layers l_from..l_to (1-based, inclusive). h must have been produced
    // by layer l_from-1. New K/V rows are appended to every layer in range
    // with the given positions/tags. l_to == l_from-1 is the empty range.
    void forward_range(int l_from, int l_to, Hidden &h, std::span<const int32_t> positions,
                       std::span<const int32_t> tags, const AttnSpec &attn, KvCache &kv) const {
        if (l_from < 1 || l_to > cfg.n_layers || l_to < l_from - 1)
            throw invalid_input("forward_range: bad layer range");
        if (h.layer != l_from - 1)
            throw invalid_input("forward_range: hidden was produced by layer " +
                                std::to_string(h.layer) + ", expected " + std::to_string(l_from - 1));
        if (h.x.cols != cfg.d_model) throw invalid_input("forward_range: width mismatch");
        if (kv.n_layers() != cfg.n_layers || kv.d != cfg.d_model)
            throw invalid_input("forward_range: cache shape mismatch");
        const int n = h.x.rows;
        if (static_cast<int>(positions.size()) != n || static_cast<int>(tags.size()) != n)
            throw invalid_input("forward_range: positions/tags size mismatch");

        for (int l = l_from; l <= l_to; ++l) {
            const LayerWeights &lw = w.layers[l - 1];
            const Matf u = rms_norm_rows(h.x, std::span<const float>(lw.norm_attn));
            const Matf q = matmul(u, lw.wq);
            const Matf kx = matmul(u, lw.wk);
            const Matf vx = matmul(u, lw.wv);
            const Matf ao =
                masked_attention(q, kx, vx, kv.layer(l), attn, cfg.n_heads, positions, tags);
            add_inplace(h.x, matmul(ao, lw.wo));
            const Matf m = rms_norm_rows(h.x, std::span<const float>(lw.norm_mlp));
            Matf f = matmul(m, lw.w1);
            silu_inplace(f);
            add_inplace(h.x, matmul(f, lw.w2));
            h.layer = l;
        }
    }

    // Final rms-norm then the shared LM head. Adapters feed their outputs
    // through this same function — there is exactly one head in the system.
    Matf head_logits(const Matf &hrows) const {
        const Matf n = rms_norm_rows(hrows, std::span<const float>(w.norm_final));
        return matmul(n, w.lm_head);
    }

    // Full-depth prompt pass. Fills the cache with committed slots for every
    // prompt position and captures hidden states at the two cascade
    // boundaries. Returns the final-layer hidden rows.
    Hidden prefill(std::span<const Token> prompt, KvCache &kv, Matf *h_dm = nullptr,
                   Matf *h_sv = nullptr) const {
        if (prompt.empty()) throw invalid_input("prefill: empty prompt");
        if (kv.committed_len() != 0 ) throw invalid_input("prefill: cache not empty");
        const int n = static_cast<int>(prompt.size());
        std::vector<int32_t> positions(n), tags(n, kTagCommitted);
        for (int i = 0; i < n; ++i) positions[i] = i;
        Hidden h = embed(prompt, positions);
        const AttnSpec causal = AttnSpec::causal(n);
        forward_range(1, cfg.l_dm, h, positions, tags, causal, kv);
        if (h_dm) *h_dm = h.x;
        forward_range(cfg.l_dm + 1, cfg.l_sv, h, positions, tags, causal, kv);
        if (h_sv) *h_sv = h.x;
        forward_range(cfg.l_sv + 1, cfg.n_layers, h, positions, tags, causal, kv);
        return h;
    }
};

}  // namespace cats
