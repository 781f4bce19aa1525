#pragma once

// Toy decoder-only transformer: pre-norm blocks, additive sinusoidal position
// encoding looked up by explicit position id (tree siblings share a position),
// rms-norm, SiLU MLP, shared LM head. Compute is fp32; the streaming cost
// model applies its own bytes-per-parameter accounting on top.

#include <cstdint>
#include <string>
#include <vector>

#include "cats/error.hpp"
#include "cats/matrix.hpp"
#include "cats/rng.hpp"

namespace cats {

struct ModelConfig {
    int n_layers = 8;
    int d_model = 64;
    int n_heads = 4;
    int vocab_size = 256;
    int max_seq = 512;
    int l_dm = 2;   // draft sub-network depth (layers 1..l_dm)
    int l_sv = 5;   // shallow-verifier depth (layers 1..l_sv)
    int bytes_per_param = 2;  // storage accounting for the streaming simulator

    int d_ff() const { return 4 * d_model; }
    int d_head() const { return d_model / n_heads; }

    void validate() const {
        if (n_layers < 3) throw config_error("ModelConfig: need at least 3 layers");
        if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0)
            throw config_error("ModelConfig: d_model must be a positive multiple of n_heads");
        if (vocab_size < 3) throw config_error("ModelConfig: vocab_size too small");
        if (max_seq <= 0) throw config_error("ModelConfig: max_seq must be positive");
        if (!(1 <= l_dm && l_dm < l_sv && l_sv < n_layers))
            throw config_error("ModelConfig: need 1 <= l_dm < l_sv < n_layers (got l_dm=" +
                               std::to_string(l_dm) + ", l_sv=" + std::to_string(l_sv) +
                               ", n_layers=" + std::to_string(n_layers) + ")");
        if (bytes_per_param <= 0) throw config_error("ModelConfig: bytes_per_param must be positive");
    }

    bool operator==(const ModelConfig &) const = default;
};

struct LayerWeights {
    Matf wq, wk, wv, wo;             // d_model x d_model
    Matf w1, w2;                     // d_model x d_ff, d_ff x d_model
    std::vector<float> norm_attn;    // d_model
    std::vector<float> norm_mlp;     // d_model
};

struct Weights {
    ModelConfig cfg;
    Matf tok_embed;                  // vocab x d_model
    std::vector<LayerWeights> layers;
    std::vector<float> norm_final;   // d_model
    Matf lm_head;                    // d_model x vocab
};

// parameter counts (per block, transformer layers only — embedding and head
// are excluded from all streaming-traffic accounting)
inline int64_t layer_param_count(const ModelConfig &c) {
    return 4LL * c.d_model * c.d_model + 2LL * c.d_model * c.d_ff() + 2LL * c.d_model;
}

inline int64_t adapter_param_count(const ModelConfig &c) {
    return 4LL * c.d_model * c.d_model + 2LL * c.d_model;
}

namespace detail {
inline void fill_gauss(Matf &m, Rng &rng, double scale) {
    for (auto &x : m.data) x = static_cast<float>(rng.gauss() * scale);
}
}  // namespace detail

// Seeded target-model init. Scales are chosen so that each block perturbs the
// residual stream enough that early exit at l_dm is visibly wrong, while the
// head is hot enough to produce peaked (learnable) next-token distributions.
inline Weights init_weights(const ModelConfig &cfg, uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    Weights w;
    w.cfg = cfg;
    const int d = cfg.d_model;
    w.tok_embed = Matf(cfg.vocab_size, d);
    detail::fill_gauss(w.tok_embed, rng, 1.0);
    const double proj = 0.9 / std::sqrt(static_cast<double>(d));
    const double mlp_in = 0.9 / std::sqrt(static_cast<double>(d));
    const double mlp_out = 0.9 / std::sqrt(static_cast<double>(cfg.d_ff()));
    w.layers.resize(cfg.n_layers);
    for (auto &l : w.layers) {
        l.wq = Matf(d, d);
        l.wk = Matf(d, d);
        l.wv = Matf(d, d);
        l.wo = Matf(d, d);
        l.w1 = Matf(d, cfg.d_ff());
        l.w2 = Matf(cfg.d_ff(), d);
        detail::fill_gauss(l.wq, rng, proj);
        detail::fill_gauss(l.wk, rng, proj);
        detail::fill_gauss(l.wv, rng, proj);
        detail::fill_gauss(l.wo, rng, proj);
        detail::fill_gauss(l.w1, rng, mlp_in);
        detail::fill_gauss(l.w2, rng, mlp_out);
        l.norm_attn.assign(d, 1.0f);
        l.norm_mlp.assign(d, 1.0f);
    }
    w.norm_final.assign(d, 1.0f);
    w.lm_head = Matf(d, cfg.vocab_size);
    detail::fill_gauss(w.lm_head, rng, 4.0 / std::sqrt(static_cast<double>(d)));
    return w;
}

}  // namespace cats
