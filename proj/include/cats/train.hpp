#pragma once

// Corpus building and adapter distillation.
//
// A corpus sequence is a prompt plus a continuation sampled from the full
// model at temperature 1, recorded together with the model's next-token
// distribution and the hidden state at both cascade boundaries for every
// position. Training never touches the model again: an adapter learns to map
// its boundary hidden states through the shared head onto the recorded
// distributions (top-k reduced KL), with the loss masked to the generated
// region. Backward is analytic and double precision end to end; the float
// adapter is cast up once per call and written back at the end.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cats/adapter.hpp"
#include "cats/distill.hpp"
#include "cats/error.hpp"
#include "cats/matrix.hpp"
#include "cats/rng.hpp"
#include "cats/runtime.hpp"
#include "cats/weight_io.hpp"

namespace cats {

enum class AdapterKind { draft, shallow };

inline const char *to_string(AdapterKind k) {
    return k == AdapterKind::draft ? "draft" : "shallow";
}

struct CorpusSequence {
    int prompt_len = 0;
    std::vector<Token> tokens;
    Matf p_target;  // L x V: next-token distribution at every position
    Matf h_dm;      // L x d: hidden state after layer l_dm
    Matf h_sv;      // L x d: hidden state after layer l_sv
};

struct Corpus {
    int vocab = 0;
    int d_model = 0;
    int l_dm = 0;
    int l_sv = 0;
    std::vector<CorpusSequence> seqs;

    void validate() const {
        if (vocab < 2 || d_model < 1) throw invalid_input("corpus: bad header");
        if (seqs.empty()) throw invalid_input("corpus: no sequences");
        for (const auto &s : seqs) {
            const int L = static_cast<int>(s.tokens.size());
            if (L < 2 || s.prompt_len < 1 || s.prompt_len >= L)
                throw invalid_input("corpus: bad sequence lengths");
            if (s.p_target.rows != L || s.p_target.cols != vocab || s.h_dm.rows != L ||
                s.h_dm.cols != d_model || s.h_sv.rows != L || s.h_sv.cols != d_model)
                throw invalid_input("corpus: shape mismatch");
            for (Token t : s.tokens)
                if (t < 0 || t >= vocab) throw invalid_input("corpus: token out of range");
        }
    }
};

// Sample n_seqs continuations from the model, recording teacher state at every
// position. Deterministic in (model, seed).
inline Corpus build_corpus(const Model &m, int n_seqs, int min_prompt, int max_prompt,
                           int total_len, uint64_t seed) {
    const ModelConfig &cfg = m.cfg;
    if (n_seqs < 1) throw invalid_input("corpus: need at least one sequence");
    if (min_prompt < 1 || min_prompt > max_prompt || max_prompt >= total_len)
        throw invalid_input("corpus: need 1 <= min_prompt <= max_prompt < total_len");
    if (total_len > cfg.max_seq) throw invalid_input("corpus: total_len exceeds max_seq");

    Rng rng(seed);
    Corpus c;
    c.vocab = cfg.vocab_size;
    c.d_model = cfg.d_model;
    c.l_dm = cfg.l_dm;
    c.l_sv = cfg.l_sv;

    for (int si = 0; si < n_seqs; ++si) {
        CorpusSequence s;
        s.prompt_len =
            min_prompt + static_cast<int>(rng.below(static_cast<uint64_t>(max_prompt - min_prompt + 1)));
        const int P = s.prompt_len;
        s.tokens.resize(P);
        for (auto &t : s.tokens) t = static_cast<Token>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
        s.p_target = Matf(total_len, cfg.vocab_size);
        s.h_dm = Matf(total_len, cfg.d_model);
        s.h_sv = Matf(total_len, cfg.d_model);

        KvCache kv = m.make_cache();
        Matf bdm, bsv;
        const Hidden hp = m.prefill(s.tokens, kv, &bdm, &bsv);
        const Matf pd = softmax_rows(m.head_logits(hp.x), 1.0f);
        for (int t = 0; t < P; ++t)
            for (int j = 0; j < cfg.vocab_size; ++j) s.p_target.at(t, j) = pd.at(t, j);
        for (int t = 0; t < P; ++t)
            for (int j = 0; j < cfg.d_model; ++j) {
                s.h_dm.at(t, j) = bdm.at(t, j);
                s.h_sv.at(t, j) = bsv.at(t, j);
            }

        std::span<const float> dist = s.p_target.row_span(P - 1);
        for (int t = P; t < total_len; ++t) {
            const Token next = static_cast<Token>(rng.categorical(dist));
            s.tokens.push_back(next);
            const std::vector<int32_t> pos{t}, tag{kTagCommitted};
            Hidden h = m.embed(std::vector<Token>{next}, pos);
            const AttnSpec one = AttnSpec::diagonal(1);
            m.forward_range(1, cfg.l_dm, h, pos, tag, one, kv);
            for (int j = 0; j < cfg.d_model; ++j) s.h_dm.at(t, j) = h.x.at(0, j);
            m.forward_range(cfg.l_dm + 1, cfg.l_sv, h, pos, tag, one, kv);
            for (int j = 0; j < cfg.d_model; ++j) s.h_sv.at(t, j) = h.x.at(0, j);
            m.forward_range(cfg.l_sv + 1, cfg.n_layers, h, pos, tag, one, kv);
            const Matf p = softmax_rows(m.head_logits(h.x), 1.0f);
            for (int j = 0; j < cfg.vocab_size; ++j) s.p_target.at(t, j) = p.at(0, j);
            dist = s.p_target.row_span(t);
        }
        c.seqs.push_back(std::move(s));
    }
    c.validate();
    return c;
}

// ---- corpus file format ----------------------------------------------------
// "CSCO" | u32 version | u32 n_seqs | u32 vocab | u32 d_model | u32 l_dm |
// u32 l_sv | per sequence: u32 total_len, u32 prompt_len, i32 tokens[L],
// f32 p_target[L*V], f32 h_dm[L*d], f32 h_sv[L*d]

inline constexpr uint32_t kCorpusVersion = 1;

inline void save_corpus(const std::string &path, const Corpus &c) {
    c.validate();
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw io_error("corpus: cannot open " + tmp);
        os.write("CSCO", 4);
        detail::put<uint32_t>(os, kCorpusVersion);
        detail::put<uint32_t>(os, static_cast<uint32_t>(c.seqs.size()));
        detail::put<uint32_t>(os, static_cast<uint32_t>(c.vocab));
        detail::put<uint32_t>(os, static_cast<uint32_t>(c.d_model));
        detail::put<uint32_t>(os, static_cast<uint32_t>(c.l_dm));
        detail::put<uint32_t>(os, static_cast<uint32_t>(c.l_sv));
        for (const auto &s : c.seqs) {
            detail::put<uint32_t>(os, static_cast<uint32_t>(s.tokens.size()));
            detail::put<uint32_t>(os, static_cast<uint32_t>(s.prompt_len));
            os.write(reinterpret_cast<const char *>(s.tokens.data()),
                     static_cast<std::streamsize>(s.tokens.size() * sizeof(Token)));
            auto put_mat = [&os](const Matf &m) {
                os.write(reinterpret_cast<const char *>(m.data.data()),
                         static_cast<std::streamsize>(m.data.size() * sizeof(float)));
            };
            put_mat(s.p_target);
            put_mat(s.h_dm);
            put_mat(s.h_sv);
        }
        if (!os) throw io_error("corpus: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Corpus load_corpus(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("corpus: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "CSCO") throw io_error("corpus: bad magic");
    if (detail::get<uint32_t>(is) != kCorpusVersion) throw io_error("corpus: unknown version");
    const uint32_t n = detail::get<uint32_t>(is);
    Corpus c;
    c.vocab = static_cast<int>(detail::get<uint32_t>(is));
    c.d_model = static_cast<int>(detail::get<uint32_t>(is));
    c.l_dm = static_cast<int>(detail::get<uint32_t>(is));
    c.l_sv = static_cast<int>(detail::get<uint32_t>(is));
    for (uint32_t i = 0; i < n; ++i) {
        CorpusSequence s;
        const uint32_t L = detail::get<uint32_t>(is);
        s.prompt_len = static_cast<int>(detail::get<uint32_t>(is));
        if (L == 0 || L > (1u << 20)) throw io_error("corpus: implausible sequence length");
        s.tokens.resize(L);
        is.read(reinterpret_cast<char *>(s.tokens.data()),
                static_cast<std::streamsize>(L * sizeof(Token)));
        auto get_mat = [&is, L](Matf &m, int cols) {
            m = Matf(static_cast<int>(L), cols);
            is.read(reinterpret_cast<char *>(m.data.data()),
                    static_cast<std::streamsize>(m.data.size() * sizeof(float)));
        };
        get_mat(s.p_target, c.vocab);
        get_mat(s.h_dm, c.d_model);
        get_mat(s.h_sv, c.d_model);
        if (!is) throw io_error("corpus: truncated");
        c.seqs.push_back(std::move(s));
    }
    c.validate();
    return c;
}

// ---- training --------------------------------------------------------------

struct TrainConfig {
    int steps = 200;
    double lr = 1e-2;
    LossConfig loss;
    uint64_t seed = 0;
    double holdout_fraction = 0.2;

    void validate() const {
        if (steps < 0) throw config_error("train: steps must be >= 0");
        if (lr <= 0.0) throw config_error("train: lr must be > 0");
        if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
            throw config_error("train: holdout_fraction must be in [0,1)");
        loss.validate();
    }
};

struct AdapterGrads {
    Matd wq, wk, wv, wo;
    std::vector<double> norm_in, norm_out;

    explicit AdapterGrads(int d)
        : wq(d, d), wk(d, d), wv(d, d), wo(d, d), norm_in(d, 0.0), norm_out(d, 0.0) {}
};

struct FrozenHead {
    Matd lm_head;
    std::vector<double> norm_final;
};

inline FrozenHead freeze_head(const Weights &w) {
    FrozenHead h;
    h.lm_head = cast_mat<double>(w.lm_head);
    h.norm_final.assign(w.norm_final.begin(), w.norm_final.end());
    return h;
}

namespace detail {

// backward of y = g ⊙ x / sqrt(mean(x^2)+eps); dgain may be null
inline void rms_backward(std::span<const double> x, std::span<const double> g,
                         std::span<const double> dy, std::span<double> dx,
                         std::span<double> dgain, double eps = 1e-6) {
    const int d = static_cast<int>(x.size());
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms = ms / d + eps;
    const double s = std::sqrt(ms);
    double dot = 0.0;  // sum dy_j g_j x_j
    for (int j = 0; j < d; ++j) dot += dy[j] * g[j] * x[j];
    const double c = dot / (d * s * s * s);
    for (int i = 0; i < d; ++i) dx[i] = g[i] * dy[i] / s - x[i] * c;
    if (!dgain.empty())
        for (int j = 0; j < d; ++j) dgain[j] += dy[j] * x[j] / s;
}

}  // namespace detail

// Loss of one adapter over one sequence: causal self-attention over the
// recorded boundary rows, residual + norms, shared head, reduced KL on the
// masked rows. Mirrors adapter_forward + head_logits operation for operation
// so the trained weights behave identically at decode time. grads, when
// given, receives the analytic parameter gradient (accumulated).
inline double sequence_loss(const AdapterW<double> &a, const FrozenHead &head,
                            const CorpusSequence &s, AdapterKind kind, int n_heads,
                            const LossConfig &loss, AdapterGrads *grads) {
    const Matf &hf = kind == AdapterKind::draft ? s.h_dm : s.h_sv;
    const int n = hf.rows;
    const int d = hf.cols;
    if (d != a.d()) throw invalid_input("sequence_loss: width mismatch");
    if (d % n_heads != 0) throw invalid_input("sequence_loss: d not divisible by heads");
    const int dh = d / n_heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const Matd X = cast_mat<double>(hf);
    Matd U(n, d);
    for (int i = 0; i < n; ++i)
        rms_norm_row<double>(X.row_span(i), a.norm_in, U.row_span(i));
    const Matd Q = matmul(U, a.wq);
    const Matd K = matmul(U, a.wk);
    const Matd V = matmul(U, a.wv);

    // probs[h][i]: softmax weights over keys 0..i, kept for backward
    std::vector<std::vector<std::vector<double>>> probs(
        n_heads, std::vector<std::vector<double>>(n));
    Matd O(n, d);
    for (int i = 0; i < n; ++i) {
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            auto &p = probs[h][i];
            p.resize(i + 1);
            double mx = 0.0;
            for (int j = 0; j <= i; ++j) {
                double acc = 0.0;
                for (int e = 0; e < dh; ++e) acc += Q.at(i, off + e) * K.at(j, off + e);
                p[j] = acc * scale;
                if (j == 0 || p[j] > mx) mx = p[j];
            }
            double denom = 0.0;
            for (int j = 0; j <= i; ++j) {
                p[j] = std::exp(p[j] - mx);
                denom += p[j];
            }
            for (int j = 0; j <= i; ++j) {
                p[j] /= denom;
                for (int e = 0; e < dh; ++e) O.at(i, off + e) += p[j] * V.at(j, off + e);
            }
        }
    }

    Matd R = X;
    add_inplace(R, matmul(O, a.wo));
    Matd Out(n, d);
    for (int i = 0; i < n; ++i)
        rms_norm_row<double>(R.row_span(i), a.norm_out, Out.row_span(i));
    Matd Nrm(n, d);
    for (int i = 0; i < n; ++i)
        rms_norm_row<double>(Out.row_span(i), head.norm_final, Nrm.row_span(i));
    const Matd logits = matmul(Nrm, head.lm_head);

    std::vector<uint8_t> mask(n, 0);
    for (int t = s.prompt_len - 1; t < n; ++t) mask[t] = 1;
    const Matd p_t = cast_mat<double>(s.p_target);

    Matd dlogits;
    const double l =
        reduced_kl(p_t, logits, mask, loss, grads ? &dlogits : nullptr);
    if (!grads) return l;

    const Matd dNrm = matmul_nt(dlogits, head.lm_head);
    Matd dOut(n, d), dR(n, d);
    std::vector<double> none;
    for (int i = 0; i < n; ++i) {
        detail::rms_backward(Out.row_span(i), head.norm_final, dNrm.row_span(i),
                             dOut.row_span(i), std::span<double>(none));
        detail::rms_backward(R.row_span(i), a.norm_out, dOut.row_span(i), dR.row_span(i),
                             grads->norm_out);
    }

    const Matd dO = matmul_nt(dR, a.wo);
    add_inplace(grads->wo, matmul_tn(O, dR));

    Matd dQ(n, d), dK(n, d), dV(n, d);
    std::vector<double> da;
    for (int i = 0; i < n; ++i) {
        for (int h = 0; h < n_heads; ++h) {
            const int off = h * dh;
            const auto &p = probs[h][i];
            da.assign(i + 1, 0.0);
            double common = 0.0;
            for (int j = 0; j <= i; ++j) {
                double acc = 0.0;
                for (int e = 0; e < dh; ++e) acc += dO.at(i, off + e) * V.at(j, off + e);
                da[j] = acc;
                common += p[j] * acc;
            }
            for (int j = 0; j <= i; ++j) {
                const double ds = p[j] * (da[j] - common) * scale;
                for (int e = 0; e < dh; ++e) {
                    dQ.at(i, off + e) += ds * K.at(j, off + e);
                    dK.at(j, off + e) += ds * Q.at(i, off + e);
                    dV.at(j, off + e) += p[j] * dO.at(i, off + e);
                }
            }
        }
    }

    add_inplace(grads->wq, matmul_tn(U, dQ));
    add_inplace(grads->wk, matmul_tn(U, dK));
    add_inplace(grads->wv, matmul_tn(U, dV));

    Matd dU = matmul_nt(dQ, a.wq);
    add_inplace(dU, matmul_nt(dK, a.wk));
    add_inplace(dU, matmul_nt(dV, a.wv));
    std::vector<double> dx(d);
    for (int i = 0; i < n; ++i)
        detail::rms_backward(X.row_span(i), a.norm_in, dU.row_span(i), dx, grads->norm_in);

    return l;
}

struct TrainReport {
    std::vector<std::pair<int, double>> curve;  // (step, training loss)
    double holdout_before = 0.0;
    double holdout_after = 0.0;
    int train_sequences = 0;
    int holdout_sequences = 0;
};

inline void write_training_csv(std::ostream &os, const TrainReport &r) {
    os << "step,loss\n";
    for (const auto &[step, loss] : r.curve) os << step << ',' << loss << '\n';
}

// SGD over whole sequences. The last ceil(fraction * n) sequences are held
// out for before/after evaluation and never trained on.
inline TrainReport train_adapter(AdapterWeights &adapter, AdapterKind kind, const Corpus &corpus,
                                 const Weights &w, const TrainConfig &tc) {
    tc.validate();
    corpus.validate();
    const ModelConfig &cfg = w.cfg;
    if (corpus.vocab != cfg.vocab_size || corpus.d_model != cfg.d_model)
        throw invalid_input("train: corpus does not match the model");

    const int n_total = static_cast<int>(corpus.seqs.size());
    int n_hold = static_cast<int>(std::ceil(tc.holdout_fraction * n_total));
    if (n_hold >= n_total) n_hold = n_total - 1;
    const int n_train = n_total - n_hold;

    AdapterW<double> a = cast_adapter<double>(adapter);
    const FrozenHead head = freeze_head(w);

    auto holdout_loss = [&]() {
        if (n_hold == 0) return 0.0;
        double sum = 0.0;
        for (int i = n_train; i < n_total; ++i)
            sum += sequence_loss(a, head, corpus.seqs[i], kind, cfg.n_heads, tc.loss, nullptr);
        return sum / n_hold;
    };

    TrainReport rep;
    rep.train_sequences = n_train;
    rep.holdout_sequences = n_hold;
    rep.holdout_before = holdout_loss();

    Rng rng(tc.seed);
    std::vector<int> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    int cursor = n_train;  // forces a shuffle on the first step

    for (int step = 0; step < tc.steps; ++step) {
        if (cursor >= n_train) {
            for (int i = n_train - 1; i > 0; --i)
                std::swap(order[i], order[rng.below(static_cast<uint64_t>(i + 1))]);
            cursor = 0;
        }
        const CorpusSequence &s = corpus.seqs[order[cursor++]];

        AdapterGrads g(cfg.d_model);
        const double l = sequence_loss(a, head, s, kind, cfg.n_heads, tc.loss, &g);
        if (!std::isfinite(l)) throw training_error("train: loss diverged");
        rep.curve.emplace_back(step, l);

        auto step_mat = [&](Matd &p, const Matd &gm) {
            for (size_t i = 0; i < p.data.size(); ++i) p.data[i] -= tc.lr * gm.data[i];
        };
        step_mat(a.wq, g.wq);
        step_mat(a.wk, g.wk);
        step_mat(a.wv, g.wv);
        step_mat(a.wo, g.wo);
        for (int j = 0; j < cfg.d_model; ++j) {
            a.norm_in[j] -= tc.lr * g.norm_in[j];
            a.norm_out[j] -= tc.lr * g.norm_out[j];
        }
    }

    rep.holdout_after = holdout_loss();
    adapter = cast_adapter<float>(a);
    return rep;
}

}  // namespace cats
