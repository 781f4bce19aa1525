#include <catch2/catch_amalgamated.hpp>

#include "cats/runtime.hpp"

using namespace cats;

namespace {

ModelConfig small_cfg() {
    ModelConfig c;
    c.n_layers = 4;
    c.d_model = 16;
    c.n_heads = 2;
    c.vocab_size = 24;
    c.max_seq = 64;
    c.l_dm = 1;
    c.l_sv = 2;
    return c;
}

Model small_model(uint64_t seed = 42) { return Model(init_weights(small_cfg(), seed)); }

std::vector<Token> random_tokens(Rng &rng, int n, int vocab) {
    std::vector<Token> t(n);
    for (auto &x : t) x = rng.below(vocab);
    return t;
}

}  // namespace

TEST_CASE("chained layer ranges reproduce the monolithic forward bitwise") {
    const Model m = small_model();
    Rng rng(1);
    const std::vector<Token> toks = random_tokens(rng, 6, m.cfg.vocab_size);
    std::vector<int32_t> pos(6), tags(6, kTagCommitted);
    for (int i = 0; i < 6; ++i) pos[i] = i;
    const AttnSpec causal = AttnSpec::causal(6);

    KvCache kv_a = m.make_cache();
    Hidden full = m.embed(toks, pos);
    m.forward_range(1, m.cfg.n_layers, full, pos, tags, causal, kv_a);

    KvCache kv_b = m.make_cache();
    Hidden split = m.embed(toks, pos);
    m.forward_range(1, 1, split, pos, tags, causal, kv_b);
    m.forward_range(2, 3, split, pos, tags, causal, kv_b);
    m.forward_range(4, 4, split, pos, tags, causal, kv_b);

    CHECK(split.layer == m.cfg.n_layers);
    CHECK(max_abs_diff(full.x, split.x) == 0.0);
    for (int l = 1; l <= m.cfg.n_layers; ++l) {
        CHECK(kv_a.layer(l).k == kv_b.layer(l).k);
        CHECK(kv_a.layer(l).v == kv_b.layer(l).v);
    }
}

TEST_CASE("zero-layer range returns input unchanged") {
    const Model m = small_model();
    const std::vector<Token> toks = {1, 2};
    const std::vector<int32_t> pos = {0, 1}, tags = {kTagCommitted, kTagCommitted};
    Hidden h = m.embed(toks, pos);
    const Matf before = h.x;
    KvCache kv = m.make_cache();
    m.forward_range(1, 0, h, pos, tags, AttnSpec::causal(2), kv);  // empty range
    CHECK(h.layer == 0);
    CHECK(max_abs_diff(before, h.x) == 0.0);
}

TEST_CASE("forward_range validates range and hidden provenance") {
    const Model m = small_model();
    const std::vector<Token> toks = {1};
    const std::vector<int32_t> pos = {0}, tags = {kTagCommitted};
    Hidden h = m.embed(toks, pos);
    KvCache kv = m.make_cache();
    const AttnSpec a = AttnSpec::causal(1);
    CHECK_THROWS_AS(m.forward_range(0, 2, h, pos, tags, a, kv), invalid_input);
    CHECK_THROWS_AS(m.forward_range(1, 99, h, pos, tags, a, kv), invalid_input);
    // hidden produced by layer 0 cannot enter at layer 3
    CHECK_THROWS_AS(m.forward_range(3, 4, h, pos, tags, a, kv), invalid_input);
    // and after running 1..2, re-running 1..2 must be rejected too
    m.forward_range(1, 2, h, pos, tags, a, kv);
    CHECK_THROWS_AS(m.forward_range(1, 2, h, pos, tags, a, kv), invalid_input);
}

TEST_CASE("embed validates tokens and positions") {
    const Model m = small_model();
    const std::vector<int32_t> pos = {0};
    std::vector<Token> bad = {static_cast<Token>(m.cfg.vocab_size)};
    CHECK_THROWS_AS(m.embed(bad, pos), invalid_input);
    bad = {-1};
    CHECK_THROWS_AS(m.embed(bad, pos), invalid_input);
    const std::vector<Token> ok = {0};
    const std::vector<int32_t> far = {m.cfg.max_seq};
    CHECK_THROWS_AS(m.embed(ok, far), invalid_input);
}

TEST_CASE("prefill fills one committed slot per position per layer") {
    const Model m = small_model();
    KvCache kv = m.make_cache();
    const std::vector<Token> one = {3};
    m.prefill(one, kv);
    CHECK(kv.committed_len() == 1);
    for (int l = 1; l <= m.cfg.n_layers; ++l) CHECK(kv.layer(l).size() == 1);
    CHECK_THROWS_AS(m.prefill(one, kv), invalid_input);  // cache must be empty
}

TEST_CASE("incremental decode matches prefill logits and caches") {
    const Model m = small_model();
    Rng rng(2);
    const std::vector<Token> toks = random_tokens(rng, 8, m.cfg.vocab_size);

    KvCache kv_full = m.make_cache();
    const Hidden full = m.prefill(toks, kv_full);
    const Matf logits_full = m.head_logits(full.x);

    // feed the same sequence one token at a time
    KvCache kv_inc = m.make_cache();
    Matf last_logits;
    for (int t = 0; t < 8; ++t) {
        const std::vector<Token> one = {toks[t]};
        const std::vector<int32_t> pos = {t}, tags = {kTagCommitted};
        Hidden h = m.embed(one, pos);
        m.forward_range(1, m.cfg.n_layers, h, pos, tags, AttnSpec::causal(1), kv_inc);
        last_logits = m.head_logits(h.x);
    }

    for (int j = 0; j < m.cfg.vocab_size; ++j)
        CHECK(std::abs(last_logits.at(0, j) - logits_full.at(7, j)) <= 1e-5f);
    for (int l = 1; l <= m.cfg.n_layers; ++l) {
        REQUIRE(kv_inc.layer(l).k.size() == kv_full.layer(l).k.size());
        for (size_t i = 0; i < kv_full.layer(l).k.size(); ++i) {
            CHECK(std::abs(kv_full.layer(l).k[i] - kv_inc.layer(l).k[i]) <= 1e-5f);
            CHECK(std::abs(kv_full.layer(l).v[i] - kv_inc.layer(l).v[i]) <= 1e-5f);
        }
    }
}

TEST_CASE("masked batch rows reproduce per-branch sequential forwards") {
    // two sibling continuations of a shared prefix, verified in one batch
    // under a mask, must match decoding each branch separately
    const Model m = small_model();
    Rng rng(3);
    const std::vector<Token> prompt = random_tokens(rng, 5, m.cfg.vocab_size);
    const Token a = 1, b = 2;  // siblings at the same position

    auto branch_logits = [&](Token next) {
        KvCache kv = m.make_cache();
        std::vector<Token> seq = prompt;
        seq.push_back(next);
        const Hidden h = m.prefill(seq, kv);
        Matf out(1, m.cfg.d_model);
        for (int j = 0; j < m.cfg.d_model; ++j) out.at(0, j) = h.x.at(5, j);
        return m.head_logits(out);
    };
    const Matf la = branch_logits(a);
    const Matf lb = branch_logits(b);

    KvCache kv = m.make_cache();
    m.prefill(prompt, kv);
    const std::vector<Token> pair = {a, b};
    const std::vector<int32_t> pos = {5, 5};  // siblings share the position id
    const std::vector<int32_t> tags = {0, 1};
    Hidden h = m.embed(pair, pos);
    m.forward_range(1, m.cfg.n_layers, h, pos, tags, AttnSpec::diagonal(2), kv);
    const Matf lg = m.head_logits(h.x);

    for (int j = 0; j < m.cfg.vocab_size; ++j) {
        CHECK(std::abs(lg.at(0, j) - la.at(0, j)) <= 1e-4f);
        CHECK(std::abs(lg.at(1, j) - lb.at(0, j)) <= 1e-4f);
    }
}

TEST_CASE("speculative tag visibility controls attention") {
    // a row allowed to see a speculative slot must differ from one that is not
    const Model m = small_model();
    Rng rng(4);
    const std::vector<Token> prompt = random_tokens(rng, 4, m.cfg.vocab_size);

    auto run = [&](bool allow) {
        KvCache kv = m.make_cache();
        m.prefill(prompt, kv);
        // speculative token at position 4, tag 7
        {
            const std::vector<Token> spec = {9};
            const std::vector<int32_t> pos = {4}, tags = {7};
            Hidden h = m.embed(spec, pos);
            m.forward_range(1, m.cfg.n_layers, h, pos, tags, AttnSpec::causal(1), kv);
        }
        const std::vector<Token> nxt = {5};
        const std::vector<int32_t> pos = {5}, tags = {8};
        AttnSpec spec1 = AttnSpec::causal(1);
        if (allow) spec1.spec_allow[0] = {7};
        Hidden h = m.embed(nxt, pos);
        m.forward_range(1, m.cfg.n_layers, h, pos, tags, spec1, kv);
        return m.head_logits(h.x);
    };
    const Matf with = run(true);
    const Matf without = run(false);
    CHECK(max_abs_diff(with, without) > 1e-6);
}
