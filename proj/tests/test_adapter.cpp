#include <catch2/catch_amalgamated.hpp>

#include "cats/adapter.hpp"
#include "cats/runtime.hpp"

using namespace cats;

namespace {

ModelConfig cfg16() {
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

Matf random_rows(Rng &rng, int n, int d) {
    Matf m(n, d);
    for (auto &x : m.data) x = static_cast<float>(rng.gauss());
    return m;
}

}  // namespace

TEST_CASE("adapter parameter count is 4*d^2 + 2*d") {
    const ModelConfig c = cfg16();
    const AdapterWeights a = init_adapter(c, 1);
    CHECK(a.param_count() == adapter_param_count(c));
    CHECK(a.param_count() == 4 * 16 * 16 + 2 * 16);
}

TEST_CASE("adapter init is seed-deterministic with zero out-projection") {
    const ModelConfig c = cfg16();
    const AdapterWeights a = init_adapter(c, 5);
    const AdapterWeights b = init_adapter(c, 5);
    const AdapterWeights d = init_adapter(c, 6);
    CHECK(a.wq.data == b.wq.data);
    CHECK(a.wq.data != d.wq.data);
    for (const float x : a.wo.data) CHECK(x == 0.0f);
}

TEST_CASE("untrained adapter is a normed residual passthrough") {
    const ModelConfig c = cfg16();
    const AdapterWeights a = init_adapter(c, 3);
    Rng rng(9);
    const Matf h = random_rows(rng, 4, c.d_model);
    std::vector<int32_t> pos = {0, 1, 2, 3}, tags(4, kTagCommitted);
    KvCache kv = make_adapter_cache<float>(c);
    const Matf out = adapter_forward(a, h, pos, tags, AttnSpec::causal(4), kv, c.n_heads);
    const Matf expect = rms_norm_rows(h, std::span<const float>(a.norm_out));
    CHECK(max_abs_diff(out, expect) == 0.0);
    CHECK(kv.committed_len() == 4);  // K/V rows still recorded for later steps
}

TEST_CASE("batched causal adapter forward equals one row at a time") {
    const ModelConfig c = cfg16();
    AdapterWeights a = init_adapter(c, 3);
    Rng rng(10);
    // give the out-projection real values so attention actually matters
    for (auto &x : a.wo.data) x = static_cast<float>(rng.gauss() * 0.2);
    const Matf h = random_rows(rng, 5, c.d_model);

    KvCache kv_batch = make_adapter_cache<float>(c);
    std::vector<int32_t> pos = {0, 1, 2, 3, 4}, tags(5, kTagCommitted);
    const Matf batched = adapter_forward(a, h, pos, tags, AttnSpec::causal(5), kv_batch, c.n_heads);

    KvCache kv_seq = make_adapter_cache<float>(c);
    for (int t = 0; t < 5; ++t) {
        Matf one(1, c.d_model);
        for (int j = 0; j < c.d_model; ++j) one.at(0, j) = h.at(t, j);
        const std::vector<int32_t> p1 = {t}, t1 = {kTagCommitted};
        const Matf r = adapter_forward(a, one, p1, t1, AttnSpec::causal(1), kv_seq, c.n_heads);
        for (int j = 0; j < c.d_model; ++j) CHECK(r.at(0, j) == batched.at(t, j));
    }
}

TEST_CASE("double instantiation tracks the float path") {
    const ModelConfig c = cfg16();
    AdapterWeights a = init_adapter(c, 4);
    Rng rng(11);
    for (auto &x : a.wo.data) x = static_cast<float>(rng.gauss() * 0.2);
    const Matf h = random_rows(rng, 6, c.d_model);

    KvCache kvf = make_adapter_cache<float>(c);
    std::vector<int32_t> pos = {0, 1, 2, 3, 4, 5}, tags(6, kTagCommitted);
    const Matf out_f = adapter_forward(a, h, pos, tags, AttnSpec::causal(6), kvf, c.n_heads);

    const AdapterW<double> ad = cast_adapter<double>(a);
    KvCacheT<double> kvd = make_adapter_cache<double>(c);
    const Matd out_d =
        adapter_forward(ad, cast_mat<double>(h), pos, tags, AttnSpec::causal(6), kvd, c.n_heads);

    for (int i = 0; i < out_f.rows; ++i)
        for (int j = 0; j < out_f.cols; ++j)
            CHECK(std::abs(static_cast<double>(out_f.at(i, j)) - out_d.at(i, j)) <= 1e-4);
}

TEST_CASE("adapter cache supports commit and rollback like the target cache") {
    const ModelConfig c = cfg16();
    const AdapterWeights a = init_adapter(c, 3);
    Rng rng(12);
    KvCache kv = make_adapter_cache<float>(c);
    const Matf h = random_rows(rng, 2, c.d_model);
    std::vector<int32_t> pos = {0, 1}, tags(2, kTagCommitted);
    adapter_forward(a, h, pos, tags, AttnSpec::causal(2), kv, c.n_heads);

    const Matf h2 = random_rows(rng, 2, c.d_model);
    const std::vector<int32_t> spec_pos = {2, 3}, spec_tags = {0, 1};
    AttnSpec chain = AttnSpec::causal(2);
    adapter_forward(a, h2, spec_pos, spec_tags, chain, kv, c.n_heads);
    CHECK(kv.layers[0].size() == 4);

    const std::vector<int32_t> accepted = {0};
    kv.commit_path(accepted, 3);
    CHECK(kv.committed_len() == 3);
}
