#pragma once

// Decode engine. Three modes over one model:
//
//   cascade        gamma drafting passes over the resident prefix (layers
//                  1..l_dm plus a bottleneck adapter), a batched mid-stack
//                  check (l_dm+1..l_sv plus the second adapter) that proposes
//                  sibling corrections for drafts it disagrees with, then one
//                  batched pass over the streamed top of the stack
//                  (l_sv+1..n) that scores the whole tree and commits the
//                  longest acceptable path plus a bonus token.
//   two_stage      same drafting, but the verify pass runs l_dm+1..n in one
//                  go; no corrections.
//   autoregressive one full forward per token; the reference output and the
//                  streaming baseline.
//
// Under a greedy policy cascade and two_stage commit exactly the
// autoregressive token sequence: every verification row attends over the same
// keys in the same order as plain decoding, so the logits match bitwise.
//
// Weight-read accounting goes through the transfer ledger per cycle. Prompt
// prefill, the end-of-cycle assembly pass (whose hidden row completes the
// verify batch) and the correction re-forward reuse resident weights already
// being read and are deliberately not booked; tests pin the resulting
// per-cycle byte identities against the closed forms in memsim.hpp.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cats/accept.hpp"
#include "cats/adapter.hpp"
#include "cats/error.hpp"
#include "cats/matrix.hpp"
#include "cats/memsim.hpp"
#include "cats/model.hpp"
#include "cats/rng.hpp"
#include "cats/runtime.hpp"
#include "cats/tree.hpp"

namespace cats {

enum class Mode { cascade, two_stage, autoregressive };

inline const char *to_string(Mode m) {
    switch (m) {
        case Mode::cascade: return "cascade";
        case Mode::two_stage: return "two_stage";
        case Mode::autoregressive: return "autoregressive";
    }
    return "?";
}

inline Mode mode_from_string(const std::string &s) {
    if (s == "cascade" || s == "cats") return Mode::cascade;
    if (s == "two_stage" || s == "two-stage") return Mode::two_stage;
    if (s == "autoregressive" || s == "baseline") return Mode::autoregressive;
    throw config_error("unknown mode: " + s);
}

struct EngineConfig {
    Mode mode = Mode::cascade;
    int gamma = 5;
    AcceptancePolicy policy = AcceptancePolicy::greedy();
    int max_new_tokens = 64;
    uint64_t seed = 0;
    std::optional<Token> eos;
    bool keep_trees = false;
    bool keep_caches = false;  // hand the final KV state back for inspection

    void validate() const {
        if (gamma < 1) throw config_error("engine: gamma must be >= 1");
        if (max_new_tokens < 1) throw config_error("engine: max_new_tokens must be >= 1");
        if (policy.temperature <= 0.0f) throw config_error("engine: temperature must be > 0");
    }
};

struct CycleStats {
    int cycle = 0;
    int drafted = 0;
    int corrections = 0;
    int accepted = 0;  // main-chain or correction tokens committed with cache rows
    bool via_correction = false;
    Token bonus = -1;  // the extra token drawn at the cycle's end (-1: cut by eos)
    uint64_t flash_bytes = 0;
    uint64_t dram_bytes = 0;
};

struct DecodeStats {
    int prompt_len = 0;
    int generated = 0;  // new tokens present in the returned sequence
    int cycles = 0;
    int64_t cycle_committed = 0;  // sum of per-cycle commits before any output cap
    bool eos_hit = false;
    std::vector<CycleStats> per_cycle;

    // mean tokens per decode cycle; the prefill-derived first token is not a
    // cycle product and stays out of this ratio
    double tau() const {
        return cycles > 0 ? static_cast<double>(cycle_committed) / cycles : 0.0;
    }
};

struct GenerateResult {
    std::vector<Token> tokens;  // prompt followed by generated tokens
    DecodeStats stats;
    TransferLedger ledger;
    std::vector<VerificationTree> trees;  // one per cycle when keep_trees is set
    // final cache state when keep_caches is set; committed length covers
    // everything but the trailing pending token
    KvCache kv{1, 1};
    KvCacheT<float> dm_cache{1, 1};
    KvCacheT<float> sv_cache{1, 1};
};

inline void write_stats_jsonl(std::ostream &os, const GenerateResult &r) {
    for (const auto &c : r.stats.per_cycle) {
        nlohmann::json j{{"cycle", c.cycle},           {"drafted", c.drafted},
                         {"corrections", c.corrections}, {"accepted", c.accepted},
                         {"via_correction", c.via_correction}, {"bonus", c.bonus},
                         {"flash_bytes", c.flash_bytes}, {"dram_bytes", c.dram_bytes}};
        os << j.dump() << '\n';
    }
}

class Engine {
  public:
    // overriding a stage's token choice; tests use these to force perfect or
    // hostile drafts. pos is the sequence position the token will occupy.
    std::function<Token(int pos, Token greedy)> draft_hook;
    std::function<Token(int pos, Token greedy, Token draft)> sv_hook;

    Engine(const Model &model, AdapterWeights dm, AdapterWeights sv, EngineConfig ecfg,
           MemoryConfig mem)
        : model_(model), dm_(std::move(dm)), sv_(std::move(sv)), ecfg_(ecfg), mem_(mem) {
        ecfg_.validate();
        mem_.validate();
        const ModelConfig &cfg = model_.cfg;
        layout_ = layout_from_config(cfg);
        l_dm_ = cfg.l_dm;

        // a zero budget means "no DRAM pressure": pin the mode's natural
        // prefix. Otherwise plan against the budget; for cascade the verify
        // boundary follows the plan so the resident prefix is fully used.
        switch (ecfg_.mode) {
            case Mode::cascade:
                if (mem_.dram_budget == 0) {
                    set_default_plan(cfg.l_sv, layout_.adapter_dm + layout_.adapter_sv);
                } else {
                    plan_ = plan_residency(layout_, mem_, l_dm_ + 1, cfg.n_layers - 1,
                                           layout_.adapter_dm + layout_.adapter_sv);
                }
                l_sv_ = plan_.resident_upto;
                break;
            case Mode::two_stage:
                if (mem_.dram_budget == 0) {
                    set_default_plan(l_dm_, layout_.adapter_dm);
                } else {
                    plan_ = plan_residency(layout_, mem_, l_dm_, l_dm_, layout_.adapter_dm);
                }
                l_sv_ = cfg.l_sv;  // unused for verification
                break;
            case Mode::autoregressive:
                if (mem_.dram_budget == 0) {
                    set_default_plan(0, 0);
                } else {
                    plan_ = plan_residency(layout_, mem_, 0, cfg.n_layers, 0);
                }
                l_sv_ = cfg.l_sv;
                break;
        }
    }

    const ResidencyPlan &residency() const { return plan_; }
    int sv_boundary() const { return l_sv_; }

    // closed-form weight bytes one decode cycle moves in this configuration
    CycleBytes cycle_cost() const {
        switch (ecfg_.mode) {
            case Mode::cascade:
                return cycle_bytes_cascade(layout_, l_dm_, l_sv_, ecfg_.gamma);
            case Mode::two_stage:
                return cycle_bytes_two_stage(layout_, l_dm_, ecfg_.gamma);
            case Mode::autoregressive:
                return cycle_bytes_baseline(layout_, plan_.resident_upto);
        }
        return {};
    }

    GenerateResult generate(std::span<const Token> prompt) {
        const ModelConfig &cfg = model_.cfg;
        if (prompt.empty()) throw invalid_input("generate: empty prompt");
        for (Token t : prompt)
            if (t < 0 || t >= cfg.vocab_size) throw invalid_input("generate: prompt token range");
        const int P = static_cast<int>(prompt.size());
        const int headroom = ecfg_.mode == Mode::autoregressive ? 1 : ecfg_.gamma + 1;
        if (P + ecfg_.max_new_tokens + headroom > cfg.max_seq)
            throw config_error("generate: prompt + max_new_tokens exceeds max_seq");

        Run run;
        run.kv = model_.make_cache();
        run.dm_cache = make_adapter_cache<float>(cfg);
        run.sv_cache = make_adapter_cache<float>(cfg);
        run.rng = Rng(ecfg_.seed);
        run.seq.assign(prompt.begin(), prompt.end());

        GenerateResult res;
        res.stats.prompt_len = P;

        prefill(run);
        // first new token comes straight from the prompt's last logits
        const Token y0 = draw(run, run.prefill_dist.row_span(0));
        run.seq.push_back(y0);
        if (ecfg_.eos && y0 == *ecfg_.eos) res.stats.eos_hit = true;

        while (!res.stats.eos_hit &&
               static_cast<int>(run.seq.size()) - P < ecfg_.max_new_tokens) {
            const size_t ledger_mark = run.ledger.records.size();
            CycleStats cs;
            cs.cycle = res.stats.cycles;
            switch (ecfg_.mode) {
                case Mode::cascade: cascade_cycle(run, cs, res); break;
                case Mode::two_stage: two_stage_cycle(run, cs, res); break;
                case Mode::autoregressive: autoregressive_step(run, cs, res); break;
            }
            for (size_t i = ledger_mark; i < run.ledger.records.size(); ++i) {
                const auto &rec = run.ledger.records[i];
                (rec.medium == Medium::flash ? cs.flash_bytes : cs.dram_bytes) += rec.bytes;
            }
            res.stats.per_cycle.push_back(cs);
            res.stats.cycles += 1;
            res.stats.cycle_committed += cs.accepted + (cs.bonus >= 0 ? 1 : 0);
        }

        // cap the returned sequence; cycle granularity in the stats stays
        // intact so byte accounting remains exact
        int generated = static_cast<int>(run.seq.size()) - P;
        if (generated > ecfg_.max_new_tokens) {
            run.seq.resize(P + ecfg_.max_new_tokens);
            generated = ecfg_.max_new_tokens;
        }
        res.stats.generated = generated;
        res.tokens = std::move(run.seq);
        res.ledger = std::move(run.ledger);
        if (ecfg_.keep_caches) {
            res.kv = std::move(run.kv);
            res.dm_cache = std::move(run.dm_cache);
            res.sv_cache = std::move(run.sv_cache);
        }
        return res;
    }

  private:
    struct Run {
        KvCache kv{1, 1};
        KvCacheT<float> dm_cache{1, 1};
        KvCacheT<float> sv_cache{1, 1};
        std::vector<Token> seq;
        TransferLedger ledger;
        Rng rng{0};
        Matf prefill_dist;  // 1 x V, tempered
    };

    void set_default_plan(int upto, uint64_t adapter_bytes) {
        plan_.resident_upto = upto;
        plan_.resident_bytes = layout_.prefix(upto) + adapter_bytes;
        plan_.budget = 0;
    }

    // full-depth prompt pass warming the target cache and both adapter
    // caches; never ledgered
    void prefill(Run &run) {
        const ModelConfig &cfg = model_.cfg;
        const int P = static_cast<int>(run.seq.size());
        std::vector<int32_t> positions(P), tags(P, kTagCommitted);
        for (int i = 0; i < P; ++i) positions[i] = i;
        const AttnSpec causal = AttnSpec::causal(P);

        Hidden h = model_.embed(run.seq, positions);
        model_.forward_range(1, l_dm_, h, positions, tags, causal, run.kv);
        if (ecfg_.mode != Mode::autoregressive)
            adapter_forward(dm_, h.x, positions, tags, causal, run.dm_cache, cfg.n_heads);
        model_.forward_range(l_dm_ + 1, l_sv_, h, positions, tags, causal, run.kv);
        if (ecfg_.mode == Mode::cascade)
            adapter_forward(sv_, h.x, positions, tags, causal, run.sv_cache, cfg.n_heads);
        model_.forward_range(l_sv_ + 1, cfg.n_layers, h, positions, tags, causal, run.kv);

        Matf last(1, cfg.d_model);
        for (int j = 0; j < cfg.d_model; ++j) last.at(0, j) = h.x.at(P - 1, j);
        run.prefill_dist = softmax_rows(model_.head_logits(last), ecfg_.policy.temperature);
    }

    Token draw(Run &run, std::span<const float> dist) {
        if (ecfg_.policy.kind == AcceptancePolicy::Kind::greedy)
            return static_cast<Token>(argmax_tiebreak(dist));
        return static_cast<Token>(run.rng.categorical(dist));
    }

    void book_layers(Run &run, Stage stage, int lo, int hi, int cycle) {
        for (int l = lo; l <= hi; ++l)
            read_weights(run.ledger, mem_, plan_, stage, l, layout_.layer(l), cycle);
    }

    // gamma sequential drafting passes plus the unbooked assembly pass.
    // Fills h_dm with gamma+1 boundary rows (context token first) and the
    // shared positions/tags for the verify batch.
    void draft_chain(Run &run, int cycle, std::vector<Token> &drafts, Matf &h_dm,
                     std::vector<int32_t> &positions, std::vector<int32_t> &tags) {
        const ModelConfig &cfg = model_.cfg;
        const int gamma = ecfg_.gamma;
        const int s0 = static_cast<int>(run.seq.size()) - 1;  // pending token's slot
        h_dm = Matf(gamma + 1, cfg.d_model);
        positions.assign(1, s0);
        tags.assign(1, kTagCommitted);

        Token feed = run.seq.back();
        for (int k = 0; k <= gamma; ++k) {
            const std::vector<int32_t> pos{s0 + k};
            const std::vector<int32_t> tag{k == 0 ? kTagCommitted : k - 1};
            AttnSpec spec = AttnSpec::diagonal(1);
            for (int a = 0; a + 1 < k; ++a) spec.spec_allow[0].push_back(a);

            Hidden h = model_.embed(std::vector<Token>{feed}, pos);
            model_.forward_range(1, l_dm_, h, pos, tag, spec, run.kv);
            for (int j = 0; j < cfg.d_model; ++j) h_dm.at(k, j) = h.x.at(0, j);
            const Matf a_out =
                adapter_forward(dm_, h.x, pos, tag, spec, run.dm_cache, cfg.n_heads);
            if (k == gamma) break;  // assembly pass: row and caches only

            book_layers(run, Stage::draft, 1, l_dm_, cycle);
            read_adapter(run.ledger, Stage::draft, layout_.adapter_dm, cycle);

            const Matf logits = model_.head_logits(a_out);
            Token d = static_cast<Token>(argmax_tiebreak(logits.row_span(0)));
            if (draft_hook) d = draft_hook(s0 + 1 + k, d);
            if (d < 0 || d >= cfg.vocab_size) throw internal_error("draft token out of range");
            drafts.push_back(d);
            positions.push_back(s0 + 1 + k);
            tags.push_back(k);
            feed = d;
        }
    }

    // walk the scored tree, commit the surviving path in every cache, append
    // the bonus token as the next pending token
    void finish_cycle(Run &run, CycleStats &cs, GenerateResult &res, const VerificationTree &tree,
                      const TreeDistributions &dists, bool has_sv_cache) {
        const WalkResult walk = walk_longest_prefix(tree, dists, ecfg_.policy);
        const int s0 = tree.committed_len;  // pending token's slot before this cycle

        std::vector<Token> newly = walk.accepted;
        const std::span<const float> bonus_row =
            walk.via_correction ? dists.corr_own.row_span(walk.terminal_ord)
                                : dists.cond.row_span(walk.terminal_ord);
        const Token bonus = draw(run, bonus_row);

        // an eos anywhere in this cycle's output ends generation right there
        int keep = static_cast<int>(newly.size());
        bool bonus_kept = true;
        if (ecfg_.eos) {
            for (int i = 0; i < static_cast<int>(newly.size()); ++i) {
                if (newly[i] == *ecfg_.eos) {
                    keep = i + 1;
                    bonus_kept = false;
                    res.stats.eos_hit = true;
                    break;
                }
            }
            if (bonus_kept && bonus == *ecfg_.eos) res.stats.eos_hit = true;
        }

        std::vector<int32_t> path(walk.accepted_ids.begin(), walk.accepted_ids.begin() + keep);
        const int new_len = s0 + 1 + keep;
        run.kv.commit_path(path, new_len);
        run.dm_cache.commit_path(path, new_len);
        if (has_sv_cache) run.sv_cache.commit_path(path, new_len);

        run.seq.insert(run.seq.end(), newly.begin(), newly.begin() + keep);
        if (bonus_kept) run.seq.push_back(bonus);

        cs.accepted = keep;
        cs.via_correction = walk.via_correction && keep == static_cast<int>(newly.size());
        cs.bonus = bonus_kept ? bonus : -1;
        if (ecfg_.keep_trees) res.trees.push_back(tree);
    }

    void cascade_cycle(Run &run, CycleStats &cs, GenerateResult &res) {
        const ModelConfig &cfg = model_.cfg;
        const int gamma = ecfg_.gamma;
        const int cycle = cs.cycle;
        cs.drafted = gamma;

        std::vector<Token> drafts;
        Matf h_dm;
        std::vector<int32_t> positions, tags;
        draft_chain(run, cycle, drafts, h_dm, positions, tags);
        const int s0 = positions[0];

        // mid-stack check over the whole chain (resident layers, batched)
        Hidden h{h_dm, l_dm_};
        const AttnSpec causal = AttnSpec::causal(gamma + 1);
        model_.forward_range(l_dm_ + 1, l_sv_, h, positions, tags, causal, run.kv);
        const Matf h_sv = h.x;
        book_layers(run, Stage::shallow_verify, l_dm_ + 1, l_sv_, cycle);

        const Matf sv_out =
            adapter_forward(sv_, h_sv, positions, tags, causal, run.sv_cache, cfg.n_heads);
        read_adapter(run.ledger, Stage::shallow_verify, layout_.adapter_sv, cycle);
        const Matf sv_logits = model_.head_logits(sv_out);

        std::vector<Correction> corrections;
        for (int i = 0; i < gamma; ++i) {
            Token c = static_cast<Token>(argmax_tiebreak(sv_logits.row_span(i)));
            if (sv_hook) c = sv_hook(s0 + 1 + i, c, drafts[i]);
            if (c != drafts[i]) corrections.push_back({i, c});
        }
        cs.corrections = static_cast<int>(corrections.size());
        const VerificationTree tree = build_tree(drafts, corrections, s0);

        // corrections re-enter the resident stack under the tree mask; their
        // rows keep all caches complete in case one of them commits
        Matf corr_sv(0, cfg.d_model);
        std::vector<int32_t> cpos, ctag;
        if (!corrections.empty()) {
            const int R = static_cast<int>(corrections.size());
            std::vector<Token> ctok(R);
            cpos.resize(R);
            ctag.resize(R);
            AttnSpec cspec = AttnSpec::diagonal(R);
            for (int r = 0; r < R; ++r) {
                ctok[r] = corrections[r].token;
                cpos[r] = s0 + 1 + corrections[r].index;
                ctag[r] = tree.correction_node(r).id;
                for (int a = 0; a < corrections[r].index; ++a) cspec.spec_allow[r].push_back(a);
            }
            Hidden hc = model_.embed(ctok, cpos);
            model_.forward_range(1, l_dm_, hc, cpos, ctag, cspec, run.kv);
            adapter_forward(dm_, hc.x, cpos, ctag, cspec, run.dm_cache, cfg.n_heads);
            model_.forward_range(l_dm_ + 1, l_sv_, hc, cpos, ctag, cspec, run.kv);
            adapter_forward(sv_, hc.x, cpos, ctag, cspec, run.sv_cache, cfg.n_heads);
            corr_sv = hc.x;
        }

        // streamed top of the stack scores context, chain and corrections in
        // one tree-masked batch
        const int n3 = gamma + 1 + corr_sv.rows;
        Matf x3(n3, cfg.d_model);
        std::vector<int32_t> p3(positions.begin(), positions.end());
        std::vector<int32_t> t3(tags.begin(), tags.end());
        for (int i = 0; i <= gamma; ++i)
            for (int j = 0; j < cfg.d_model; ++j) x3.at(i, j) = h_sv.at(i, j);
        for (int r = 0; r < corr_sv.rows; ++r) {
            for (int j = 0; j < cfg.d_model; ++j) x3.at(gamma + 1 + r, j) = corr_sv.at(r, j);
            p3.push_back(cpos[r]);
            t3.push_back(ctag[r]);
        }

        const Mat<uint8_t> tm = tree.tree_mask();
        AttnSpec spec3;
        spec3.batch = Mat<uint8_t>(n3, n3);
        spec3.batch.at(0, 0) = 1;
        for (int i = 0; i < tm.rows; ++i) {
            spec3.batch.at(1 + i, 0) = 1;
            for (int j = 0; j < tm.cols; ++j) spec3.batch.at(1 + i, 1 + j) = tm.at(i, j);
        }
        spec3.spec_allow.resize(n3);

        Hidden h3{std::move(x3), l_sv_};
        model_.forward_range(l_sv_ + 1, cfg.n_layers, h3, p3, t3, spec3, run.kv);
        book_layers(run, Stage::target_verify, l_sv_ + 1, cfg.n_layers, cycle);

        const Matf dists_all =
            softmax_rows(model_.head_logits(h3.x), ecfg_.policy.temperature);
        TreeDistributions dists;
        dists.cond = Matf(gamma + 1, cfg.vocab_size);
        dists.corr_own = Matf(corr_sv.rows, cfg.vocab_size);
        for (int i = 0; i <= gamma; ++i)
            for (int j = 0; j < cfg.vocab_size; ++j) dists.cond.at(i, j) = dists_all.at(i, j);
        for (int r = 0; r < corr_sv.rows; ++r)
            for (int j = 0; j < cfg.vocab_size; ++j)
                dists.corr_own.at(r, j) = dists_all.at(gamma + 1 + r, j);

        finish_cycle(run, cs, res, tree, dists, true);
    }

    void two_stage_cycle(Run &run, CycleStats &cs, GenerateResult &res) {
        const ModelConfig &cfg = model_.cfg;
        const int gamma = ecfg_.gamma;
        cs.drafted = gamma;

        std::vector<Token> drafts;
        Matf h_dm;
        std::vector<int32_t> positions, tags;
        draft_chain(run, cs.cycle, drafts, h_dm, positions, tags);

        Hidden h{std::move(h_dm), l_dm_};
        const AttnSpec causal = AttnSpec::causal(gamma + 1);
        model_.forward_range(l_dm_ + 1, cfg.n_layers, h, positions, tags, causal, run.kv);
        book_layers(run, Stage::target_verify, l_dm_ + 1, cfg.n_layers, cs.cycle);

        TreeDistributions dists;
        dists.cond = softmax_rows(model_.head_logits(h.x), ecfg_.policy.temperature);
        dists.corr_own = Matf(0, cfg.vocab_size);

        const VerificationTree tree = chain_tree(drafts, positions[0]);
        finish_cycle(run, cs, res, tree, dists, false);
    }

    void autoregressive_step(Run &run, CycleStats &cs, GenerateResult &res) {
        const ModelConfig &cfg = model_.cfg;
        const int s0 = static_cast<int>(run.seq.size()) - 1;
        const std::vector<int32_t> pos{s0}, tag{kTagCommitted};
        Hidden h = model_.embed(std::vector<Token>{run.seq.back()}, pos);
        model_.forward_range(1, cfg.n_layers, h, pos, tag, AttnSpec::diagonal(1), run.kv);
        book_layers(run, Stage::full_forward, 1, cfg.n_layers, cs.cycle);

        const Matf dist = softmax_rows(model_.head_logits(h.x), ecfg_.policy.temperature);
        const Token next = draw(run, dist.row_span(0));
        run.seq.push_back(next);
        cs.bonus = next;
        if (ecfg_.eos && next == *ecfg_.eos) res.stats.eos_hit = true;
    }

    const Model &model_;
    AdapterWeights dm_, sv_;
    EngineConfig ecfg_;
    MemoryConfig mem_;
    ByteLayout layout_;
    ResidencyPlan plan_;
    int l_dm_ = 0, l_sv_ = 0;
};

}  // namespace cats
