// catsim: command-line front end for the cascaded speculative decoding
// sandbox. Weight files carry the target model plus both adapters; every
// subcommand is deterministic given its seeds, and only --manifest output
// contains measured wall-clock time.

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cats/engine.hpp"
#include "cats/train.hpp"
#include "cats/weight_io.hpp"

namespace {

using namespace cats;

double wall_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void add_model_opts(CLI::App *c, ModelConfig &cfg) {
    c->add_option("--layers", cfg.n_layers, "transformer layers");
    c->add_option("--d-model", cfg.d_model, "embedding width");
    c->add_option("--heads", cfg.n_heads, "attention heads");
    c->add_option("--vocab", cfg.vocab_size, "vocabulary size");
    c->add_option("--max-seq", cfg.max_seq, "maximum sequence length");
    c->add_option("--l-dm", cfg.l_dm, "draft sub-network depth");
    c->add_option("--l-sv", cfg.l_sv, "shallow-verifier depth");
    c->add_option("--bytes-per-param", cfg.bytes_per_param,
                  "storage bytes per parameter for the streaming cost model");
}

void add_memory_opts(CLI::App *c, MemoryConfig &mem) {
    c->add_option("--budget", mem.dram_budget,
                  "DRAM byte budget for pinned weights (0: pin the drafting prefix only)");
    c->add_option("--flash-bw", mem.flash_bandwidth, "flash read bandwidth, bytes/s");
    c->add_option("--chunk-bytes", mem.chunk_bytes, "streaming granule");
    c->add_option("--overlap", mem.overlap,
                  "fraction of flash time hidden behind compute [0,1)");
    c->add_option("--compute-bw", mem.compute_bandwidth,
                  "weight bytes consumed per second of compute");
}

struct EngineOpts {
    std::string mode = "cascade";
    std::string policy = "greedy";
    EngineConfig ecfg;
    int eos = -1;

    EngineConfig build() const {
        EngineConfig e = ecfg;
        e.mode = mode_from_string(mode);
        e.policy = policy == "typical"
                       ? AcceptancePolicy::typical(ecfg.policy.temperature, ecfg.policy.epsilon,
                                                   ecfg.policy.alpha)
                       : AcceptancePolicy::greedy();
        e.policy.temperature = ecfg.policy.temperature;
        if (eos >= 0) e.eos = static_cast<Token>(eos);
        return e;
    }
};

void add_engine_opts(CLI::App *c, EngineOpts &e) {
    c->add_option("--mode", e.mode, "decoding mode")
        ->check(CLI::IsMember(
            {"cascade", "cats", "two_stage", "two-stage", "autoregressive", "baseline"}));
    c->add_option("--gamma", e.ecfg.gamma, "draft tokens per cycle");
    c->add_option("--policy", e.policy, "acceptance policy")
        ->check(CLI::IsMember({"greedy", "typical"}));
    c->add_option("--temperature", e.ecfg.policy.temperature, "sampling temperature");
    c->add_option("--epsilon", e.ecfg.policy.epsilon, "typical acceptance floor");
    c->add_option("--alpha", e.ecfg.policy.alpha, "typical acceptance entropy scale");
    c->add_option("--seed", e.ecfg.seed, "decode RNG seed");
    c->add_option("--max-new-tokens", e.ecfg.max_new_tokens, "tokens to generate");
    c->add_option("--eos", e.eos, "stop token id (-1: none)");
}

struct PromptOpts {
    std::vector<int> tokens;
    int len = 16;
    uint64_t seed = 1;
};

void add_prompt_opts(CLI::App *c, PromptOpts &p) {
    c->add_option("--prompt", p.tokens, "explicit prompt token ids")->delimiter(',');
    c->add_option("--prompt-len", p.len, "random prompt length when --prompt is absent");
    c->add_option("--prompt-seed", p.seed, "random prompt seed");
}

std::vector<Token> make_prompt(const ModelConfig &cfg, const PromptOpts &p) {
    if (!p.tokens.empty()) {
        std::vector<Token> out;
        for (int t : p.tokens) {
            if (t < 0 || t >= cfg.vocab_size)
                throw invalid_input("prompt token " + std::to_string(t) + " outside vocabulary");
            out.push_back(static_cast<Token>(t));
        }
        return out;
    }
    if (p.len < 1) throw invalid_input("prompt length must be >= 1");
    Rng rng(p.seed);
    std::vector<Token> out(p.len);
    for (auto &t : out) t = static_cast<Token>(rng.below(static_cast<uint64_t>(cfg.vocab_size)));
    return out;
}

void atomic_save_model(const std::string &path, const Weights &w, const AdapterWeights &dm,
                       const AdapterWeights &sv) {
    const std::string tmp = path + ".tmp";
    save_model_file(tmp, w, dm, sv);
    std::filesystem::rename(tmp, path);
}

// ---- init-model ------------------------------------------------------------

struct InitArgs {
    std::string out;
    uint64_t seed = 1;
    ModelConfig cfg;
};

void run_init(const InitArgs &a) {
    a.cfg.validate();
    const Weights w = init_weights(a.cfg, a.seed);
    const AdapterWeights dm = init_adapter(a.cfg, a.seed + 1);
    const AdapterWeights sv = init_adapter(a.cfg, a.seed + 2);
    atomic_save_model(a.out, w, dm, sv);
    std::cout << "wrote " << a.out << " layers=" << a.cfg.n_layers << " d_model=" << a.cfg.d_model
              << " vocab=" << a.cfg.vocab_size << " seed=" << a.seed << "\n";
}

// ---- describe --------------------------------------------------------------

void run_describe(const std::string &path) {
    const WeightFileInfo info = read_file_info(path);
    const ModelConfig &cfg = info.cfg;
    const ByteLayout lay = layout_from_info(info);
    int64_t params = 0;
    for (const auto &t : info.table) params += static_cast<int64_t>(t.length / sizeof(float));
    std::cout << "file " << path << "\n"
              << "layers=" << cfg.n_layers << " d_model=" << cfg.d_model
              << " heads=" << cfg.n_heads << " vocab=" << cfg.vocab_size
              << " max_seq=" << cfg.max_seq << "\n"
              << "draft_depth=" << cfg.l_dm << " shallow_depth=" << cfg.l_sv
              << " bytes_per_param=" << cfg.bytes_per_param << "\n"
              << "tensors=" << info.table.size() << " params=" << params << "\n"
              << "layer_bytes=" << lay.layer(1) << " adapter_dm_bytes=" << lay.adapter_dm
              << " adapter_sv_bytes=" << lay.adapter_sv << "\n"
              << "stream_total_bytes=" << lay.total() << "\n";
}

// ---- train-adapters --------------------------------------------------------

struct TrainArgs {
    std::string model, out, corpus_in, corpus_out, csv, manifest, config;
    std::string which = "both";
    TrainConfig tc;
    bool full_kl = false;
    int n_seqs = 8, min_prompt = 4, max_prompt = 8, total_len = 24;
    uint64_t corpus_seed = 1;
};

void run_train(const TrainArgs &a) {
    const auto t0 = std::chrono::steady_clock::now();
    LoadedModel lm = load_model_file(a.model);
    const Model m(lm.w);
    const std::string out = a.out.empty() ? a.model : a.out;

    Corpus corpus;
    if (!a.corpus_in.empty()) {
        corpus = load_corpus(a.corpus_in);
    } else {
        corpus = build_corpus(m, a.n_seqs, a.min_prompt, a.max_prompt, a.total_len, a.corpus_seed);
    }
    if (!a.corpus_out.empty()) save_corpus(a.corpus_out, corpus);

    TrainConfig tc = a.tc;
    if (a.full_kl) tc.loss.mode = LossConfig::Mode::full;
    tc.validate();

    nlohmann::json jman{
        {"command", "train-adapters"},
        {"config_file", a.config},
        {"model", a.model},
        {"which", a.which},
        {"train", {{"steps", tc.steps}, {"lr", tc.lr}, {"seed", tc.seed},
                   {"holdout_fraction", tc.holdout_fraction}}},
        {"loss", {{"mode", tc.loss.mode == LossConfig::Mode::full ? "full" : "topk"},
                  {"k", tc.loss.k}}},
        {"corpus", {{"sequences", corpus.seqs.size()}, {"vocab", corpus.vocab},
                    {"d_model", corpus.d_model}}}};
    const std::string csv_path = a.csv.empty() ? out + ".train.csv" : a.csv;
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw io_error("cannot open " + csv_path);
    csv << "adapter,step,loss\n";

    auto train_one = [&](AdapterKind kind, AdapterWeights &weights) {
        const TrainReport rep = train_adapter(weights, kind, corpus, lm.w, tc);
        std::cout << to_string(kind) << ": holdout " << rep.holdout_before << " -> "
                  << rep.holdout_after << " (train " << rep.train_sequences << ", holdout "
                  << rep.holdout_sequences << ", steps " << tc.steps << ")\n";
        if (csv.is_open())
            for (const auto &[step, loss] : rep.curve)
                csv << to_string(kind) << ',' << step << ',' << loss << '\n';
        jman[to_string(kind)] = {{"holdout_before", rep.holdout_before},
                                 {"holdout_after", rep.holdout_after},
                                 {"train_sequences", rep.train_sequences},
                                 {"holdout_sequences", rep.holdout_sequences}};
    };
    if (a.which == "draft" || a.which == "both") train_one(AdapterKind::draft, lm.dm);
    if (a.which == "shallow" || a.which == "both") train_one(AdapterKind::shallow, lm.sv);

    atomic_save_model(out, lm.w, lm.dm, lm.sv);
    std::cout << "wrote " << out << "\n";

    if (!a.manifest.empty()) {
        jman["out"] = out;
        jman["csv"] = csv_path;
        jman["wall_seconds"] = wall_since(t0);
        std::ofstream mf(a.manifest, std::ios::trunc);
        if (!mf) throw io_error("cannot open " + a.manifest);
        mf << jman.dump(2) << "\n";
    }
}

// ---- generate --------------------------------------------------------------

struct GenArgs {
    std::string model, stats, trees, ledger, manifest, config;
    EngineOpts eng;
    MemoryConfig mem;
    PromptOpts prompt;
};

void run_generate(const GenArgs &a) {
    const auto t0 = std::chrono::steady_clock::now();
    const LoadedModel lm = load_model_file(a.model);
    const Model m(lm.w);
    const std::vector<Token> prompt = make_prompt(m.cfg, a.prompt);

    EngineConfig ecfg = a.eng.build();
    ecfg.keep_trees = !a.trees.empty();
    Engine eng(m, lm.dm, lm.sv, ecfg, a.mem);
    const GenerateResult r = eng.generate(prompt);
    const DecodeStats &st = r.stats;

    const uint64_t flash = r.ledger.bytes(Medium::flash);
    const uint64_t dram = r.ledger.bytes(Medium::dram);
    const double bpt =
        st.cycle_committed > 0 ? bpt_from_ledger(r.ledger, st.cycle_committed) : 0.0;
    const double secs = modeled_seconds(r.ledger, a.mem);

    std::cout << "tokens";
    for (Token t : r.tokens) std::cout << ' ' << t;
    std::cout << "\nprompt_len=" << st.prompt_len << " generated=" << st.generated
              << " cycles=" << st.cycles << " committed=" << st.cycle_committed
              << " tau=" << st.tau() << " eos=" << (st.eos_hit ? 1 : 0) << "\n"
              << "flash_bytes=" << flash << " dram_bytes=" << dram << " bytes_per_token=" << bpt
              << " modeled_seconds=" << secs << "\n"
              << "resident_upto=" << eng.residency().resident_upto
              << " verify_boundary=" << eng.sv_boundary() << "\n";

    if (!a.stats.empty()) {
        std::ofstream os(a.stats, std::ios::trunc);
        if (!os) throw io_error("cannot open " + a.stats);
        write_stats_jsonl(os, r);
    }
    if (!a.trees.empty()) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto &t : r.trees) arr.push_back(tree_to_json(t));
        std::ofstream os(a.trees, std::ios::trunc);
        if (!os) throw io_error("cannot open " + a.trees);
        os << arr.dump(2) << "\n";
    }
    if (!a.ledger.empty()) {
        std::ofstream os(a.ledger, std::ios::trunc);
        if (!os) throw io_error("cannot open " + a.ledger);
        r.ledger.to_csv(os);
    }
    if (!a.manifest.empty()) {
        const ModelConfig &cfg = m.cfg;
        nlohmann::json j{{"command", "generate"},
                         {"config_file", a.config},
                         {"model", a.model},
                         {"model_config",
                          {{"n_layers", cfg.n_layers},
                           {"d_model", cfg.d_model},
                           {"n_heads", cfg.n_heads},
                           {"vocab", cfg.vocab_size},
                           {"max_seq", cfg.max_seq},
                           {"l_dm", cfg.l_dm},
                           {"l_sv", cfg.l_sv},
                           {"bytes_per_param", cfg.bytes_per_param}}},
                         {"memory",
                          {{"dram_budget", a.mem.dram_budget},
                           {"flash_bandwidth", a.mem.flash_bandwidth},
                           {"chunk_bytes", a.mem.chunk_bytes},
                           {"overlap", a.mem.overlap},
                           {"compute_bandwidth", a.mem.compute_bandwidth}}},
                         {"mode", to_string(ecfg.mode)},
                         {"gamma", ecfg.gamma},
                         {"policy", a.eng.policy},
                         {"temperature", ecfg.policy.temperature},
                         {"seed", ecfg.seed},
                         {"prompt_len", st.prompt_len},
                         {"max_new_tokens", ecfg.max_new_tokens},
                         {"generated", st.generated},
                         {"cycles", st.cycles},
                         {"cycle_committed", st.cycle_committed},
                         {"tau", st.tau()},
                         {"eos_hit", st.eos_hit},
                         {"resident_upto", eng.residency().resident_upto},
                         {"verify_boundary", eng.sv_boundary()},
                         {"flash_bytes", flash},
                         {"dram_bytes", dram},
                         {"bytes_per_token", bpt},
                         {"modeled_seconds", secs},
                         {"wall_seconds", wall_since(t0)}};
        std::ofstream os(a.manifest, std::ios::trunc);
        if (!os) throw io_error("cannot open " + a.manifest);
        os << j.dump(2) << "\n";
    }
}

// ---- sweep -----------------------------------------------------------------

struct SweepArgs {
    std::string model, out;
    std::vector<uint64_t> budgets{0};
    std::vector<int> gammas{5};
    std::vector<std::string> modes{"cascade", "two_stage", "autoregressive"};
    EngineOpts eng;
    MemoryConfig mem;
    PromptOpts prompt;
};

struct SweepCell {
    bool ok = false;
    int resident = 0, l_sv = 0, generated = 0, cycles = 0;
    double tau = 0, bpt = 0, comp_s = 0, tok_s = 0;
    uint64_t flash = 0, dram = 0;
};

SweepCell sweep_cell(const Model &m, const LoadedModel &lm, std::span<const Token> prompt,
                     const EngineOpts &eng, const std::string &mode, int gamma,
                     const MemoryConfig &mem) {
    SweepCell c;
    EngineOpts eo = eng;
    eo.mode = mode;
    if (gamma > 0) eo.ecfg.gamma = gamma;
    try {
        Engine e(m, lm.dm, lm.sv, eo.build(), mem);
        const GenerateResult r = e.generate(prompt);
        const DecodeStats &st = r.stats;
        c.ok = true;
        c.resident = e.residency().resident_upto;
        c.l_sv = e.sv_boundary();
        c.generated = st.generated;
        c.cycles = st.cycles;
        c.tau = st.tau();
        c.flash = r.ledger.bytes(Medium::flash);
        c.dram = r.ledger.bytes(Medium::dram);
        const double secs = modeled_seconds(r.ledger, mem);
        if (st.cycle_committed > 0) {
            c.bpt = bpt_from_ledger(r.ledger, st.cycle_committed);
            c.comp_s = static_cast<double>(r.ledger.total_bytes()) / mem.compute_bandwidth /
                       static_cast<double>(st.cycle_committed);
            if (secs > 0.0) c.tok_s = static_cast<double>(st.cycle_committed) / secs;
        }
    } catch (const config_error &) {
        c.ok = false;  // infeasible point: emit the row and keep sweeping
    }
    return c;
}

void run_sweep(const SweepArgs &a) {
    const LoadedModel lm = load_model_file(a.model);
    const Model m(lm.w);
    const std::vector<Token> prompt = make_prompt(m.cfg, a.prompt);

    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out, std::ios::trunc);
        if (!file) throw io_error("cannot open " + a.out);
    }
    std::ostream &os = a.out.empty() ? std::cout : file;

    os << "budget,mode,l_dm,l_sv,gamma,resident_upto,generated,cycles,tau,flash_bytes,"
          "dram_bytes,bytes_per_token,comp_s_per_token,tok_per_s,speedup,status\n";
    for (uint64_t budget : a.budgets) {
        MemoryConfig mem = a.mem;
        mem.dram_budget = budget;
        // the same-budget full-forward run anchors the speedup column
        const SweepCell base = sweep_cell(m, lm, prompt, a.eng, "autoregressive", 0, mem);
        for (const std::string &mode : a.modes) {
            const Mode md = mode_from_string(mode);
            const std::vector<int> gammas =
                md == Mode::autoregressive ? std::vector<int>{0} : a.gammas;
            for (int gamma : gammas) {
                const SweepCell c = md == Mode::autoregressive
                                        ? base
                                        : sweep_cell(m, lm, prompt, a.eng, mode, gamma, mem);
                const double speedup =
                    c.ok && base.ok && base.tok_s > 0.0 ? c.tok_s / base.tok_s : 0.0;
                os << budget << ',' << to_string(md) << ',' << m.cfg.l_dm << ',' << c.l_sv << ','
                   << gamma << ',' << c.resident << ',' << c.generated << ',' << c.cycles << ','
                   << c.tau << ',' << c.flash << ',' << c.dram << ',' << c.bpt << ',' << c.comp_s
                   << ',' << c.tok_s << ',' << speedup << ','
                   << (c.ok ? "ok" : "infeasible") << '\n';
            }
        }
    }
    if (!a.out.empty()) std::cout << "wrote " << a.out << "\n";
}

// ---- bpt -------------------------------------------------------------------

struct BptArgs {
    bool preset = false;
    int l_dm = 3;
    int l_sv = 16;
    int gamma = 5;
    double tau = 2.27;
    uint64_t b_draft = 0, b_sv = 0, b_target = 0, b_verify = 0;
};

// closed-form weight bytes per committed token for the three decoding shapes;
// b_* are bytes one pass of that stage reads, tau is accepted tokens per cycle
void run_bpt(BptArgs a) {
    if (a.preset) {
        const ByteLayout lay = vicuna7b_layout();
        if (a.l_dm < 1 || a.l_sv <= a.l_dm || a.l_sv >= lay.n_layers())
            throw CLI::ValidationError("bpt", "preset needs 1 <= l_dm < l_sv < 32");
        a.b_draft = lay.prefix(a.l_dm);
        a.b_sv = lay.prefix(a.l_sv);  // the verify passes re-read the whole prefix
        a.b_target = lay.range(a.l_sv + 1, lay.n_layers());
        a.b_verify = lay.total();
    }
    if (a.b_verify == 0) a.b_verify = a.b_sv + a.b_target;
    if (a.b_sv + a.b_target != a.b_verify)
        throw CLI::ValidationError("bpt", "b_sv + b_target must equal b_verify");
    if (a.tau <= 0.0) throw CLI::ValidationError("bpt", "tau must be > 0");
    if (a.gamma < 0) throw CLI::ValidationError("bpt", "gamma must be >= 0");

    const double drafted = static_cast<double>(a.gamma) * static_cast<double>(a.b_draft);
    const double two = (drafted + static_cast<double>(a.b_verify)) / a.tau;
    const double cats =
        (drafted + static_cast<double>(a.b_sv) + static_cast<double>(a.b_target)) / a.tau;
    if (a.preset) std::cout << "preset=vicuna-7b-class l_dm=" << a.l_dm << " l_sv=" << a.l_sv << "\n";
    std::cout << "gamma=" << a.gamma << " tau=" << a.tau << " b_draft=" << a.b_draft
              << " b_sv=" << a.b_sv << " b_target=" << a.b_target << " b_verify=" << a.b_verify
              << "\n"
              << "baseline_bytes_per_token=" << a.b_verify << "\n"
              << "baseline_gb_per_token=" << static_cast<double>(a.b_verify) / 1e9 << "\n"
              << "two_stage_bytes_per_token=" << std::llround(two) << "\n"
              << "two_stage_gb_per_token=" << two / 1e9 << "\n"
              << "cats_bytes_per_token=" << std::llround(cats) << "\n"
              << "cats_gb_per_token=" << cats / 1e9 << "\n";
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"cascaded speculative decoding sandbox"};
    app.require_subcommand(1);
    // INI config: top-level flag, one section per subcommand, keys are the
    // subcommand's long option names. Command-line flags win over the file.
    app.set_config("--config", "", "INI config file ([generate] gamma=3 ...)");

    InitArgs init;
    CLI::App *c_init = app.add_subcommand("init-model", "create a fresh model file");
    c_init->add_option("--out", init.out, "output weight file")->required();
    c_init->add_option("--seed", init.seed, "weight init seed");
    add_model_opts(c_init, init.cfg);

    std::string desc_model;
    CLI::App *c_desc = app.add_subcommand("describe", "print model file layout");
    c_desc->add_option("--model", desc_model, "weight file")->required();

    TrainArgs tr;
    CLI::App *c_train = app.add_subcommand("train-adapters", "distill draft/verifier adapters");
    c_train->add_option("--model", tr.model, "weight file to train")->required();
    c_train->add_option("--out", tr.out, "output weight file (default: rewrite --model)");
    c_train->add_option("--which", tr.which, "which adapter to train")
        ->check(CLI::IsMember({"both", "draft", "shallow"}));
    c_train->add_option("--corpus-in", tr.corpus_in, "load a saved corpus instead of sampling");
    c_train->add_option("--corpus-out", tr.corpus_out, "save the corpus used");
    c_train->add_option("--n-seqs", tr.n_seqs, "sequences to sample");
    c_train->add_option("--min-prompt", tr.min_prompt, "shortest prompt");
    c_train->add_option("--max-prompt", tr.max_prompt, "longest prompt");
    c_train->add_option("--total-len", tr.total_len, "tokens per sequence");
    c_train->add_option("--corpus-seed", tr.corpus_seed, "corpus sampling seed");
    c_train->add_option("--steps", tr.tc.steps, "SGD steps");
    c_train->add_option("--lr", tr.tc.lr, "learning rate");
    c_train->add_option("--k", tr.tc.loss.k, "teacher top-k support size");
    c_train->add_flag("--full-kl", tr.full_kl, "use the full-vocabulary KL");
    c_train->add_option("--holdout", tr.tc.holdout_fraction, "held-out fraction of sequences");
    c_train->add_option("--seed", tr.tc.seed, "training shuffle seed");
    c_train->add_option("--csv", tr.csv,
                        "loss curve path (default: <out>.train.csv, adapter,step,loss)");
    c_train->add_option("--manifest", tr.manifest, "write a run manifest JSON");

    GenArgs gen;
    CLI::App *c_gen = app.add_subcommand("generate", "decode tokens from a prompt");
    c_gen->add_option("--model", gen.model, "weight file")->required();
    add_engine_opts(c_gen, gen.eng);
    add_memory_opts(c_gen, gen.mem);
    add_prompt_opts(c_gen, gen.prompt);
    c_gen->add_option("--stats", gen.stats, "write per-cycle stats JSONL");
    c_gen->add_option("--dump-trees", gen.trees, "write per-cycle verification trees JSON");
    c_gen->add_option("--ledger", gen.ledger, "write the transfer ledger CSV");
    c_gen->add_option("--manifest", gen.manifest, "write a run manifest JSON");

    SweepArgs sw;
    CLI::App *c_sweep = app.add_subcommand("sweep", "grid over budgets, gammas and modes");
    c_sweep->add_option("--model", sw.model, "weight file")->required();
    c_sweep->add_option("--budgets", sw.budgets, "DRAM budgets to try")->delimiter(',');
    c_sweep->add_option("--gammas", sw.gammas, "draft lengths to try")->delimiter(',');
    c_sweep->add_option("--modes", sw.modes, "modes to try")->delimiter(',');
    c_sweep->add_option("--out", sw.out, "output CSV (default: stdout)");
    add_engine_opts(c_sweep, sw.eng);
    add_memory_opts(c_sweep, sw.mem);
    add_prompt_opts(c_sweep, sw.prompt);

    BptArgs bp;
    CLI::App *c_bpt = app.add_subcommand("bpt", "closed-form bytes per token");
    c_bpt->add_flag("--vicuna7b", bp.preset, "use the 32-layer fp16 7B-class layout");
    c_bpt->add_option("--l-dm", bp.l_dm, "preset draft depth");
    c_bpt->add_option("--l-sv", bp.l_sv, "preset shallow-verify depth");
    c_bpt->add_option("--gamma", bp.gamma, "draft tokens per cycle");
    c_bpt->add_option("--tau", bp.tau, "accepted tokens per cycle");
    c_bpt->add_option("--b-draft", bp.b_draft, "bytes one draft pass reads");
    c_bpt->add_option("--b-sv", bp.b_sv, "bytes the shallow verify pass reads");
    c_bpt->add_option("--b-target", bp.b_target, "bytes the deep verify pass reads");
    c_bpt->add_option("--b-verify", bp.b_verify, "bytes a full verify pass reads");

    try {
        app.parse(argc, argv);
        const CLI::Option *copt = app.get_config_ptr();
        const std::string cfg_path =
            copt != nullptr && copt->count() > 0 ? copt->as<std::string>() : "";
        tr.config = cfg_path;
        gen.config = cfg_path;
        if (*c_init) run_init(init);
        if (*c_desc) run_describe(desc_model);
        if (*c_train) run_train(tr);
        if (*c_gen) run_generate(gen);
        if (*c_sweep) run_sweep(sw);
        if (*c_bpt) run_bpt(bp);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cats::exit_code::usage;
    } catch (const cats::config_error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cats::exit_code::config;
    } catch (const cats::io_error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cats::exit_code::io;
    } catch (const cats::invalid_input &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cats::exit_code::data;
    } catch (const cats::training_error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return cats::exit_code::data;
    } catch (const std::exception &e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return cats::exit_code::internal;
    }
    return cats::exit_code::ok;
}
