#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

// end-to-end checks driving the installed binary; CATSIM_BIN points at it
// when run under ctest, with a build-tree fallback for manual runs

namespace {

std::string bin() {
    const char *b = std::getenv("CATSIM_BIN");
    return b != nullptr ? b : "./build/catsim";
}

struct Cmd {
    int code = -1;
    std::string out;
};

Cmd run(const std::string &args) {
    Cmd r;
    const std::string full = bin() + " " + args + " 2>&1";
    FILE *p = popen(full.c_str(), "r");
    REQUIRE(p != nullptr);
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof(buf), p)) > 0) r.out.append(buf, n);
    const int st = pclose(p);
    r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

struct TempDir {
    std::filesystem::path p;
    TempDir() {
        p = std::filesystem::temp_directory_path() /
            ("cats_cli_" + std::to_string(::getpid()) + "_" +
             std::to_string(reinterpret_cast<uintptr_t>(this)));
        std::filesystem::create_directories(p);
    }
    ~TempDir() { std::filesystem::remove_all(p); }
    std::string file(const char *name) const { return (p / name).string(); }
};

std::string slurp(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string &s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string line;
    while (std::getline(is, line)) out.push_back(line);
    return out;
}

// value of "key=..." in a stdout report line
std::string field(const std::string &text, const std::string &key) {
    const std::string needle = key + "=";
    size_t at = text.find(needle);
    REQUIRE(at != std::string::npos);
    at += needle.size();
    size_t end = at;
    while (end < text.size() && text[end] != ' ' && text[end] != '\n') ++end;
    return text.substr(at, end - at);
}

std::vector<std::string> split_csv(const std::string &line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    std::string cell;
    while (std::getline(is, cell, ',')) out.push_back(cell);
    return out;
}

std::string init_model(const TempDir &td, const char *name, int seed) {
    const std::string path = td.file(name);
    const Cmd r = run("init-model --out " + path + " --seed " + std::to_string(seed));
    REQUIRE(r.code == 0);
    return path;
}

}  // namespace

TEST_CASE("init-model is deterministic per seed") {
    TempDir td;
    const std::string a = init_model(td, "a.cspc", 5);
    const std::string b = init_model(td, "b.cspc", 5);
    const std::string c = init_model(td, "c.cspc", 6);
    REQUIRE(slurp(a) == slurp(b));
    REQUIRE(slurp(a) != slurp(c));
}

TEST_CASE("describe reports the file layout") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 1);
    const Cmd r = run("describe --model " + m);
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("layers=8 d_model=64 heads=4 vocab=256 max_seq=512") != std::string::npos);
    REQUIRE(r.out.find("layer_bytes=98560") != std::string::npos);
    REQUIRE(r.out.find("adapter_dm_bytes=33024") != std::string::npos);
    REQUIRE(r.out.find("stream_total_bytes=788480") != std::string::npos);
}

TEST_CASE("greedy generation is identical in all three modes") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 11);
    std::vector<std::string> first;
    for (const char *mode : {"cascade", "two-stage", "autoregressive"}) {
        const Cmd r = run("generate --model " + m + " --mode " + mode + " --max-new-tokens 40");
        REQUIRE(r.code == 0);
        first.push_back(lines_of(r.out).at(0));
        REQUIRE(first.back().rfind("tokens ", 0) == 0);
    }
    REQUIRE(first[0] == first[1]);
    REQUIRE(first[0] == first[2]);
}

TEST_CASE("fixed seed reproduces a sampled run exactly") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 2);
    const std::string args = "generate --model " + m +
                             " --policy typical --temperature 0.9 --seed 7 --max-new-tokens 48";
    const Cmd r1 = run(args);
    const Cmd r2 = run(args);
    REQUIRE(r1.code == 0);
    REQUIRE(r1.out == r2.out);
    const Cmd r3 = run("generate --model " + m +
                       " --policy typical --temperature 0.9 --seed 8 --max-new-tokens 48");
    REQUIRE(r3.code == 0);
    REQUIRE(r1.out != r3.out);
}

TEST_CASE("stats and trees carry one entry per cycle") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 3);
    const std::string stats = td.file("s.jsonl"), trees = td.file("t.json");
    const Cmd r = run("generate --model " + m + " --max-new-tokens 32 --stats " + stats +
                      " --dump-trees " + trees);
    REQUIRE(r.code == 0);
    const int cycles = std::stoi(field(r.out, "cycles"));
    REQUIRE(cycles > 0);

    const auto stat_lines = lines_of(slurp(stats));
    REQUIRE(static_cast<int>(stat_lines.size()) == cycles);
    for (const auto &l : stat_lines) {
        const auto j = nlohmann::json::parse(l);
        REQUIRE(j.contains("accepted"));
        REQUIRE(j.contains("flash_bytes"));
        REQUIRE(!j.contains("wall_seconds"));
    }
    const auto arr = nlohmann::json::parse(slurp(trees));
    REQUIRE(arr.is_array());
    REQUIRE(static_cast<int>(arr.size()) == cycles);
}

TEST_CASE("sweep emits the full grid and marks infeasible points") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 4);
    const Cmd r = run("sweep --model " + m +
                      " --budgets 100000,700000 --gammas 3,5 --chunk-bytes 65536"
                      " --max-new-tokens 24");
    REQUIRE(r.code == 0);
    const auto ls = lines_of(r.out);
    REQUIRE(ls.at(0) ==
            "budget,mode,l_dm,l_sv,gamma,resident_upto,generated,cycles,tau,flash_bytes,"
            "dram_bytes,bytes_per_token,comp_s_per_token,tok_per_s,speedup,status");
    // 2 budgets x (2 modes x 2 gammas + 1 full-forward row)
    REQUIRE(ls.size() == 1 + 2 * 5);

    double bpt_g3 = 0, bpt_g5 = 0;
    for (size_t i = 1; i < ls.size(); ++i) {
        const auto c = split_csv(ls[i]);
        REQUIRE(c.size() == 16);
        const std::string &status = c[15];
        if (c[0] == "100000" && c[1] != "autoregressive") {
            REQUIRE(status == "infeasible");
            continue;
        }
        REQUIRE(status == "ok");
        if (c[1] == "autoregressive") {
            REQUIRE(c[11] == "788480");  // full forward moves every layer once per token
            REQUIRE(c[14] == "1");
        }
        if (c[0] == "700000" && c[1] == "cascade") {
            REQUIRE(c[3] == "5");  // enough budget keeps the configured verify depth
            if (c[4] == "3") bpt_g3 = std::stod(c[11]);
            if (c[4] == "5") bpt_g5 = std::stod(c[11]);
        }
    }
    REQUIRE(bpt_g3 > 0.0);
    REQUIRE(bpt_g5 >= bpt_g3);  // longer drafts cost more bytes per committed token
}

TEST_CASE("closed-form preset matches the published operating points") {
    const Cmd r = run("bpt --vicuna7b");
    REQUIRE(r.code == 0);
    REQUIRE(r.out.find("baseline_bytes_per_token=12952010752") != std::string::npos);
    REQUIRE(r.out.find("baseline_gb_per_token=12.952") != std::string::npos);
    REQUIRE(r.out.find("two_stage_gb_per_token=8.38") != std::string::npos);

    const Cmd zero = run("bpt --b-draft 0 --b-sv 10 --b-target 30 --tau 2");
    REQUIRE(zero.code == 0);
    REQUIRE(zero.out.find("two_stage_bytes_per_token=20") != std::string::npos);
    REQUIRE(zero.out.find("cats_bytes_per_token=20") != std::string::npos);
}

TEST_CASE("exit codes distinguish failure classes") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 1);
    REQUIRE(run("describe --model " + td.file("missing.cspc")).code == 74);
    REQUIRE(run("generate --model " + m + " --prompt 5,999").code == 65);
    REQUIRE(run("generate --model " + m + " --budget 1000 --chunk-bytes 65536").code == 78);
    REQUIRE(run("init-model --out " + td.file("x.cspc") + " --l-dm 6 --l-sv 3").code == 78);
    REQUIRE(run("generate --model " + m + " --no-such-flag").code == 64);
    REQUIRE(run("").code == 64);
    REQUIRE(run("bpt --b-sv 10 --b-target 30 --b-verify 45").code == 64);
}

TEST_CASE("zero training steps rewrite the file byte-identically") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 9);
    const std::string out = td.file("t.cspc");
    const Cmd r = run("train-adapters --model " + m + " --out " + out +
                      " --steps 0 --n-seqs 2 --min-prompt 3 --max-prompt 4 --total-len 10");
    REQUIRE(r.code == 0);
    REQUIRE(slurp(m) == slurp(out));
    REQUIRE(lines_of(slurp(out + ".train.csv")).at(0) == "adapter,step,loss");
}

TEST_CASE("training lowers held-out loss and keeps decoding lossless") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 12);
    const std::string out = td.file("t.cspc");
    const Cmd r = run("train-adapters --model " + m + " --out " + out +
                      " --steps 40 --n-seqs 4 --total-len 16 --corpus-seed 2");
    REQUIRE(r.code == 0);
    for (const char *which : {"draft", "shallow"}) {
        const std::string needle = std::string(which) + ": holdout ";
        const size_t at = r.out.find(needle);
        REQUIRE(at != std::string::npos);
        std::istringstream is(r.out.substr(at + needle.size()));
        double before = 0, after = 0;
        std::string arrow;
        is >> before >> arrow >> after;
        REQUIRE(arrow == "->");
        REQUIRE(after < before);
    }
    REQUIRE(slurp(m) != slurp(out));

    const Cmd spec = run("generate --model " + out + " --mode cascade --max-new-tokens 40");
    const Cmd base = run("generate --model " + out + " --mode autoregressive --max-new-tokens 40");
    REQUIRE(spec.code == 0);
    REQUIRE(lines_of(spec.out).at(0) == lines_of(base.out).at(0));
}

TEST_CASE("config file applies and flags override it") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 6);
    const std::string ini = td.file("run.ini");
    {
        std::ofstream os(ini);
        os << "[generate]\ngamma = 2\nmax-new-tokens = 10\n";
    }
    const Cmd r = run("--config " + ini + " generate --model " + m);
    REQUIRE(r.code == 0);
    REQUIRE(field(r.out, "generated") == "10");
    const Cmd o = run("--config " + ini + " generate --model " + m + " --max-new-tokens 6");
    REQUIRE(o.code == 0);
    REQUIRE(field(o.out, "generated") == "6");
}

TEST_CASE("manifest holds the resolved setup and the only wall clock") {
    TempDir td;
    const std::string m = init_model(td, "m.cspc", 8);
    const std::string man = td.file("man.json"), ledger = td.file("led.csv");
    const Cmd r = run("generate --model " + m + " --max-new-tokens 24 --manifest " + man +
                      " --ledger " + ledger);
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(slurp(man));
    REQUIRE(j.at("command") == "generate");
    REQUIRE(j.at("model_config").at("n_layers") == 8);
    REQUIRE(j.at("memory").at("chunk_bytes").get<uint64_t>() == (16ull << 20));
    REQUIRE(j.at("wall_seconds").get<double>() > 0.0);
    REQUIRE(j.at("tau").get<double>() >= 1.0);

    const auto led = lines_of(slurp(ledger));
    REQUIRE(led.at(0) == "cycle,stage,medium,layer,bytes,seconds");
    REQUIRE(led.size() > 1);
    REQUIRE(r.out.find("wall") == std::string::npos);  // stdout stays wall-clock free
}
