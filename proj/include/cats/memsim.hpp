#pragma once

// Byte-exact model of the flash <-> DRAM weight traffic during decoding.
// Every weight read lands in a ledger record: reads of DRAM-resident layers
// are free of transfer time but still counted, reads of non-resident layers
// are chunked flash streams. Bytes-per-token derived from the ledger must
// agree exactly with the closed-form cycle arithmetic; tests enforce that.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "cats/error.hpp"
#include "cats/model.hpp"
#include "cats/weight_io.hpp"

namespace cats {

struct MemoryConfig {
    uint64_t dram_budget = 0;            // bytes available for pinned weights
    double flash_bandwidth = 2e9;        // bytes/s sustained read
    uint64_t chunk_bytes = 16ull << 20;  // streaming granule and staging buffer
    double overlap = 0.0;                // fraction of transfer hidden behind compute
    double compute_bandwidth = 50e9;     // bytes of weights consumed per second of compute

    void validate() const {
        if (flash_bandwidth <= 0.0) throw config_error("memory: flash_bandwidth must be > 0");
        if (chunk_bytes == 0) throw config_error("memory: chunk_bytes must be > 0");
        if (overlap < 0.0 || overlap >= 1.0) throw config_error("memory: overlap must be in [0,1)");
        if (compute_bandwidth <= 0.0) throw config_error("memory: compute_bandwidth must be > 0");
    }
};

enum class Stage { draft, shallow_verify, target_verify, full_forward };
enum class Medium { dram, flash };

inline const char *to_string(Stage s) {
    switch (s) {
        case Stage::draft: return "draft";
        case Stage::shallow_verify: return "shallow_verify";
        case Stage::target_verify: return "target_verify";
        case Stage::full_forward: return "full_forward";
    }
    return "?";
}

inline const char *to_string(Medium m) { return m == Medium::dram ? "dram" : "flash"; }

struct TransferRecord {
    int cycle = 0;
    Stage stage = Stage::draft;
    Medium medium = Medium::dram;
    int layer = 0;  // 1-based transformer layer; 0 = adapter weights
    uint64_t bytes = 0;
    double seconds = 0.0;  // transfer time not hidden by overlap; dram reads are free
};

struct TransferLedger {
    std::vector<TransferRecord> records;

    void clear() { records.clear(); }

    uint64_t total_bytes() const {
        uint64_t b = 0;
        for (const auto &r : records) b += r.bytes;
        return b;
    }
    uint64_t bytes(Medium m) const {
        uint64_t b = 0;
        for (const auto &r : records)
            if (r.medium == m) b += r.bytes;
        return b;
    }
    uint64_t bytes(Stage s, Medium m) const {
        uint64_t b = 0;
        for (const auto &r : records)
            if (r.stage == s && r.medium == m) b += r.bytes;
        return b;
    }
    double transfer_seconds() const {
        double t = 0.0;
        for (const auto &r : records) t += r.seconds;
        return t;
    }

    void to_csv(std::ostream &os) const {
        os << "cycle,stage,medium,layer,bytes,seconds\n";
        for (const auto &r : records)
            os << r.cycle << ',' << to_string(r.stage) << ',' << to_string(r.medium) << ','
               << r.layer << ',' << r.bytes << ',' << r.seconds << '\n';
    }
};

// Weight bytes as they exist on flash (embedding and lm head live with the
// runtime permanently and are excluded from streaming accounting).
struct ByteLayout {
    std::vector<uint64_t> per_layer;  // [0] unused; 1-based like the runtime
    uint64_t adapter_dm = 0;
    uint64_t adapter_sv = 0;

    int n_layers() const { return static_cast<int>(per_layer.size()) - 1; }

    uint64_t layer(int l1) const {
        if (l1 < 1 || l1 > n_layers()) throw invalid_input("layout: layer out of range");
        return per_layer[l1];
    }
    // sum of layers lo..hi inclusive; empty when hi < lo
    uint64_t range(int lo, int hi) const {
        uint64_t b = 0;
        for (int l = lo; l <= hi; ++l) b += layer(l);
        return b;
    }
    uint64_t prefix(int l1) const { return range(1, l1); }
    uint64_t total() const { return range(1, n_layers()); }
};

inline ByteLayout layout_from_config(const ModelConfig &cfg) {
    cfg.validate();
    ByteLayout lay;
    lay.per_layer.assign(cfg.n_layers + 1, 0);
    const uint64_t bytes =
        static_cast<uint64_t>(layer_param_count(cfg)) * static_cast<uint64_t>(cfg.bytes_per_param);
    for (int l = 1; l <= cfg.n_layers; ++l) lay.per_layer[l] = bytes;
    lay.adapter_dm = lay.adapter_sv =
        static_cast<uint64_t>(adapter_param_count(cfg)) * static_cast<uint64_t>(cfg.bytes_per_param);
    return lay;
}

// actual tensor extents from a weight file (params = fp32 payload / 4)
inline ByteLayout layout_from_info(const WeightFileInfo &info) {
    ByteLayout lay;
    const auto &cfg = info.cfg;
    lay.per_layer.assign(cfg.n_layers + 1, 0);
    for (int l = 1; l <= cfg.n_layers; ++l)
        lay.per_layer[l] = static_cast<uint64_t>(info.layer_params(l)) *
                           static_cast<uint64_t>(cfg.bytes_per_param);
    lay.adapter_dm = static_cast<uint64_t>(info.prefix_params("adapter.dm.")) *
                     static_cast<uint64_t>(cfg.bytes_per_param);
    lay.adapter_sv = static_cast<uint64_t>(info.prefix_params("adapter.sv.")) *
                     static_cast<uint64_t>(cfg.bytes_per_param);
    return lay;
}

struct ResidencyPlan {
    int resident_upto = 0;        // layers 1..resident_upto pinned in DRAM
    uint64_t resident_bytes = 0;  // pinned layers + any pinned adapters
    uint64_t budget = 0;
};

// DRAM demand if layers 1..k are pinned: the prefix, any adapters that must
// stay resident, and one staging chunk whenever something still streams.
inline uint64_t residency_demand(const ByteLayout &lay, const MemoryConfig &mem, int k,
                                 uint64_t adapter_bytes) {
    uint64_t need = lay.prefix(k) + adapter_bytes;
    if (k < lay.n_layers()) need += mem.chunk_bytes;
    return need;
}

// Largest k in [0, max_allowed] whose demand fits the budget. min_required is
// the smallest prefix the caller can operate with; falling short of it is a
// configuration error, not a quiet degradation.
inline ResidencyPlan plan_residency(const ByteLayout &lay, const MemoryConfig &mem,
                                    int min_required, int max_allowed, uint64_t adapter_bytes) {
    mem.validate();
    if (max_allowed > lay.n_layers()) max_allowed = lay.n_layers();
    if (min_required < 0 || min_required > max_allowed)
        throw config_error("residency: min_required outside [0, max_allowed]");
    int best = -1;
    for (int k = max_allowed; k >= 0; --k) {
        if (residency_demand(lay, mem, k, adapter_bytes) <= mem.dram_budget) {
            best = k;
            break;
        }
    }
    if (best < min_required)
        throw config_error("residency: dram_budget " + std::to_string(mem.dram_budget) +
                           " cannot hold the required " + std::to_string(min_required) +
                           " layers");
    ResidencyPlan plan;
    plan.resident_upto = best;
    plan.resident_bytes = lay.prefix(best) + adapter_bytes;
    plan.budget = mem.dram_budget;
    return plan;
}

// One weight read, routed by residency: pinned layers are DRAM reads (no
// transfer time), everything else streams from flash in chunk-sized pieces
// whose un-overlapped time goes on the clock.
inline void read_weights(TransferLedger &ledger, const MemoryConfig &mem,
                         const ResidencyPlan &plan, Stage stage, int layer, uint64_t bytes,
                         int cycle) {
    if (bytes == 0) return;
    if (layer > 0 && layer <= plan.resident_upto) {
        ledger.records.push_back({cycle, stage, Medium::dram, layer, bytes, 0.0});
        return;
    }
    uint64_t left = bytes;
    while (left > 0) {
        const uint64_t piece = left < mem.chunk_bytes ? left : mem.chunk_bytes;
        const double secs =
            static_cast<double>(piece) / mem.flash_bandwidth * (1.0 - mem.overlap);
        ledger.records.push_back({cycle, stage, Medium::flash, layer, piece, secs});
        left -= piece;
    }
}

// adapter weights are always DRAM-resident; layer id 0 marks them
inline void read_adapter(TransferLedger &ledger, Stage stage, uint64_t bytes, int cycle) {
    if (bytes == 0) return;
    ledger.records.push_back({cycle, stage, Medium::dram, 0, bytes, 0.0});
}

// ---- closed-form cycle arithmetic -----------------------------------------

struct CycleBytes {
    uint64_t flash = 0;
    uint64_t dram = 0;
    uint64_t total() const { return flash + dram; }
};

// draft passes run layers 1..l_dm plus the draft adapter, the shallow verify
// covers l_dm+1..l_sv plus its adapter (all resident), and only l_sv+1..n
// touches flash
inline CycleBytes cycle_bytes_cascade(const ByteLayout &lay, int l_dm, int l_sv, int gamma) {
    CycleBytes c;
    c.dram = static_cast<uint64_t>(gamma) * (lay.prefix(l_dm) + lay.adapter_dm);
    c.dram += lay.range(l_dm + 1, l_sv) + lay.adapter_sv;
    c.flash = lay.range(l_sv + 1, lay.n_layers());
    return c;
}

// single verifier: layers above l_dm all stream per cycle
inline CycleBytes cycle_bytes_two_stage(const ByteLayout &lay, int l_dm, int gamma) {
    CycleBytes c;
    c.dram = static_cast<uint64_t>(gamma) * (lay.prefix(l_dm) + lay.adapter_dm);
    c.flash = lay.range(l_dm + 1, lay.n_layers());
    return c;
}

// plain decoding reads every layer once per token, split by residency
inline CycleBytes cycle_bytes_baseline(const ByteLayout &lay, int resident_upto) {
    CycleBytes c;
    c.dram = lay.prefix(resident_upto);
    c.flash = lay.range(resident_upto + 1, lay.n_layers());
    return c;
}

inline double bytes_per_token(const CycleBytes &c, double tokens_per_cycle) {
    if (tokens_per_cycle <= 0.0) throw invalid_input("bytes_per_token: tokens_per_cycle <= 0");
    return static_cast<double>(c.total()) / tokens_per_cycle;
}

inline double bpt_from_ledger(const TransferLedger &ledger, int64_t committed_tokens) {
    if (committed_tokens <= 0) throw invalid_input("bpt_from_ledger: no committed tokens");
    return static_cast<double>(ledger.total_bytes()) / static_cast<double>(committed_tokens);
}

// modeled decode time: serialized flash transfers plus compute proportional to
// the weight bytes consumed. Deterministic by construction.
inline double modeled_seconds(const TransferLedger &ledger, const MemoryConfig &mem) {
    return ledger.transfer_seconds() +
           static_cast<double>(ledger.total_bytes()) / mem.compute_bandwidth;
}

// ---- published 7B reference points ----------------------------------------
//
// A 32-layer 4096-wide model with 11008-wide MLPs at fp16:
// per-layer bytes = (4*4096^2 + 3*4096*11008) * 2 = 404,750,336. Plain
// decoding reads all 32 layers per token; the two-stage speculative setup
// drafts gamma tokens over an l_dm-layer prefix and verifies with the full
// stack. These reproduce the reference implementation's reported arithmetic,
// which books the whole model for the verify pass and ignores adapter bytes.

inline ByteLayout vicuna7b_layout() {
    ByteLayout lay;
    lay.per_layer.assign(33, 0);
    const uint64_t per_layer = (4ull * 4096 * 4096 + 3ull * 4096 * 11008) * 2;
    for (int l = 1; l <= 32; ++l) lay.per_layer[l] = per_layer;
    return lay;
}

inline uint64_t vicuna7b_baseline_bytes_per_token() { return vicuna7b_layout().total(); }

inline double vicuna7b_two_stage_bpt(int l_dm, int gamma, double tau) {
    const ByteLayout lay = vicuna7b_layout();
    const uint64_t cycle =
        static_cast<uint64_t>(gamma) * lay.prefix(l_dm) + lay.total();
    if (tau <= 0.0) throw invalid_input("tau must be > 0");
    return static_cast<double>(cycle) / tau;
}

}  // namespace cats
