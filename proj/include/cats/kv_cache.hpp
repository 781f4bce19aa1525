#pragma once

// Per-layer K/V slots with position ids and path tags. Committed slots form a
// contiguous ascending prefix; speculative slots are tagged with the id of the
// verification-tree node they belong to. Commit keeps exactly the accepted
// root-to-leaf path and relabels it committed; everything else is dropped, so
// "rollback" is slot filtering — no recompute.

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cats/error.hpp"
#include "cats/matrix.hpp"

namespace cats {

inline constexpr int32_t kTagCommitted = -1;

template <typename T>
struct KvLayer {
    int d = 0;
    std::vector<T> k, v;          // slot-major rows of width d
    std::vector<int32_t> pos;     // position id per slot
    std::vector<int32_t> tag;     // kTagCommitted or tree-node id

    int size() const { return static_cast<int>(pos.size()); }
    std::span<const T> k_row(int s) const { return {k.data() + static_cast<size_t>(s) * d, (size_t)d}; }
    std::span<const T> v_row(int s) const { return {v.data() + static_cast<size_t>(s) * d, (size_t)d}; }

    void append(std::span<const T> krow, std::span<const T> vrow, int32_t p, int32_t t) {
        if (static_cast<int>(krow.size()) != d || static_cast<int>(vrow.size()) != d)
            throw invalid_input("KvLayer::append: row width mismatch");
        k.insert(k.end(), krow.begin(), krow.end());
        v.insert(v.end(), vrow.begin(), vrow.end());
        pos.push_back(p);
        tag.push_back(t);
    }

    int committed_count() const {
        int n = 0;
        for (const int32_t t : tag)
            if (t == kTagCommitted) ++n;
        return n;
    }

    void keep_slots(const std::vector<int> &keep) {
        std::vector<T> nk, nv;
        std::vector<int32_t> np, nt;
        nk.reserve(keep.size() * d);
        nv.reserve(keep.size() * d);
        for (const int s : keep) {
            nk.insert(nk.end(), k.begin() + static_cast<size_t>(s) * d,
                      k.begin() + static_cast<size_t>(s + 1) * d);
            nv.insert(nv.end(), v.begin() + static_cast<size_t>(s) * d,
                      v.begin() + static_cast<size_t>(s + 1) * d);
            np.push_back(pos[s]);
            nt.push_back(tag[s]);
        }
        k = std::move(nk);
        v = std::move(nv);
        pos = std::move(np);
        tag = std::move(nt);
    }
};

template <typename T>
struct KvCacheT {
    int d = 0;
    std::vector<KvLayer<T>> layers;

    KvCacheT() = default;
    KvCacheT(int n_layers, int d_model) : d(d_model) {
        if (n_layers <= 0 || d_model <= 0) throw invalid_input("KvCache: bad shape");
        layers.resize(n_layers);
        for (auto &l : layers) l.d = d_model;
    }

    int n_layers() const { return static_cast<int>(layers.size()); }
    KvLayer<T> &layer(int l1) { return layers.at(l1 - 1); }  // layers are 1-based
    const KvLayer<T> &layer(int l1) const { return layers.at(l1 - 1); }

    // Committed slots must sit first with consecutive positions 0..n-1.
    void validate() const {
        for (const auto &l : layers) {
            const int n = l.committed_count();
            for (int s = 0; s < n; ++s)
                if (l.tag[s] != kTagCommitted || l.pos[s] != s)
                    throw internal_error("KvCache: committed prefix broken (slot " +
                                         std::to_string(s) + " pos " + std::to_string(l.pos[s]) + ")");
            for (int s = n; s < l.size(); ++s)
                if (l.tag[s] == kTagCommitted)
                    throw internal_error("KvCache: committed slot after speculative slot");
        }
    }

    // Relabel the accepted path (node ids, root-to-leaf order) as committed and
    // drop every other speculative slot. Applies only to layers that actually
    // hold speculative slots; afterwards each such layer's committed positions
    // must run 0..new_len-1.
    void commit_path(std::span<const int32_t> accepted_nodes, int new_len) {
        for (auto &l : layers) {
            std::vector<int> keep;
            for (int s = 0; s < l.size(); ++s)
                if (l.tag[s] == kTagCommitted) keep.push_back(s);
            for (const int32_t node : accepted_nodes) {
                int found = -1;
                for (int s = 0; s < l.size(); ++s) {
                    if (l.tag[s] == node) {
                        if (found >= 0) throw internal_error("KvCache: duplicate node tag");
                        found = s;
                    }
                }
                if (found < 0)
                    throw internal_error("KvCache: accepted node " + std::to_string(node) +
                                         " has no slot in some layer");
                l.tag[found] = kTagCommitted;
                keep.push_back(found);
            }
            std::sort(keep.begin(), keep.end(),
                      [&](int a, int b) { return l.pos[a] < l.pos[b]; });
            l.keep_slots(keep);
            const int n = l.committed_count();
            if (n != l.size())
                throw internal_error("KvCache: speculative slot survived commit");
            if (n != new_len)
                throw internal_error("KvCache: committed length " + std::to_string(n) +
                                     " != expected " + std::to_string(new_len));
        }
        validate();
    }

    // Drop all speculative slots (reject everything).
    void drop_speculative() {
        for (auto &l : layers) {
            std::vector<int> keep;
            for (int s = 0; s < l.size(); ++s)
                if (l.tag[s] == kTagCommitted) keep.push_back(s);
            l.keep_slots(keep);
        }
    }

    // Shrink the committed prefix to len slots (idempotent).
    void rollback_to(int len) {
        if (len < 0) throw invalid_input("KvCache::rollback_to: negative length");
        for (auto &l : layers) {
            std::vector<int> keep;
            for (int s = 0; s < l.size(); ++s)
                if (l.tag[s] == kTagCommitted && l.pos[s] < len) keep.push_back(s);
            l.keep_slots(keep);
        }
        validate();
    }

    int committed_len() const {
        if (layers.empty()) return 0;
        const int n = layers[0].committed_count();
        for (const auto &l : layers)
            if (l.committed_count() != n)
                throw internal_error("KvCache: layers disagree on committed length");
        return n;
    }
};

using KvCache = KvCacheT<float>;

}  // namespace cats
