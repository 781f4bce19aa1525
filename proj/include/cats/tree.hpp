#pragma once

// Verification tree for one decode cycle: a linear main chain of gamma drafted
// tokens plus at most one sibling correction per chain index (the shallow
// verifier's disagreement). Node ids are stable: main nodes 0..gamma-1, then
// corrections in ascending chain index. Corrections are always leaves.
//
//        root ─ d0 ─ d1 ─ d2          main chain (ids 0,1,2)
//                │
//                └─ c1                correction at index 1 (id 3)
//
// position id of a node = committed_len + depth, so siblings share positions.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cats/accept.hpp"
#include "cats/error.hpp"
#include "cats/matrix.hpp"

namespace cats {

enum class NodeKind { main, correction };

struct TreeNode {
    int id = 0;
    int parent = -1;  // -1 = attached to the committed context
    Token token = 0;
    int depth = 1;    // root children have depth 1
    NodeKind kind = NodeKind::main;
    int index = 0;    // chain index this node occupies (corrections: the index they replace)
};

struct Correction {
    int index = 0;
    Token token = 0;
};

struct VerificationTree {
    int committed_len = 0;  // position of the cycle's context token
    int gamma = 0;
    std::vector<TreeNode> nodes;

    int n_corrections() const { return static_cast<int>(nodes.size()) - gamma; }

    const TreeNode &main_node(int i) const { return nodes.at(i); }
    const TreeNode &correction_node(int ord) const { return nodes.at(gamma + ord); }

    // id of the correction covering chain index i, or -1
    int correction_at(int index) const {
        for (int k = gamma; k < static_cast<int>(nodes.size()); ++k)
            if (nodes[k].index == index) return nodes[k].id;
        return -1;
    }

    std::vector<int32_t> position_ids() const {
        std::vector<int32_t> p;
        p.reserve(nodes.size());
        for (const auto &n : nodes) p.push_back(committed_len + n.depth);
        return p;
    }

    // ancestors-or-self reachability mask over node ids
    Mat<uint8_t> tree_mask() const {
        const int n = static_cast<int>(nodes.size());
        Mat<uint8_t> m(n, n);
        for (int i = 0; i < n; ++i) {
            m.at(i, i) = 1;
            int a = nodes[i].parent;
            while (a >= 0) {
                m.at(i, a) = 1;
                a = nodes[a].parent;
            }
        }
        return m;
    }

    void validate() const {
        if (gamma < 1) throw invalid_input("tree: gamma must be >= 1");
        const int n = static_cast<int>(nodes.size());
        if (n < gamma || n > 2 * gamma)
            throw internal_error("tree: node count outside [gamma, 2*gamma]");
        for (int i = 0; i < gamma; ++i) {
            const TreeNode &nd = nodes[i];
            if (nd.id != i || nd.kind != NodeKind::main || nd.index != i ||
                nd.parent != i - 1 || nd.depth != i + 1)
                throw internal_error("tree: main chain is not linear at index " + std::to_string(i));
        }
        int prev_index = -1;
        for (int k = gamma; k < n; ++k) {
            const TreeNode &nd = nodes[k];
            if (nd.kind != NodeKind::correction || nd.id != k)
                throw internal_error("tree: bad correction node");
            if (nd.index <= prev_index)
                throw internal_error("tree: corrections not in ascending index order");
            prev_index = nd.index;
            if (nd.index < 0 || nd.index >= gamma)
                throw invalid_input("tree: correction index out of range");
            if (nd.parent != nd.index - 1 || nd.depth != nd.index + 1)
                throw internal_error("tree: correction not a sibling of its draft");
            if (nd.token == nodes[nd.index].token)
                throw invalid_input("tree: correction equals the draft token it replaces");
            // leaves: nobody may have a correction as parent
            for (const auto &o : nodes)
                if (o.parent == nd.id) throw internal_error("tree: correction has a child");
        }
    }
};

inline VerificationTree chain_tree(std::span<const Token> drafts, int committed_len) {
    if (drafts.empty()) throw invalid_input("tree: need at least one draft token");
    VerificationTree t;
    t.committed_len = committed_len;
    t.gamma = static_cast<int>(drafts.size());
    for (int i = 0; i < t.gamma; ++i)
        t.nodes.push_back({i, i - 1, drafts[i], i + 1, NodeKind::main, i});
    t.validate();
    return t;
}

inline VerificationTree build_tree(std::span<const Token> drafts,
                                   std::span<const Correction> corrections, int committed_len) {
    VerificationTree t = chain_tree(drafts, committed_len);
    int prev = -1;
    for (const auto &c : corrections) {
        if (c.index <= prev) throw invalid_input("tree: corrections must ascend by index");
        prev = c.index;
        if (c.index < 0 || c.index >= t.gamma)
            throw invalid_input("tree: correction index out of range");
        const int id = static_cast<int>(t.nodes.size());
        t.nodes.push_back({id, c.index - 1, c.token, c.index + 1, NodeKind::correction, c.index});
    }
    t.validate();
    return t;
}

// Distributions the walk consumes, all at the caller's temperature:
//   cond.row(i)    — target distribution after accepting i main-chain tokens
//                    (row 0 = conditioned on the committed context only);
//                    row i verifies draft i, row gamma feeds the all-accepted
//                    bonus draw
//   corr_own.row(k)— the k-th correction node's own output distribution,
//                    feeding the bonus draw after an accepted correction
struct TreeDistributions {
    Matf cond;
    Matf corr_own;
};

struct WalkResult {
    std::vector<Token> accepted;        // committed in order (may end with a correction)
    std::vector<int32_t> accepted_ids;  // node ids along the accepted path
    bool via_correction = false;
    int terminal_ord = 0;  // corrections: row into corr_own; else accepted main count
};

// Walks the main chain greedily-from-the-root: a rejected draft may be rescued
// by its sibling correction (checked against the same conditioning
// distribution that rejected the draft), after which the cycle ends.
inline WalkResult walk_longest_prefix(const VerificationTree &t, const TreeDistributions &d,
                                      const AcceptancePolicy &policy) {
    t.validate();
    if (d.cond.rows != t.gamma + 1)
        throw invalid_input("walk: need gamma+1 conditioning rows, got " +
                            std::to_string(d.cond.rows));
    if (d.corr_own.rows != t.n_corrections())
        throw invalid_input("walk: correction row count mismatch");
    for (int i = 0; i < d.cond.rows; ++i)
        if (!normalized_within(d.cond.row_span(i), 1e-4))
            throw invalid_input("walk: conditioning row " + std::to_string(i) + " not normalized");
    for (int i = 0; i < d.corr_own.rows; ++i)
        if (!normalized_within(d.corr_own.row_span(i), 1e-4))
            throw invalid_input("walk: correction row " + std::to_string(i) + " not normalized");

    WalkResult r;
    for (int i = 0; i < t.gamma; ++i) {
        const Token draft = t.main_node(i).token;
        if (accept(draft, d.cond.row_span(i), policy)) {
            r.accepted.push_back(draft);
            r.accepted_ids.push_back(i);
            r.terminal_ord = i + 1;
            continue;
        }
        const int corr_id = t.correction_at(i);
        if (corr_id >= 0) {
            const Token fix = t.nodes[corr_id].token;
            if (accept(fix, d.cond.row_span(i), policy)) {
                r.accepted.push_back(fix);
                r.accepted_ids.push_back(corr_id);
                r.via_correction = true;
                r.terminal_ord = corr_id - t.gamma;
            }
        }
        return r;
    }
    return r;  // full chain accepted; terminal_ord == gamma
}

inline nlohmann::json tree_to_json(const VerificationTree &t) {
    nlohmann::json j;
    j["committed_len"] = t.committed_len;
    j["gamma"] = t.gamma;
    j["nodes"] = nlohmann::json::array();
    for (const auto &n : t.nodes) {
        j["nodes"].push_back({{"id", n.id},
                              {"parent", n.parent},
                              {"token", n.token},
                              {"depth", n.depth},
                              {"kind", n.kind == NodeKind::main ? "main" : "correction"},
                              {"index", n.index}});
    }
    const Mat<uint8_t> m = t.tree_mask();
    auto rows = nlohmann::json::array();
    for (int i = 0; i < m.rows; ++i) {
        auto row = nlohmann::json::array();
        for (int jj = 0; jj < m.cols; ++jj) row.push_back(static_cast<int>(m.at(i, jj)));
        rows.push_back(row);
    }
    j["mask"] = rows;
    j["positions"] = t.position_ids();
    return j;
}

}  // namespace cats
