#pragma once

// Distillation loss between a teacher distribution and student logits:
// cross-entropy of the teacher renormalized onto its top-k support against
// the student's full-vocabulary softmax. With k >= vocab (or full mode) the
// support is the whole row and the renormalizer divides by the row sum, which
// is ~1 for a validated distribution, so reduced and full coincide. Everything
// here is double precision: this feeds the trainer, and finite-difference
// checks need the headroom.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cats/error.hpp"
#include "cats/matrix.hpp"

namespace cats {

struct LossConfig {
    enum class Mode { topk, full };
    int k = 32;
    Mode mode = Mode::topk;

    void validate() const {
        if (mode == Mode::topk && k < 1) throw config_error("loss: top-k needs k >= 1");
    }
};

// indices of the k largest entries, ties broken toward the lower index;
// returned ascending. k >= size selects everything.
inline std::vector<int32_t> top_k_support(std::span<const double> p, int k) {
    if (k < 1) throw invalid_input("top_k_support: k must be >= 1");
    const int n = static_cast<int>(p.size());
    std::vector<int32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (k < n) {
        std::sort(idx.begin(), idx.end(), [&](int32_t a, int32_t b) {
            if (p[a] != p[b]) return p[a] > p[b];
            return a < b;
        });
        idx.resize(k);
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

// dense copy of p restricted to the support and renormalized; zero elsewhere
inline std::vector<double> renormalize_on(std::span<const double> p,
                                          std::span<const int32_t> support) {
    std::vector<double> out(p.size(), 0.0);
    double sum = 0.0;
    for (int32_t j : support) sum += p[j];
    if (!(sum > 0.0)) throw invalid_input("renormalize_on: support carries no mass");
    for (int32_t j : support) out[j] = p[j] / sum;
    return out;
}

// -(1/|M|) sum over masked rows of p_renorm . log softmax(logits). The student
// softmax runs over the whole vocabulary, so mass the student leaks off the
// teacher's support is still penalized. With grad_out != nullptr also writes
// d loss / d logits = (softmax(logits) - p_renorm)/|M| on masked rows, zero on
// unmasked ones.
inline double reduced_kl(const Matd &p_target, const Matd &logits, std::span<const uint8_t> mask,
                         const LossConfig &cfg, Matd *grad_out = nullptr) {
    cfg.validate();
    if (p_target.rows != logits.rows || p_target.cols != logits.cols)
        throw invalid_input("reduced_kl: teacher/student shape mismatch");
    if (static_cast<int>(mask.size()) != p_target.rows)
        throw invalid_input("reduced_kl: mask length mismatch");
    const int vocab = p_target.cols;

    int n_masked = 0;
    for (uint8_t m : mask) n_masked += m ? 1 : 0;
    if (n_masked == 0) throw invalid_input("reduced_kl: no masked rows");

    if (grad_out) {
        *grad_out = Matd(logits.rows, logits.cols);
        std::fill(grad_out->data.begin(), grad_out->data.end(), 0.0);
    }

    std::vector<int32_t> all;
    if (cfg.mode == LossConfig::Mode::full || cfg.k >= vocab) {
        all.resize(vocab);
        std::iota(all.begin(), all.end(), 0);
    }

    double loss = 0.0;
    const double inv_m = 1.0 / static_cast<double>(n_masked);
    for (int i = 0; i < p_target.rows; ++i) {
        if (!mask[i]) continue;
        const auto p = p_target.row_span(i);
        for (double v : p)
            if (v < 0.0 || !std::isfinite(v))
                throw invalid_input("reduced_kl: teacher row " + std::to_string(i) + " invalid");
        if (!normalized_within(p, 1e-4))
            throw invalid_input("reduced_kl: teacher row " + std::to_string(i) + " not normalized");

        const std::vector<int32_t> support =
            all.empty() ? top_k_support(p, cfg.k) : all;
        const std::vector<double> pt = renormalize_on(p, support);

        // full-row log-sum-exp, max subtracted first; log q is z - lse so a
        // zero student probability never hits a raw log
        const auto z = logits.row_span(i);
        double zmax = z[0];
        for (double v : z) zmax = std::max(zmax, v);
        double lse = 0.0;
        for (double v : z) lse += std::exp(v - zmax);
        lse = zmax + std::log(lse);

        for (int32_t j : support) loss -= inv_m * pt[j] * (z[j] - lse);
        if (grad_out)
            for (int j = 0; j < vocab; ++j)
                grad_out->at(i, j) = inv_m * (std::exp(z[j] - lse) - pt[j]);
    }
    if (!std::isfinite(loss)) throw training_error("reduced_kl: loss is not finite");
    return loss;
}

}  // namespace cats
