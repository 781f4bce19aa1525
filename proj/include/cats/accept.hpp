#pragma once

// Token acceptance tests applied during the verification walk.
//   greedy : token must equal the distribution argmax (lowest index on ties)
//   typical: entropy-scaled threshold — accept when
//            dist[token] >= min(epsilon, alpha * exp(-H(dist)))
// Callers hand in the distribution already adjusted to the sampling
// temperature; both tests are deterministic, so with greedy drafting the only
// randomness in a decode session is the bonus-token draw.

#include <cmath>
#include <span>
#include <string>

#include "cats/error.hpp"
#include "cats/matrix.hpp"
#include "cats/rng.hpp"

namespace cats {

struct AcceptancePolicy {
    enum class Kind { greedy, typical };
    Kind kind = Kind::greedy;
    float temperature = 1.0f;  // used by the engine when preparing distributions
    float epsilon = 0.3f;
    float alpha = 0.09f;

    static AcceptancePolicy greedy() { return {}; }
    static AcceptancePolicy typical(float temp = 1.0f, float eps = 0.3f, float a = 0.09f) {
        return {Kind::typical, temp, eps, a};
    }
};

inline bool accept(Token token, std::span<const float> dist, const AcceptancePolicy &policy) {
    if (token < 0 || token >= static_cast<Token>(dist.size()))
        throw invalid_input("accept: token id out of range");
    if (!normalized_within(dist, 1e-4))
        throw invalid_input("accept: distribution is not normalized");
    if (policy.kind == AcceptancePolicy::Kind::greedy)
        return token == argmax_tiebreak(dist);
    const double threshold =
        std::min(static_cast<double>(policy.epsilon),
                 static_cast<double>(policy.alpha) * std::exp(-entropy(dist)));
    return static_cast<double>(dist[token]) >= threshold;
}

}  // namespace cats
