#include <catch2/catch_amalgamated.hpp>

#include "cats/accept.hpp"

using namespace cats;

namespace {
std::vector<float> dist(std::initializer_list<float> v) { return v; }
}  // namespace

TEST_CASE("greedy acceptance is argmax equality with low-index ties") {
    const AcceptancePolicy g = AcceptancePolicy::greedy();
    const auto d = dist({0.1f, 0.6f, 0.2f, 0.1f});
    CHECK(accept(1, d, g));
    CHECK_FALSE(accept(0, d, g));
    CHECK_FALSE(accept(2, d, g));

    const auto tie = dist({0.4f, 0.4f, 0.1f, 0.1f});
    CHECK(accept(0, tie, g));        // lowest index wins the tie
    CHECK_FALSE(accept(1, tie, g));
}

TEST_CASE("typical acceptance thresholds") {
    const AcceptancePolicy t = AcceptancePolicy::typical();  // eps 0.3, alpha 0.09

    // uniform over 4: H = ln 4, threshold = min(0.3, 0.09/4) = 0.0225
    const auto u = dist({0.25f, 0.25f, 0.25f, 0.25f});
    for (Token tok = 0; tok < 4; ++tok) CHECK(accept(tok, u, t));

    // peaked: only the mode clears the entropy-scaled bar
    const auto p = dist({0.97f, 0.01f, 0.01f, 0.01f});
    CHECK(accept(0, p, t));
    CHECK_FALSE(accept(1, p, t));

    // epsilon caps the threshold: near-deterministic dist, runner-up at 0.2
    const auto q = dist({0.8f, 0.2f, 0.0f, 0.0f});
    // H ~= 0.5, threshold = min(0.3, 0.09*exp(-0.5)) ~= 0.0546 -> accepted
    CHECK(accept(1, q, t));
}

TEST_CASE("typical acceptance loosens as temperature flattens the dist") {
    // the engine applies temperature before calling accept; verify the
    // direction on a hand-tempered pair
    const AcceptancePolicy t = AcceptancePolicy::typical();
    const auto cold = dist({0.995f, 0.005f, 0.0f, 0.0f});
    const auto warm = dist({0.7f, 0.3f, 0.0f, 0.0f});
    CHECK_FALSE(accept(1, cold, t));
    CHECK(accept(1, warm, t));
}

TEST_CASE("acceptance input validation") {
    const AcceptancePolicy g = AcceptancePolicy::greedy();
    const auto bad = dist({0.5f, 0.1f});  // sums to 0.6
    CHECK_THROWS_AS(accept(0, bad, g), invalid_input);
    const auto ok = dist({0.5f, 0.5f});
    CHECK_THROWS_AS(accept(2, ok, g), invalid_input);
    CHECK_THROWS_AS(accept(-1, ok, g), invalid_input);
}
