#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "cats/error.hpp"

namespace cats {

// Session RNG. Gaussian draws go through a hand-rolled Box-Muller instead of
// std::normal_distribution, whose sequence differs between standard libraries;
// equal seeds must produce byte-identical weight files.
struct Rng {
    std::mt19937_64 gen;
    double spare = 0.0;
    bool has_spare = false;

    explicit Rng(uint64_t seed) : gen(seed) {}

    // uniform in [0, 1), 53 usable bits
    double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

    double gauss() {
        if (has_spare) {
            has_spare = false;
            return spare;
        }
        double u = uniform();
        while (u <= 0.0) u = uniform();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double t = 2.0 * 3.14159265358979323846 * v;
        spare = r * std::sin(t);
        has_spare = true;
        return r * std::cos(t);
    }

    // uniform integer in [0, n)
    int below(int n) {
        if (n <= 0) throw invalid_input("Rng::below: n must be positive");
        return static_cast<int>(uniform() * n);
    }

    // index draw proportional to non-negative weights (ascending scan, so the
    // result is reproducible for a given seed regardless of caller batching)
    template <typename T>
    int categorical(std::span<const T> w) {
        double total = 0.0;
        for (const T x : w) {
            if (x < T(0)) throw invalid_input("Rng::categorical: negative weight");
            total += static_cast<double>(x);
        }
        if (total <= 0.0) throw invalid_input("Rng::categorical: zero mass");
        const double u = uniform() * total;
        double cum = 0.0;
        int last_positive = 0;
        for (size_t i = 0; i < w.size(); ++i) {
            if (w[i] > T(0)) last_positive = static_cast<int>(i);
            cum += static_cast<double>(w[i]);
            if (u < cum) return static_cast<int>(i);
        }
        return last_positive;
    }
};

}  // namespace cats
