#pragma once

#include <stdexcept>
#include <string>

namespace cats {

// Error taxonomy. Callers that hand us bad data get invalid_input, impossible
// configurations get config_error, broken invariants inside the engine get
// internal_error. The CLI maps each to a distinct process exit code.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invalid_input : error {
    using error::error;
};

struct config_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

struct internal_error : error {
    using error::error;
};

struct training_error : error {
    using error::error;
};

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 64;     // bad flags / arguments
inline constexpr int data = 65;      // rejected input or diverged training
inline constexpr int internal = 70;  // internal consistency failure
inline constexpr int io = 74;        // file read/write problems
inline constexpr int config = 78;    // infeasible configuration (e.g. budget)
}  // namespace exit_code

}  // namespace cats
