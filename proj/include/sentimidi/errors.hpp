#pragma once

#include <stdexcept>
#include <string>

namespace sentimidi {

// Exit-code contract of the CLI: usage errors exit 1, data errors exit 2,
// numeric failures exit 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sentimidi
