#pragma once

#include <stdexcept>

namespace cxrkit {

// Base of every error thrown by this library.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An argument violated an operation's precondition (degenerate box,
// out-of-range threshold, unknown identifier token, ...).
struct domain_error : error {
    using error::error;
};

// Matrix/vector dimensions do not line up.
struct shape_error : error {
    using error::error;
};

// Input records are malformed or inconsistent (duplicate ids, unknown
// labels in ground truth, bad JSONL lines, ...).
struct data_error : error {
    using error::error;
};

// A file is in a recognized but unsupported format; the message names it.
struct format_error : error {
    using error::error;
};

// A file is truncated or structurally invalid.
struct corrupt_error : error {
    using error::error;
};

}  // namespace cxrkit
