#pragma once

#include <stdexcept>
#include <string>

namespace realmerge {

// Error categories. The CLI maps bad_argument to exit code 2, verdict_failure
// to 4, and everything else to 3.
enum class errc {
    io_error,
    malformed_header,
    truncated_payload,
    duplicate_name,
    non_finite_value,
    shape_mismatch,
    layout_mismatch,
    bad_argument,
    svd_no_convergence,
    rank_deficient,
    degenerate_input,
    divergence,
    verdict_failure,
};

const char * errc_name(errc c);

class Error : public std::runtime_error {
public:
    Error(errc c, const std::string & msg)
        : std::runtime_error(std::string(errc_name(c)) + ": " + msg), code_(c) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

} // namespace realmerge
