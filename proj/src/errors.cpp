#include "realmerge/errors.hpp"

namespace realmerge {

const char * errc_name(errc c) {
    switch (c) {
        case errc::io_error:
            return "io error";
        case errc::malformed_header:
            return "malformed header";
        case errc::truncated_payload:
            return "truncated payload";
        case errc::duplicate_name:
            return "duplicate tensor name";
        case errc::non_finite_value:
            return "non-finite value";
        case errc::shape_mismatch:
            return "shape mismatch";
        case errc::layout_mismatch:
            return "layout mismatch";
        case errc::bad_argument:
            return "bad argument";
        case errc::svd_no_convergence:
            return "svd did not converge";
        case errc::rank_deficient:
            return "rank deficient";
        case errc::degenerate_input:
            return "degenerate input";
        case errc::divergence:
            return "training diverged";
        case errc::verdict_failure:
            return "verdict failure";
    }
    return "unknown error";
}

} // namespace realmerge
