#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lvsmooth {

/// Base class for all library errors.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input file (message names the offending line).
struct parse_error : error {
    using error::error;
};

/// A domain invariant was violated by input data.
struct validation_error : error {
    using error::error;
};

/// An argument lies outside an operation's mathematical domain.
struct domain_error : error {
    using error::error;
};

/// File system failure.
struct io_error : error {
    using error::error;
};

/// An iterative solver exhausted its iteration budget.
struct convergence_error : error {
    using error::error;
};

/// Too few effective observations for the requested fit.
struct rank_error : error {
    using error::error;
};

/// The (scaled) design moment matrix is numerically singular.
struct conditioning_error : error {
    using error::error;
};

/// Zero kernel mass at an evaluation point.
struct mass_error : error {
    using error::error;
};

/// Every candidate in a selection failed.
struct selection_error : error {
    using error::error;
};

/// Synthetic data generation produced an invalid result.
struct generation_error : error {
    using error::error;
};

/// Calibration stalled before reaching first-order optimality.
/// Carries the best parameter vector seen so far.
struct stagnation_error : error {
    stagnation_error(const std::string& what, std::vector<double> best, double sse)
        : error(what), best_sigma(std::move(best)), best_objective(sse) {}
    std::vector<double> best_sigma;
    double best_objective;
};

} // namespace lvsmooth
