#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "lvsmooth/errors.hpp"
#include "lvsmooth/numerics.hpp"

namespace lvsmooth {

struct BsInputs {
    double spot;
    double strike;
    double maturity;
    double rate = 0.0;
    double dividend = 0.0;
    double vol = 0.0;
};

namespace detail {
inline void check_bs_inputs(const BsInputs& in) {
    if (!(in.spot > 0.0)) throw domain_error("black_scholes: spot must be > 0");
    if (!(in.strike > 0.0)) throw domain_error("black_scholes: strike must be > 0");
    if (!(in.maturity > 0.0)) throw domain_error("black_scholes: maturity must be > 0");
    if (!(in.vol >= 0.0)) throw domain_error("black_scholes: vol must be >= 0");
}
} // namespace detail

/// European call under continuous rate and dividend yield.
inline double call_price(const BsInputs& in) {
    detail::check_bs_inputs(in);
    const double df_d = std::exp(-in.dividend * in.maturity);
    const double df_r = std::exp(-in.rate * in.maturity);
    const double stddev = in.vol * std::sqrt(in.maturity);
    if (stddev <= 0.0) return std::max(in.spot * df_d - in.strike * df_r, 0.0);
    const double d1 =
        (std::log(in.spot / in.strike) + (in.rate - in.dividend) * in.maturity) / stddev +
        0.5 * stddev;
    const double d2 = d1 - stddev;
    return in.spot * df_d * norm_cdf(d1) - in.strike * df_r * norm_cdf(d2);
}

inline double vega(const BsInputs& in) {
    detail::check_bs_inputs(in);
    if (!(in.vol > 0.0)) throw domain_error("vega: vol must be > 0");
    const double stddev = in.vol * std::sqrt(in.maturity);
    const double d1 =
        (std::log(in.spot / in.strike) + (in.rate - in.dividend) * in.maturity) / stddev +
        0.5 * stddev;
    return in.spot * std::exp(-in.dividend * in.maturity) * norm_pdf(d1) * std::sqrt(in.maturity);
}

/// Invert the call price for the Black-Scholes volatility. Safeguarded Newton
/// with bisection fallback on the bracket [1e-6, 5]; the price must lie
/// strictly inside the no-arbitrage band (intrinsic, spot*e^{-dT}).
inline double implied_vol(double price, double spot, double strike, double maturity,
                          double rate = 0.0, double dividend = 0.0) {
    BsInputs in{spot, strike, maturity, rate, dividend, 0.0};
    detail::check_bs_inputs(in);
    const double df_d = std::exp(-dividend * maturity);
    const double df_r = std::exp(-rate * maturity);
    const double intrinsic = std::max(spot * df_d - strike * df_r, 0.0);
    const double upper = spot * df_d;
    if (!(price > intrinsic && price < upper))
        throw domain_error("implied_vol: price " + std::to_string(price) +
                           " outside the open no-arbitrage band (" + std::to_string(intrinsic) +
                           ", " + std::to_string(upper) + ")");

    double lo = 1e-6, hi = 5.0;
    // Brenner-Subrahmanyam ATM start, clipped to the bracket
    double sigma = std::sqrt(2.0 * M_PI / maturity) * price / (spot * df_d);
    sigma = std::clamp(sigma, lo, hi);

    const double tol = 1e-15 * std::max(1.0, price);
    for (int it = 0; it < 200; ++it) {
        in.vol = sigma;
        const double f = call_price(in) - price;
        if (std::abs(f) <= tol) return sigma;
        if (f > 0.0)
            hi = sigma;
        else
            lo = sigma;
        double next = sigma;
        const double v = (sigma > 0.0) ? vega(in) : 0.0;
        if (v > 1e-300) next = sigma - f / v;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi); // bisection fallback
        if (std::abs(next - sigma) <= 1e-14 * std::max(1.0, sigma)) return next;
        sigma = next;
    }
    if (hi - lo < 1e-12) return 0.5 * (lo + hi); // bracket exhausted at double precision
    throw convergence_error("implied_vol: no convergence in 200 iterations");
}

} // namespace lvsmooth
