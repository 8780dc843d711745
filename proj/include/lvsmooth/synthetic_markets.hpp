#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lvsmooth/black_scholes.hpp"
#include "lvsmooth/errors.hpp"
#include "lvsmooth/market_data.hpp"
#include "lvsmooth/rng.hpp"

namespace lvsmooth {

/// Raw-SVI total variance parameters in log-moneyness,
/// w(k) = a + b (rho (k - m) + sqrt((k - m)^2 + sigma^2)).
struct SviParams {
    double a;
    double b;
    double rho;
    double m;
    double sigma;

    void validate() const {
        if (!(b >= 0.0)) throw validation_error("svi: b must be >= 0");
        if (!(std::abs(rho) < 1.0)) throw validation_error("svi: |rho| must be < 1");
        if (!(sigma > 0.0)) throw validation_error("svi: sigma must be > 0");
        if (!(a + b * sigma * std::sqrt(1.0 - rho * rho) >= 0.0))
            throw validation_error("svi: minimum total variance must be non-negative");
    }
};

struct NoiseSpec {
    double mean = 0.0;
    double stddev = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(stddev >= 0.0)) throw validation_error("noise: stddev must be >= 0");
    }
};

/// SVI implied vol at log-moneyness k (vs the maturity-T forward).
inline double svi_iv(const SviParams& p, double k, double maturity) {
    p.validate();
    if (!(maturity > 0.0)) throw domain_error("svi_iv: maturity must be > 0");
    const double km = k - p.m;
    const double w = p.a + p.b * (p.rho * km + std::sqrt(km * km + p.sigma * p.sigma));
    if (!(w > 0.0)) throw domain_error("svi_iv: non-positive total variance at k=" + std::to_string(k));
    return std::sqrt(w / maturity);
}

/// Sample the SVI curve at the given strikes, optionally adding i.i.d.
/// Gaussian noise in IV space from the seeded stream. Volume defaults to 1,
/// bid/ask absent.
inline QuoteSlice make_svi_slice(const SviParams& params, const std::vector<double>& strikes,
                                 double maturity, double spot,
                                 const std::optional<NoiseSpec>& noise = std::nullopt,
                                 double rate = 0.0, double dividend = 0.0) {
    params.validate();
    if (noise) noise->validate();
    if (strikes.size() < 2) throw validation_error("make_svi_slice: need >= 2 strikes");
    for (std::size_t i = 0; i + 1 < strikes.size(); ++i)
        if (!(strikes[i] > 0.0 && strikes[i] < strikes[i + 1]))
            throw validation_error("make_svi_slice: strikes must be positive and increasing");
    const double fwd = spot * std::exp((rate - dividend) * maturity);
    QuoteSlice slice;
    slice.maturity = maturity;
    std::optional<NormalStream> stream;
    if (noise && noise->stddev >= 0.0) stream.emplace(noise->seed);
    for (double K : strikes) {
        Quote q;
        q.strike = K;
        q.maturity = maturity;
        q.iv_mid = svi_iv(params, std::log(K / fwd), maturity);
        if (stream) q.iv_mid += stream->next(noise->mean, noise->stddev);
        if (!(q.iv_mid > 0.0))
            throw generation_error("make_svi_slice: noise drove iv_mid <= 0 at strike " +
                                   std::to_string(K));
        q.volume = 1.0;
        slice.quotes.push_back(q);
    }
    validate_slice(slice);
    return slice;
}

/// Synthetic short-maturity W-shaped smile: two Gaussian bumps superposed on a
/// gently decaying quadratic base, stand-in for licensed pre-earnings data.
struct WShapeConfig {
    double spot = 1.0;
    double maturity = 4.0 / 365.0;
    double base_vol = 0.55;
    double quad_coeff = -0.6;     ///< coefficient on (K/spot - 1)^2, <= 0 keeps wings falling
    double bump_amp = 0.12;
    double bump_center_lo = 0.93; ///< in moneyness K/spot
    double bump_center_hi = 1.07;
    double bump_width = 0.035;    ///< in moneyness
    double spread_half = 0.010;   ///< bid = mid - spread_half, ask = mid + spread_half
    double strike_lo = 0.80;
    double strike_hi = 1.20;
    int strike_count = 41;
    double volume = 1.0;

    void validate() const {
        if (!(spot > 0.0 && maturity > 0.0)) throw validation_error("w_shape: spot, maturity > 0");
        if (!(bump_amp > 0.0 && bump_width > 0.0)) throw validation_error("w_shape: bump_amp, bump_width > 0");
        if (!(bump_center_lo < bump_center_hi)) throw validation_error("w_shape: bump centers must be ordered");
        if (!(spread_half >= 0.0)) throw validation_error("w_shape: spread_half >= 0");
        if (strike_count < static_cast<int>(kMinQuotesPerSlice))
            throw validation_error("w_shape: too few strikes");
    }

    double iv_at(double strike) const {
        const double x = strike / spot;
        const double b1 = (x - bump_center_lo) / bump_width;
        const double b2 = (x - bump_center_hi) / bump_width;
        return base_vol + quad_coeff * (x - 1.0) * (x - 1.0) +
               bump_amp * (std::exp(-0.5 * b1 * b1) + std::exp(-0.5 * b2 * b2));
    }
};

namespace detail {

struct ShapeCount {
    int maxima = 0;
    int minima = 0;
    int minima_between = 0;
};

inline ShapeCount count_shape(const std::vector<double>& iv) {
    ShapeCount sc;
    int first_max = -1, last_max = -1;
    for (std::size_t i = 1; i + 1 < iv.size(); ++i) {
        if (iv[i] > iv[i - 1] && iv[i] > iv[i + 1]) {
            ++sc.maxima;
            if (first_max < 0) first_max = static_cast<int>(i);
            last_max = static_cast<int>(i);
        }
    }
    for (std::size_t i = 1; i + 1 < iv.size(); ++i) {
        if (iv[i] < iv[i - 1] && iv[i] < iv[i + 1]) {
            ++sc.minima;
            if (first_max >= 0 && static_cast<int>(i) > first_max && static_cast<int>(i) < last_max)
                ++sc.minima_between;
        }
    }
    return sc;
}

} // namespace detail

/// Generate the W-shaped slice; throws generation_error with a shape
/// diagnostic if the configured parameters do not yield exactly two local
/// maxima with one interior minimum between them on the discrete grid.
inline QuoteSlice make_w_slice(const WShapeConfig& cfg) {
    cfg.validate();
    QuoteSlice slice;
    slice.maturity = cfg.maturity;
    std::vector<double> iv;
    for (int i = 0; i < cfg.strike_count; ++i) {
        const double K =
            cfg.strike_lo + (cfg.strike_hi - cfg.strike_lo) * i / (cfg.strike_count - 1);
        const double mid = cfg.iv_at(K);
        if (!(mid > cfg.spread_half))
            throw generation_error("make_w_slice: iv at strike " + std::to_string(K) +
                                   " is not positive past the spread");
        Quote q;
        q.strike = K;
        q.maturity = cfg.maturity;
        q.iv_mid = mid;
        q.iv_bid = mid - cfg.spread_half;
        q.iv_ask = mid + cfg.spread_half;
        q.volume = cfg.volume;
        slice.quotes.push_back(q);
        iv.push_back(mid);
    }
    const auto sc = detail::count_shape(iv);
    if (sc.maxima != 2 || sc.minima_between != 1)
        throw generation_error("make_w_slice: expected a W shape (2 maxima, 1 interior minimum); got " +
                               std::to_string(sc.maxima) + " maxima and " +
                               std::to_string(sc.minima_between) + " minima between them");
    validate_slice(slice);
    return slice;
}

} // namespace lvsmooth
