#pragma once

// Sticky-strike bump-and-recalibrate Greeks: the quoted IV-at-strike surface
// is held fixed while the spot is moved across a uniform grid, the selected
// pipeline is re-run at every spot, and Delta/Gamma come from finite
// differences of the resulting value profile.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "lvsmooth/dupire_fd.hpp"
#include "lvsmooth/errors.hpp"
#include "lvsmooth/local_smoother.hpp"
#include "lvsmooth/pricing_engine.hpp"

namespace lvsmooth {

struct EuropeanSpec {
    double strike = 1.0;
    double maturity = 1.0;
};

using Instrument = std::variant<EuropeanSpec, AsianSpec>;

enum class Pipeline { direct, smoothed };

struct GreeksProfile {
    std::vector<double> spot_grid;
    std::vector<double> value;
    std::vector<double> delta;
    std::vector<double> gamma;
};

namespace detail {

inline void check_uniform_grid(const std::vector<double>& grid) {
    if (grid.size() < 3) throw validation_error("greeks: spot grid needs >= 3 points");
    const double h = grid[1] - grid[0];
    if (!(h > 0.0)) throw validation_error("greeks: spot grid must be increasing");
    for (std::size_t i = 0; i + 1 < grid.size(); ++i)
        if (std::abs(grid[i + 1] - grid[i] - h) > 1e-9 * std::max(1.0, std::abs(h)))
            throw validation_error("greeks: spot grid must be uniform");
}

} // namespace detail

/// Value of the instrument at every spot level under the selected pipeline.
/// Stage 1 operates on (strike, IV) pairs only, so under sticky strike the
/// smoothed slices are spot-invariant and are computed once. Asian values use
/// the same MC seed at every spot (common random numbers).
inline std::vector<double> value_profile(const MarketSurface& market, const Instrument& instrument,
                                         const std::vector<double>& spot_grid, Pipeline pipeline,
                                         const SmootherConfig& scfg, const CalibConfig& ccfg,
                                         const McConfig& mc = {}) {
    detail::check_uniform_grid(spot_grid);
    validate_surface(market);

    std::vector<SmoothedSlice> smoothed;
    if (pipeline == Pipeline::smoothed) smoothed = smooth_surface(market, scfg);

    std::vector<double> values(spot_grid.size());
    for (std::size_t i = 0; i < spot_grid.size(); ++i) {
        const double spot = spot_grid[i];
        try {
            MarketSurface bumped = market;
            bumped.spot = spot; // quotes unchanged: sticky strike
            const SurfaceCalibration calib = pipeline == Pipeline::smoothed
                                                 ? calibrate_surface(smoothed, bumped, ccfg)
                                                 : calibrate_direct(bumped, ccfg);
            if (std::holds_alternative<EuropeanSpec>(instrument)) {
                const auto& e = std::get<EuropeanSpec>(instrument);
                values[i] = price_european(calib, e.strike, e.maturity);
            } else {
                values[i] = price_asian_mc(calib, std::get<AsianSpec>(instrument), mc).price;
            }
        } catch (const error& e) {
            throw error("value_profile at spot " + std::to_string(spot) + ": " + e.what());
        }
    }
    return values;
}

/// Central differences inside the grid, second-order one-sided stencils at
/// the ends. Exact for quadratics.
inline std::pair<std::vector<double>, std::vector<double>> delta_gamma(
    const std::vector<double>& v, double spacing) {
    if (v.size() < 3) throw validation_error("delta_gamma: need >= 3 values");
    if (!(spacing > 0.0)) throw validation_error("delta_gamma: spacing must be > 0");
    const std::size_t n = v.size();
    std::vector<double> delta(n), gamma(n);
    const double h = spacing, h2 = spacing * spacing;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        delta[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        gamma[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    }
    delta[0] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
    delta[n - 1] = (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h);
    if (n >= 4) {
        gamma[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h2;
        gamma[n - 1] = (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / h2;
    } else {
        gamma[0] = gamma[n - 1] = gamma[1];
    }
    return {std::move(delta), std::move(gamma)};
}

inline GreeksProfile greeks_profile(const MarketSurface& market, const Instrument& instrument,
                                    const std::vector<double>& spot_grid, Pipeline pipeline,
                                    const SmootherConfig& scfg, const CalibConfig& ccfg,
                                    const McConfig& mc = {}) {
    GreeksProfile p;
    p.spot_grid = spot_grid;
    p.value = value_profile(market, instrument, spot_grid, pipeline, scfg, ccfg, mc);
    auto [d, g] = delta_gamma(p.value, spot_grid[1] - spot_grid[0]);
    p.delta = std::move(d);
    p.gamma = std::move(g);
    return p;
}

struct StabilityMetric {
    double tv_ratio_delta = 1.0; ///< TV(a) / TV(b)
    double tv_ratio_gamma = 1.0;
};

/// Total-variation ratio of the Greek curves of profile a against profile b.
inline StabilityMetric stability_metric(const GreeksProfile& a, const GreeksProfile& b) {
    if (a.spot_grid != b.spot_grid) throw validation_error("stability_metric: spot grids differ");
    auto ratio = [](const std::vector<double>& x, const std::vector<double>& y) {
        const double tx = total_variation(x), ty = total_variation(y);
        if (ty == 0.0) return tx == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
        return tx / ty;
    };
    return {ratio(a.delta, b.delta), ratio(a.gamma, b.gamma)};
}

} // namespace lvsmooth
