#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "lvsmooth/black_scholes.hpp"
#include "lvsmooth/dupire_fd.hpp"
#include "lvsmooth/errors.hpp"
#include "lvsmooth/market_data.hpp"
#include "lvsmooth/rng.hpp"

namespace lvsmooth {

/// Arithmetic-average Asian call, monitoring times t_i = i T / M.
struct AsianSpec {
    double strike = 1.0;
    double maturity = 1.0;
    int monitoring_count = 12;

    void validate() const {
        if (monitoring_count < 1) throw validation_error("asian: monitoring_count must be >= 1");
        if (!(strike > 0.0 && maturity > 0.0)) throw validation_error("asian: strike, maturity > 0");
    }
};

struct McConfig {
    std::int64_t paths = 131072;
    int steps_per_year = 252;
    std::uint64_t seed = 1;
    bool antithetic = true;

    void validate() const {
        if (paths < 2) throw validation_error("mc: paths must be >= 2");
        if (antithetic && paths % 2 != 0) throw validation_error("mc: antithetic needs even paths");
        if (steps_per_year < 1) throw validation_error("mc: steps_per_year must be >= 1");
    }
};

struct BucketStat {
    double lo = 0.0; ///< moneyness bucket (lo, hi]
    double hi = 0.0;
    std::size_t count = 0;
    std::optional<double> mean_abs_rel_pct; ///< absent when the bucket is empty
};

struct FitReport {
    std::vector<BucketStat> buckets;
    std::optional<double> fail_ratio; ///< over quotes carrying both bid and ask
    std::size_t spread_quote_count = 0;
};

struct McResult {
    double price = 0.0;
    double std_error = 0.0;
};

/// Price a European call off the calibrated grid: monotone cubic in k at a
/// quoted t_node; maturities between t_nodes re-step from the bracketing
/// slice with the interval's sigma and the partial dt.
inline double price_european(const SurfaceCalibration& calib, double strike, double maturity) {
    const MarketSurface& mkt = calib.market;
    if (!(strike > 0.0 && maturity > 0.0)) throw domain_error("price_european: strike, maturity > 0");
    const auto& t_nodes = calib.prices.grid.t_nodes;
    if (maturity > t_nodes.back() * (1.0 + 1e-12))
        throw domain_error("price_european: maturity " + std::to_string(maturity) +
                           " beyond calibrated horizon");
    const double fwd = mkt.forward(maturity);
    const double k = strike / fwd;
    const auto& kn = calib.prices.grid.k_nodes;
    if (!(k >= kn.front() && k <= kn.back()))
        throw domain_error("price_european: normalized strike " + std::to_string(k) +
                           " outside calibrated domain");

    const double tol = 1e-12 * std::max(1.0, t_nodes.back());
    std::size_t i = 0;
    while (i + 1 < t_nodes.size() && t_nodes[i + 1] < maturity - tol) ++i;
    std::vector<double> slice;
    if (std::abs(t_nodes[i + 1] - maturity) <= tol) {
        slice = calib.prices.values[i + 1]; // exactly on a node: pure interpolation in k
    } else {
        const double dt_full = t_nodes[i + 1] - t_nodes[i];
        const double dt_part = maturity - t_nodes[i];
        const int sub =
            std::max(1, static_cast<int>(std::ceil(calib.config.sub_steps * dt_part / dt_full)));
        slice = evolve_interval(calib.prices.values[i], calib.lv.knots, calib.lv.sigma[i], dt_part,
                                calib.prices.grid, sub);
    }
    const PchipInterpolant interp(kn, slice);
    return fwd * interp(k);
}

/// Invert the model price back to a Black-Scholes vol.
inline double model_iv(const SurfaceCalibration& calib, double strike, double maturity) {
    const double p = price_european(calib, strike, maturity);
    return implied_vol(p, calib.market.spot, strike, maturity, calib.market.rate,
                       calib.market.dividend);
}

/// Per-moneyness-bucket mean absolute relative IV error (percent) of the
/// calibrated model against the quotes in `market`, plus the fraction of
/// model prices falling outside the quoted bid/ask price band.
inline FitReport calibration_error(const SurfaceCalibration& calib, const MarketSurface& market,
                                   const std::vector<double>& bucket_edges = {0.95, 1.05}) {
    FitReport rep;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> edges = bucket_edges;
    std::sort(edges.begin(), edges.end());
    std::vector<double> lo{-inf}, hi;
    for (double e : edges) {
        hi.push_back(e);
        lo.push_back(e);
    }
    hi.push_back(inf);
    std::vector<double> sums(lo.size(), 0.0);
    std::vector<std::size_t> counts(lo.size(), 0);

    std::size_t outside = 0, with_spread = 0;
    for (const auto& s : market.slices) {
        for (const auto& q : s.quotes) {
            const double m = q.strike / market.spot;
            const double miv = model_iv(calib, q.strike, s.maturity);
            const double rel = std::abs(miv - q.iv_mid) / q.iv_mid * 100.0;
            for (std::size_t b = 0; b < lo.size(); ++b)
                if (m > lo[b] && m <= hi[b]) {
                    sums[b] += rel;
                    ++counts[b];
                    break;
                }
            if (q.iv_bid && q.iv_ask) {
                ++with_spread;
                const double price = price_european(calib, q.strike, s.maturity);
                const double pb = call_price(
                    {market.spot, q.strike, s.maturity, market.rate, market.dividend, *q.iv_bid});
                const double pa = call_price(
                    {market.spot, q.strike, s.maturity, market.rate, market.dividend, *q.iv_ask});
                if (price < pb || price > pa) ++outside;
            }
        }
    }
    for (std::size_t b = 0; b < lo.size(); ++b) {
        BucketStat st;
        st.lo = lo[b];
        st.hi = hi[b];
        st.count = counts[b];
        if (counts[b] > 0) st.mean_abs_rel_pct = sums[b] / static_cast<double>(counts[b]);
        rep.buckets.push_back(st);
    }
    rep.spread_quote_count = with_spread;
    if (with_spread > 0)
        rep.fail_ratio = static_cast<double>(outside) / static_cast<double>(with_spread);
    return rep;
}

namespace detail {

inline int worker_count() {
    if (const char* env = std::getenv("LVSMOOTH_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Index-space parallel map; each index writes only its own slots, so the
/// result is identical for any worker count.
template <typename Fn>
inline void parallel_for(std::int64_t n, Fn&& fn) {
    const int workers = std::min<std::int64_t>(worker_count(), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        const std::int64_t b = w * chunk, e = std::min<std::int64_t>(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, b, e] {
            for (std::int64_t i = b; i < e; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace detail

/// Monte Carlo Asian arithmetic-average call under the calibrated local vol.
/// log-Euler scheme with monitoring dates snapped onto the uniform step grid;
/// per-path substreams derived from the seed make the result independent of
/// worker count; antithetic pairing averages mirrored paths.
inline McResult price_asian_mc(const SurfaceCalibration& calib, const AsianSpec& spec,
                               const McConfig& mc) {
    spec.validate();
    mc.validate();
    const MarketSurface& mkt = calib.market;
    if (spec.maturity > calib.prices.grid.t_nodes.back() * (1.0 + 1e-12))
        throw domain_error("price_asian_mc: monitoring beyond calibrated horizon");

    const int n_steps = std::max(1, static_cast<int>(std::ceil(spec.maturity * mc.steps_per_year)));
    const double dt = spec.maturity / n_steps;
    const double sqdt = std::sqrt(dt);
    std::vector<int> monitor_idx(spec.monitoring_count);
    for (int i = 1; i <= spec.monitoring_count; ++i) {
        monitor_idx[i - 1] = std::max<int>(
            1, static_cast<int>(std::llround(static_cast<double>(i) * n_steps / spec.monitoring_count)));
    }
    const double drift = mkt.rate - mkt.dividend;
    const double discount = std::exp(-mkt.rate * spec.maturity);
    const double inv_m = 1.0 / spec.monitoring_count;

    const std::int64_t n_units = mc.antithetic ? mc.paths / 2 : mc.paths;
    std::vector<double> unit_payoff(n_units);

    detail::parallel_for(n_units, [&](std::int64_t u) {
        Xoshiro256pp stream(mc.seed, static_cast<std::uint64_t>(mc.antithetic ? 2 * u : u));
        double x_a = std::log(mkt.spot);
        double x_b = x_a;
        double avg_a = 0.0, avg_b = 0.0;
        int next_mon = 0;
        for (int step = 1; step <= n_steps; ++step) {
            const double t = (step - 1) * dt;
            const double fwd_t = mkt.forward(t);
            const double z = stream.normal();
            {
                const double sig = calib.lv.mc_value(t, std::exp(x_a) / fwd_t);
                x_a += (drift - 0.5 * sig * sig) * dt + sig * sqdt * z;
            }
            if (mc.antithetic) {
                const double sig = calib.lv.mc_value(t, std::exp(x_b) / fwd_t);
                x_b += (drift - 0.5 * sig * sig) * dt - sig * sqdt * z;
            }
            while (next_mon < spec.monitoring_count && monitor_idx[next_mon] == step) {
                avg_a += std::exp(x_a);
                avg_b += std::exp(x_b);
                ++next_mon;
            }
        }
        const double pay_a = std::max(avg_a * inv_m - spec.strike, 0.0);
        if (mc.antithetic) {
            const double pay_b = std::max(avg_b * inv_m - spec.strike, 0.0);
            unit_payoff[u] = 0.5 * (pay_a + pay_b);
        } else {
            unit_payoff[u] = pay_a;
        }
    });

    double mean = 0.0;
    for (double v : unit_payoff) mean += v;
    mean /= static_cast<double>(n_units);
    double var = 0.0;
    for (double v : unit_payoff) var += (v - mean) * (v - mean);
    var /= std::max<std::int64_t>(1, n_units - 1);

    McResult res;
    res.price = discount * mean;
    res.std_error = discount * std::sqrt(var / static_cast<double>(n_units));
    return res;
}

} // namespace lvsmooth
