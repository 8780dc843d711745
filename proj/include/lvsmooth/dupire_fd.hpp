#pragma once

// Stage 2: calibrate a nonnegative local volatility surface by per-maturity
// implicit finite-difference inversion of the normalized Dupire equation
//   dC~/dt = 1/2 sigma^2(t,k) k^2 d2C~/dk2,
// marching forward from the normalized payoff C~(0,k) = max(1-k, 0) with one
// bound-constrained Gauss-Newton problem per quoted maturity.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lvsmooth/black_scholes.hpp"
#include "lvsmooth/errors.hpp"
#include "lvsmooth/local_smoother.hpp"
#include "lvsmooth/market_data.hpp"
#include "lvsmooth/numerics.hpp"

namespace lvsmooth {

struct CalibConfig {
    double k_lo = 0.0;
    double k_hi = 3.0;
    int node_count = 401;
    /// 0 = one vol knot per quoted strike (Andreasen-Huge convention);
    /// > 0 = that many uniform knots on the quoted span, extended by
    /// knot_extension * span on each side. Ignored when lv_knot_pitch > 0.
    int lv_knot_count = 41;
    double knot_extension = 0.0;
    /// > 0: vol knots sit on the fixed lattice {j * pitch} covering the
    /// quoted span. The layout is then independent of the spot level, the
    /// production convention for a vol grid (quotes slide across knots as
    /// spot moves).
    double lv_knot_pitch = 0.025;
    double sigma_floor = 1e-4;
    double sigma_cap = 5.0;
    int sub_steps = 64; ///< implicit Euler sub-steps per quoted-maturity interval
    int max_iterations = 100;
    double grad_tol = 1e-12;
    double step_tol = 1e-10;
    /// stop once every fit residual is below this tolerance in implied-vol
    /// terms (|price residual| <= fit_tol_iv * target vega); resolving targets
    /// below the data's information content only moves sigma along
    /// near-null directions. 0 disables the stop (exact-inversion studies).
    double fit_tol_iv = 1e-4;
    double lambda = 0.0; ///< curvature-penalty weight for the regularized baseline

    void validate() const {
        if (!(k_lo >= 0.0 && k_hi > k_lo)) throw validation_error("calib: need 0 <= k_lo < k_hi");
        if (node_count < 201) throw validation_error("calib: node_count must be >= 201");
        if (!(sigma_floor > 0.0 && sigma_cap > sigma_floor))
            throw validation_error("calib: need 0 < sigma_floor < sigma_cap");
        if (sub_steps < 1) throw validation_error("calib: sub_steps must be >= 1");
        if (!(lambda >= 0.0)) throw validation_error("calib: lambda must be >= 0");
        if (!(fit_tol_iv >= 0.0)) throw validation_error("calib: fit_tol_iv must be >= 0");
    }
};

struct FdGrid {
    std::vector<double> k_nodes; ///< strictly increasing normalized strikes
    std::vector<double> t_nodes; ///< 0 followed by the quoted maturities

    double dk() const { return k_nodes[1] - k_nodes[0]; }
};

/// Normalized call prices on the grid, one vector per t_node.
struct PriceGrid {
    FdGrid grid;
    std::vector<std::vector<double>> values;

    /// max violation of 1-k >= C~ >= max(1-k, 0)
    double bound_violation() const {
        double worst = 0.0;
        for (const auto& row : values)
            for (std::size_t i = 0; i < row.size(); ++i) {
                const double k = grid.k_nodes[i];
                worst = std::max(worst, std::max(1.0 - k, 0.0) - row[i]);
                worst = std::max(worst, row[i] - std::max(1.0 - k, 0.0) - std::min(k, 1.0));
            }
        return worst;
    }
    /// most negative second difference in k across all time slices
    double min_second_difference() const {
        double worst = 0.0;
        for (const auto& row : values)
            for (std::size_t i = 1; i + 1 < row.size(); ++i)
                worst = std::min(worst, row[i + 1] - 2.0 * row[i] + row[i - 1]);
        return worst;
    }
    /// most negative calendar increment at fixed k
    double min_calendar_increment() const {
        double worst = 0.0;
        for (std::size_t t = 0; t + 1 < values.size(); ++t)
            for (std::size_t i = 0; i < values[t].size(); ++i)
                worst = std::min(worst, values[t + 1][i] - values[t][i]);
        return worst;
    }
};

/// Piecewise-constant-in-maturity, piecewise-linear-in-strike local vol with
/// flat extrapolation beyond the end knots.
struct LVSurface {
    std::vector<double> t_edges; ///< {0, T_1, ..., T_N}
    std::vector<double> knots;
    std::vector<std::vector<double>> sigma; ///< per interval (t_{i-1}, t_i]
    double sigma_floor = 1e-4;

    std::size_t interval_of(double t) const {
        for (std::size_t i = 1; i < t_edges.size(); ++i)
            if (t <= t_edges[i]) return i - 1;
        return sigma.size() - 1;
    }

    double value(double t, double k) const {
        return interp_linear_flat(knots, sigma[interval_of(t)], k);
    }

    /// Continuous-in-t lookup for Monte Carlo: linear between interval
    /// midpoints, flat before the first and after the last.
    double mc_value(double t, double k) const {
        const std::size_t n = sigma.size();
        if (n == 1) return value(t_edges[1], k);
        std::vector<double> mids(n);
        for (std::size_t i = 0; i < n; ++i) mids[i] = 0.5 * (t_edges[i] + t_edges[i + 1]);
        if (t <= mids.front()) return interp_linear_flat(knots, sigma.front(), k);
        if (t >= mids.back()) return interp_linear_flat(knots, sigma.back(), k);
        std::size_t i = 0;
        while (t > mids[i + 1]) ++i;
        const double w = (t - mids[i]) / (mids[i + 1] - mids[i]);
        return (1.0 - w) * interp_linear_flat(knots, sigma[i], k) +
               w * interp_linear_flat(knots, sigma[i + 1], k);
    }

    double min_sigma() const {
        double m = std::numeric_limits<double>::infinity();
        for (const auto& row : sigma)
            for (double s : row) m = std::min(m, s);
        return m;
    }
};

/// Calibration targets for one maturity: normalized strikes and prices.
struct SliceTargets {
    double maturity = 0.0;
    std::vector<double> k;
    std::vector<double> c;
};

struct SliceCalibration {
    std::vector<double> sigma;
    std::vector<double> c_next;
    double rms = 0.0;
    double sse = 0.0;
    int iterations = 0;
};

struct SurfaceCalibration {
    LVSurface lv;
    PriceGrid prices;
    std::vector<double> per_maturity_rms;
    MarketSurface market; ///< market parameters the calibration was run under
    CalibConfig config;
};

inline FdGrid make_fd_grid(const CalibConfig& cfg, const std::vector<double>& maturities,
                           double max_quoted_k) {
    cfg.validate();
    if (maturities.empty()) throw validation_error("fd grid: empty maturity list");
    if (!(cfg.k_hi > 1.5 * max_quoted_k))
        throw validation_error("fd grid: k_hi must exceed 1.5x the largest quoted normalized strike");
    FdGrid g;
    g.k_nodes.resize(cfg.node_count);
    for (int i = 0; i < cfg.node_count; ++i)
        g.k_nodes[i] = cfg.k_lo + (cfg.k_hi - cfg.k_lo) * i / (cfg.node_count - 1);
    g.t_nodes.push_back(0.0);
    for (double t : maturities) {
        if (!(t > g.t_nodes.back()))
            throw validation_error("fd grid: maturities must be strictly increasing and > 0");
        g.t_nodes.push_back(t);
    }
    return g;
}

/// Normalized intrinsic payoff C~(0,k) = max(1-k, 0).
inline std::vector<double> payoff_slice(const FdGrid& grid) {
    std::vector<double> c(grid.k_nodes.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::max(1.0 - grid.k_nodes[i], 0.0);
    return c;
}

/// One implicit Euler step of the normalized Dupire operator:
/// solve (I - dt A(sigma)) C_new = C_prev with A the central-difference
/// discretization of 1/2 sigma^2 k^2 d2/dk2 and Dirichlet boundaries
/// C~(k_lo) = 1 - k_lo, C~(k_hi) = 0. The system is a tridiagonal M-matrix.
inline std::vector<double> fd_step(const std::vector<double>& c_prev,
                                   const std::vector<double>& sigma_nodes, double dt,
                                   const FdGrid& grid) {
    if (!(dt > 0.0)) throw domain_error("fd_step: dt must be > 0");
    const std::size_t n = grid.k_nodes.size();
    const double inv_dk2 = 1.0 / (grid.dk() * grid.dk());
    std::vector<double> lower(n - 1, 0.0), diag(n, 1.0), upper(n - 1, 0.0), rhs = c_prev;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const double k = grid.k_nodes[i];
        const double a = 0.5 * sigma_nodes[i] * sigma_nodes[i] * k * k * inv_dk2 * dt;
        lower[i - 1] = -a;
        diag[i] = 1.0 + 2.0 * a;
        upper[i] = -a;
    }
    rhs[0] = 1.0 - grid.k_nodes.front();
    rhs[n - 1] = 0.0;
    diag[0] = diag[n - 1] = 1.0;
    upper[0] = 0.0;
    lower[n - 2] = 0.0;
    return solve_tridiagonal(lower, diag, upper, std::move(rhs));
}

/// Evolve one quoted-maturity interval: sub_steps uniform implicit Euler
/// sub-steps with sigma held constant over the interval.
inline std::vector<double> evolve_interval(const std::vector<double>& c_prev,
                                           const std::vector<double>& knots,
                                           const std::vector<double>& sigma_knots, double dt,
                                           const FdGrid& grid, int sub_steps) {
    std::vector<double> sigma_nodes(grid.k_nodes.size());
    for (std::size_t i = 0; i < sigma_nodes.size(); ++i)
        sigma_nodes[i] = interp_linear_flat(knots, sigma_knots, grid.k_nodes[i]);
    std::vector<double> c = c_prev;
    const double sub = dt / sub_steps;
    for (int s = 0; s < sub_steps; ++s) c = fd_step(c, sigma_nodes, sub, grid);
    return c;
}

/// Convert smoothed IVs to normalized calibration targets:
/// C~(k_j, T_i) = BS(S0, K_j, T_i, r, d, iv_j) / F(0, T_i), k_j = K_j / F(0, T_i).
inline std::vector<SliceTargets> smoothed_to_prices(const std::vector<SmoothedSlice>& smoothed,
                                                    const MarketSurface& market) {
    if (smoothed.size() != market.slices.size())
        throw validation_error("smoothed_to_prices: smoothed slices do not align with market maturities");
    std::vector<SliceTargets> out;
    out.reserve(smoothed.size());
    for (std::size_t s = 0; s < smoothed.size(); ++s) {
        if (smoothed[s].maturity != market.slices[s].maturity)
            throw validation_error("smoothed_to_prices: maturity mismatch at slice " +
                                   std::to_string(s));
        const double T = smoothed[s].maturity;
        const double fwd = market.forward(T);
        SliceTargets t;
        t.maturity = T;
        for (const auto& pt : smoothed[s].points) {
            t.k.push_back(pt.strike / fwd);
            t.c.push_back(
                call_price({market.spot, pt.strike, T, market.rate, market.dividend, pt.iv_smoothed}) /
                fwd);
        }
        out.push_back(std::move(t));
    }
    return out;
}

/// Identity Stage 1: quoted mid IVs straight to targets (the direct pipeline).
inline std::vector<SliceTargets> quotes_to_prices(const MarketSurface& market) {
    std::vector<SliceTargets> out;
    out.reserve(market.slices.size());
    for (const auto& s : market.slices) {
        const double fwd = market.forward(s.maturity);
        SliceTargets t;
        t.maturity = s.maturity;
        for (const auto& q : s.quotes) {
            t.k.push_back(q.strike / fwd);
            t.c.push_back(
                call_price({market.spot, q.strike, s.maturity, market.rate, market.dividend, q.iv_mid}) /
                fwd);
        }
        out.push_back(std::move(t));
    }
    return out;
}

inline std::vector<double> default_knots(const CalibConfig& cfg, const std::vector<double>& target_k) {
    if (cfg.lv_knot_pitch > 0.0) {
        const long j_lo = static_cast<long>(std::floor(target_k.front() / cfg.lv_knot_pitch));
        const long j_hi = static_cast<long>(std::ceil(target_k.back() / cfg.lv_knot_pitch));
        std::vector<double> knots;
        for (long j = j_lo; j <= j_hi; ++j) knots.push_back(j * cfg.lv_knot_pitch);
        return knots;
    }
    if (cfg.lv_knot_count <= 0) return target_k; // one knot per quoted strike
    const double span = target_k.back() - target_k.front();
    const double lo = target_k.front() - cfg.knot_extension * span;
    const double hi = target_k.back() + cfg.knot_extension * span;
    std::vector<double> knots(cfg.lv_knot_count);
    for (int i = 0; i < cfg.lv_knot_count; ++i)
        knots[i] = lo + (hi - lo) * i / (cfg.lv_knot_count - 1);
    return knots;
}

namespace detail {

struct SliceModel {
    const std::vector<double>& c_prev;
    const std::vector<double>& knots;
    const SliceTargets& targets;
    double dt;
    const FdGrid& grid;
    const CalibConfig& cfg;

    /// residual vector: fit residuals followed by sqrt(lambda) * second
    /// differences of the model prices at interior target strikes.
    Eigen::VectorXd residuals(const std::vector<double>& sigma, std::vector<double>* c_out) const {
        const std::vector<double> c =
            evolve_interval(c_prev, knots, sigma, dt, grid, cfg.sub_steps);
        PchipInterpolant interp(grid.k_nodes, c);
        const std::size_t m = targets.k.size();
        const bool reg = cfg.lambda > 0.0;
        Eigen::VectorXd r(reg ? 2 * m - 2 : m);
        std::vector<double> model(m);
        for (std::size_t j = 0; j < m; ++j) {
            model[j] = interp(targets.k[j]);
            r(j) = model[j] - targets.c[j];
        }
        if (reg) {
            const double sl = std::sqrt(cfg.lambda);
            for (std::size_t j = 1; j + 1 < m; ++j)
                r(m + j - 1) = sl * (model[j + 1] - 2.0 * model[j] + model[j - 1]);
        }
        if (c_out) *c_out = c;
        return r;
    }
};

} // namespace detail

/// Calibrate one maturity interval: bound-constrained Gauss-Newton over sigma
/// at the vol knots (bounds [sigma_floor, sigma_cap]), Jacobian by forward
/// differences, Levenberg damping on stagnation. Model values at the target
/// strikes come from monotone cubic interpolation of the evolved price slice.
inline SliceCalibration calibrate_slice(const std::vector<double>& c_prev,
                                        const SliceTargets& targets, double dt, const FdGrid& grid,
                                        const std::vector<double>& knots, const CalibConfig& cfg,
                                        const std::vector<double>& sigma_init) {
    cfg.validate();
    if (targets.k.empty()) throw validation_error("calibrate_slice: no targets");
    if (!(targets.k.front() > grid.k_nodes.front() && targets.k.back() < grid.k_nodes.back()))
        throw validation_error("calibrate_slice: targets must be interior to the grid");

    const std::size_t q = knots.size();
    detail::SliceModel model{c_prev, knots, targets, dt, grid, cfg};

    // per-target vega in the normalized (forward) measure: converts the
    // IV-space fit tolerance into a price-space band per strike
    std::vector<double> fit_band(targets.k.size(), -1.0);
    if (cfg.fit_tol_iv > 0.0) {
        for (std::size_t j = 0; j < targets.k.size(); ++j) {
            try {
                const double iv = implied_vol(targets.c[j], 1.0, targets.k[j], targets.maturity);
                fit_band[j] = cfg.fit_tol_iv * vega({1.0, targets.k[j], targets.maturity, 0.0, 0.0, iv});
            } catch (const error&) {
                // target at the no-arbitrage band edge: never gates the stop
            }
        }
    }
    auto within_fit_band = [&](const Eigen::VectorXd& res) {
        if (cfg.fit_tol_iv <= 0.0) return false;
        for (std::size_t j = 0; j < targets.k.size(); ++j)
            if (fit_band[j] < 0.0 || std::abs(res(j)) > fit_band[j]) return false;
        return true;
    };

    std::vector<double> sigma = sigma_init;
    for (double& s : sigma) s = std::clamp(s, cfg.sigma_floor, cfg.sigma_cap);

    std::vector<double> c_cur;
    Eigen::VectorXd r = model.residuals(sigma, &c_cur);
    double sse = r.squaredNorm();

    bool fit_band_reached = within_fit_band(r);
    double lm = 1e-10;
    double nielsen = 2.0;
    int gn_failures = 0;
    int it = 0;
    for (it = 1; it <= cfg.max_iterations && !fit_band_reached; ++it) {
        // forward-difference Jacobian, columns independent
        Eigen::MatrixXd J(r.size(), q);
        for (std::size_t j = 0; j < q; ++j) {
            const double eps = 1e-6 * std::max(1.0, std::abs(sigma[j]));
            std::vector<double> sp = sigma;
            sp[j] = std::min(sp[j] + eps, cfg.sigma_cap);
            const double actual = sp[j] - sigma[j];
            if (actual <= 0.0) {
                sp[j] = sigma[j] - eps;
                const Eigen::VectorXd rj = model.residuals(sp, nullptr);
                J.col(j) = (r - rj) / eps;
            } else {
                const Eigen::VectorXd rj = model.residuals(sp, nullptr);
                J.col(j) = (rj - r) / actual;
            }
        }
        const Eigen::VectorXd grad = J.transpose() * r;
        const Eigen::MatrixXd JtJ = J.transpose() * J;

        // projected gradient: active bound components pointing outward drop out
        Eigen::VectorXd pg = grad;
        for (std::size_t j = 0; j < q; ++j) {
            if (sigma[j] <= cfg.sigma_floor && grad(j) > 0.0) pg(j) = 0.0;
            if (sigma[j] >= cfg.sigma_cap && grad(j) < 0.0) pg(j) = 0.0;
        }
        if (pg.lpNorm<Eigen::Infinity>() < cfg.grad_tol) break;

        // Marquardt scaling: damping proportional to each column's own scale,
        // so weakly-identified (low-vega) knots keep converging
        Eigen::VectorXd damp_scale = JtJ.diagonal();
        const double floor_scale = std::max(damp_scale.maxCoeff(), 1e-300) * 1e-12;
        for (Eigen::Index j = 0; j < damp_scale.size(); ++j)
            damp_scale(j) = std::max(damp_scale(j), floor_scale);

        // active-set reduction: variables pinned at a bound with an outward
        // gradient are frozen for this iteration, so the damped solve cannot
        // push free variables through corner kinks
        std::vector<std::size_t> free_idx;
        for (std::size_t j = 0; j < q; ++j)
            if (pg(j) != 0.0) free_idx.push_back(j);
        if (free_idx.empty()) break;
        const Eigen::Index nf = static_cast<Eigen::Index>(free_idx.size());
        Eigen::MatrixXd JtJ_f(nf, nf);
        Eigen::VectorXd grad_f(nf), scale_f(nf);
        for (Eigen::Index a = 0; a < nf; ++a) {
            grad_f(a) = grad(free_idx[a]);
            scale_f(a) = damp_scale(free_idx[a]);
            for (Eigen::Index b = 0; b < nf; ++b) JtJ_f(a, b) = JtJ(free_idx[a], free_idx[b]);
        }

        bool accepted = false;
        double step_norm = 0.0;
        for (int damp = 0; damp < 10; ++damp) {
            Eigen::MatrixXd H = JtJ_f;
            H.diagonal() += lm * scale_f;
            const Eigen::VectorXd delta_f = H.ldlt().solve(-grad_f);
            std::vector<double> cand = sigma;
            for (Eigen::Index a = 0; a < nf; ++a)
                cand[free_idx[a]] = std::clamp(sigma[free_idx[a]] + delta_f(a), cfg.sigma_floor,
                                               cfg.sigma_cap);
            std::vector<double> c_cand;
            const Eigen::VectorXd rc = model.residuals(cand, &c_cand);
            const double sse_c = rc.squaredNorm();
            if (sse_c < sse) {
                step_norm = 0.0;
                for (std::size_t j = 0; j < q; ++j)
                    step_norm = std::max(step_norm, std::abs(cand[j] - sigma[j]));
                sigma = std::move(cand);
                r = rc;
                sse = sse_c;
                c_cur = std::move(c_cand);
                lm = std::max(lm / 9.0, 1e-12);
                nielsen = 2.0;
                accepted = true;
                break;
            }
            lm *= nielsen;  // Nielsen escalation: reaches lm*2^55 within ten levels
            nielsen *= 2.0;
        }
        if (accepted) {
            if (within_fit_band(r)) break; // matched to IV tolerance everywhere
            if (lm <= 1e-6 && step_norm < cfg.step_tol) break; // undamped step negligible
        } else {
            // 10 damped levels without descent. At the floating-point floor
            // even the steepest-descent (Cauchy) prediction gains nothing
            // relative to the current objective; that is convergence. A large
            // predicted gain that cannot be realized is genuine stagnation.
            const double pg2 = pg.squaredNorm();
            const double curv = pg.dot(JtJ * pg);
            const double pred_cauchy = curv > 0.0 ? 0.5 * pg2 * pg2 / curv : 0.0;
            // realizable first-order gain along the projected gradient, probed
            // directly: kinks of the piecewise model make the quadratic
            // prediction unreliable, so trust a line probe before declaring
            // stagnation
            if (pred_cauchy <= 1e-8 * (sse + 1e-300)) break;
            bool line_descent = false;
            const double t0 = curv > 0.0 ? pg2 / curv : 1.0;
            for (double t = t0; t >= 1e-6 * t0; t *= 0.1) {
                std::vector<double> cand(q);
                for (std::size_t j = 0; j < q; ++j)
                    cand[j] = std::clamp(sigma[j] - t * pg(j), cfg.sigma_floor, cfg.sigma_cap);
                std::vector<double> c_cand;
                const Eigen::VectorXd rc = model.residuals(cand, &c_cand);
                if (rc.squaredNorm() < sse) {
                    sigma = std::move(cand);
                    r = rc;
                    sse = r.squaredNorm();
                    c_cur = std::move(c_cand);
                    line_descent = true;
                    break;
                }
            }
            if (!line_descent) break; // no realizable descent in any probed direction
            if (++gn_failures > 20)
                throw stagnation_error(
                    "calibrate_slice: objective non-decreasing for 10 damped steps and "
                    "gradient-descent rescues exhausted (gradient " +
                        std::to_string(grad.lpNorm<Eigen::Infinity>()) + ")",
                    sigma, sse);
        }
    }

    SliceCalibration out;
    out.sigma = std::move(sigma);
    out.c_next = std::move(c_cur);
    out.sse = sse;
    // rms over the fit residuals only (the first |targets| entries)
    double fit_ss = 0.0;
    for (std::size_t j = 0; j < targets.k.size(); ++j) fit_ss += r(j) * r(j);
    out.rms = std::sqrt(fit_ss / static_cast<double>(targets.k.size()));
    out.iterations = it;
    return out;
}

/// Algorithm: march forward in maturity from the normalized payoff, one
/// calibrate_slice per quoted interval. The first interval starts from a flat
/// guess at the ATM target vol; later intervals warm-start from the previous
/// solution.
inline SurfaceCalibration calibrate_surface_targets(const std::vector<SliceTargets>& targets,
                                                    const MarketSurface& market,
                                                    const CalibConfig& cfg) {
    cfg.validate();
    if (targets.empty()) throw validation_error("calibrate_surface: no maturities");
    std::vector<double> maturities;
    double max_k = 0.0;
    for (const auto& t : targets) {
        maturities.push_back(t.maturity);
        max_k = std::max(max_k, t.k.back());
    }
    // widen the grid at fixed node spacing when the quoted span demands it
    // (low spots push normalized strikes beyond the configured k_hi)
    CalibConfig eff = cfg;
    if (!(eff.k_hi > 1.5 * max_k)) {
        const double dk = (eff.k_hi - eff.k_lo) / (eff.node_count - 1);
        eff.k_hi = eff.k_lo + std::ceil((1.6 * max_k - eff.k_lo) / dk) * dk;
        eff.node_count = static_cast<int>(std::lround((eff.k_hi - eff.k_lo) / dk)) + 1;
    }
    const FdGrid grid = make_fd_grid(eff, maturities, max_k);

    SurfaceCalibration out;
    out.market = market;
    out.config = eff;
    out.prices.grid = grid;
    out.prices.values.push_back(payoff_slice(grid));
    out.lv.t_edges = grid.t_nodes;
    out.lv.sigma_floor = eff.sigma_floor;

    std::vector<double> knots = default_knots(eff, targets.front().k);
    out.lv.knots = knots;

    std::vector<double> sigma_prev;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double dt = grid.t_nodes[i + 1] - grid.t_nodes[i];
        std::vector<double> init;
        if (sigma_prev.empty()) {
            // pointwise implied-vol start: the target smile interpolated onto
            // the knots (a flat ATM start strands short-maturity wing knots in
            // a Gauss-Newton valley)
            const auto& t0 = targets[i];
            const double fwd = market.forward(t0.maturity);
            std::vector<double> kq, ivq;
            for (std::size_t j = 0; j < t0.k.size(); ++j) {
                try {
                    ivq.push_back(implied_vol(t0.c[j] * fwd, market.spot, t0.k[j] * fwd,
                                              t0.maturity, market.rate, market.dividend));
                    kq.push_back(t0.k[j]);
                } catch (const error&) {
                    // target at the band edge: skip, neighbors cover it
                }
            }
            init.resize(knots.size());
            for (std::size_t j = 0; j < knots.size(); ++j) {
                const double iv = kq.empty() ? 0.2 : interp_linear_flat(kq, ivq, knots[j]);
                init[j] = std::clamp(iv, eff.sigma_floor, eff.sigma_cap);
            }
        } else {
            init = sigma_prev;
        }
        try {
            SliceCalibration sc =
                calibrate_slice(out.prices.values.back(), targets[i], dt, grid, knots, eff, init);
            out.per_maturity_rms.push_back(sc.rms);
            out.prices.values.push_back(sc.c_next);
            out.lv.sigma.push_back(sc.sigma);
            sigma_prev = out.lv.sigma.back();
        } catch (const stagnation_error& e) {
            throw stagnation_error("calibrate_surface: maturity index " + std::to_string(i) +
                                       " (T=" + std::to_string(targets[i].maturity) + "): " +
                                       e.what(),
                                   e.best_sigma, e.best_objective);
        }
    }
    return out;
}

/// Proposed pipeline entry point (Stage 1 output in, surface out).
inline SurfaceCalibration calibrate_surface(const std::vector<SmoothedSlice>& smoothed,
                                            const MarketSurface& market, const CalibConfig& cfg) {
    return calibrate_surface_targets(smoothed_to_prices(smoothed, market), market, cfg);
}

/// Direct pipeline: raw quoted IVs straight into the FD inversion.
inline SurfaceCalibration calibrate_direct(const MarketSurface& market, const CalibConfig& cfg) {
    return calibrate_surface_targets(quotes_to_prices(market), market, cfg);
}

/// Regularized comparison baseline: direct pipeline with the curvature
/// penalty weight lambda. lambda = 0 reduces exactly to calibrate_direct.
inline SurfaceCalibration calibrate_regularized(const MarketSurface& market, double lambda,
                                                CalibConfig cfg) {
    if (!(lambda >= 0.0)) throw validation_error("calibrate_regularized: lambda must be >= 0");
    cfg.lambda = lambda;
    return calibrate_surface_targets(quotes_to_prices(market), market, cfg);
}

} // namespace lvsmooth
