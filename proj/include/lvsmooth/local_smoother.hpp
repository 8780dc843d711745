#pragma once

// Stage 1: automatic local polynomial regression for one maturity slice.
// Order and bandwidth are selected per evaluation strike by alternating a
// finite-sample ACMSE order selector with a closed-form asymptotically optimal
// bandwidth, iterated to convergence from a cross-validated pilot fit.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lvsmooth/errors.hpp"
#include "lvsmooth/kernels.hpp"
#include "lvsmooth/local_fit.hpp"
#include "lvsmooth/market_data.hpp"

namespace lvsmooth {

enum class VarianceMode { homoscedastic, heteroscedastic };

struct SmootherConfig {
    Kernel kernel{KernelFamily::epanechnikov};
    std::vector<int> candidate_orders{1, 2, 3};
    int pilot_order = 5;
    VarianceMode variance_mode = VarianceMode::heteroscedastic;
    int max_iterations = 20;
    double stop_tol_scale = 1e-10; ///< epsilon = scale * slice IV variance
    int bandwidth_retries = 3;     ///< doublings of h after rank failures
    int cv_grid_size = 12;

    void validate() const {
        if (candidate_orders.empty()) throw validation_error("smoother: empty candidate order set");
        for (int p : candidate_orders)
            if (p < 1 || p > pilot_order - 2)
                throw validation_error("smoother: candidate orders must lie in {1,...,pilot_order-2}");
        if (max_iterations < 1) throw validation_error("smoother: max_iterations must be >= 1");
    }
};

/// Pilot fit of order p_bar at bandwidth h_bar: per-strike coefficient
/// vectors, fitted values, residuals and the pseudo-Nadaraya-Watson noise
/// variance estimates consumed by the selectors.
struct PilotEstimate {
    int p_bar = 5;
    double h_bar = 0.0;
    std::vector<Eigen::VectorXd> alpha; ///< per data strike, orders 0..p_bar
    std::vector<double> fitted;         ///< pilot alpha_0 at each data strike
    std::vector<double> residuals;
    std::vector<double> tau2;           ///< per data strike (heteroscedastic) or size 1
    VarianceMode mode = VarianceMode::heteroscedastic;

    double tau2_at(std::size_t i) const { return tau2.size() == 1 ? tau2[0] : tau2[i]; }

    /// f^(j) estimate at data strike i from the pilot coefficients.
    double f_deriv(std::size_t i, int j) const {
        double f = 1.0;
        for (int q = 2; q <= j; ++q) f *= q;
        return f * alpha[i](j);
    }
};

/// Volume-weighted kernel density of the strike design, Silverman bandwidth
/// on the volume-expanded sample moments (closed form, the expansion is never
/// materialized). Zero volumes count as one trade so every quoted strike
/// contributes mass.
struct DesignDensity {
    double h_g = 0.0;
    double total_volume = 0.0;
    std::vector<double> strikes;
    std::vector<double> mass; ///< V_i / N_V
    Kernel kernel;

    double operator()(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < strikes.size(); ++i) s += mass[i] * kernel((x - strikes[i]) / h_g);
        return s / h_g;
    }
    double deriv(double x) const {
        double s = 0.0;
        for (std::size_t i = 0; i < strikes.size(); ++i)
            s += mass[i] * kernel.deriv((x - strikes[i]) / h_g);
        return s / (h_g * h_g);
    }
};

struct AcmseReport {
    int p = 0;
    double h = 0.0;
    double bias = 0.0;
    double variance = 0.0;
    double z = 0.0; ///< bias^2 + variance
};

struct BandwidthChoice {
    double h = 0.0;
    bool degenerate = false; ///< leading bias coefficient vanished; clamped to h_max
    double h_unclamped = 0.0;
};

/// Diagnostics retained per evaluation strike.
struct SmoothedPoint {
    double strike = 0.0;
    double iv_smoothed = 0.0;
    int p_star = 0;
    double h_star = 0.0;
    double z_star = 0.0;
    int iterations = 0;
    std::vector<double> z_sequence;
};

struct SmoothedSlice {
    double maturity = 0.0;
    std::vector<SmoothedPoint> points;
    double pilot_bandwidth = 0.0;
    double effective_n = 0.0;   ///< N_V when volumes are informative, else quote count
    bool volume_weighted = false;

    std::vector<double> strikes() const {
        std::vector<double> k(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) k[i] = points[i].strike;
        return k;
    }
    std::vector<double> ivs() const {
        std::vector<double> v(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) v[i] = points[i].iv_smoothed;
        return v;
    }
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double median_spacing(const std::vector<double>& strikes) {
    std::vector<double> d(strikes.size() - 1);
    for (std::size_t i = 0; i + 1 < strikes.size(); ++i) d[i] = strikes[i + 1] - strikes[i];
    return median(std::move(d));
}

/// Weighted quantile of the volume-expanded strike sample.
inline double weighted_quantile(const std::vector<double>& x, const std::vector<double>& w,
                                double q) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += w[i];
        if (acc >= q * total) return x[i];
    }
    return x.back();
}

} // namespace detail

/// Leave-one-out cross-validated pilot bandwidth (classical form: the order
/// p_bar local polynomial is refit centered at each left-out strike). Ties
/// break toward the larger bandwidth. Candidates where any leave-out fit is
/// rank-deficient are skipped; if all fail a selection_error lists them.
inline double pilot_bandwidth_cv(const SliceData& data, int p_bar,
                                 const std::vector<double>& candidates, const Kernel& kernel,
                                 std::vector<double>* scores_out = nullptr) {
    if (candidates.empty()) throw selection_error("pilot_bandwidth_cv: empty candidate grid");
    const std::size_t n = data.size();
    if (n < static_cast<std::size_t>(p_bar) + 2)
        throw rank_error("pilot_bandwidth_cv: need at least p_bar + 2 = " +
                         std::to_string(p_bar + 2) + " observations, have " + std::to_string(n));
    for (double h : candidates)
        if (!(h > 0.0)) throw domain_error("pilot_bandwidth_cv: bandwidths must be > 0");

    if (scores_out)
        scores_out->assign(candidates.size(), std::numeric_limits<double>::quiet_NaN());
    double best_h = 0.0;
    double best_cv = std::numeric_limits<double>::infinity();
    std::string failures;
    bool any_ok = false;
    std::vector<char> mask(n, 1);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const double h = candidates[c];
        double cv = 0.0;
        bool ok = true;
        for (std::size_t i = 0; i < n && ok; ++i) {
            mask[i] = 0;
            try {
                const LocalFit fit = local_fit(data, data.strikes[i], p_bar, h, kernel, &mask);
                const double e = data.values[i] - fit.alpha(0);
                cv += e * e;
            } catch (const error& e) {
                ok = false;
                failures += "h=" + std::to_string(h) + ": " + e.what() + "; ";
            }
            mask[i] = 1;
        }
        if (!ok) continue;
        cv /= static_cast<double>(n);
        if (scores_out) (*scores_out)[c] = cv;
        any_ok = true;
        if (cv < best_cv || (cv == best_cv && h > best_h)) {
            best_cv = cv;
            best_h = h;
        }
    }
    if (!any_ok)
        throw selection_error("pilot_bandwidth_cv: every candidate bandwidth failed: " + failures);
    return best_h;
}

/// Default geometric candidate grid from 4 median spacings up to the strike span.
inline std::vector<double> default_cv_grid(const SliceData& data, int count) {
    const double lo = 4.0 * detail::median_spacing(data.strikes);
    const double hi = data.strikes.back() - data.strikes.front();
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i)
        g[i] = lo * std::pow(hi / std::max(lo, 1e-300), static_cast<double>(i) / (count - 1));
    return g;
}

/// Pseudo-Nadaraya-Watson noise variance from pilot residuals.
/// Heteroscedastic: evaluated at every data strike. Homoscedastic: one scalar,
/// kernel-centered at the median quoted strike.
inline std::vector<double> estimate_variance(const SliceData& data,
                                             const std::vector<double>& residuals, double h,
                                             VarianceMode mode, const Kernel& kernel) {
    const std::size_t n = data.size();
    auto at = [&](double k) {
        double num = 0.0, den = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double w = kernel((data.strikes[j] - k) / h);
            num += w * residuals[j] * residuals[j];
            den += w;
        }
        if (!(den > 0.0))
            throw mass_error("estimate_variance: zero kernel mass at k=" + std::to_string(k) +
                             "; increase bandwidth");
        return num / den;
    };
    if (mode == VarianceMode::homoscedastic) return {at(detail::median(data.strikes))};
    std::vector<double> tau2(n);
    for (std::size_t i = 0; i < n; ++i) tau2[i] = at(data.strikes[i]);
    return tau2;
}

/// Build the volume-weighted design density. Requires >= 2 distinct strikes.
inline DesignDensity design_density(const SliceData& data, const Kernel& kernel) {
    const std::size_t n = data.size();
    if (n < 2) throw domain_error("design_density: need at least 2 distinct strikes");
    std::vector<double> vol(n, 1.0);
    if (!data.volumes.empty())
        for (std::size_t i = 0; i < n; ++i) vol[i] = data.volumes[i] > 0.0 ? data.volumes[i] : 1.0;
    const double total = std::accumulate(vol.begin(), vol.end(), 0.0);

    // volume-expanded sample moments in closed form; the rate factor uses the
    // quote count so that rescaling all volumes leaves g-hat pointwise fixed
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += vol[i] * data.strikes[i];
    mean /= total;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = data.strikes[i] - mean;
        var += vol[i] * d * d;
    }
    var /= total;
    const double sd = std::sqrt(var);
    const double iqr = detail::weighted_quantile(data.strikes, vol, 0.75) -
                       detail::weighted_quantile(data.strikes, vol, 0.25);
    const double spread = std::min(sd, iqr > 0.0 ? iqr / 1.34 : sd);
    const double h_g = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    if (!(h_g > 1e-3 * detail::median_spacing(data.strikes)))
        throw mass_error("design_density: degenerate density (volume mass concentrated at one strike)");

    DesignDensity g;
    g.h_g = h_g;
    g.total_volume = total;
    g.strikes = data.strikes;
    g.kernel = kernel;
    g.mass.resize(n);
    for (std::size_t i = 0; i < n; ++i) g.mass[i] = vol[i] / total;
    return g;
}

/// Finite-sample conditional ACMSE of the order-p intercept at strike k
/// (the order-selection form): bias = e1' Sn^-1 b with the pilot-coefficient
/// bias vector, variance = e1' Sn^-1 (X' Sigma X) Sn^-1 e1,
/// Sigma = diag(kappa_h^2 tau^2). Evaluated in h-scaled coordinates.
inline AcmseReport acmse(const SliceData& data, double k, int p, double h,
                         const PilotEstimate& pilot, const Kernel& kernel,
                         std::size_t eval_index) {
    if (pilot.p_bar < p + 2)
        throw domain_error("acmse: pilot order must be at least p + 2");
    const std::size_t n = data.size();

    std::vector<double> u(n), w(n);
    std::size_t live = 0;
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = (data.strikes[i] - k) / h;
        w[i] = kernel(u[i]) / h;
        if (w[i] > 0.0) ++live;
    }
    if (live < static_cast<std::size_t>(p + 1))
        throw rank_error("acmse at k=" + std::to_string(k) + ": only " + std::to_string(live) +
                         " points carry kernel weight; increase bandwidth");

    // scaled moments up to order p_bar + p (needed by the bias vector)
    const int max_pow = pilot.p_bar + p;
    std::vector<double> Sm(max_pow + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] <= 0.0) continue;
        double pw = w[i];
        for (int j = 0; j <= max_pow; ++j, pw *= u[i]) Sm[j] += pw;
    }

    Eigen::MatrixXd St(p + 1, p + 1);
    for (int j = 0; j <= p; ++j)
        for (int l = 0; l <= p; ++l) St(j, l) = Sm[j + l];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(St);
    const double emin = es.eigenvalues().minCoeff();
    const double emax = es.eigenvalues().maxCoeff();
    if (!(emin > 0.0) || emax / emin >= kConditionLimit)
        throw conditioning_error("acmse at k=" + std::to_string(k) +
                                 ": scaled moment matrix condition exceeds 1e12");

    // bias vector from the pilot coefficients: b_l = sum_m alpha_{p+m} S_{n,p+l+m},
    // expressed in scaled coordinates (alpha_{p+m} h^{p+m} multiplies scaled moments)
    const Eigen::VectorXd& pa = pilot.alpha[eval_index];
    Eigen::VectorXd bt = Eigen::VectorXd::Zero(p + 1);
    for (int l = 0; l <= p; ++l)
        for (int m = 1; m <= pilot.p_bar - p; ++m)
            bt(l) += pa(p + m) * std::pow(h, p + m) * Sm[p + l + m];

    // X' Sigma X in scaled coordinates, Sigma = diag(kappa_h^2 tau^2)
    Eigen::MatrixXd Mt = Eigen::MatrixXd::Zero(p + 1, p + 1);
    std::vector<double> pw(2 * p + 1);
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] <= 0.0) continue;
        pw[0] = w[i] * w[i] * pilot.tau2_at(i);
        for (int q = 1; q <= 2 * p; ++q) pw[q] = pw[q - 1] * u[i];
        for (int j = 0; j <= p; ++j)
            for (int l = j; l <= p; ++l) {
                Mt(j, l) += pw[j + l];
                if (l != j) Mt(l, j) += pw[j + l];
            }
    }

    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(p + 1);
    e1(0) = 1.0;
    const Eigen::VectorXd Sti_e1 = St.llt().solve(e1);

    AcmseReport r;
    r.p = p;
    r.h = h;
    r.bias = Sti_e1.dot(bt);
    r.variance = Sti_e1.dot(Mt * Sti_e1);
    if (r.variance < 0.0) r.variance = 0.0; // numerical floor; quadratic form is PSD
    r.z = r.bias * r.bias + r.variance;
    return r;
}

/// Asymptotic conditional ACMSE (Eqs (5)-(8) closed form) used by the
/// bandwidth selector. Odd p uses the c_p bias at rate h^{p+1}; even p uses
/// the c~_p bias at rate h^{p+2} with the density slope g'/g.
inline double acmse_asymptotic(const KernelConstants& kc, double h, double tau2_k, double f_p1,
                               double f_p2, double g_k, double gp_k, double n_eff) {
    const int p = kc.p;
    double bias;
    if (p % 2 == 1) {
        bias = std::sqrt(kc.C1) * std::abs(f_p1) * std::pow(h, p + 1);
    } else {
        double fac = 1.0;
        for (int i = 2; i <= p + 2; ++i) fac *= i;
        const double coeff = kc.e1_Sinv_ctilde / fac * (f_p2 + (p + 2) * f_p1 * gp_k / g_k);
        bias = std::abs(coeff) * std::pow(h, p + 2);
    }
    const double variance = kc.C2 * tau2_k / (n_eff * h * g_k);
    return bias * bias + variance;
}

/// Closed-form asymptotically optimal bandwidth for order p at strike k,
/// clamped to [h_min, h_max]. A vanishing leading bias coefficient (Assumption
/// 3 violated) returns h_max with the degeneracy flag set.
inline BandwidthChoice select_bandwidth(double tau2_k, double f_p1, double f_p2, double g_k,
                                        double gp_k, double n_eff, const KernelConstants& kc,
                                        double h_min, double h_max) {
    if (!(g_k > 0.0)) throw domain_error("select_bandwidth: design density must be positive");
    const int p = kc.p;
    BandwidthChoice out;
    double h_opt;
    if (p % 2 == 1) {
        if (f_p1 == 0.0) {
            out.h = h_max;
            out.h_unclamped = h_max;
            out.degenerate = true;
            return out;
        }
        h_opt = kc.C0p * std::pow(tau2_k / (f_p1 * f_p1 * g_k), 1.0 / (2.0 * p + 3.0)) *
                std::pow(n_eff, -1.0 / (2.0 * p + 3.0));
    } else {
        double fac = 1.0;
        for (int i = 2; i <= p + 2; ++i) fac *= i;
        const double B = kc.e1_Sinv_ctilde / fac * (f_p2 + (p + 2) * f_p1 * gp_k / g_k);
        if (B == 0.0) {
            out.h = h_max;
            out.h_unclamped = h_max;
            out.degenerate = true;
            return out;
        }
        h_opt = std::pow(kc.C2 / (2.0 * (p + 2)), 1.0 / (2.0 * p + 5.0)) *
                std::pow(tau2_k / (B * B * g_k), 1.0 / (2.0 * p + 5.0)) *
                std::pow(n_eff, -1.0 / (2.0 * p + 5.0));
    }
    out.h_unclamped = h_opt;
    out.h = std::clamp(h_opt, h_min, h_max);
    return out;
}

/// Order selector: argmin over the candidate set of the finite-sample ACMSE at
/// the current bandwidth; ties break toward the smaller order.
inline int select_order(const SliceData& data, double k, double h, const PilotEstimate& pilot,
                        const Kernel& kernel, const std::vector<int>& candidates,
                        std::size_t eval_index, std::map<int, AcmseReport>* reports = nullptr) {
    int best_p = -1;
    double best_z = std::numeric_limits<double>::infinity();
    std::string failures;
    for (int p : candidates) {
        try {
            const AcmseReport r = acmse(data, k, p, h, pilot, kernel, eval_index);
            if (reports) (*reports)[p] = r;
            if (r.z < best_z || (r.z == best_z && p < best_p)) {
                best_z = r.z;
                best_p = p;
            }
        } catch (const error& e) {
            failures += "p=" + std::to_string(p) + ": " + e.what() + "; ";
        }
    }
    if (best_p < 0)
        throw selection_error("select_order at k=" + std::to_string(k) +
                              ": all candidates failed: " + failures);
    return best_p;
}

namespace detail {

struct SmootherWorkspace {
    PilotEstimate pilot;
    DesignDensity density;
    std::vector<KernelConstants> constants; ///< indexed by order
    double h_min = 0.0;
    double h_max = 0.0;
    double n_eff = 0.0;
    bool volume_weighted = false;
    double stop_eps = 0.0;
};

inline SmootherWorkspace prepare_workspace(const SliceData& data, const SmootherConfig& cfg) {
    cfg.validate();
    const std::size_t n = data.size();
    if (n < static_cast<std::size_t>(cfg.pilot_order) + 2)
        throw rank_error("smoother: slice has " + std::to_string(n) +
                         " quotes, pilot requires >= " + std::to_string(cfg.pilot_order + 2));
    SmootherWorkspace ws;
    ws.pilot.p_bar = cfg.pilot_order;
    ws.pilot.mode = cfg.variance_mode;
    ws.pilot.h_bar = pilot_bandwidth_cv(data, cfg.pilot_order, default_cv_grid(data, cfg.cv_grid_size),
                                        cfg.kernel);

    ws.pilot.alpha.resize(n);
    ws.pilot.fitted.resize(n);
    ws.pilot.residuals.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const LocalFit fit = local_fit(data, data.strikes[i], cfg.pilot_order, ws.pilot.h_bar, cfg.kernel);
        ws.pilot.alpha[i] = fit.alpha;
        ws.pilot.fitted[i] = fit.alpha(0);
        ws.pilot.residuals[i] = data.values[i] - fit.alpha(0);
    }
    ws.pilot.tau2 = estimate_variance(data, ws.pilot.residuals, ws.pilot.h_bar, cfg.variance_mode,
                                      cfg.kernel);
    for (double t : ws.pilot.tau2)
        if (!(t >= 0.0)) throw error("smoother: negative variance estimate");

    ws.density = design_density(data, cfg.kernel);

    int max_order = 1;
    for (int p : cfg.candidate_orders) max_order = std::max(max_order, p);
    ws.constants.resize(max_order + 1);
    for (int p : cfg.candidate_orders) ws.constants[p] = kernel_constants(cfg.kernel, p);

    ws.h_min = 2.0 * median_spacing(data.strikes);
    ws.h_max = data.strikes.back() - data.strikes.front();

    bool informative = false;
    if (!data.volumes.empty())
        for (double v : data.volumes)
            if (v != 1.0 && v > 0.0) informative = true;
    ws.volume_weighted = informative;
    ws.n_eff = informative ? ws.density.total_volume : static_cast<double>(n);

    double mean = 0.0, var = 0.0;
    for (double v : data.values) mean += v;
    mean /= static_cast<double>(n);
    for (double v : data.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    ws.stop_eps = cfg.stop_tol_scale * var + 1e-300;
    return ws;
}

} // namespace detail

/// Algorithm 1 at one evaluation strike: alternate the order selector and the
/// closed-form bandwidth from (p_0, h_0) = (min candidate, pilot h_bar) until
/// the recorded finite-sample Z stalls. The bandwidth proposal is accepted
/// only when it does not increase the recorded Z, which keeps the sequence
/// non-increasing under the finite-sample/asymptotic split. Rank failures at
/// the final fit retry with doubled bandwidth.
inline SmoothedPoint smooth_point(const SliceData& data, double k, const SmootherConfig& cfg,
                                  const detail::SmootherWorkspace& ws, std::size_t eval_index) {
    const PilotEstimate& pilot = ws.pilot;
    const double g_k = ws.density(k);
    const double gp_k = ws.density.deriv(k);
    const double tau2_k = pilot.tau2_at(eval_index);

    int p_cur = *std::min_element(cfg.candidate_orders.begin(), cfg.candidate_orders.end());
    double h_cur = std::clamp(pilot.h_bar, ws.h_min, ws.h_max);

    SmoothedPoint out;
    out.strike = k;

    std::map<int, AcmseReport> reports;
    double z_cur = acmse(data, k, p_cur, h_cur, pilot, cfg.kernel, eval_index).z;
    out.z_sequence.push_back(z_cur);

    int iterations = 0;
    for (int it = 1; it <= cfg.max_iterations; ++it) {
        iterations = it;
        reports.clear();
        const int p_new =
            select_order(data, k, h_cur, pilot, cfg.kernel, cfg.candidate_orders, eval_index, &reports);
        double z_new = reports.at(p_new).z;

        const BandwidthChoice bw =
            select_bandwidth(tau2_k, pilot.f_deriv(eval_index, p_new + 1),
                             pilot.f_deriv(eval_index, std::min(p_new + 2, pilot.p_bar)), g_k, gp_k,
                             ws.n_eff, ws.constants[p_new], ws.h_min, ws.h_max);
        double h_new = h_cur;
        try {
            const double z_prop = acmse(data, k, p_new, bw.h, pilot, cfg.kernel, eval_index).z;
            if (z_prop <= z_new) {
                h_new = bw.h;
                z_new = z_prop;
            }
        } catch (const error&) {
            // proposal infeasible at this design; keep current bandwidth
        }

        const double dz = std::abs(z_new - z_cur);
        p_cur = p_new;
        h_cur = h_new;
        z_cur = z_new;
        out.z_sequence.push_back(z_cur);
        if (dz <= ws.stop_eps) break;
    }

    // final fit with bandwidth escalation on rank/conditioning failures
    double h_fit = h_cur;
    for (int attempt = 0;; ++attempt) {
        try {
            const LocalFit fit = local_fit(data, k, p_cur, h_fit, cfg.kernel);
            out.iv_smoothed = fit.alpha(0);
            break;
        } catch (const rank_error& e) {
            if (attempt >= cfg.bandwidth_retries)
                throw error("smooth_point at k=" + std::to_string(k) +
                            ": fit failures persisted after bandwidth escalation: " + e.what());
            h_fit *= 2.0;
        } catch (const conditioning_error& e) {
            if (attempt >= cfg.bandwidth_retries)
                throw error("smooth_point at k=" + std::to_string(k) +
                            ": fit failures persisted after bandwidth escalation: " + e.what());
            h_fit *= 2.0;
        }
    }
    out.p_star = p_cur;
    out.h_star = h_cur;
    out.z_star = z_cur;
    out.iterations = iterations;
    return out;
}

/// Smooth a whole slice at its quoted strikes. Quotes are sorted internally
/// so the output is invariant to input order.
inline SmoothedSlice smooth_slice(const QuoteSlice& slice, const SmootherConfig& cfg) {
    QuoteSlice sorted = slice;
    std::sort(sorted.quotes.begin(), sorted.quotes.end(),
              [](const Quote& a, const Quote& b) { return a.strike < b.strike; });
    validate_slice(sorted);
    SliceData data{sorted.strikes(), sorted.mids(), sorted.volumes()};

    const auto ws = detail::prepare_workspace(data, cfg);
    SmoothedSlice out;
    out.maturity = slice.maturity;
    out.pilot_bandwidth = ws.pilot.h_bar;
    out.effective_n = ws.n_eff;
    out.volume_weighted = ws.volume_weighted;
    out.points.resize(data.size());

    std::string failures;
    for (std::size_t i = 0; i < data.size(); ++i) {
        try {
            out.points[i] = smooth_point(data, data.strikes[i], cfg, ws, i);
            if (!(out.points[i].iv_smoothed > 0.0))
                throw error("non-positive smoothed IV");
        } catch (const error& e) {
            failures += "strike " + std::to_string(data.strikes[i]) + ": " + e.what() + "; ";
        }
    }
    if (!failures.empty()) throw error("smooth_slice failed at: " + failures);
    return out;
}

/// Convenience: smoothed surface = per-slice smoothing, maturities independent.
inline std::vector<SmoothedSlice> smooth_surface(const MarketSurface& market,
                                                 const SmootherConfig& cfg) {
    std::vector<SmoothedSlice> out;
    out.reserve(market.slices.size());
    for (const auto& s : market.slices) out.push_back(smooth_slice(s, cfg));
    return out;
}

} // namespace lvsmooth
