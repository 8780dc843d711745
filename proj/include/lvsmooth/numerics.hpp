#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "lvsmooth/errors.hpp"

namespace lvsmooth {

inline double norm_pdf(double x) {
    static const double inv_sqrt_2pi = 0.3989422804014326779;
    return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) {
    // erfc-based, accurate to ~1e-16 over the full range
    static const double inv_sqrt2 = 0.7071067811865475244;
    return 0.5 * std::erfc(-x * inv_sqrt2);
}

/// Inverse of the standard normal CDF (Wichura's AS241, double precision).
inline double norm_ppf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw domain_error("norm_ppf: p must be in (0,1)");
    const double q = p - 0.5;
    double r;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        return q *
               (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                     67265.770927008700853) *
                        r +
                    45921.953931549871457) *
                       r +
                   13731.693765509461125) *
                      r +
                  1971.5909503065514427) *
                     r +
                 133.14166789178437745) *
                    r +
                3.387132872796366608) /
               (((((((5226.495278852545703 * r + 28729.085735721942674) * r +
                     39307.89580009271061) *
                        r +
                    21213.794301586595867) *
                       r +
                   5394.1960214247511077) *
                      r +
                  687.1870074920579083) *
                     r +
                 42.313330701600911252) *
                    r +
                1.0);
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                    0.24178072517745061177) *
                       r +
                   1.27045825245236838258) *
                      r +
                  3.64784832476320460504) *
                     r +
                 5.7694972214606914055) *
                    r +
                4.6303378461565452959) *
                   r +
               1.42343711074968357734) /
              (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                    0.0151986665636164571966) *
                       r +
                   0.14810397642748007459) *
                      r +
                  0.68976733498510000455) *
                     r +
                 1.6763848301838038494) *
                    r +
                2.05319162663775882187) *
                   r +
               1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    0.0012426609473880784386) *
                       r +
                   0.026532189526576123093) *
                      r +
                  0.29656057182850489123) *
                     r +
                 1.7848265399172913358) *
                    r +
                5.4637849111641143699) *
                   r +
               6.6579046435011037772) /
              (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                    1.8463183175100546818e-5) *
                       r +
                   7.868691311456132591e-4) *
                      r +
                  0.0148753612908506148525) *
                     r +
                 0.13692988092273580531) *
                    r +
                0.59983220655588793769) *
                   r +
               1.0);
    }
    return q < 0.0 ? -val : val;
}

/// Gauss-Legendre nodes and weights on [-1, 1]. Newton iteration on P_n.
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
    std::vector<double> x(n), w(n);
    const int m = (n + 1) / 2;
    for (int i = 0; i < m; ++i) {
        // Chebyshev-like initial guess for the i-th root
        double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (z * p0 - p1) / (z * z - 1.0);
            double z1 = z;
            z = z1 - p0 / pp;
            if (std::abs(z - z1) < 1e-15) break;
        }
        double p0 = 1.0, p1 = 0.0;
        for (int j = 0; j < n; ++j) {
            double p2 = p1;
            p1 = p0;
            p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
        }
        pp = n * (z * p0 - p1) / (z * z - 1.0);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    return {x, w};
}

/// Solve a tridiagonal system in place (Thomas algorithm).
/// lower/upper have size n-1; diag and rhs size n. No pivoting: intended for
/// diagonally dominant M-matrices.
inline std::vector<double> solve_tridiagonal(const std::vector<double>& lower,
                                             const std::vector<double>& diag,
                                             const std::vector<double>& upper,
                                             std::vector<double> rhs) {
    const std::size_t n = diag.size();
    std::vector<double> c(n - 1);
    c[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for (std::size_t i = 1; i < n; ++i) {
        const double m = 1.0 / (diag[i] - lower[i - 1] * c[i - 1]);
        if (i < n - 1) c[i] = upper[i] * m;
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) * m;
    }
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] -= c[i] * rhs[i + 1];
    return rhs;
}

/// Monotone piecewise-cubic interpolant (Fritsch-Carlson). Preserves the
/// monotonicity direction of the data on every segment; flat beyond the ends.
class PchipInterpolant {
  public:
    PchipInterpolant(std::vector<double> x, std::vector<double> y)
        : x_(std::move(x)), y_(std::move(y)) {
        const std::size_t n = x_.size();
        if (n < 2 || y_.size() != n) throw domain_error("pchip: need >= 2 matching points");
        slopes_.resize(n);
        std::vector<double> d(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double dx = x_[i + 1] - x_[i];
            if (!(dx > 0.0)) throw domain_error("pchip: x not strictly increasing");
            d[i] = (y_[i + 1] - y_[i]) / dx;
        }
        if (n == 2) {
            slopes_[0] = slopes_[1] = d[0];
        } else {
            slopes_[0] = edge_slope(x_[1] - x_[0], x_[2] - x_[1], d[0], d[1]);
            slopes_[n - 1] =
                edge_slope(x_[n - 1] - x_[n - 2], x_[n - 2] - x_[n - 3], d[n - 2], d[n - 3]);
            for (std::size_t i = 1; i + 1 < n; ++i) {
                if (d[i - 1] * d[i] <= 0.0) {
                    slopes_[i] = 0.0;
                } else {
                    const double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
                    const double w1 = 2.0 * h1 + h0, w2 = h1 + 2.0 * h0;
                    slopes_[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
                }
            }
        }
    }

    double operator()(double xq) const {
        const std::size_t n = x_.size();
        if (xq <= x_.front()) return y_.front();
        if (xq >= x_.back()) return y_.back();
        const auto it = std::upper_bound(x_.begin(), x_.end(), xq);
        const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
        const double h = x_[i + 1] - x_[i];
        const double t = (xq - x_[i]) / h;
        const double t2 = t * t, t3 = t2 * t;
        const double h00 = 2 * t3 - 3 * t2 + 1, h10 = t3 - 2 * t2 + t;
        const double h01 = -2 * t3 + 3 * t2, h11 = t3 - t2;
        return h00 * y_[i] + h10 * h * slopes_[i] + h01 * y_[i + 1] + h11 * h * slopes_[i + 1];
    }

  private:
    static double edge_slope(double h0, double h1, double d0, double d1) {
        // Shape-preserving three-point end slope
        double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if (s * d0 <= 0.0) return 0.0;
        if (d0 * d1 <= 0.0 && std::abs(s) > 3.0 * std::abs(d0)) return 3.0 * d0;
        return s;
    }

    std::vector<double> x_, y_, slopes_;
};

/// Linear interpolation with flat extrapolation beyond the end knots.
inline double interp_linear_flat(const std::vector<double>& x, const std::vector<double>& y,
                                 double xq) {
    if (xq <= x.front()) return y.front();
    if (xq >= x.back()) return y.back();
    const auto it = std::upper_bound(x.begin(), x.end(), xq);
    const std::size_t i = static_cast<std::size_t>(it - x.begin()) - 1;
    const double t = (xq - x[i]) / (x[i + 1] - x[i]);
    return y[i] + t * (y[i + 1] - y[i]);
}

inline double total_variation(const std::vector<double>& v) {
    double tv = 0.0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) tv += std::abs(v[i + 1] - v[i]);
    return tv;
}

} // namespace lvsmooth
