#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lvsmooth/errors.hpp"
#include "lvsmooth/kernels.hpp"

namespace lvsmooth {

/// Paired (strike, value) sequence for one maturity, strikes increasing.
struct SliceData {
    std::vector<double> strikes;
    std::vector<double> values;
    std::vector<double> volumes; ///< may be empty (treated as all ones)

    std::size_t size() const { return strikes.size(); }
};

/// Result of one weighted local polynomial fit centered at an evaluation
/// strike. The scaled moment matrix and weights are retained so ACMSE
/// evaluation can reuse the design.
struct LocalFit {
    double center = 0.0;
    double bandwidth = 0.0;
    int order = 0;
    Eigen::VectorXd alpha;       ///< alpha_j = f^(j)(center) / j!
    Eigen::MatrixXd Sn;          ///< X' W X in raw (unscaled) coordinates
    std::vector<double> weights; ///< kappa_h(K_i - center), all observations
    double condition = 0.0;      ///< condition estimate of the h-scaled moment matrix

    double value_at(double x) const {
        double acc = 0.0, pw = 1.0;
        for (int j = 0; j < alpha.size(); ++j, pw *= (x - center)) acc += alpha(j) * pw;
        return acc;
    }
    double derivative(int j) const {
        double f = 1.0;
        for (int i = 2; i <= j; ++i) f *= i;
        return f * alpha(j);
    }
};

inline constexpr double kConditionLimit = 1e12;

/// Weighted least squares of order p centered at k with kernel weights
/// kappa((K_i - k)/h)/h. Solved by Householder QR on the h-scaled design;
/// exact for data in the model class.
///
/// Throws rank_error when fewer than p+1 points carry weight (increase the
/// bandwidth), conditioning_error when the scaled moment matrix has condition
/// estimate above 1e12.
inline LocalFit local_fit(const SliceData& data, double k, int p, double h, const Kernel& kernel,
                          const std::vector<char>* mask = nullptr) {
    if (!(h > 0.0)) throw domain_error("local_fit: bandwidth must be > 0");
    if (p < 0) throw domain_error("local_fit: order must be >= 0");
    const std::size_t n = data.size();

    std::vector<double> u, w;
    std::vector<std::size_t> idx;
    u.reserve(n);
    w.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask && !(*mask)[i]) continue;
        const double ui = (data.strikes[i] - k) / h;
        const double wi = kernel(ui) / h;
        if (wi > 0.0) {
            u.push_back(ui);
            w.push_back(wi);
            idx.push_back(i);
        }
    }
    if (u.size() < static_cast<std::size_t>(p + 1))
        throw rank_error("local_fit at k=" + std::to_string(k) + ": only " +
                         std::to_string(u.size()) + " points carry kernel weight, need " +
                         std::to_string(p + 1) + "; increase bandwidth");

    const Eigen::Index m = static_cast<Eigen::Index>(u.size());
    Eigen::MatrixXd A(m, p + 1);
    Eigen::VectorXd b(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        const double sw = std::sqrt(w[i]);
        double pw = sw;
        for (int j = 0; j <= p; ++j, pw *= u[i]) A(i, j) = pw;
        b(i) = sw * data.values[idx[i]];
    }

    const Eigen::MatrixXd St = A.transpose() * A; // h-scaled moment matrix
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(St);
    const double emin = es.eigenvalues().minCoeff();
    const double emax = es.eigenvalues().maxCoeff();
    const double cond = (emin > 0.0) ? emax / emin : std::numeric_limits<double>::infinity();
    if (!(cond < kConditionLimit))
        throw conditioning_error("local_fit at k=" + std::to_string(k) +
                                 ": scaled moment matrix condition " + std::to_string(cond) +
                                 " exceeds 1e12");

    const Eigen::VectorXd alpha_scaled = A.householderQr().solve(b);

    LocalFit fit;
    fit.center = k;
    fit.bandwidth = h;
    fit.order = p;
    fit.condition = cond;
    fit.alpha.resize(p + 1);
    double hp = 1.0;
    for (int j = 0; j <= p; ++j, hp *= h) fit.alpha(j) = alpha_scaled(j) / hp;

    fit.weights.assign(n, 0.0);
    for (std::size_t i = 0; i < idx.size(); ++i) fit.weights[idx[i]] = w[i];

    fit.Sn.resize(p + 1, p + 1);
    for (int j = 0; j <= p; ++j)
        for (int l = j; l <= p; ++l) fit.Sn(j, l) = fit.Sn(l, j) = St(j, l) * std::pow(h, j + l);
    return fit;
}

} // namespace lvsmooth
