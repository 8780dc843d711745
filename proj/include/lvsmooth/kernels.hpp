#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lvsmooth/errors.hpp"
#include "lvsmooth/numerics.hpp"

namespace lvsmooth {

/// Symmetric densities on [-1, 1] satisfying the bounded-support assumption.
enum class KernelFamily { epanechnikov, quartic };

struct Kernel {
    KernelFamily family = KernelFamily::epanechnikov;

    double operator()(double u) const {
        const double a = std::abs(u);
        if (a >= 1.0) return 0.0;
        const double q = 1.0 - u * u;
        switch (family) {
            case KernelFamily::epanechnikov: return 0.75 * q;
            case KernelFamily::quartic: return 0.9375 * q * q;
        }
        return 0.0;
    }

    double deriv(double u) const {
        const double a = std::abs(u);
        if (a >= 1.0) return 0.0;
        switch (family) {
            case KernelFamily::epanechnikov: return -1.5 * u;
            case KernelFamily::quartic: return -3.75 * u * (1.0 - u * u);
        }
        return 0.0;
    }
};

inline Kernel kernel_from_name(const std::string& name) {
    if (name == "epanechnikov") return Kernel{KernelFamily::epanechnikov};
    if (name == "quartic") return Kernel{KernelFamily::quartic};
    throw validation_error("unknown kernel family '" + name + "'");
}

inline std::string kernel_name(const Kernel& k) {
    return k.family == KernelFamily::epanechnikov ? "epanechnikov" : "quartic";
}

/// Moment machinery for one (kernel, order) pair.
///
/// S      = (mu_{j+l})_{0<=j,l<=p}          mu_j = int u^j K(u) du
/// S_star = (nu_{j+l})_{0<=j,l<=p}          nu_j = int u^j K(u)^2 du
/// c_p    = (mu_{p+1}, ..., mu_{2p+1})'
/// c~_p   = (mu_{p+2}, ..., mu_{2p+2})'
/// C1     = (e1' S^-1 c_p / (p+1)!)^2
/// C2     = e1' S^-1 S_star S^-1 e1
/// C0p    = [C2 / (2 (p+1) C1)]^{1/(2p+3)}   (finite only for odd p; for even p
///          the leading odd-form bias vanishes by symmetry and C0p is +inf)
struct KernelConstants {
    int p = 0;
    Eigen::MatrixXd S;
    Eigen::MatrixXd S_star;
    Eigen::VectorXd c_p;
    Eigen::VectorXd c_tilde_p;
    double C1 = 0.0;
    double C2 = 0.0;
    double C0p = 0.0;
    double e1_Sinv_ctilde = 0.0; ///< e1' S^-1 c~_p, even-order bias coefficient
};

namespace detail {

inline double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

} // namespace detail

/// Compute kernel moment matrices and the C_{0,p} constant with 64-node
/// Gauss-Legendre quadrature (exact for these polynomial integrands).
inline KernelConstants kernel_constants(const Kernel& kernel, int p) {
    if (p < 1 || p > 5) throw domain_error("kernel_constants: p must be in {1,...,5}");
    static thread_local std::pair<std::vector<double>, std::vector<double>> gl = gauss_legendre(64);
    const auto& [nodes, weights] = gl;

    auto mu = [&](int j) {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            s += weights[i] * std::pow(nodes[i], j) * kernel(nodes[i]);
        return s;
    };
    auto nu = [&](int j) {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const double kv = kernel(nodes[i]);
            s += weights[i] * std::pow(nodes[i], j) * kv * kv;
        }
        return s;
    };

    KernelConstants kc;
    kc.p = p;
    kc.S.resize(p + 1, p + 1);
    kc.S_star.resize(p + 1, p + 1);
    for (int j = 0; j <= p; ++j)
        for (int l = 0; l <= p; ++l) {
            kc.S(j, l) = mu(j + l);
            kc.S_star(j, l) = nu(j + l);
        }
    kc.c_p.resize(p + 1);
    kc.c_tilde_p.resize(p + 1);
    for (int j = 0; j <= p; ++j) {
        kc.c_p(j) = mu(p + 1 + j);
        kc.c_tilde_p(j) = mu(p + 2 + j);
    }

    Eigen::LLT<Eigen::MatrixXd> llt(kc.S);
    if (llt.info() != Eigen::Success)
        throw error("kernel_constants: moment matrix not positive definite");
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(p + 1);
    e1(0) = 1.0;
    const Eigen::VectorXd Sinv_e1 = llt.solve(e1);
    kc.C1 = std::pow(Sinv_e1.dot(kc.c_p) / detail::factorial(p + 1), 2);
    kc.C2 = Sinv_e1.dot(kc.S_star * Sinv_e1);
    kc.e1_Sinv_ctilde = Sinv_e1.dot(kc.c_tilde_p);
    kc.C0p = std::pow(kc.C2 / (2.0 * (p + 1) * kc.C1), 1.0 / (2.0 * p + 3.0));
    return kc;
}

} // namespace lvsmooth
