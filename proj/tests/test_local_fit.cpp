#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "lvsmooth/local_fit.hpp"

using namespace lvsmooth;

namespace {

const Kernel kEpan{KernelFamily::epanechnikov};

SliceData poly_data(const std::vector<double>& coef, double lo, double hi, int n) {
    SliceData d;
    for (int i = 0; i < n; ++i) {
        const double x = lo + (hi - lo) * i / (n - 1);
        double y = 0.0, pw = 1.0;
        for (double c : coef) {
            y += c * pw;
            pw *= x;
        }
        d.strikes.push_back(x);
        d.values.push_back(y);
    }
    return d;
}

} // namespace

TEST_CASE("quadratic data is reproduced exactly at order 2") {
    const SliceData d = poly_data({0.3, -0.4, 0.9}, 0.5, 1.5, 25);
    for (double h : {0.2, 0.5, 1.0}) {
        const LocalFit fit = local_fit(d, 1.0, 2, h, kEpan);
        // centered representation: f(k + u) = sum alpha_j u^j
        const double f = 0.3 - 0.4 * 1.0 + 0.9 * 1.0;
        const double fp = -0.4 + 2 * 0.9 * 1.0;
        REQUIRE(fit.alpha(0) == Catch::Approx(f).margin(1e-10));
        REQUIRE(fit.alpha(1) == Catch::Approx(fp).margin(1e-10));
        REQUIRE(fit.alpha(2) == Catch::Approx(0.9).margin(1e-10));
    }
}

TEST_CASE("order zero reduces to the Nadaraya-Watson mean") {
    SliceData d;
    std::mt19937_64 eng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 15; ++i) {
        d.strikes.push_back(0.5 + 0.07 * i);
        d.values.push_back(0.1 + u(eng));
    }
    const double k = 1.0, h = 0.3;
    const LocalFit fit = local_fit(d, k, 0, h, kEpan);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double w = kEpan((d.strikes[i] - k) / h) / h;
        num += w * d.values[i];
        den += w;
    }
    REQUIRE(fit.alpha(0) == Catch::Approx(num / den).margin(1e-14));
}

TEST_CASE("odd data on a symmetric design has zero intercept") {
    SliceData d;
    for (int i = -7; i <= 7; ++i) {
        d.strikes.push_back(1.0 + 0.05 * i);
        d.values.push_back(0.3 * i * 0.05); // odd about k = 1
    }
    const LocalFit fit = local_fit(d, 1.0, 1, 0.3, kEpan);
    REQUIRE(std::abs(fit.alpha(0)) < 1e-14);
}

TEST_CASE("rank error when too few points carry weight") {
    const SliceData d = poly_data({0.2, 0.1}, 0.5, 1.5, 11); // spacing 0.1
    REQUIRE_THROWS_AS(local_fit(d, 1.0, 3, 0.12, kEpan), rank_error); // 3 live points, need 4
}

TEST_CASE("clustered design triggers the conditioning guard") {
    SliceData d;
    for (int i = 0; i < 9; ++i) {
        d.strikes.push_back(1.0 + 1e-9 * i); // distinct but nearly coincident
        d.values.push_back(0.2);
    }
    d.strikes.push_back(2.0);
    d.values.push_back(0.25);
    REQUIRE_THROWS_AS(local_fit(d, 1.0, 3, 0.5, kEpan), conditioning_error);
}

TEST_CASE("exactness for polynomial data of degree q <= p") {
    std::mt19937_64 eng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int q = rep % 4;
        std::vector<double> coef(q + 1);
        for (double& c : coef) c = u(eng);
        const SliceData d = poly_data(coef, 0.8, 1.2, 31);
        for (int p = q; p <= 4; ++p) {
            for (double h : {0.1, 0.25, 0.4}) {
                const LocalFit fit = local_fit(d, 1.0, p, h, kEpan);
                double expect = 0.0, pw = 1.0;
                for (double c : coef) {
                    expect += c * pw;
                    pw *= 1.0;
                }
                REQUIRE(fit.alpha(0) == Catch::Approx(expect).margin(1e-9));
            }
        }
    }
}

TEST_CASE("value_at evaluates the centered polynomial") {
    const SliceData d = poly_data({0.1, 0.5, -0.2}, 0.5, 1.5, 21);
    const LocalFit fit = local_fit(d, 1.0, 2, 0.4, kEpan);
    const double x = 1.07;
    REQUIRE(fit.value_at(x) == Catch::Approx(0.1 + 0.5 * x - 0.2 * x * x).margin(1e-10));
    REQUIRE(fit.derivative(1) == Catch::Approx(0.5 - 0.4 * 1.0).margin(1e-9));
    REQUIRE(fit.derivative(2) == Catch::Approx(-0.4).margin(1e-9));
}

TEST_CASE("raw moment matrix matches direct summation") {
    const SliceData d = poly_data({0.2, 0.3}, 0.5, 1.5, 17);
    const double k = 0.95, h = 0.35;
    const LocalFit fit = local_fit(d, k, 2, h, kEpan);
    for (int a = 0; a <= 2; ++a)
        for (int b = 0; b <= 2; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i)
                s += kEpan((d.strikes[i] - k) / h) / h * std::pow(d.strikes[i] - k, a + b);
            REQUIRE(fit.Sn(a, b) == Catch::Approx(s).margin(1e-12 * std::max(1.0, std::abs(s))));
        }
}

TEST_CASE("coefficients satisfy the weighted normal equations") {
    std::mt19937_64 eng(31);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SliceData d;
    for (int i = 0; i < 23; ++i) {
        d.strikes.push_back(0.5 + 0.045 * i);
        d.values.push_back(0.2 + 0.05 * u(eng));
    }
    for (int p : {1, 2, 3}) {
        const double k = 1.0, h = 0.4;
        const LocalFit fit = local_fit(d, k, p, h, kEpan);
        // residual of Sn alpha = X'W y, in the h-scaled basis
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p + 1);
        Eigen::MatrixXd St = Eigen::MatrixXd::Zero(p + 1, p + 1);
        Eigen::VectorXd alpha_scaled(p + 1);
        double scale = 0.0;
        for (int j = 0; j <= p; ++j) alpha_scaled(j) = fit.alpha(j) * std::pow(h, j);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double w = fit.weights[i];
            if (w <= 0.0) continue;
            const double ui = (d.strikes[i] - k) / h;
            for (int j = 0; j <= p; ++j) {
                rhs(j) += w * std::pow(ui, j) * d.values[i];
                for (int l = 0; l <= p; ++l) St(j, l) += w * std::pow(ui, j + l);
            }
            scale = std::max(scale, std::abs(w * d.values[i]));
        }
        const Eigen::VectorXd resid = St * alpha_scaled - rhs;
        REQUIRE(resid.lpNorm<Eigen::Infinity>() < 1e-10 * std::max(1.0, scale));
    }
}
