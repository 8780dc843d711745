#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lvsmooth/black_scholes.hpp"
#include "lvsmooth/dupire_fd.hpp"
#include "lvsmooth/synthetic_markets.hpp"

using namespace lvsmooth;

namespace {

const SviParams kPaperSvi{0.030358, 0.0503815, -0.1, 0.3, 0.048922};

MarketSurface flat_market(double vol, int n_strikes = 41) {
    MarketSurface m;
    m.spot = 1.0;
    QuoteSlice s;
    s.maturity = 1.0;
    for (int i = 0; i < n_strikes; ++i)
        s.quotes.push_back(Quote{0.5 + 1.0 * i / (n_strikes - 1), 1.0, vol, {}, {}, 1.0});
    m.slices.push_back(s);
    return m;
}

FdGrid default_grid() { return make_fd_grid(CalibConfig{}, {1.0}, 1.5); }

} // namespace

TEST_CASE("vanishing diffusion leaves the slice almost unchanged") {
    const FdGrid grid = default_grid();
    const auto c0 = payoff_slice(grid);
    std::vector<double> sigma(grid.k_nodes.size(), 1e-4);
    const double dt = 1e-3;
    const auto c1 = fd_step(c0, sigma, dt, grid);
    // O(dt sigma_floor^2) with the payoff-kink constant k^2/(2 dk)
    const double bound = dt * 1e-4 * 1e-4 * 9.0 / (2.0 * grid.dk()) + 1e-15;
    for (std::size_t i = 0; i < c0.size(); ++i) REQUIRE(std::abs(c1[i] - c0[i]) < bound);
    // halving dt halves the drift
    const auto c_half = fd_step(c0, sigma, dt / 2.0, grid);
    for (std::size_t i = 0; i < c0.size(); ++i)
        REQUIRE(std::abs(c_half[i] - c0[i]) <= std::abs(c1[i] - c0[i]) + 1e-15);
}

TEST_CASE("interval evolution with flat vol reproduces Black-Scholes") {
    const FdGrid grid = default_grid();
    std::vector<double> knots{0.0, 3.0};
    const auto c = evolve_interval(payoff_slice(grid), knots, {0.2, 0.2}, 1.0, grid, 64);
    double worst = 0.0;
    for (std::size_t i = 1; i + 1 < grid.k_nodes.size(); ++i) {
        const double k = grid.k_nodes[i];
        const double bs = k > 0.0 ? call_price({1.0, k, 1.0, 0.0, 0.0, 0.2}) : 1.0;
        worst = std::max(worst, std::abs(c[i] - bs));
    }
    REQUIRE(worst < 2e-4);
}

TEST_CASE("implicit step preserves convexity") {
    const FdGrid grid = default_grid();
    std::vector<double> sigma(grid.k_nodes.size());
    for (std::size_t i = 0; i < sigma.size(); ++i)
        sigma[i] = 0.15 + 0.3 * std::exp(-8.0 * (grid.k_nodes[i] - 1.0) * (grid.k_nodes[i] - 1.0));
    auto c = payoff_slice(grid);
    for (int s = 0; s < 32; ++s) {
        c = fd_step(c, sigma, 1.0 / 32.0, grid);
        for (std::size_t i = 1; i + 1 < c.size(); ++i)
            REQUIRE(c[i + 1] - 2.0 * c[i] + c[i - 1] >= -1e-10);
    }
}

TEST_CASE("inverse crime: targets from the forward operator are recovered") {
    const FdGrid grid = default_grid();
    // identifiable setup: knots inside the density bulk (wing knots carry
    // exponentially small sensitivity and cannot be pinned to 1e-6 in double)
    std::vector<double> knots;
    for (int j = 0; j < 9; ++j) knots.push_back(0.7 + 0.6 * j / 8.0);
    std::vector<double> sigma_true;
    for (int j = 0; j < 9; ++j) sigma_true.push_back(0.2 + 0.05 * std::sin(1.0 + j));
    const auto c_true = evolve_interval(payoff_slice(grid), knots, sigma_true, 1.0, grid, 64);
    const PchipInterpolant interp(grid.k_nodes, c_true);
    SliceTargets targets;
    targets.maturity = 1.0;
    for (int j = 0; j < 41; ++j) {
        const double k = 0.55 + 0.9 * j / 40.0;
        targets.k.push_back(k);
        targets.c.push_back(interp(k));
    }
    CalibConfig cfg;
    cfg.fit_tol_iv = 0.0; // exact-inversion study
    const auto res = calibrate_slice(payoff_slice(grid), targets, 1.0, grid, knots, cfg,
                                     std::vector<double>(9, 0.2));
    for (int j = 0; j < 9; ++j)
        REQUIRE(res.sigma[j] == Catch::Approx(sigma_true[j]).margin(1e-6));
}

TEST_CASE("starting at the answer converges immediately") {
    const FdGrid grid = default_grid();
    std::vector<double> knots{0.5, 0.75, 1.0, 1.25, 1.5};
    std::vector<double> sigma_true{0.25, 0.22, 0.2, 0.19, 0.21};
    const auto c_true = evolve_interval(payoff_slice(grid), knots, sigma_true, 1.0, grid, 64);
    const PchipInterpolant interp(grid.k_nodes, c_true);
    SliceTargets targets;
    targets.maturity = 1.0;
    for (double k = 0.5; k <= 1.5 + 1e-12; k += 0.05) {
        targets.k.push_back(k);
        targets.c.push_back(interp(k));
    }
    const auto res =
        calibrate_slice(payoff_slice(grid), targets, 1.0, grid, knots, CalibConfig{}, sigma_true);
    REQUIRE(res.iterations <= 2);
    REQUIRE(res.sse < 1e-20);
}

TEST_CASE("flat-vol surface round trip recovers sigma in the central band") {
    const MarketSurface market = flat_market(0.2);
    const SurfaceCalibration calib = calibrate_direct(market, CalibConfig{});
    REQUIRE(calib.lv.sigma.size() == 1);
    for (std::size_t j = 0; j < calib.lv.knots.size(); ++j) {
        if (calib.lv.knots[j] < 0.7 || calib.lv.knots[j] > 1.3) continue;
        REQUIRE(calib.lv.sigma[0][j] == Catch::Approx(0.2).margin(5e-3));
    }
}

TEST_CASE("grid refinement moves the flat-vol answer by less than 2e-3") {
    const MarketSurface market = flat_market(0.2);
    CalibConfig coarse;
    CalibConfig fine;
    fine.node_count = 801;
    const auto a = calibrate_direct(market, coarse);
    const auto b = calibrate_direct(market, fine);
    for (std::size_t j = 0; j < a.lv.knots.size(); ++j) {
        if (a.lv.knots[j] < 0.7 || a.lv.knots[j] > 1.3) continue;
        REQUIRE(std::abs(a.lv.sigma[0][j] - b.lv.sigma[0][j]) < 2e-3);
    }
}

TEST_CASE("SVI ideal data calibrates to a tame local vol curve") {
    MarketSurface market;
    market.spot = 1.0;
    std::vector<double> strikes;
    for (int i = 0; i < 101; ++i) strikes.push_back(0.5 + 0.01 * i);
    market.slices.push_back(make_svi_slice(kPaperSvi, strikes, 1.0, 1.0));
    const SurfaceCalibration calib = calibrate_direct(market, CalibConfig{});
    std::vector<double> band;
    for (std::size_t j = 0; j < calib.lv.knots.size(); ++j)
        if (calib.lv.knots[j] >= 0.7 && calib.lv.knots[j] <= 1.3)
            band.push_back(calib.lv.sigma[0][j]);
    REQUIRE(total_variation(band) < 1.0);
    REQUIRE(calib.prices.min_second_difference() >= -1e-10);
    REQUIRE(calib.prices.min_calendar_increment() >= -1e-10);
    REQUIRE(calib.prices.bound_violation() <= 1e-10);
    REQUIRE(calib.lv.min_sigma() >= calib.config.sigma_floor);
}

TEST_CASE("empty maturity list is rejected") {
    MarketSurface market = flat_market(0.2);
    REQUIRE_THROWS_AS(calibrate_surface_targets({}, market, CalibConfig{}), validation_error);
    REQUIRE_THROWS_AS(make_fd_grid(CalibConfig{}, {}, 1.5), validation_error);
}

TEST_CASE("grid invariants are validated") {
    CalibConfig cfg;
    cfg.k_hi = 2.0;
    REQUIRE_THROWS_AS(make_fd_grid(cfg, {1.0}, 1.5), validation_error); // k_hi <= 1.5 * max k
    CalibConfig few;
    few.node_count = 100;
    REQUIRE_THROWS_AS(few.validate(), validation_error);
}

TEST_CASE("regularized objective at lambda zero reduces to the direct path") {
    MarketSurface market;
    market.spot = 1.0;
    std::vector<double> strikes;
    for (int i = 0; i < 41; ++i) strikes.push_back(0.5 + 0.025 * i);
    market.slices.push_back(make_svi_slice(kPaperSvi, strikes, 1.0, 1.0, NoiseSpec{0.0, 0.001, 3}));
    const auto direct = calibrate_direct(market, CalibConfig{});
    const auto reg0 = calibrate_regularized(market, 0.0, CalibConfig{});
    REQUIRE(direct.lv.sigma == reg0.lv.sigma); // bit-identical path
}

TEST_CASE("huge lambda flattens curvature and degrades the fit by 10x") {
    MarketSurface market;
    market.spot = 1.0;
    std::vector<double> strikes;
    for (int i = 0; i < 41; ++i) strikes.push_back(0.5 + 0.025 * i);
    market.slices.push_back(make_svi_slice(kPaperSvi, strikes, 1.0, 1.0, NoiseSpec{0.0, 0.001, 3}));
    const auto base = calibrate_regularized(market, 0.0, CalibConfig{});
    const auto heavy = calibrate_regularized(market, 1e2, CalibConfig{});
    REQUIRE(heavy.per_maturity_rms[0] >= 10.0 * base.per_maturity_rms[0]);

    const auto targets = quotes_to_prices(market).front();
    auto curvature = [&](const SurfaceCalibration& c) {
        const PchipInterpolant interp(c.prices.grid.k_nodes, c.prices.values.back());
        double acc = 0.0;
        for (std::size_t j = 1; j + 1 < targets.k.size(); ++j) {
            const double d2 =
                interp(targets.k[j + 1]) - 2.0 * interp(targets.k[j]) + interp(targets.k[j - 1]);
            acc += d2 * d2;
        }
        return acc;
    };
    // curvature falls monotonically with lambda; in the limit it collapses
    // (the sigma floor keeps a remnant at moderate lambda via the payoff kink)
    REQUIRE(curvature(heavy) < curvature(base));
    const auto limit = calibrate_regularized(market, 1e6, CalibConfig{});
    REQUIRE(curvature(limit) < 1e-3 * curvature(base));
    REQUIRE(limit.per_maturity_rms[0] > heavy.per_maturity_rms[0]);
}

TEST_CASE("smoothed_to_prices produces normalized interior targets") {
    MarketSurface market = flat_market(0.2);
    market.rate = 0.03;
    market.dividend = 0.01;
    SmoothedSlice sm;
    sm.maturity = 1.0;
    for (const auto& q : market.slices[0].quotes)
        sm.points.push_back(SmoothedPoint{q.strike, q.iv_mid, 1, 0.1, 0.0, 1, {}});
    const auto targets = smoothed_to_prices({sm}, market);
    REQUIRE(targets.size() == 1);
    const double fwd = market.forward(1.0);
    for (std::size_t j = 0; j < targets[0].k.size(); ++j) {
        const double K = market.slices[0].quotes[j].strike;
        REQUIRE(targets[0].k[j] == Catch::Approx(K / fwd));
        const double c = call_price({market.spot, K, 1.0, market.rate, market.dividend, 0.2});
        REQUIRE(targets[0].c[j] == Catch::Approx(c / fwd));
    }
    // flat smoothed IV of 0.2 at K = F: the classic normalized ATM value
    SmoothedSlice atm;
    atm.maturity = 1.0;
    MarketSurface simple = flat_market(0.2);
    const auto t2 = smoothed_to_prices(
        [&] {
            SmoothedSlice s;
            s.maturity = 1.0;
            for (const auto& q : simple.slices[0].quotes)
                s.points.push_back(SmoothedPoint{q.strike, 0.2, 1, 0.1, 0.0, 1, {}});
            return std::vector<SmoothedSlice>{s};
        }(),
        simple);
    for (std::size_t j = 0; j < t2[0].k.size(); ++j)
        if (std::abs(t2[0].k[j] - 1.0) < 1e-12)
            REQUIRE(t2[0].c[j] == Catch::Approx(0.079655674554057963).margin(1e-12));
}

TEST_CASE("two-maturity surfaces keep calendar monotonicity") {
    MarketSurface market;
    market.spot = 1.0;
    for (double T : {0.5, 1.0}) {
        QuoteSlice s;
        s.maturity = T;
        for (int i = 0; i < 41; ++i) {
            const double K = 0.5 + 0.025 * i;
            s.quotes.push_back(
                Quote{K, T, svi_iv(kPaperSvi, std::log(K), T) , {}, {}, 1.0});
        }
        market.slices.push_back(s);
    }
    const SurfaceCalibration calib = calibrate_direct(market, CalibConfig{});
    REQUIRE(calib.lv.sigma.size() == 2);
    REQUIRE(calib.prices.min_calendar_increment() >= -1e-10);
    REQUIRE(calib.prices.min_second_difference() >= -1e-10);
}
