#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>

#include "lvsmooth/black_scholes.hpp"
#include "lvsmooth/pricing_engine.hpp"
#include "lvsmooth/synthetic_markets.hpp"

using namespace lvsmooth;

namespace {

const SviParams kPaperSvi{0.030358, 0.0503815, -0.1, 0.3, 0.048922};

MarketSurface flat_market(double vol) {
    MarketSurface m;
    m.spot = 1.0;
    QuoteSlice s;
    s.maturity = 1.0;
    for (int i = 0; i < 41; ++i) s.quotes.push_back(Quote{0.5 + 0.025 * i, 1.0, vol, {}, {}, 1.0});
    m.slices.push_back(s);
    return m;
}

const SurfaceCalibration& flat_calibration() {
    static const SurfaceCalibration calib = calibrate_direct(flat_market(0.2), CalibConfig{});
    return calib;
}

/// Hand-built model with sigma identically zero (floor bypassed): paths are
/// deterministic forward drifts.
SurfaceCalibration zero_vol_model(double rate, double dividend) {
    SurfaceCalibration c;
    c.market.spot = 1.0;
    c.market.rate = rate;
    c.market.dividend = dividend;
    c.config = CalibConfig{};
    c.prices.grid = make_fd_grid(c.config, {1.0}, 1.5);
    c.prices.values.push_back(payoff_slice(c.prices.grid));
    c.prices.values.push_back(payoff_slice(c.prices.grid));
    c.lv.t_edges = {0.0, 1.0};
    c.lv.knots = {0.0, 3.0};
    c.lv.sigma = {{0.0, 0.0}};
    c.lv.sigma_floor = 0.0;
    return c;
}

} // namespace

TEST_CASE("european price off the flat calibration matches Black-Scholes") {
    const auto& calib = flat_calibration();
    REQUIRE(price_european(calib, 1.0, 1.0) ==
            Catch::Approx(call_price({1, 1, 1, 0, 0, 0.2})).margin(2e-4));
    // strike near the far grid boundary prices to ~zero
    REQUIRE(price_european(calib, 2.95, 1.0) < 1e-8);
}

TEST_CASE("maturity exactly on a t-node avoids re-stepping") {
    const auto& calib = flat_calibration();
    const PchipInterpolant interp(calib.prices.grid.k_nodes, calib.prices.values.back());
    REQUIRE(price_european(calib, 0.9, 1.0) == Catch::Approx(interp(0.9)).margin(1e-15));
}

TEST_CASE("intermediate maturities re-step with the interval vol") {
    const auto& calib = flat_calibration();
    for (double T : {0.3, 0.55, 0.8}) {
        const double p = price_european(calib, 1.0, T);
        REQUIRE(p == Catch::Approx(call_price({1, 1, T, 0, 0, 0.2})).margin(5e-4));
    }
}

TEST_CASE("domain errors outside the calibrated region") {
    const auto& calib = flat_calibration();
    REQUIRE_THROWS_AS(price_european(calib, 1.0, 1.5), domain_error); // beyond horizon
    REQUIRE_THROWS_AS(price_european(calib, 3.5, 1.0), domain_error); // beyond k_hi
    // a zero-vol model prices exactly at intrinsic: IV inversion loses its domain
    const auto flatline = zero_vol_model(0.0, 0.0);
    REQUIRE_THROWS_AS(model_iv(flatline, 0.9, 1.0), domain_error);
}

TEST_CASE("model iv round trips the flat surface") {
    const auto& calib = flat_calibration();
    for (double K = 0.7; K <= 1.3 + 1e-12; K += 0.05)
        REQUIRE(model_iv(calib, K, 1.0) == Catch::Approx(0.2).margin(1e-3));
}

TEST_CASE("ideal SVI calibration reproduces the generator curve") {
    MarketSurface market;
    market.spot = 1.0;
    std::vector<double> strikes;
    for (int i = 0; i < 101; ++i) strikes.push_back(0.5 + 0.01 * i);
    market.slices.push_back(make_svi_slice(kPaperSvi, strikes, 1.0, 1.0));
    const SurfaceCalibration calib = calibrate_direct(market, CalibConfig{});
    double worst = 0.0;
    for (const auto& q : market.slices[0].quotes) {
        const double miv = model_iv(calib, q.strike, 1.0);
        worst = std::max(worst, std::abs(miv - q.iv_mid));
    }
    REQUIRE(worst < 5e-3);
}

TEST_CASE("calibration error vanishes when the market equals the model") {
    const auto& calib = flat_calibration();
    MarketSurface model_market = flat_market(0.2);
    for (auto& q : model_market.slices[0].quotes) {
        q.iv_mid = model_iv(calib, q.strike, 1.0);
        q.iv_bid = q.iv_mid - 0.05;
        q.iv_ask = q.iv_mid + 0.05;
    }
    const FitReport rep = calibration_error(calib, model_market);
    REQUIRE(rep.buckets.size() == 3);
    for (const auto& b : rep.buckets) {
        REQUIRE(b.count > 0);
        REQUIRE(*b.mean_abs_rel_pct < 1e-10);
    }
    REQUIRE(rep.fail_ratio.has_value());
    REQUIRE(*rep.fail_ratio == 0.0);
}

TEST_CASE("empty buckets are reported absent") {
    const auto& calib = flat_calibration();
    MarketSurface market = flat_market(0.2);
    // drop every quote below moneyness 0.95
    auto& qs = market.slices[0].quotes;
    qs.erase(std::remove_if(qs.begin(), qs.end(),
                            [](const Quote& q) { return q.strike / 1.0 <= 0.95; }),
             qs.end());
    const FitReport rep = calibration_error(calib, market);
    REQUIRE_FALSE(rep.buckets[0].mean_abs_rel_pct.has_value());
    REQUIRE(rep.buckets[0].count == 0);
    REQUIRE_FALSE(rep.fail_ratio.has_value()); // no bid/ask quotes at all
}

TEST_CASE("zero-vol Asian collapses to drifted intrinsic") {
    const auto model = zero_vol_model(0.03, 0.01);
    AsianSpec spec{1.0, 1.0, 12};
    McConfig mc{64, 252, 9, true};
    const McResult res = price_asian_mc(model, spec, mc);
    double avg = 0.0;
    for (int i = 1; i <= 12; ++i) avg += std::exp((0.03 - 0.01) * (21.0 * i) / 252.0);
    avg /= 12.0;
    const double expect = std::exp(-0.03) * std::max(avg - 1.0, 0.0);
    REQUIRE(res.price == Catch::Approx(expect).margin(1e-14));
    REQUIRE(res.std_error == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("single-monitoring Asian equals the European") {
    const auto& calib = flat_calibration();
    AsianSpec spec{1.0, 1.0, 1};
    McConfig mc{1 << 16, 252, 1234, true};
    const McResult res = price_asian_mc(calib, spec, mc);
    const double eu = price_european(calib, 1.0, 1.0);
    REQUIRE(std::abs(res.price - eu) < 3.0 * res.std_error + 5e-4);
}

TEST_CASE("monthly Asian agrees with a high-path reference") {
    const auto& calib = flat_calibration();
    AsianSpec spec{1.0, 1.0, 12};
    const McResult coarse = price_asian_mc(calib, spec, McConfig{1 << 14, 252, 42, true});
    const McResult ref = price_asian_mc(calib, spec, McConfig{1 << 18, 252, 43, true});
    REQUIRE(std::abs(coarse.price - ref.price) <
            3.0 * std::sqrt(coarse.std_error * coarse.std_error + ref.std_error * ref.std_error));
}

TEST_CASE("asian price non-increasing in strike under common random numbers") {
    const auto& calib = flat_calibration();
    McConfig mc{1 << 13, 128, 7, true};
    double prev = 1e30;
    for (double K = 0.8; K <= 1.2 + 1e-12; K += 0.1) {
        const double p = price_asian_mc(calib, AsianSpec{K, 1.0, 12}, mc).price;
        REQUIRE(p <= prev + 1e-12);
        prev = p;
    }
}

TEST_CASE("european price non-increasing in strike") {
    const auto& calib = flat_calibration();
    double prev = 1e30;
    for (double K = 0.6; K <= 1.6 + 1e-12; K += 0.05) {
        const double p = price_european(calib, K, 1.0);
        REQUIRE(p <= prev + 1e-12);
        prev = p;
    }
}

TEST_CASE("standard error shrinks like one over root paths") {
    const auto& calib = flat_calibration();
    AsianSpec spec{1.0, 1.0, 12};
    const McResult a = price_asian_mc(calib, spec, McConfig{1 << 13, 128, 5, true});
    const McResult b = price_asian_mc(calib, spec, McConfig{1 << 15, 128, 5, true});
    REQUIRE(a.std_error / b.std_error == Catch::Approx(2.0).epsilon(0.2));
}

TEST_CASE("monte carlo is deterministic and worker-count independent") {
    const auto& calib = flat_calibration();
    AsianSpec spec{1.0, 1.0, 12};
    McConfig mc{1 << 12, 64, 21, true};
    const double p1 = price_asian_mc(calib, spec, mc).price;
    const double p2 = price_asian_mc(calib, spec, mc).price;
    REQUIRE(p1 == p2);
    setenv("LVSMOOTH_THREADS", "1", 1);
    const double serial = price_asian_mc(calib, spec, mc).price;
    setenv("LVSMOOTH_THREADS", "5", 1);
    const double parallel = price_asian_mc(calib, spec, mc).price;
    unsetenv("LVSMOOTH_THREADS");
    REQUIRE(serial == parallel);
    REQUIRE(serial == p1);
}

TEST_CASE("monitoring beyond the calibrated horizon is rejected") {
    const auto& calib = flat_calibration();
    REQUIRE_THROWS_AS(price_asian_mc(calib, AsianSpec{1.0, 1.4, 12}, McConfig{64, 64, 1, true}),
                      domain_error);
}

TEST_CASE("mc config validation") {
    McConfig bad;
    bad.paths = 1;
    REQUIRE_THROWS_AS(bad.validate(), validation_error);
    McConfig odd;
    odd.paths = 7;
    odd.antithetic = true;
    REQUIRE_THROWS_AS(odd.validate(), validation_error);
    AsianSpec spec;
    spec.monitoring_count = 0;
    REQUIRE_THROWS_AS(spec.validate(), validation_error);
}
