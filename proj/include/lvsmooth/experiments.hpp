#pragma once

// End-to-end experiment harness: builds the synthetic markets, runs the
// direct / smoothed / regularized pipelines, and emits every table and curve
// as CSV/JSON artifacts plus a checksummed manifest. The CLI is a thin shell
// over run() and compare().

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvsmooth/dupire_fd.hpp"
#include "lvsmooth/greeks.hpp"
#include "lvsmooth/local_smoother.hpp"
#include "lvsmooth/market_data.hpp"
#include "lvsmooth/pricing_engine.hpp"
#include "lvsmooth/synthetic_markets.hpp"
#include "lvsmooth/version.hpp"

namespace lvsmooth {

using nlohmann::json;

struct ExperimentConfig {
    std::string experiment;
    std::vector<std::uint64_t> seeds{11, 23};
    std::string output_dir = "out";

    double spot = 1.0;
    double rate = 0.0;
    double dividend = 0.0;

    SviParams svi{0.030358, 0.0503815, -0.1, 0.3, 0.048922};
    double svi_maturity = 1.0;
    double svi_strike_lo = 0.5;
    double svi_strike_hi = 1.5;
    int svi_strike_count = 101;
    NoiseSpec noise{0.0, 0.001, 11};

    WShapeConfig w_shape{};
    std::vector<double> lambdas{1e-6, 1e-5, 1e-4};

    SmootherConfig smoother{};
    CalibConfig calib{};
    McConfig mc{131072, 252, 777, true};

    EuropeanSpec greeks_european{1.0, 1.0};
    double greeks_eu_spot_lo = 0.5, greeks_eu_spot_hi = 1.5, greeks_eu_spot_step = 0.02;
    AsianSpec greeks_asian{1.0, 1.0, 12};
    double greeks_as_spot_lo = 0.8, greeks_as_spot_hi = 1.2, greeks_as_spot_step = 0.02;

    // acceptance thresholds checked by run(); exit status 1 when any fails
    double flat_vol = 0.2;
    double thr_flat_sigma = 5e-3;
    double thr_flat_bucket_pct = 0.05;
    double thr_bucket_pct_cap = 0.5;
    double thr_seed_stability = 0.05;
    double thr_gamma_tv_ratio = 0.5;
    double thr_w_fail_ratio = 0.02;
    double thr_regularized_rms_factor = 2.0;
    double stability_band_lo = 0.7;
    double stability_band_hi = 1.3;

    std::optional<std::string> external_csv; ///< licensed-data path for the W experiments

    json raw; ///< the parsed document, for hashing and the manifest
};

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{
        "svi_ideal",        "svi_noisy_direct", "svi_noisy_smoothed", "svi_seed_stability",
        "w_shape_direct",   "w_shape_regularized", "w_shape_smoothed", "greeks_european",
        "greeks_asian",     "flat_vol_roundtrip"};
    return names;
}

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

template <typename T, typename Fn>
inline void assign_if(const json& j, const char* key, T& out, Fn&& convert) {
    if (j.contains(key)) out = convert(j.at(key));
}

inline void assign_num(const json& j, const char* key, double& out) {
    assign_if(j, key, out, [](const json& v) { return v.get<double>(); });
}
inline void assign_int(const json& j, const char* key, int& out) {
    assign_if(j, key, out, [](const json& v) { return v.get<int>(); });
}

} // namespace detail

inline ExperimentConfig parse_config(const json& doc) {
    ExperimentConfig c;
    c.raw = doc;
    if (doc.contains("experiment")) c.experiment = doc.at("experiment").get<std::string>();
    if (doc.contains("seeds")) c.seeds = doc.at("seeds").get<std::vector<std::uint64_t>>();
    if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("market")) {
        const auto& m = doc.at("market");
        detail::assign_num(m, "spot", c.spot);
        detail::assign_num(m, "rate", c.rate);
        detail::assign_num(m, "dividend", c.dividend);
    }
    if (doc.contains("svi")) {
        const auto& s = doc.at("svi");
        detail::assign_num(s, "a", c.svi.a);
        detail::assign_num(s, "b", c.svi.b);
        detail::assign_num(s, "rho", c.svi.rho);
        detail::assign_num(s, "m", c.svi.m);
        detail::assign_num(s, "sigma", c.svi.sigma);
        detail::assign_num(s, "maturity", c.svi_maturity);
        detail::assign_num(s, "strike_lo", c.svi_strike_lo);
        detail::assign_num(s, "strike_hi", c.svi_strike_hi);
        detail::assign_int(s, "strike_count", c.svi_strike_count);
    }
    if (doc.contains("noise")) {
        const auto& n = doc.at("noise");
        detail::assign_num(n, "mean", c.noise.mean);
        detail::assign_num(n, "stddev", c.noise.stddev);
        detail::assign_if(n, "seed", c.noise.seed,
                          [](const json& v) { return v.get<std::uint64_t>(); });
    }
    if (doc.contains("w_shape")) {
        const auto& w = doc.at("w_shape");
        detail::assign_num(w, "spot", c.w_shape.spot);
        detail::assign_num(w, "maturity", c.w_shape.maturity);
        detail::assign_num(w, "base_vol", c.w_shape.base_vol);
        detail::assign_num(w, "quad_coeff", c.w_shape.quad_coeff);
        detail::assign_num(w, "bump_amp", c.w_shape.bump_amp);
        detail::assign_num(w, "bump_center_lo", c.w_shape.bump_center_lo);
        detail::assign_num(w, "bump_center_hi", c.w_shape.bump_center_hi);
        detail::assign_num(w, "bump_width", c.w_shape.bump_width);
        detail::assign_num(w, "spread_half", c.w_shape.spread_half);
        detail::assign_num(w, "strike_lo", c.w_shape.strike_lo);
        detail::assign_num(w, "strike_hi", c.w_shape.strike_hi);
        detail::assign_int(w, "strike_count", c.w_shape.strike_count);
    }
    if (doc.contains("lambdas")) c.lambdas = doc.at("lambdas").get<std::vector<double>>();
    if (doc.contains("smoother")) {
        const auto& s = doc.at("smoother");
        if (s.contains("kernel")) c.smoother.kernel = kernel_from_name(s.at("kernel").get<std::string>());
        if (s.contains("orders")) c.smoother.candidate_orders = s.at("orders").get<std::vector<int>>();
        detail::assign_int(s, "pilot_order", c.smoother.pilot_order);
        detail::assign_int(s, "max_iterations", c.smoother.max_iterations);
        detail::assign_int(s, "cv_grid_size", c.smoother.cv_grid_size);
        if (s.contains("variance_mode"))
            c.smoother.variance_mode = s.at("variance_mode").get<std::string>() == "homoscedastic"
                                           ? VarianceMode::homoscedastic
                                           : VarianceMode::heteroscedastic;
    }
    if (doc.contains("calib")) {
        const auto& k = doc.at("calib");
        detail::assign_num(k, "k_lo", c.calib.k_lo);
        detail::assign_num(k, "k_hi", c.calib.k_hi);
        detail::assign_int(k, "node_count", c.calib.node_count);
        detail::assign_int(k, "lv_knot_count", c.calib.lv_knot_count);
        detail::assign_num(k, "knot_extension", c.calib.knot_extension);
        detail::assign_num(k, "lv_knot_pitch", c.calib.lv_knot_pitch);
        detail::assign_num(k, "sigma_floor", c.calib.sigma_floor);
        detail::assign_num(k, "sigma_cap", c.calib.sigma_cap);
        detail::assign_int(k, "sub_steps", c.calib.sub_steps);
        detail::assign_int(k, "max_iterations", c.calib.max_iterations);
        detail::assign_num(k, "fit_tol_iv", c.calib.fit_tol_iv);
        detail::assign_num(k, "lambda", c.calib.lambda);
    }
    if (doc.contains("mc")) {
        const auto& m = doc.at("mc");
        detail::assign_if(m, "paths", c.mc.paths, [](const json& v) { return v.get<std::int64_t>(); });
        detail::assign_int(m, "steps_per_year", c.mc.steps_per_year);
        detail::assign_if(m, "seed", c.mc.seed, [](const json& v) { return v.get<std::uint64_t>(); });
        detail::assign_if(m, "antithetic", c.mc.antithetic,
                          [](const json& v) { return v.get<bool>(); });
    }
    if (doc.contains("greeks")) {
        const auto& g = doc.at("greeks");
        if (g.contains("european")) {
            const auto& e = g.at("european");
            detail::assign_num(e, "strike", c.greeks_european.strike);
            detail::assign_num(e, "maturity", c.greeks_european.maturity);
            detail::assign_num(e, "spot_lo", c.greeks_eu_spot_lo);
            detail::assign_num(e, "spot_hi", c.greeks_eu_spot_hi);
            detail::assign_num(e, "spot_step", c.greeks_eu_spot_step);
        }
        if (g.contains("asian")) {
            const auto& a = g.at("asian");
            detail::assign_num(a, "strike", c.greeks_asian.strike);
            detail::assign_num(a, "maturity", c.greeks_asian.maturity);
            detail::assign_int(a, "monitoring", c.greeks_asian.monitoring_count);
            detail::assign_num(a, "spot_lo", c.greeks_as_spot_lo);
            detail::assign_num(a, "spot_hi", c.greeks_as_spot_hi);
            detail::assign_num(a, "spot_step", c.greeks_as_spot_step);
        }
    }
    if (doc.contains("thresholds")) {
        const auto& t = doc.at("thresholds");
        detail::assign_num(t, "flat_sigma", c.thr_flat_sigma);
        detail::assign_num(t, "flat_bucket_pct", c.thr_flat_bucket_pct);
        detail::assign_num(t, "bucket_pct_cap", c.thr_bucket_pct_cap);
        detail::assign_num(t, "seed_stability", c.thr_seed_stability);
        detail::assign_num(t, "gamma_tv_ratio", c.thr_gamma_tv_ratio);
        detail::assign_num(t, "w_fail_ratio", c.thr_w_fail_ratio);
        detail::assign_num(t, "regularized_rms_factor", c.thr_regularized_rms_factor);
        detail::assign_num(t, "stability_band_lo", c.stability_band_lo);
        detail::assign_num(t, "stability_band_hi", c.stability_band_hi);
    }
    if (doc.contains("flat_vol")) c.flat_vol = doc.at("flat_vol").get<double>();
    if (doc.contains("external_csv"))
        c.external_csv = doc.at("external_csv").get<std::string>();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw parse_error("config '" + path + "': " + e.what());
    }
    return parse_config(doc);
}

namespace detail {

/// Collects artifacts, checksums and threshold verdicts for one run.
class ArtifactWriter {
  public:
    ArtifactWriter(std::string dir, const ExperimentConfig& cfg) : dir_(std::move(dir)), cfg_(cfg) {
        std::filesystem::create_directories(dir_);
    }

    void write_csv(const std::string& name, const std::string& header,
                   const std::vector<std::vector<double>>& rows) {
        std::ostringstream os;
        os << header << "\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << fmt17(row[i]);
            os << "\n";
        }
        write_raw(name, os.str());
    }

    void write_json(const std::string& name, const json& j) { write_raw(name, j.dump(2) + "\n"); }

    void write_raw(const std::string& name, const std::string& content) {
        const std::string path = dir_ + "/" + name;
        std::ofstream out(path, std::ios::binary);
        if (!out) throw io_error("cannot open '" + path + "' for writing");
        out << content;
        if (!out) throw io_error("write failed for '" + path + "'");
        files_[name] = hex64(fnv1a64(content));
    }

    void check(const std::string& name, bool pass, double value, double threshold,
               const std::string& relation) {
        json c;
        c["name"] = name;
        c["value"] = value;
        c["threshold"] = threshold;
        c["relation"] = relation;
        c["pass"] = pass;
        checks_.push_back(c);
        all_pass_ = all_pass_ && pass;
    }

    bool all_pass() const { return all_pass_; }

    void finish(const std::string& experiment) {
        json manifest;
        manifest["experiment"] = experiment;
        manifest["version"] = kVersion;
        manifest["config_hash"] = hex64(fnv1a64(cfg_.raw.dump()));
        manifest["config"] = cfg_.raw;
        manifest["files"] = files_;
        manifest["checks"] = checks_;
        manifest["pass"] = all_pass_;
        write_json("manifest.json", manifest);
    }

    void write_error_manifest(const std::string& experiment, const std::string& what) {
        json manifest;
        manifest["experiment"] = experiment;
        manifest["version"] = kVersion;
        manifest["config_hash"] = hex64(fnv1a64(cfg_.raw.dump()));
        manifest["error"] = what;
        manifest["pass"] = false;
        write_json("manifest.json", manifest);
    }

  private:
    std::string dir_;
    const ExperimentConfig& cfg_;
    std::map<std::string, std::string> files_;
    json checks_ = json::array();
    bool all_pass_ = true;
};

inline std::vector<double> uniform_grid(double lo, double hi, int count) {
    std::vector<double> g(count);
    for (int i = 0; i < count; ++i) g[i] = lo + (hi - lo) * i / (count - 1);
    return g;
}

inline std::vector<double> step_grid(double lo, double hi, double step) {
    std::vector<double> g;
    for (int i = 0;; ++i) {
        const double x = lo + i * step;
        if (x > hi + 0.5 * step) break;
        g.push_back(x);
    }
    return g;
}

inline MarketSurface single_slice_market(const ExperimentConfig& cfg, QuoteSlice slice) {
    MarketSurface m;
    m.spot = cfg.spot;
    m.rate = cfg.rate;
    m.dividend = cfg.dividend;
    m.slices.push_back(std::move(slice));
    validate_surface(m);
    return m;
}

inline MarketSurface svi_market(const ExperimentConfig& cfg,
                                std::optional<std::uint64_t> seed = std::nullopt) {
    const auto strikes = uniform_grid(cfg.svi_strike_lo, cfg.svi_strike_hi, cfg.svi_strike_count);
    std::optional<NoiseSpec> noise;
    if (seed) noise = NoiseSpec{cfg.noise.mean, cfg.noise.stddev, *seed};
    return single_slice_market(
        cfg, make_svi_slice(cfg.svi, strikes, cfg.svi_maturity, cfg.spot, noise, cfg.rate,
                            cfg.dividend));
}

inline MarketSurface w_market(const ExperimentConfig& cfg) {
    if (cfg.external_csv) // licensed data path: same schema, same pipeline
        return load_surface(*cfg.external_csv, cfg.w_shape.spot, cfg.rate, cfg.dividend);
    WShapeConfig w = cfg.w_shape;
    w.spot = cfg.spot;
    MarketSurface m = single_slice_market(cfg, make_w_slice(w));
    return m;
}

inline json fit_report_json(const FitReport& rep) {
    json j;
    j["buckets"] = json::array();
    for (const auto& b : rep.buckets) {
        json bj;
        bj["moneyness_lo"] = std::isfinite(b.lo) ? json(b.lo) : json();
        bj["moneyness_hi"] = std::isfinite(b.hi) ? json(b.hi) : json();
        bj["count"] = b.count;
        if (b.mean_abs_rel_pct)
            bj["mean_abs_rel_iv_error_pct"] = *b.mean_abs_rel_pct;
        else
            bj["mean_abs_rel_iv_error_pct"] = json();
        j["buckets"].push_back(bj);
    }
    j["fail_ratio"] = rep.fail_ratio ? json(*rep.fail_ratio) : json();
    j["spread_quote_count"] = rep.spread_quote_count;
    return j;
}

inline void write_lv_csv(ArtifactWriter& w, const std::string& name, const LVSurface& lv) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < lv.sigma.size(); ++i)
        for (std::size_t j = 0; j < lv.knots.size(); ++j)
            rows.push_back({lv.t_edges[i], lv.t_edges[i + 1], lv.knots[j], lv.sigma[i][j]});
    w.write_csv(name, "t_lo,t_hi,k_knot,sigma", rows);
}

inline void write_price_grid_csv(ArtifactWriter& w, const std::string& name, const PriceGrid& pg) {
    std::vector<std::vector<double>> rows;
    for (std::size_t t = 0; t < pg.values.size(); ++t)
        for (std::size_t i = 0; i < pg.grid.k_nodes.size(); ++i)
            rows.push_back({pg.grid.t_nodes[t], pg.grid.k_nodes[i], pg.values[t][i]});
    w.write_csv(name, "t,k,c_norm", rows);
}

inline void write_smoothed_csv(ArtifactWriter& w, const std::string& name,
                               const SmoothedSlice& sm, const QuoteSlice& raw) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < sm.points.size(); ++i) {
        const auto& p = sm.points[i];
        rows.push_back({p.strike, raw.quotes[i].iv_mid, p.iv_smoothed,
                        static_cast<double>(p.p_star), p.h_star, p.z_star,
                        static_cast<double>(p.iterations)});
    }
    w.write_csv(name, "strike,iv_raw,iv_smoothed,p_star,h_star,z_star,iterations", rows);
}

/// Discrete d2C/dk2 of normalized target prices at quoted strikes (the
/// curves behind the paper's second-derivative figures).
inline void write_second_diff_csv(ArtifactWriter& w, const std::string& name,
                                  const SliceTargets& t) {
    std::vector<std::vector<double>> rows;
    for (std::size_t j = 1; j + 1 < t.k.size(); ++j) {
        const double dk = 0.5 * (t.k[j + 1] - t.k[j - 1]);
        rows.push_back({t.k[j], (t.c[j + 1] - 2.0 * t.c[j] + t.c[j - 1]) / (dk * dk)});
    }
    w.write_csv(name, "k,d2c_dk2", rows);
}

/// Same curve read off the calibrated model prices.
inline void write_model_second_diff_csv(ArtifactWriter& w, const std::string& name,
                                        const SurfaceCalibration& calib,
                                        const SliceTargets& t) {
    PchipInterpolant interp(calib.prices.grid.k_nodes, calib.prices.values.back());
    std::vector<std::vector<double>> rows;
    for (std::size_t j = 1; j + 1 < t.k.size(); ++j) {
        const double dk = 0.5 * (t.k[j + 1] - t.k[j - 1]);
        const double d2 =
            (interp(t.k[j + 1]) - 2.0 * interp(t.k[j]) + interp(t.k[j - 1])) / (dk * dk);
        rows.push_back({t.k[j], d2});
    }
    w.write_csv(name, "k,d2c_dk2", rows);
}

inline void write_profile_csv(ArtifactWriter& w, const std::string& name,
                              const GreeksProfile& p) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < p.spot_grid.size(); ++i)
        rows.push_back({p.spot_grid[i], p.value[i], p.delta[i], p.gamma[i]});
    w.write_csv(name, "spot,value,delta,gamma", rows);
}

inline double max_lv_diff_in_band(const LVSurface& a, const LVSurface& b, double lo, double hi) {
    double worst = 0.0;
    for (std::size_t j = 0; j < a.knots.size(); ++j) {
        if (a.knots[j] < lo || a.knots[j] > hi) continue;
        for (std::size_t i = 0; i < a.sigma.size(); ++i)
            worst = std::max(worst, std::abs(a.sigma[i][j] - b.sigma[i][j]));
    }
    return worst;
}

inline void arbitrage_checks(ArtifactWriter& w, const std::string& tag,
                             const SurfaceCalibration& calib) {
    w.check(tag + "_price_convexity", calib.prices.min_second_difference() >= -1e-10,
            calib.prices.min_second_difference(), -1e-10, ">=");
    w.check(tag + "_calendar_monotone", calib.prices.min_calendar_increment() >= -1e-10,
            calib.prices.min_calendar_increment(), -1e-10, ">=");
    w.check(tag + "_sigma_floor", calib.lv.min_sigma() >= calib.config.sigma_floor,
            calib.lv.min_sigma(), calib.config.sigma_floor, ">=");
}

} // namespace detail

/// Run one experiment; returns the process exit status (0 ok, 1 threshold
/// fail). Module errors propagate as exceptions; the CLI maps them to exit 3
/// after writing an error manifest.
inline int run_experiment(const ExperimentConfig& cfg) {
    using namespace detail;
    const std::string dir = cfg.output_dir;
    ArtifactWriter w(dir, cfg);
    try {
        if (cfg.experiment == "flat_vol_roundtrip") {
            const auto strikes = uniform_grid(0.5, 1.5, 41);
            QuoteSlice slice;
            slice.maturity = 1.0;
            for (double K : strikes)
                slice.quotes.push_back(Quote{K, 1.0, cfg.flat_vol, {}, {}, 1.0});
            const MarketSurface market = single_slice_market(cfg, slice);
            const SurfaceCalibration calib = calibrate_direct(market, cfg.calib);
            write_lv_csv(w, "lv_surface.csv", calib.lv);
            write_price_grid_csv(w, "price_grid.csv", calib.prices);
            const FitReport rep = calibration_error(calib, market);
            w.write_json("fit_report.json", fit_report_json(rep));
            double worst = 0.0;
            for (std::size_t j = 0; j < calib.lv.knots.size(); ++j)
                if (calib.lv.knots[j] >= cfg.stability_band_lo &&
                    calib.lv.knots[j] <= cfg.stability_band_hi)
                    worst = std::max(worst, std::abs(calib.lv.sigma[0][j] - cfg.flat_vol));
            w.check("flat_sigma_max_abs_dev", worst < cfg.thr_flat_sigma, worst, cfg.thr_flat_sigma,
                    "<");
            for (const auto& b : rep.buckets)
                if (b.mean_abs_rel_pct)
                    w.check("flat_bucket_pct", *b.mean_abs_rel_pct < cfg.thr_flat_bucket_pct,
                            *b.mean_abs_rel_pct, cfg.thr_flat_bucket_pct, "<");
            arbitrage_checks(w, "flat", calib);
        } else if (cfg.experiment == "svi_ideal" || cfg.experiment == "svi_noisy_direct") {
            const bool noisy = cfg.experiment == "svi_noisy_direct";
            const MarketSurface market =
                svi_market(cfg, noisy ? std::optional<std::uint64_t>(cfg.seeds.at(0)) : std::nullopt);
            const auto targets = quotes_to_prices(market);
            const SurfaceCalibration calib = calibrate_direct(market, cfg.calib);
            write_lv_csv(w, "lv_surface.csv", calib.lv);
            write_price_grid_csv(w, "price_grid.csv", calib.prices);
            write_second_diff_csv(w, "market_second_diff.csv", targets.front());
            write_model_second_diff_csv(w, "model_second_diff.csv", calib, targets.front());
            w.write_json("fit_report.json", fit_report_json(calibration_error(calib, market)));
            arbitrage_checks(w, "svi", calib);
        } else if (cfg.experiment == "svi_noisy_smoothed") {
            const MarketSurface market = svi_market(cfg, cfg.seeds.at(0));
            const auto smoothed = smooth_surface(market, cfg.smoother);
            const SurfaceCalibration calib = calibrate_surface(smoothed, market, cfg.calib);
            // the smoothed surface is the stage-2 input; errors are scored against it
            MarketSurface smoothed_market = market;
            for (std::size_t i = 0; i < smoothed.size(); ++i)
                for (std::size_t jq = 0; jq < smoothed[i].points.size(); ++jq)
                    smoothed_market.slices[i].quotes[jq].iv_mid = smoothed[i].points[jq].iv_smoothed;
            const SurfaceCalibration direct = calibrate_direct(market, cfg.calib);
            write_smoothed_csv(w, "smoothed_slice.csv", smoothed.front(), market.slices.front());
            write_lv_csv(w, "lv_surface.csv", calib.lv);
            write_lv_csv(w, "lv_surface_direct.csv", direct.lv);
            write_price_grid_csv(w, "price_grid.csv", calib.prices);
            write_second_diff_csv(w, "market_second_diff_noisy.csv",
                                  quotes_to_prices(market).front());
            write_second_diff_csv(w, "market_second_diff_smoothed.csv",
                                  smoothed_to_prices(smoothed, market).front());
            write_model_second_diff_csv(w, "model_second_diff.csv", calib,
                                        quotes_to_prices(market).front());
            const FitReport rep = calibration_error(calib, smoothed_market);
            const FitReport rep_direct = calibration_error(direct, market);
            w.write_json("fit_report.json", fit_report_json(rep));
            w.write_json("fit_report_direct.json", fit_report_json(rep_direct));
            for (std::size_t b = 0; b < rep.buckets.size(); ++b) {
                if (!rep.buckets[b].mean_abs_rel_pct) continue;
                w.check("smoothed_bucket_pct_cap", *rep.buckets[b].mean_abs_rel_pct < cfg.thr_bucket_pct_cap,
                        *rep.buckets[b].mean_abs_rel_pct, cfg.thr_bucket_pct_cap, "<");
                if (rep_direct.buckets[b].mean_abs_rel_pct)
                    w.check("smoothed_below_direct_bucket",
                            *rep.buckets[b].mean_abs_rel_pct < *rep_direct.buckets[b].mean_abs_rel_pct,
                            *rep.buckets[b].mean_abs_rel_pct, *rep_direct.buckets[b].mean_abs_rel_pct,
                            "<");
            }
            // every recorded ACMSE sequence non-increasing, terminated inside budget
            double worst_rise = 0.0;
            int worst_iters = 0;
            for (const auto& p : smoothed.front().points) {
                for (std::size_t i = 0; i + 1 < p.z_sequence.size(); ++i)
                    worst_rise = std::max(worst_rise, p.z_sequence[i + 1] - p.z_sequence[i]);
                worst_iters = std::max(worst_iters, p.iterations);
            }
            w.check("acmse_monotone_descent", worst_rise <= 0.0, worst_rise, 0.0, "<=");
            w.check("acmse_iterations", worst_iters <= cfg.smoother.max_iterations,
                    static_cast<double>(worst_iters),
                    static_cast<double>(cfg.smoother.max_iterations), "<=");
            arbitrage_checks(w, "svi_smoothed", calib);
        } else if (cfg.experiment == "svi_seed_stability") {
            if (cfg.seeds.size() < 2) throw validation_error("seed stability needs two seeds");
            std::vector<LVSurface> lv_sm, lv_direct;
            for (std::size_t s = 0; s < 2; ++s) {
                const MarketSurface market = svi_market(cfg, cfg.seeds[s]);
                const auto smoothed = smooth_surface(market, cfg.smoother);
                lv_sm.push_back(calibrate_surface(smoothed, market, cfg.calib).lv);
                lv_direct.push_back(calibrate_direct(market, cfg.calib).lv);
                write_lv_csv(w, "lv_smoothed_seed" + std::to_string(s) + ".csv", lv_sm.back());
                write_lv_csv(w, "lv_direct_seed" + std::to_string(s) + ".csv", lv_direct.back());
            }
            const double d_sm = max_lv_diff_in_band(lv_sm[0], lv_sm[1], cfg.stability_band_lo,
                                                    cfg.stability_band_hi);
            const double d_dir = max_lv_diff_in_band(lv_direct[0], lv_direct[1],
                                                     cfg.stability_band_lo, cfg.stability_band_hi);
            json metrics;
            metrics["smoothed_max_knot_diff"] = d_sm;
            metrics["direct_max_knot_diff"] = d_dir;
            metrics["band"] = {cfg.stability_band_lo, cfg.stability_band_hi};
            w.write_json("seed_stability.json", metrics);
            w.check("smoothed_seed_diff", d_sm < cfg.thr_seed_stability, d_sm,
                    cfg.thr_seed_stability, "<");
            w.check("direct_seed_diff_exceeds", d_dir > cfg.thr_seed_stability, d_dir,
                    cfg.thr_seed_stability, ">");
        } else if (cfg.experiment == "w_shape_direct" || cfg.experiment == "w_shape_smoothed") {
            const MarketSurface market = w_market(cfg);
            CalibConfig wcalib = cfg.calib;
            if (!(cfg.raw.contains("calib") && cfg.raw.at("calib").contains("lv_knot_pitch")))
                wcalib.lv_knot_pitch = 0.01; // short-dated double-bump smile needs the finer lattice
            SurfaceCalibration calib = [&] {
                if (cfg.experiment == "w_shape_direct") return calibrate_direct(market, wcalib);
                const auto smoothed = smooth_surface(market, cfg.smoother);
                write_smoothed_csv(w, "smoothed_slice.csv", smoothed.front(), market.slices.front());
                return calibrate_surface(smoothed, market, wcalib);
            }();
            write_lv_csv(w, "lv_surface.csv", calib.lv);
            write_price_grid_csv(w, "price_grid.csv", calib.prices);
            const FitReport rep = calibration_error(calib, market);
            w.write_json("fit_report.json", fit_report_json(rep));
            std::vector<std::vector<double>> iv_rows;
            for (const auto& q : market.slices.front().quotes)
                iv_rows.push_back({q.strike, q.iv_mid,
                                   model_iv(calib, q.strike, market.slices.front().maturity)});
            w.write_csv("model_iv.csv", "strike,market_iv,model_iv", iv_rows);
            if (cfg.experiment == "w_shape_smoothed" && rep.fail_ratio)
                w.check("w_fail_ratio", *rep.fail_ratio <= cfg.thr_w_fail_ratio, *rep.fail_ratio,
                        cfg.thr_w_fail_ratio, "<=");
            arbitrage_checks(w, "w_shape", calib);
        } else if (cfg.experiment == "w_shape_regularized") {
            const MarketSurface market = w_market(cfg);
            CalibConfig wcalib = cfg.calib;
            if (!(cfg.raw.contains("calib") && cfg.raw.at("calib").contains("lv_knot_pitch")))
                wcalib.lv_knot_pitch = 0.01;
            auto refit_rms = [&](const SurfaceCalibration& calib) {
                double ss = 0.0;
                std::size_t n = 0;
                for (const auto& q : market.slices.front().quotes) {
                    const double miv = model_iv(calib, q.strike, market.slices.front().maturity);
                    ss += (miv - q.iv_mid) * (miv - q.iv_mid);
                    ++n;
                }
                return std::sqrt(ss / static_cast<double>(n));
            };
            const SurfaceCalibration base = calibrate_regularized(market, 0.0, wcalib);
            const double rms0 = refit_rms(base);
            json metrics;
            metrics["lambda_0_rms"] = rms0;
            std::vector<double> rms_list;
            for (double lambda : cfg.lambdas) {
                const SurfaceCalibration calib = calibrate_regularized(market, lambda, wcalib);
                const double rms = refit_rms(calib);
                rms_list.push_back(rms);
                write_lv_csv(w, "lv_lambda_" + fmt17(lambda) + ".csv", calib.lv);
                metrics["rms"][fmt17(lambda)] = rms;
            }
            w.write_json("regularized_metrics.json", metrics);
            bool monotone = true;
            for (std::size_t i = 0; i + 1 < rms_list.size(); ++i)
                monotone = monotone && rms_list[i] <= rms_list[i + 1] * (1.0 + 1e-12);
            w.check("rms_nondecreasing_in_lambda", monotone, monotone ? 1.0 : 0.0, 1.0, "==");
            if (!rms_list.empty())
                w.check("rms_factor_at_max_lambda",
                        rms_list.back() >= cfg.thr_regularized_rms_factor * rms0, rms_list.back(),
                        cfg.thr_regularized_rms_factor * rms0, ">=");
        } else if (cfg.experiment == "greeks_european" || cfg.experiment == "greeks_asian") {
            const bool asian = cfg.experiment == "greeks_asian";
            const MarketSurface market = svi_market(cfg, cfg.seeds.at(0));
            const Instrument inst = asian ? Instrument(cfg.greeks_asian)
                                          : Instrument(cfg.greeks_european);
            const auto grid = asian
                                  ? step_grid(cfg.greeks_as_spot_lo, cfg.greeks_as_spot_hi,
                                              cfg.greeks_as_spot_step)
                                  : step_grid(cfg.greeks_eu_spot_lo, cfg.greeks_eu_spot_hi,
                                              cfg.greeks_eu_spot_step);
            const GreeksProfile direct =
                greeks_profile(market, inst, grid, Pipeline::direct, cfg.smoother, cfg.calib, cfg.mc);
            const GreeksProfile smoothed = greeks_profile(market, inst, grid, Pipeline::smoothed,
                                                          cfg.smoother, cfg.calib, cfg.mc);
            write_profile_csv(w, "profile_direct.csv", direct);
            write_profile_csv(w, "profile_smoothed.csv", smoothed);
            const StabilityMetric sm = stability_metric(smoothed, direct);
            json metrics;
            metrics["tv_ratio_delta"] = sm.tv_ratio_delta;
            metrics["tv_ratio_gamma"] = sm.tv_ratio_gamma;
            if (asian) {
                // MC standard error at the central spot, both pipelines
                const auto sm_slices = smooth_surface(market, cfg.smoother);
                const McResult r_dir =
                    price_asian_mc(calibrate_direct(market, cfg.calib), cfg.greeks_asian, cfg.mc);
                const McResult r_sm = price_asian_mc(
                    calibrate_surface(sm_slices, market, cfg.calib), cfg.greeks_asian, cfg.mc);
                metrics["mc"] = {{"direct", {{"price", r_dir.price}, {"std_error", r_dir.std_error}}},
                                 {"smoothed", {{"price", r_sm.price}, {"std_error", r_sm.std_error}}}};
            }
            w.write_json("stability_metrics.json", metrics);
            if (asian) {
                w.check("asian_delta_tv_ratio", sm.tv_ratio_delta < 1.0, sm.tv_ratio_delta, 1.0, "<");
                w.check("asian_gamma_tv_ratio", sm.tv_ratio_gamma < 1.0, sm.tv_ratio_gamma, 1.0, "<");
            } else {
                w.check("gamma_tv_ratio", sm.tv_ratio_gamma <= cfg.thr_gamma_tv_ratio,
                        sm.tv_ratio_gamma, cfg.thr_gamma_tv_ratio, "<=");
            }
        } else {
            throw validation_error("unknown experiment '" + cfg.experiment + "'");
        }
    } catch (const error&) {
        w.write_error_manifest(cfg.experiment, "see message on stderr");
        throw;
    }
    w.finish(cfg.experiment);
    return w.all_pass() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// compare: numeric diff of two artifact directories
// ---------------------------------------------------------------------------

struct CompareResult {
    json report;
    bool ok = true; ///< false when artifacts are missing or unreadable
};

namespace detail {

inline std::optional<std::vector<std::vector<double>>> read_csv_numeric(const std::string& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    std::getline(in, line); // header
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& cell : split_csv_line(line)) {
            try {
                row.push_back(cell.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : std::stod(cell));
            } catch (const std::exception&) {
                return std::nullopt;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline void collect_numbers(const json& j, std::vector<double>& out) {
    if (j.is_number()) {
        out.push_back(j.get<double>());
    } else if (j.is_array()) {
        for (const auto& v : j) collect_numbers(v, out);
    } else if (j.is_object()) {
        for (const auto& [k, v] : j.items()) collect_numbers(v, out);
    }
}

} // namespace detail

/// Per-artifact numeric diffs (max abs, RMS) between two run directories.
/// Missing or unparsable artifacts are listed and make the comparison fail.
inline CompareResult compare_runs(const std::string& dir_a, const std::string& dir_b,
                                  double tolerance = 0.0) {
    using namespace detail;
    CompareResult res;
    json report;
    report["dir_a"] = dir_a;
    report["dir_b"] = dir_b;
    report["tolerance"] = tolerance;

    auto load_manifest = [&](const std::string& dir) -> std::optional<json> {
        std::ifstream in(dir + "/manifest.json");
        if (!in) return std::nullopt;
        try {
            json j;
            in >> j;
            return j;
        } catch (const json::exception&) {
            return std::nullopt;
        }
    };
    const auto man_a = load_manifest(dir_a);
    const auto man_b = load_manifest(dir_b);
    if (!man_a || !man_b) {
        report["error"] = "manifest missing or unreadable";
        res.report = report;
        res.ok = false;
        return res;
    }

    json files = json::array();
    bool all_present = true;
    for (const auto& [name, hash] : man_a->at("files").items()) {
        if (name == "manifest.json") continue;
        json f;
        f["name"] = name;
        const std::string pa = dir_a + "/" + name, pb = dir_b + "/" + name;
        if (!std::filesystem::exists(pb)) {
            f["status"] = "missing_in_b";
            all_present = false;
            files.push_back(f);
            continue;
        }
        std::vector<double> va, vb;
        if (name.size() > 4 && name.substr(name.size() - 4) == ".csv") {
            const auto ra = read_csv_numeric(pa), rb = read_csv_numeric(pb);
            if (!ra || !rb) {
                f["status"] = "parse_failure";
                all_present = false;
                files.push_back(f);
                continue;
            }
            for (const auto& row : *ra) va.insert(va.end(), row.begin(), row.end());
            for (const auto& row : *rb) vb.insert(vb.end(), row.begin(), row.end());
        } else {
            std::ifstream ia(pa), ib(pb);
            json ja, jb;
            try {
                ia >> ja;
                ib >> jb;
            } catch (const json::exception&) {
                f["status"] = "parse_failure";
                all_present = false;
                files.push_back(f);
                continue;
            }
            collect_numbers(ja, va);
            collect_numbers(jb, vb);
        }
        if (va.size() != vb.size()) {
            f["status"] = "shape_mismatch";
            f["count_a"] = va.size();
            f["count_b"] = vb.size();
            all_present = false;
            files.push_back(f);
            continue;
        }
        double max_abs = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < va.size(); ++i) {
            const bool na = std::isnan(va[i]), nb = std::isnan(vb[i]);
            const double d = (na && nb) ? 0.0 : va[i] - vb[i];
            max_abs = std::max(max_abs, std::abs(d));
            ss += d * d;
        }
        f["status"] = "compared";
        f["max_abs_diff"] = max_abs;
        f["rms_diff"] = va.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(va.size()));
        f["within_tolerance"] = max_abs <= tolerance;
        files.push_back(f);
    }
    report["files"] = files;
    report["all_artifacts_present"] = all_present;
    res.report = report;
    res.ok = all_present;
    return res;
}

} // namespace lvsmooth
