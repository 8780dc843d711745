#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lvsmooth/experiments.hpp"

using namespace lvsmooth;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json base_config(const std::string& experiment, const std::string& out) {
    json doc;
    doc["experiment"] = experiment;
    doc["output_dir"] = out;
    doc["seeds"] = {11, 23};
    return doc;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LVSMOOTH_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

} // namespace

TEST_CASE("flat-vol roundtrip experiment passes and writes its artifacts") {
    const std::string out = temp_dir("lvs_exp_flat");
    const ExperimentConfig cfg = parse_config(base_config("flat_vol_roundtrip", out));
    REQUIRE(run_experiment(cfg) == 0);
    for (const char* f : {"lv_surface.csv", "price_grid.csv", "fit_report.json", "manifest.json"})
        REQUIRE(fs::exists(fs::path(out) / f));
    std::ifstream in(out + "/manifest.json");
    json manifest;
    in >> manifest;
    REQUIRE(manifest["pass"].get<bool>());
    // every listed file exists and matches its checksum
    for (const auto& [name, hash] : manifest["files"].items()) {
        if (name == "manifest.json") continue;
        const std::string content = slurp(out + "/" + name);
        REQUIRE(detail::hex64(detail::fnv1a64(content)) == hash.get<std::string>());
    }
    // threshold details are recorded
    bool found = false;
    for (const auto& c : manifest["checks"])
        if (c["name"] == "flat_sigma_max_abs_dev") {
            found = true;
            REQUIRE(c["pass"].get<bool>());
            REQUIRE(c["value"].get<double>() < 5e-3);
        }
    REQUIRE(found);
}

TEST_CASE("runs are byte-identical given the same config") {
    const std::string out1 = temp_dir("lvs_exp_rep1");
    const std::string out2 = temp_dir("lvs_exp_rep2");
    json doc = base_config("flat_vol_roundtrip", out1);
    REQUIRE(run_experiment(parse_config(doc)) == 0);
    doc["output_dir"] = out2;
    REQUIRE(run_experiment(parse_config(doc)) == 0);
    for (const char* f : {"lv_surface.csv", "price_grid.csv", "fit_report.json"})
        REQUIRE(slurp(out1 + "/" + std::string(f)) == slurp(out2 + "/" + std::string(f)));
}

TEST_CASE("compare reports all-zero diffs for identical runs") {
    const std::string out1 = temp_dir("lvs_cmp_a");
    const std::string out2 = temp_dir("lvs_cmp_b");
    json doc = base_config("flat_vol_roundtrip", out1);
    run_experiment(parse_config(doc));
    doc["output_dir"] = out2;
    run_experiment(parse_config(doc));
    const CompareResult res = compare_runs(out1, out2, 0.0);
    REQUIRE(res.ok);
    for (const auto& f : res.report["files"]) {
        REQUIRE(f["status"] == "compared");
        REQUIRE(f["max_abs_diff"].get<double>() == 0.0);
        REQUIRE(f["within_tolerance"].get<bool>());
    }
}

TEST_CASE("compare flags corrupted and missing artifacts") {
    const std::string out1 = temp_dir("lvs_cmp_c");
    const std::string out2 = temp_dir("lvs_cmp_d");
    json doc = base_config("flat_vol_roundtrip", out1);
    run_experiment(parse_config(doc));
    doc["output_dir"] = out2;
    run_experiment(parse_config(doc));
    {
        std::ofstream bad(out2 + "/lv_surface.csv");
        bad << "t_lo,t_hi,k_knot,sigma\n1,2,not_a_number,0.2\n";
    }
    fs::remove(out2 + "/price_grid.csv");
    const CompareResult res = compare_runs(out1, out2, 0.0);
    REQUIRE_FALSE(res.ok);
    bool saw_parse = false, saw_missing = false;
    for (const auto& f : res.report["files"]) {
        if (f["name"] == "lv_surface.csv") saw_parse = f["status"] == "parse_failure";
        if (f["name"] == "price_grid.csv") saw_missing = f["status"] == "missing_in_b";
    }
    REQUIRE(saw_parse);
    REQUIRE(saw_missing);
}

TEST_CASE("unknown experiment names are rejected") {
    ExperimentConfig cfg = parse_config(base_config("nonsense", temp_dir("lvs_exp_bad")));
    REQUIRE_THROWS_AS(run_experiment(cfg), validation_error);
}

TEST_CASE("cli: unknown experiment exits 2, missing config exits, flat run exits 0") {
    const std::string dir = temp_dir("lvs_cli");
    {
        std::ofstream cfg(dir + "/cfg.json");
        cfg << base_config("flat_vol_roundtrip", dir + "/out").dump();
    }
    REQUIRE(run_cli("run --config " + dir + "/cfg.json") == 0);
    REQUIRE(run_cli("run --config " + dir + "/cfg.json --experiment bogus") == 2);
    REQUIRE(run_cli("run --config " + dir + "/does_not_exist.json") == 3);
    REQUIRE(run_cli("definitely_not_a_subcommand") == 2);

    const std::string rep = dir + "/report.json";
    REQUIRE(run_cli("compare " + dir + "/out " + dir + "/out --report " + rep) == 0);
    REQUIRE(fs::exists(rep));
    REQUIRE(run_cli("compare " + dir + "/out " + dir + "/missing --report " + rep) == 3);
}

TEST_CASE("config parsing picks up overrides and defaults") {
    json doc = base_config("flat_vol_roundtrip", "x");
    doc["calib"] = {{"lv_knot_count", 13}, {"sub_steps", 8}};
    doc["smoother"] = {{"kernel", "quartic"}, {"variance_mode", "homoscedastic"}};
    doc["mc"] = {{"paths", 2048}, {"seed", 99}};
    const ExperimentConfig cfg = parse_config(doc);
    REQUIRE(cfg.calib.lv_knot_count == 13);
    REQUIRE(cfg.calib.sub_steps == 8);
    REQUIRE(cfg.smoother.kernel.family == KernelFamily::quartic);
    REQUIRE(cfg.smoother.variance_mode == VarianceMode::homoscedastic);
    REQUIRE(cfg.mc.paths == 2048);
    REQUIRE(cfg.mc.seed == 99);
    REQUIRE(cfg.calib.node_count == 401);   // untouched default
    REQUIRE(cfg.noise.stddev == 0.001);     // untouched default
    REQUIRE_THROWS_AS(parse_config(json{{"smoother", {{"kernel", "gauss"}}}}), validation_error);
}

TEST_CASE("w-shape smoothed experiment emits a fail-ratio inside the threshold") {
    const std::string out = temp_dir("lvs_exp_w");
    json doc = base_config("w_shape_smoothed", out);
    const int status = run_experiment(parse_config(doc));
    std::ifstream in(out + "/fit_report.json");
    json rep;
    in >> rep;
    REQUIRE_FALSE(rep["fail_ratio"].is_null());
    REQUIRE(status == 0);
}
