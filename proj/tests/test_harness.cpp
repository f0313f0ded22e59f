#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ncc/harness.hpp"

using namespace ncc;
using nlohmann::json;

namespace {

ScenarioConfig quick_config() {
    auto c = parse_config(json::parse(R"({
        "name": "quick", "K": 2, "n": 30, "d": [0, 30], "hypothesis": "alternative", "theta": 0.5,
        "trend": {"pattern": "stepwise", "lambda0": 0.2},
        "methods": ["separate", "pooled", "regression",
                    {"name": "timemachine", "d_expected": 1, "d_maximum": 1.5, "bucket_size": 10,
                     "mcmc": {"iterations": 300, "burn_in": 100}},
                    {"name": "map", "posterior_draws": 500, "mcmc": {"iterations": 300, "burn_in": 100}}],
        "replications": 6, "seed": 42
    })"));
    return c;
}

}  // namespace

TEST_CASE("prediction band") {
    auto [lo, hi] = prediction_band(0.025, 10000);
    CHECK(lo == doctest::Approx(0.02194).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.02806).epsilon(1e-3));
    std::tie(lo, hi) = prediction_band(0.025, 1);
    CHECK(lo == 0.0);
    CHECK(hi == doctest::Approx(0.331).epsilon(1e-3));
    std::tie(lo, hi) = prediction_band(0.0, 100);
    CHECK(lo == 0.0);
    CHECK(hi == 0.0);
    std::tie(lo, hi) = prediction_band(0.025, 2000);
    CHECK(lo == doctest::Approx(0.0182).epsilon(2e-3));
    CHECK(hi == doctest::Approx(0.0318).epsilon(2e-3));
}

TEST_CASE("config round trip") {
    const auto c = quick_config();
    CHECK(parse_config(to_json(c)) == c);
    ScenarioConfig d;
    d.methods = parse_config(json::parse(R"({"K": 3, "n": 250, "d": [0, 250, 500]})")).methods;
    d.trend.overrides = {{1, 0.25}};
    d.trend.random_sd = 0.5;
    d.analysed_arms = {3};
    d.grid = {{"lambda0", {0.0, 0.1}}};
    CHECK(parse_config(to_json(d)) == d);
}

TEST_CASE("defaults include every method with a calibrated time machine") {
    const auto c = parse_config(json::parse(R"({"K": 3, "n": 250, "d_spacing": 250})"));
    REQUIRE(c.methods.size() == 5);
    CHECK(c.methods[3].kind == MethodKind::timemachine);
    CHECK(c.methods[3].tm.drift_shape == doctest::Approx(11.562217).epsilon(1e-6));
    CHECK(c.methods[3].tm.drift_rate == doctest::Approx(11.56222).epsilon(1e-6));
    CHECK(c.entry == std::vector<int>{0, 250, 500});
    CHECK(c.alpha == 0.025);
}

TEST_CASE("entry-spacing grid expands into one setting per value") {
    const auto c = parse_config(json::parse(R"({
        "name": "setting-1", "K": 3, "n": 250, "d_spacing": 250,
        "trend": {"pattern": "stepwise", "lambda0": 0.15},
        "grid": [{"parameter": "d_spacing", "values": [0, 125, 250, 375, 500]}]
    })"));
    const auto pts = expand_grid(c);
    REQUIRE(pts.size() == 5);
    CHECK(pts[0].entry == std::vector<int>{0, 0, 0});
    CHECK(pts[2].entry == std::vector<int>{0, 250, 500});
    CHECK(pts[4].entry == std::vector<int>{0, 500, 1000});
    std::set<std::string> names;
    for (const auto& p : pts) {
        CHECK(p.grid.empty());
        CHECK(p.trend.lambda0 == 0.15);
        names.insert(p.name);
    }
    CHECK(names.size() == 5);
}

TEST_CASE("unequal and random trend settings are expressible") {
    // Arm-specific strength on arms 1 and 3.
    const auto two = parse_config(json::parse(R"({
        "K": 3, "n": 250, "d_spacing": 250, "trend": {"pattern": "linear", "lambda0": 0.1},
        "grid": [{"parameter": "lambda:1", "values": [0.1, 0.5]}, {"parameter": "lambda0", "values": [0.0, 0.1]}]
    })"));
    const auto pts = expand_grid(two);
    CHECK(pts.size() == 4);
    CHECK(resolve_lambdas(pts[1], 1) == std::vector<double>{0.1, 0.1, 0.1, 0.1});
    CHECK(resolve_lambdas(pts[3], 1) == std::vector<double>{0.1, 0.5, 0.1, 0.1});

    const auto three = parse_config(json::parse(R"({
        "K": 3, "n": 250, "d_spacing": 250, "trend": {"pattern": "inverted_u", "lambda0": 0.2, "random_sd": 0.5}
    })"));
    const auto l1 = resolve_lambdas(three, 7);
    const auto l2 = resolve_lambdas(three, 8);
    CHECK(l1[0] == 0.2);
    CHECK(l1[3] == 0.2);
    CHECK(l1[1] != l2[1]);
    CHECK(resolve_lambdas(three, 7) == l1);
}

TEST_CASE("configuration errors name the field") {
    auto message = [](const char* text) {
        try {
            parse_config(json::parse(text));
        } catch (const ConfigError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(message(R"({"n": 10, "d": [0]})").find("K") == 0);
    CHECK(message(R"({"K": 1, "d": [0]})").find("n") == 0);
    CHECK(message(R"({"K": 1, "n": 10})").find("d") == 0);
    CHECK(message(R"({"K": 2, "n": 10, "d": [0]})").find("d") == 0);
    CHECK(message(R"({"K": 1, "n": "ten", "d": [0]})").find("n") == 0);
    CHECK(message(R"({"K": 1, "n": 10, "d": [0], "methods": ["bogus"]})").find("methods[0]") == 0);
    CHECK(message(R"({"K": 1, "n": 10, "d": [0], "trend": {"lambda0": 1}})").find("trend.pattern") == 0);
    CHECK(message(R"({"K": 1, "n": 10, "d": [0], "grid": [{"parameter": "zeta", "values": [1]}]})").find("grid") == 0);
    CHECK(message(R"({"K": 1, "n": 10, "d": [0], "alpha": 2})").find("alpha") == 0);
}

TEST_CASE("single replication yields one decision per arm and method") {
    const auto c = quick_config();
    const auto recs = run_replication(c, 0);
    CHECK(recs.size() == 2 * 5);
    std::set<std::pair<int, std::string>> seen;
    for (const auto& r : recs) {
        seen.insert({r.arm, r.method});
        CHECK(r.replication == 0);
        CHECK(r.statistic >= 0.0);
        CHECK(r.statistic <= 1.0);
    }
    CHECK(seen.size() == 10);
    CHECK(run_replication(c, 0) == recs);
    CHECK(run_replication(c, 1) != recs);
}

TEST_CASE("scenario metrics are means of the decision indicators") {
    const auto c = quick_config();
    const auto res = run_scenario(c, 1);
    CHECK(res.errors == 0);
    CHECK(res.decisions.size() == 6 * 10);
    for (const auto& cell : res.cells) {
        int rej = 0, n = 0;
        double est = 0;
        for (const auto& d : res.decisions) {
            if (d.arm == cell.arm && d.method == cell.method) {
                rej += d.reject;
                est += d.estimate;
                ++n;
            }
        }
        CHECK(cell.replications == n);
        CHECK(cell.rejections == rej);
        CHECK(cell.rate == doctest::Approx(static_cast<double>(rej) / n));
        CHECK(cell.mean_estimate == doctest::Approx(est / n));
        CHECK(cell.mcse == doctest::Approx(std::sqrt(cell.rate * (1 - cell.rate) / n)));
    }
    CHECK(res.cell(2, "regression").replications == 6);
    CHECK_THROWS(res.cell(9, "regression"));
}

TEST_CASE("results do not depend on the worker count") {
    const auto c = quick_config();
    const auto a = run_scenario(c, 1);
    const auto b = run_scenario(c, 3);
    CHECK(a.decisions == b.decisions);
    std::ostringstream sa, sb;
    write_decisions_csv(a.decisions, sa);
    write_decisions_csv(b.decisions, sb);
    CHECK(sa.str() == sb.str());
}

TEST_CASE("decision log round trip and re-aggregation") {
    const auto c = quick_config();
    const auto res = run_scenario(c, 1);
    std::stringstream ss;
    write_decisions_csv(res.decisions, ss);
    const auto back = read_decisions_csv(ss);
    REQUIRE(back.size() == res.decisions.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].arm == res.decisions[i].arm);
        CHECK(back[i].method == res.decisions[i].method);
        CHECK(back[i].reject == res.decisions[i].reject);
        CHECK(back[i].estimate == res.decisions[i].estimate);
        CHECK(back[i].statistic == res.decisions[i].statistic);
    }
    const auto agg = aggregate_decisions(back, c.alpha);
    REQUIRE(agg.size() == 1);
    for (const auto& cell : res.cells) {
        CHECK(agg[0].cell(cell.arm, cell.method).rate == cell.rate);
        CHECK(agg[0].cell(cell.arm, cell.method).band_hi == cell.band_hi);
    }

    std::istringstream bad("setting,seed\nx,1\n");
    CHECK_THROWS(read_decisions_csv(bad));
}

TEST_CASE("result files") {
    const auto c = quick_config();
    const auto res = run_scenario(c, 1);
    const auto dir = std::filesystem::temp_directory_path() / "ncc_harness_test";
    std::filesystem::remove_all(dir);
    write_results({res}, dir);
    for (const char* f : {"results.csv", "results.json", "decisions.csv"}) CHECK(std::filesystem::exists(dir / f));
    std::ifstream in(dir / "results.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "setting,arm,method,metric,value,R,seed");
    std::ifstream js(dir / "results.json");
    const auto j = json::parse(js);
    CHECK(j.is_array());
    std::filesystem::remove_all(dir);
}

TEST_CASE("analysed arm subset") {
    auto c = quick_config();
    c.analysed_arms = {2};
    for (const auto& r : run_replication(c, 0)) CHECK(r.arm == 2);
}

TEST_CASE("shipped example configs load") {
    int seen = 0;
    for (const auto& e : std::filesystem::directory_iterator(NCC_CONFIG_DIR)) {
        if (e.path().extension() != ".json") continue;
        CAPTURE(e.path().string());
        const auto c = load_config(e.path());
        CHECK(expand_grid(c).size() >= 2);
        ++seen;
    }
    CHECK(seen == 4);
}
