#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ncc/map_prior.hpp"

using namespace ncc;

namespace {

double npdf(double x, double m, double s) {
    const double z = (x - m) / s;
    return std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
}

// Posterior moments and density by brute-force quadrature of prior * likelihood.
struct GridPosterior {
    double mean = 0.0, var = 0.0;
    std::vector<double> x, dens;
};

GridPosterior grid_posterior(const NormalMixture& prior, double ybar, int n, double sd) {
    double lo = ybar, hi = ybar;
    for (const auto& c : prior.components) {
        lo = std::min(lo, c.mean - 12 * c.sd);
        hi = std::max(hi, c.mean + 12 * c.sd);
    }
    const double se = sd / std::sqrt(n);
    lo = std::min(lo, ybar - 12 * se);
    hi = std::max(hi, ybar + 12 * se);
    const int m = 400000;
    const double h = (hi - lo) / m;
    GridPosterior g;
    double z = 0, s1 = 0, s2 = 0;
    for (int i = 0; i <= m; ++i) {
        const double t = lo + i * h;
        const double w = (i == 0 || i == m ? 0.5 : 1.0) * prior.density(t) * npdf(ybar, t, se);
        z += w;
        s1 += w * t;
        s2 += w * t * t;
        g.x.push_back(t);
        g.dens.push_back(w);
    }
    g.mean = s1 / z;
    g.var = s2 / z - g.mean * g.mean;
    for (auto& d : g.dens) d /= z * h;
    return g;
}

double weight_sum(const NormalMixture& m) {
    double s = 0;
    for (const auto& c : m.components) s += c.weight;
    return s;
}

}  // namespace

TEST_CASE("single-component update is the conjugate normal") {
    const auto post = posterior_update_mixture(NormalMixture{{{1.0, 0.0, 1.0}}}, 1.0, 1, 1.0);
    REQUIRE(post.components.size() == 1);
    CHECK(post.components[0].mean == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(post.components[0].sd * post.components[0].sd == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(post.components[0].weight == doctest::Approx(1.0));
}

TEST_CASE("vague prior leaves the data mean") {
    const auto post = posterior_update_mixture(NormalMixture{{{1.0, 0.0, 1e6}}}, 2.3, 50, 1.5);
    CHECK(post.components[0].mean == doctest::Approx(2.3).epsilon(1e-8));
    CHECK(post.components[0].sd == doctest::Approx(1.5 / std::sqrt(50.0)).epsilon(1e-8));
}

TEST_CASE("data favouring one component concentrates its weight") {
    const NormalMixture prior{{{0.5, 0.0, 0.5}, {0.5, 3.0, 0.5}}};
    const auto post = posterior_update_mixture(prior, 3.0, 100, 1.0);
    CHECK(post.components[1].weight > 0.99);
    CHECK(weight_sum(post) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mixture update agrees with numerical integration") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        NormalMixture prior;
        const int kc = 1 + rep % 3;
        double ws = 0;
        for (int c = 0; c < kc; ++c) {
            prior.components.push_back({0.1 + u(rng), -2.0 + 4.0 * u(rng), 0.2 + 2.0 * u(rng)});
            ws += prior.components.back().weight;
        }
        for (auto& c : prior.components) c.weight /= ws;
        const double ybar = -1.5 + 3.0 * u(rng);
        const int n = 1 + static_cast<int>(60 * u(rng));
        const double sd = 0.5 + u(rng);
        const auto post = posterior_update_mixture(prior, ybar, n, sd);
        const auto g = grid_posterior(prior, ybar, n, sd);
        CAPTURE(rep);
        CHECK(std::abs(post.mean() - g.mean) <= 1e-4 * std::max(1.0, std::abs(g.mean)));
        CHECK(std::abs(post.variance() - g.var) <= 1e-4 * g.var);
        for (std::size_t i = 0; i < g.x.size(); i += 20000) {
            if (g.dens[i] > 1e-3) CHECK(std::abs(post.density(g.x[i]) - g.dens[i]) <= 1e-4 * g.dens[i]);
        }
    }
}

TEST_CASE("robustification") {
    const NormalMixture map{{{0.7, 0.0, 0.3}, {0.3, 0.5, 0.8}}};
    const NormalComponent unit{0.0, 0.1, 1.0};
    CHECK(robustify(map, 0.0, unit).components == map.components);

    const auto only = robustify(map, 1.0, unit);
    REQUIRE(only.components.size() == 1);
    CHECK(only.components[0].weight == 1.0);
    CHECK(only.components[0].sd == 1.0);

    const auto r = robustify(map, 0.9, unit);
    REQUIRE(r.components.size() == 3);
    CHECK(r.components[0].weight == doctest::Approx(0.07));
    CHECK(r.components[1].weight == doctest::Approx(0.03));
    CHECK(r.components[2].weight == doctest::Approx(0.9));
    CHECK(weight_sum(r) == doctest::Approx(1.0).epsilon(1e-12));

    // Density is linear in the robust weight.
    for (double x : {-1.0, 0.0, 0.4, 2.0}) {
        const double a = 0.3;
        CHECK(robustify(map, a, unit).density(x) ==
              doctest::Approx((1 - a) * map.density(x) + a * npdf(x, 0.1, 1.0)).epsilon(1e-12));
    }
    CHECK_THROWS(robustify(map, 1.5, unit));
    CHECK_THROWS(robustify(map, 0.5, NormalComponent{0.0, 0.0, 0.0}));
}

TEST_CASE("mixture validation") {
    CHECK_NOTHROW(NormalMixture{{{0.4, 0, 1}, {0.6, 1, 1}}}.validate());
    CHECK_THROWS(NormalMixture{{{0.4, 0, 1}, {0.5, 1, 1}}}.validate());
    CHECK_THROWS(NormalMixture{{{1.0, 0, 0}}}.validate());
    CHECK_THROWS(NormalMixture{{{-0.1, 0, 1}, {1.1, 1, 1}}}.validate());
}

TEST_CASE("EM recovers a well-separated mixture") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u;
    std::vector<double> x(20000);
    for (auto& v : x) v = u(rng) < 0.3 ? -2.0 + 0.5 * n01(rng) : 1.0 + 0.8 * n01(rng);
    auto fit = fit_normal_mixture(x, 2, 5, 7);
    REQUIRE(fit.components.size() == 2);
    std::sort(fit.components.begin(), fit.components.end(), [](auto& a, auto& b) { return a.mean < b.mean; });
    CHECK(fit.components[0].weight == doctest::Approx(0.3).epsilon(0.05));
    CHECK(fit.components[0].mean == doctest::Approx(-2.0).epsilon(0.03));
    CHECK(fit.components[0].sd == doctest::Approx(0.5).epsilon(0.05));
    CHECK(fit.components[1].mean == doctest::Approx(1.0).epsilon(0.03));
    CHECK(fit.components[1].sd == doctest::Approx(0.8).epsilon(0.05));
    CHECK_NOTHROW(fit.validate());
    CHECK(fit_normal_mixture(x, 2, 5, 7).components == fit_normal_mixture(x, 2, 5, 7).components);
}

TEST_CASE("EM on constant data degenerates gracefully") {
    const std::vector<double> x(100, 2.0);
    const auto fit = fit_normal_mixture(x, 2, 5, 1);
    REQUIRE(fit.components.size() == 1);
    CHECK(fit.components[0].mean == 2.0);
    CHECK(fit.components[0].sd > 0.0);
}

TEST_CASE("one period with negligible heterogeneity matches the conjugate posterior of the mean") {
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    std::vector<std::vector<double>> periods(1);
    for (int i = 0; i < 40; ++i) periods[0].push_back(0.7 + n01(rng));
    MapConfig cfg;
    cfg.tau_scale_var = 1e-8;
    cfg.fixed_residual_sd = 1.0;
    cfg.beta_var = 4.0;
    cfg.mcmc = McmcSettings{20000, 1000, 1, 1, 3};
    const auto fit = build_map_prior(periods, cfg);
    const double ybar = std::accumulate(periods[0].begin(), periods[0].end(), 0.0) / 40.0;
    const double prec = 40.0 + 1.0 / 4.0;
    const double mean = 40.0 * ybar / prec;
    CHECK(std::abs(fit.prior.mean() - mean) < 3.0 * std::sqrt(1.0 / prec / 19000.0) + 1e-3);
    CHECK(fit.prior.variance() == doctest::Approx(1.0 / prec).epsilon(0.05));
}

TEST_CASE("identical constant periods centre the prior on their value") {
    const std::vector<std::vector<double>> periods{std::vector<double>(30, 5.0), std::vector<double>(30, 5.0)};
    MapConfig cfg;
    cfg.fixed_residual_sd = 1.0;
    cfg.mcmc = McmcSettings{4000, 1000, 1, 1, 5};
    const auto fit = build_map_prior(periods, cfg);
    CHECK(fit.prior.mean() == doctest::Approx(5.0).epsilon(0.05));
}

TEST_CASE("predictive is at least as dispersed as the population mean") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> n01;
    std::vector<std::vector<double>> periods(4);
    for (int p = 0; p < 4; ++p)
        for (int i = 0; i < 25; ++i) periods[p].push_back(0.3 * p + n01(rng));
    MapConfig cfg;
    cfg.mcmc = McmcSettings{6000, 1000, 1, 1, 2};
    const auto fit = build_map_prior(periods, cfg);
    auto var = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        return s / (v.size() - 1);
    };
    CHECK(var(fit.predictive) >= var(fit.beta));
    CHECK(fit.tau_acceptance > 0.15);
    CHECK(fit.tau_acceptance < 0.6);
    CHECK(weight_sum(fit.prior) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("analysis on noise-free data") {
    // K = 1: controls and arm 1 share period 1, so there are no non-concurrent controls.
    const auto sched = build_schedule(make_arms(20, std::vector<int>{0}), 1);
    const auto data = generate_trial(sched, ScenarioTruth{0.0, {1.0}, 0.0}, TimeTrendSpec{}, 2);
    const auto s = map_analysis(data, 1, MapConfig{}, 0.025);
    CHECK(s.prob_positive == 1.0);
    CHECK(s.reject);
    CHECK(s.mean == doctest::Approx(1.0));
}

TEST_CASE("arm without non-concurrent controls falls back to the unit-information prior") {
    const auto sched = build_schedule(make_arms(40, std::vector<int>{0, 40}), 1);
    const auto data = generate_trial(sched, ScenarioTruth{0.0, {0.5, 0.5}, 1.0}, TimeTrendSpec{}, 2);
    const auto s1 = map_analysis(data, 1, MapConfig{}, 0.025);
    REQUIRE(s1.warnings.size() == 1);
    CHECK(s1.warnings[0].find("non-concurrent") != std::string::npos);
    MapConfig cfg;
    cfg.mcmc = McmcSettings{2000, 500, 1, 1, 1};
    const auto s2 = map_analysis(data, 2, cfg, 0.025);
    CHECK(s2.draws.size() == 10000);
    CHECK(s2.prob_positive >= 0.0);
    CHECK(s2.prob_positive <= 1.0);
    CHECK(map_analysis(data, 2, cfg, 0.025).draws == s2.draws);
}

TEST_CASE("three-arm trial with default settings") {
    const auto sched = build_schedule(make_arms(250, std::vector<int>{0, 250, 500}), 20240101);
    const auto data = generate_trial(sched, ScenarioTruth{0.0, {0.25, 0.25, 0.25}, 1.0}, TimeTrendSpec{}, 3);
    const auto s = map_analysis(data, 3, MapConfig{}, 0.025);
    CHECK(std::isfinite(s.mean));
    CHECK(std::abs(s.mean - 0.25) < 0.5);
    const auto j = mixture_to_json(NormalMixture{{{1.0, 0.0, 1.0}}});
    CHECK(j.find("\"components\"") != std::string::npos);
}
