#include "ncc/map_prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "ncc/rng.hpp"

namespace ncc {
namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_normal_pdf(double x, double mean, double sd) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z - std::log(sd) - kLogSqrt2Pi;
}

double log_sum_exp(std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

struct PeriodStats {
    double n = 0.0;
    double mean = 0.0;
    double ss = 0.0;  // within-period sum of squares
};

double sample_variance(std::span<const double> x) {
    if (x.size() < 2) return 0.0;
    const double m = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / (x.size() - 1.0);
}

struct EmResult {
    NormalMixture mixture;
    double loglik = -std::numeric_limits<double>::infinity();
    bool degenerate = false;
};

EmResult run_em(std::span<const double> x, std::vector<NormalComponent> comp, double floor_sd) {
    const std::size_t n = x.size();
    const std::size_t k = comp.size();
    std::vector<double> resp(n * k), logp(k);
    EmResult out;
    double prev = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 1000; ++iter) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) {
                logp[c] = std::log(comp[c].weight) + log_normal_pdf(x[i], comp[c].mean, comp[c].sd);
            }
            const double lse = log_sum_exp(logp);
            ll += lse;
            for (std::size_t c = 0; c < k; ++c) resp[i * k + c] = std::exp(logp[c] - lse);
        }
        for (std::size_t c = 0; c < k; ++c) {
            double w = 0.0, s1 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                w += resp[i * k + c];
                s1 += resp[i * k + c] * x[i];
            }
            if (w < 1e-8 * n) {
                out.degenerate = true;
                return out;
            }
            const double mean = s1 / w;
            double s2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) s2 += resp[i * k + c] * (x[i] - mean) * (x[i] - mean);
            const double sd = std::sqrt(s2 / w);
            if (!(sd > floor_sd)) {
                out.degenerate = true;
                return out;
            }
            comp[c] = {w / n, mean, sd};
        }
        out.loglik = ll;
        if (std::abs(ll - prev) <= 1e-8 * static_cast<double>(n)) break;
        prev = ll;
    }
    out.mixture.components = std::move(comp);
    return out;
}

}  // namespace

double NormalMixture::mean() const {
    double m = 0.0;
    for (const auto& c : components) m += c.weight * c.mean;
    return m;
}

double NormalMixture::variance() const {
    const double m = mean();
    double v = 0.0;
    for (const auto& c : components) v += c.weight * (c.sd * c.sd + (c.mean - m) * (c.mean - m));
    return v;
}

double NormalMixture::density(double x) const {
    double d = 0.0;
    for (const auto& c : components) d += c.weight * std::exp(log_normal_pdf(x, c.mean, c.sd));
    return d;
}

void NormalMixture::validate() const {
    if (components.empty()) throw std::invalid_argument("mixture: no components");
    double total = 0.0;
    for (const auto& c : components) {
        if (!(c.weight >= 0.0)) throw std::invalid_argument("mixture: negative weight");
        if (!(c.sd > 0.0) || !std::isfinite(c.sd)) throw std::invalid_argument("mixture: sd must be positive and finite");
        if (!std::isfinite(c.mean)) throw std::invalid_argument("mixture: non-finite mean");
        total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture: weights do not sum to 1");
}

NormalMixture fit_normal_mixture(std::span<const double> x, int components, int restarts, std::uint64_t seed) {
    if (x.size() < 2) throw std::invalid_argument("fit_normal_mixture: need at least 2 points");
    if (components < 1 || restarts < 1) throw std::invalid_argument("fit_normal_mixture: components and restarts must be >= 1");
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0)) {
        // All points equal; keep a positive sd so the mixture stays valid.
        const double tiny = 1e-12 * std::max(1.0, std::abs(mean));
        return NormalMixture{{{1.0, mean, tiny}}};
    }
    const double floor_sd = 1e-6 * sd;

    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end());
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, sorted.size() - 1);

    for (int k = components; k >= 2; --k) {
        EmResult best;
        for (int r = 0; r < restarts; ++r) {
            std::vector<NormalComponent> init(k);
            for (int c = 0; c < k; ++c) {
                double m;
                if (r == 0) {
                    const auto q = static_cast<std::size_t>((c + 0.5) / k * (sorted.size() - 1));
                    m = sorted[q];
                } else {
                    m = sorted[pick(rng)];
                }
                // Alternate narrow and wide starts to capture heavy tails.
                const double s = (c % 2 == 0) ? sd : 0.25 * sd;
                init[c] = {1.0 / k, m, s};
            }
            EmResult res = run_em(x, std::move(init), floor_sd);
            if (!res.degenerate && res.loglik > best.loglik) best = std::move(res);
        }
        if (best.loglik > -std::numeric_limits<double>::infinity()) {
            // Renormalise against rounding.
            double total = 0.0;
            for (const auto& c : best.mixture.components) total += c.weight;
            for (auto& c : best.mixture.components) c.weight /= total;
            return best.mixture;
        }
    }
    return NormalMixture{{{1.0, mean, sd}}};
}

MapPriorFit build_map_prior(std::span<const std::vector<double>> periods, const MapConfig& config) {
    validate(config.mcmc);
    if (!(config.beta_var > 0.0) || !(config.tau_scale_var > 0.0)) {
        throw std::invalid_argument("build_map_prior: prior variances must be positive");
    }
    std::vector<PeriodStats> stats;
    double total_n = 0.0, total_ss = 0.0;
    for (const auto& p : periods) {
        if (p.empty()) continue;
        PeriodStats s;
        s.n = static_cast<double>(p.size());
        s.mean = std::accumulate(p.begin(), p.end(), 0.0) / s.n;
        for (double v : p) s.ss += (v - s.mean) * (v - s.mean);
        total_n += s.n;
        total_ss += s.ss;
        stats.push_back(s);
    }
    if (stats.empty() || total_n < 2.0) throw std::invalid_argument("build_map_prior: need at least 2 non-concurrent observations");
    const double num_periods = static_cast<double>(stats.size());

    MapPriorFit fit;
    const double resid_df = total_n - num_periods;
    fit.pooled_residual_var = resid_df > 0.0 ? total_ss / resid_df : std::numeric_limits<double>::quiet_NaN();

    Rng rng(config.mcmc.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    double sigma2 = config.fixed_residual_sd ? (*config.fixed_residual_sd) * (*config.fixed_residual_sd)
                                             : (fit.pooled_residual_var > 0.0 ? fit.pooled_residual_var : 1.0);
    double beta = 0.0;
    for (const auto& s : stats) beta += s.mean / num_periods;
    double tau = std::sqrt(config.tau_scale_var) * 0.1;
    std::vector<double> eta(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) eta[i] = stats[i].mean;
    double step = 1.0;

    // log p(log tau | beta, sigma2, data) with the period effects integrated out.
    auto log_target = [&](double log_tau) {
        const double t = std::exp(log_tau);
        double lp = -0.5 * t * t / config.tau_scale_var + log_tau;
        for (const auto& s : stats) {
            const double v = t * t + sigma2 / s.n;
            lp += -0.5 * (s.mean - beta) * (s.mean - beta) / v - 0.5 * std::log(v);
        }
        return lp;
    };

    const int iterations = config.mcmc.iterations;
    const int burn_in = config.mcmc.burn_in;
    int accepted = 0, window_accepted = 0, window = 0, retained_proposals = 0;
    for (int it = 0; it < iterations; ++it) {
        // Between-period sd: random-walk Metropolis on log scale.
        const double cur = std::log(tau);
        const double prop = cur + step * normal(rng);
        const bool accept = std::log(unif(rng)) < log_target(prop) - log_target(cur);
        if (accept) tau = std::exp(prop);
        if (it < burn_in) {
            window_accepted += accept;
            if (++window == 50) {
                const double rate = window_accepted / 50.0;
                if (rate < 0.2) step *= 0.7;
                if (rate > 0.5) step *= 1.4;
                window = window_accepted = 0;
            }
        } else {
            accepted += accept;
            ++retained_proposals;
        }

        // Population mean, period effects integrated out.
        double prec = 1.0 / config.beta_var, num = 0.0;
        for (const auto& s : stats) {
            const double w = 1.0 / (tau * tau + sigma2 / s.n);
            prec += w;
            num += w * s.mean;
        }
        beta = num / prec + normal(rng) / std::sqrt(prec);

        // Period means.
        double resid = total_ss;
        for (std::size_t i = 0; i < stats.size(); ++i) {
            const double p = stats[i].n / sigma2 + 1.0 / (tau * tau);
            const double m = (stats[i].n * stats[i].mean / sigma2 + beta / (tau * tau)) / p;
            eta[i] = m + normal(rng) / std::sqrt(p);
            resid += stats[i].n * (stats[i].mean - eta[i]) * (stats[i].mean - eta[i]);
        }

        if (!config.fixed_residual_sd) {
            std::gamma_distribution<double> g(config.response_shape + 0.5 * total_n,
                                              1.0 / (config.response_rate + 0.5 * resid));
            sigma2 = 1.0 / g(rng);
        }

        const double pred = beta + tau * normal(rng);
        if (!std::isfinite(pred) || !std::isfinite(sigma2) || !std::isfinite(tau)) {
            throw std::runtime_error("build_map_prior: non-finite draw");
        }
        if (it >= burn_in && (it - burn_in) % config.mcmc.thin == 0) {
            fit.predictive.push_back(pred);
            fit.beta.push_back(beta);
        }
    }
    fit.tau_acceptance = retained_proposals > 0 ? static_cast<double>(accepted) / retained_proposals : 0.0;
    if (fit.predictive.size() < 2) throw std::invalid_argument("build_map_prior: need at least 2 retained draws");

    fit.prior = fit_normal_mixture(fit.predictive, config.mixture_components, config.em_restarts,
                                   derive_seed(config.mcmc.seed, {0xE17ULL}));
    if (static_cast<int>(fit.prior.components.size()) < config.mixture_components) {
        fit.warnings.push_back("MAP mixture collapsed to " + std::to_string(fit.prior.components.size()) + " component(s)");
    }
    return fit;
}

NormalMixture robustify(const NormalMixture& map_prior, double robust_weight, NormalComponent unit_info) {
    if (!(robust_weight >= 0.0 && robust_weight <= 1.0)) throw std::invalid_argument("robustify: weight must lie in [0, 1]");
    if (robust_weight == 0.0) return map_prior;
    if (!(unit_info.sd > 0.0)) throw std::invalid_argument("robustify: unit-information sd must be positive");
    NormalMixture out;
    if (robust_weight < 1.0) {
        for (auto c : map_prior.components) {
            c.weight *= 1.0 - robust_weight;
            out.components.push_back(c);
        }
    }
    unit_info.weight = robust_weight;
    out.components.push_back(unit_info);
    return out;
}

NormalMixture posterior_update_mixture(const NormalMixture& prior, double sample_mean, int n, double sd) {
    if (n < 1) throw std::invalid_argument("posterior_update_mixture: n must be >= 1");
    if (!(sd > 0.0)) throw std::invalid_argument("posterior_update_mixture: sd must be positive");
    const double se2 = sd * sd / n;
    NormalMixture post;
    std::vector<double> logw;
    for (const auto& c : prior.components) {
        const double v0 = c.sd * c.sd;
        const double v = 1.0 / (1.0 / v0 + 1.0 / se2);
        const double m = v * (c.mean / v0 + sample_mean / se2);
        post.components.push_back({0.0, m, std::sqrt(v)});
        logw.push_back(c.weight > 0.0 ? std::log(c.weight) + log_normal_pdf(sample_mean, c.mean, std::sqrt(v0 + se2))
                                      : -std::numeric_limits<double>::infinity());
    }
    const double lse = log_sum_exp(logw);
    for (std::size_t i = 0; i < logw.size(); ++i) post.components[i].weight = std::exp(logw[i] - lse);
    return post;
}

PosteriorSummary map_analysis(const TrialDataset& data, int k, const MapConfig& config, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (config.posterior_draws < 1) throw std::invalid_argument("map_analysis: posterior_draws must be >= 1");
    const auto& sched = data.schedule;
    const ControlSplit split = split_controls(sched, k);
    if (split.concurrent.empty()) throw std::invalid_argument("map_analysis: no concurrent controls");

    std::vector<double> cc, treat;
    for (int j : split.concurrent) cc.push_back(data.y(j));
    for (int j = 1; j <= sched.exit.at(k); ++j) {
        if (sched.arm_of(j) == k) treat.push_back(data.y(j));
    }
    if (treat.empty()) throw std::invalid_argument("map_analysis: arm has no data");

    const double cc_mean = std::accumulate(cc.begin(), cc.end(), 0.0) / cc.size();
    const double t_mean = std::accumulate(treat.begin(), treat.end(), 0.0) / treat.size();
    double known_sd;
    if (config.fixed_residual_sd) {
        known_sd = *config.fixed_residual_sd;
    } else {
        const double df = cc.size() + treat.size() - 2.0;
        if (df < 1.0) throw std::invalid_argument("map_analysis: need at least 3 analysed observations");
        known_sd = std::sqrt((sample_variance(cc) * (cc.size() - 1.0) + sample_variance(treat) * (treat.size() - 1.0)) / df);
    }

    PosteriorSummary s;
    s.method = "map";
    if (!(known_sd > 0.0)) {
        // Constant data: the likelihood is a point mass at the sample means.
        s.mean = t_mean - cc_mean;
        s.sd = 0.0;
        s.prob_positive = s.mean > 0.0 ? 1.0 : (s.mean < 0.0 ? 0.0 : 0.5);
        s.reject = tm_decision(s, alpha);
        return s;
    }

    NormalMixture prior;
    if (split.non_concurrent.size() >= 2) {
        std::vector<std::vector<double>> periods(split.last_period_before_entry);
        for (int j : split.non_concurrent) periods[sched.period_of(j) - 1].push_back(data.y(j));
        MapPriorFit fit = build_map_prior(periods, config);
        s.warnings = std::move(fit.warnings);
        double unit_sd = known_sd;
        if (config.unit_info_sd) {
            unit_sd = *config.unit_info_sd;
        } else if (fit.pooled_residual_var > 0.0) {
            unit_sd = std::sqrt(fit.pooled_residual_var);
        }
        prior = robustify(fit.prior, config.robust_weight, {0.0, fit.prior.mean(), unit_sd});
    } else {
        s.warnings.push_back("no non-concurrent controls; using the unit-information prior alone");
        prior = NormalMixture{{{1.0, cc_mean, config.unit_info_sd.value_or(known_sd)}}};
    }

    const NormalMixture control = posterior_update_mixture(prior, cc_mean, static_cast<int>(cc.size()), known_sd);
    const NormalMixture treatment = posterior_update_mixture(NormalMixture{{{1.0, 0.0, std::sqrt(config.effect_prior_var)}}},
                                                             t_mean, static_cast<int>(treat.size()), known_sd);
    const auto& tc = treatment.components.front();

    Rng rng(derive_seed(config.mcmc.seed, {0xD1FFULL}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> cum;
    double acc = 0.0;
    for (const auto& c : control.components) cum.push_back(acc += c.weight);
    int positive = 0;
    s.draws.reserve(config.posterior_draws);
    for (int i = 0; i < config.posterior_draws; ++i) {
        const double u = unif(rng) * acc;
        const auto idx = std::min<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin(), cum.size() - 1);
        const auto& c = control.components[idx];
        const double diff = (tc.mean + tc.sd * normal(rng)) - (c.mean + c.sd * normal(rng));
        s.draws.push_back(diff);
        if (diff > 0.0) ++positive;
    }
    s.mean = tc.mean - control.mean();
    s.sd = std::sqrt(tc.sd * tc.sd + control.variance());
    s.prob_positive = static_cast<double>(positive) / config.posterior_draws;
    s.ess = static_cast<double>(config.posterior_draws);
    s.reject = tm_decision(s, alpha);
    return s;
}

std::string mixture_to_json(const NormalMixture& mixture) {
    nlohmann::json j;
    j["components"] = nlohmann::json::array();
    for (const auto& c : mixture.components) {
        j["components"].push_back({{"weight", c.weight}, {"mean", c.mean}, {"sd", c.sd}});
    }
    j["mean"] = mixture.mean();
    j["sd"] = std::sqrt(mixture.variance());
    return j.dump(2);
}

}  // namespace ncc
