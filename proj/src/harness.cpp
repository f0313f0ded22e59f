#include "ncc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "ncc/analysis_freq.hpp"
#include "ncc/rng.hpp"

namespace ncc {

using nlohmann::json;

std::string_view to_string(MethodKind m) {
    switch (m) {
        case MethodKind::separate: return "separate";
        case MethodKind::pooled: return "pooled";
        case MethodKind::regression: return "regression";
        case MethodKind::timemachine: return "timemachine";
        case MethodKind::map: return "map";
    }
    return "separate";
}

MethodKind parse_method(std::string_view name) {
    if (name == "separate") return MethodKind::separate;
    if (name == "pooled") return MethodKind::pooled;
    if (name == "regression") return MethodKind::regression;
    if (name == "timemachine") return MethodKind::timemachine;
    if (name == "map") return MethodKind::map;
    throw std::invalid_argument("unknown method '" + std::string(name) +
                                "' (expected separate, pooled, regression, timemachine or map)");
}

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

const json& require(const json& j, const std::string& key, const std::string& path) {
    if (!j.contains(key)) fail(path.empty() ? key : path + "." + key, "missing required field");
    return j.at(key);
}

template <typename T>
T as(const json& v, const std::string& path) {
    try {
        if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) fail(path, "expected a number");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer() && !v.is_number_unsigned()) fail(path, "expected an integer");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) fail(path, "expected a string");
        }
        return v.get<T>();
    } catch (const json::exception& e) {
        fail(path, e.what());
    }
}

template <typename T>
T field(const json& j, const std::string& key, const std::string& path, T fallback) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!j.contains(key)) return fallback;
    return as<T>(j.at(key), p);
}

template <typename T>
std::vector<T> as_vector(const json& v, const std::string& path) {
    if (!v.is_array()) fail(path, "expected an array");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as<T>(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

McmcSettings parse_mcmc(const json& j, const std::string& path, McmcSettings m) {
    if (!j.is_object()) fail(path, "expected an object");
    m.iterations = field(j, "iterations", path, m.iterations);
    m.burn_in = field(j, "burn_in", path, m.burn_in);
    m.thin = field(j, "thin", path, m.thin);
    m.chains = field(j, "chains", path, m.chains);
    try {
        validate(m);
    } catch (const std::invalid_argument& e) {
        fail(path, e.what());
    }
    return m;
}

json mcmc_json(const McmcSettings& m) {
    return {{"iterations", m.iterations}, {"burn_in", m.burn_in}, {"thin", m.thin}, {"chains", m.chains}};
}

MethodConfig parse_method_config(const json& j, const std::string& path) {
    MethodConfig m;
    if (j.is_string()) {
        try {
            m.kind = parse_method(j.get<std::string>());
        } catch (const std::invalid_argument& e) {
            fail(path, e.what());
        }
        return m;
    }
    if (!j.is_object()) fail(path, "expected a method name or object");
    const std::string name = as<std::string>(require(j, "name", path), join(path, "name"));
    try {
        m.kind = parse_method(name);
    } catch (const std::invalid_argument& e) {
        fail(join(path, "name"), e.what());
    }
    if (j.contains("mcmc")) m.mcmc = parse_mcmc(j.at("mcmc"), join(path, "mcmc"), m.mcmc);
    if (m.kind == MethodKind::timemachine) {
        if (j.contains("d_expected")) m.d_expected = as<double>(j.at("d_expected"), join(path, "d_expected"));
        if (j.contains("d_maximum")) m.d_maximum = as<double>(j.at("d_maximum"), join(path, "d_maximum"));
        if (m.d_expected.has_value() != m.d_maximum.has_value()) {
            fail(join(path, m.d_expected ? "d_maximum" : "d_expected"), "d_expected and d_maximum must be given together");
        }
        m.iota = field(j, "iota", path, m.iota);
        auto& tm = m.tm;
        tm.drift_shape = field(j, "drift_shape", path, tm.drift_shape);
        tm.drift_rate = field(j, "drift_rate", path, tm.drift_rate);
        tm.response_shape = field(j, "response_shape", path, tm.response_shape);
        tm.response_rate = field(j, "response_rate", path, tm.response_rate);
        tm.intercept_var = field(j, "intercept_var", path, tm.intercept_var);
        tm.effect_var = field(j, "effect_var", path, tm.effect_var);
        tm.bucket_size = field(j, "bucket_size", path, tm.bucket_size);
        if (tm.bucket_size < 1) fail(join(path, "bucket_size"), "must be >= 1");
        if (m.d_expected) {
            try {
                const DriftPrior d = calibrate_drift_prior(*m.d_expected, *m.d_maximum, m.iota);
                tm.drift_shape = d.shape;
                tm.drift_rate = d.rate;
            } catch (const std::exception& e) {
                fail(join(path, "d_expected"), e.what());
            }
        }
        for (const char* key : {"drift_shape", "drift_rate", "response_shape", "response_rate", "intercept_var", "effect_var"}) {
            if (j.contains(key) && !(j.at(key).get<double>() > 0.0)) fail(join(path, key), "must be positive");
        }
    } else if (m.kind == MethodKind::map) {
        auto& mc = m.map;
        // Precisions are the natural unit in the literature; accept either form.
        if (j.contains("beta_precision")) mc.beta_var = 1.0 / as<double>(j.at("beta_precision"), join(path, "beta_precision"));
        if (j.contains("tau_precision")) mc.tau_scale_var = 1.0 / as<double>(j.at("tau_precision"), join(path, "tau_precision"));
        mc.beta_var = field(j, "beta_var", path, mc.beta_var);
        mc.tau_scale_var = field(j, "tau_scale_var", path, mc.tau_scale_var);
        mc.robust_weight = field(j, "robust_weight", path, mc.robust_weight);
        if (j.contains("unit_info_sd")) mc.unit_info_sd = as<double>(j.at("unit_info_sd"), join(path, "unit_info_sd"));
        mc.response_shape = field(j, "response_shape", path, mc.response_shape);
        mc.response_rate = field(j, "response_rate", path, mc.response_rate);
        mc.effect_prior_var = field(j, "effect_prior_var", path, mc.effect_prior_var);
        mc.mixture_components = field(j, "mixture_components", path, mc.mixture_components);
        mc.em_restarts = field(j, "em_restarts", path, mc.em_restarts);
        mc.posterior_draws = field(j, "posterior_draws", path, mc.posterior_draws);
        if (!(mc.robust_weight >= 0.0 && mc.robust_weight <= 1.0)) fail(join(path, "robust_weight"), "must lie in [0, 1]");
        if (!(mc.beta_var > 0.0) || !std::isfinite(mc.beta_var)) fail(join(path, "beta_var"), "must be positive");
        if (!(mc.tau_scale_var > 0.0) || !std::isfinite(mc.tau_scale_var)) fail(join(path, "tau_scale_var"), "must be positive");
        if (mc.mixture_components < 1) fail(join(path, "mixture_components"), "must be >= 1");
        if (mc.posterior_draws < 1) fail(join(path, "posterior_draws"), "must be >= 1");
        mc.mcmc = m.mcmc;
    }
    return m;
}

json method_json(const MethodConfig& m) {
    json j{{"name", std::string(to_string(m.kind))}};
    if (m.kind == MethodKind::timemachine) {
        // Write the resolved prior; the calibration inputs are kept for reference.
        j["drift_shape"] = m.tm.drift_shape;
        j["drift_rate"] = m.tm.drift_rate;
        j["response_shape"] = m.tm.response_shape;
        j["response_rate"] = m.tm.response_rate;
        j["intercept_var"] = m.tm.intercept_var;
        j["effect_var"] = m.tm.effect_var;
        j["bucket_size"] = m.tm.bucket_size;
        j["iota"] = m.iota;
        if (m.d_expected) j["d_expected"] = *m.d_expected;
        if (m.d_maximum) j["d_maximum"] = *m.d_maximum;
        j["mcmc"] = mcmc_json(m.mcmc);
    } else if (m.kind == MethodKind::map) {
        const auto& mc = m.map;
        j["beta_var"] = mc.beta_var;
        j["tau_scale_var"] = mc.tau_scale_var;
        j["robust_weight"] = mc.robust_weight;
        if (mc.unit_info_sd) j["unit_info_sd"] = *mc.unit_info_sd;
        j["response_shape"] = mc.response_shape;
        j["response_rate"] = mc.response_rate;
        j["effect_prior_var"] = mc.effect_prior_var;
        j["mixture_components"] = mc.mixture_components;
        j["em_restarts"] = mc.em_restarts;
        j["posterior_draws"] = mc.posterior_draws;
        j["mcmc"] = mcmc_json(m.mcmc);
    }
    return j;
}

std::vector<MethodConfig> default_methods() {
    std::vector<MethodConfig> out;
    for (auto k : {MethodKind::separate, MethodKind::pooled, MethodKind::regression, MethodKind::timemachine, MethodKind::map}) {
        MethodConfig m;
        m.kind = k;
        if (k == MethodKind::timemachine) {
            m.d_expected = 1.0;
            m.d_maximum = 1.5;
            const DriftPrior d = calibrate_drift_prior(1.0, 1.5, m.iota);
            m.tm.drift_shape = d.shape;
            m.tm.drift_rate = d.rate;
        }
        out.push_back(m);
    }
    return out;
}

void apply_grid_value(ScenarioConfig& c, const std::string& parameter, double value) {
    const auto colon = parameter.find(':');
    const std::string head = parameter.substr(0, colon);
    if (parameter == "d_spacing") {
        for (int k = 1; k <= c.num_experimental; ++k) c.entry[k - 1] = static_cast<int>(std::lround(value * (k - 1)));
    } else if (parameter == "lambda0") {
        c.trend.lambda0 = value;
    } else if (parameter == "theta") {
        std::fill(c.effect.begin(), c.effect.end(), value);
    } else if (colon != std::string::npos && (head == "d" || head == "lambda")) {
        std::stringstream ss(parameter.substr(colon + 1));
        std::string item;
        while (std::getline(ss, item, ',')) {
            const int k = std::stoi(item);
            if (head == "d") {
                if (k < 1 || k > c.num_experimental) throw ConfigError("grid: arm index out of range in '" + parameter + "'");
                c.entry[k - 1] = static_cast<int>(std::lround(value));
            } else {
                if (k < 0 || k > c.num_experimental) throw ConfigError("grid: arm index out of range in '" + parameter + "'");
                c.trend.overrides[k] = value;
            }
        }
    } else {
        throw ConfigError("grid: unknown parameter '" + parameter + "'");
    }
}

std::string format_value(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

void validate(const ScenarioConfig& c) {
    if (c.num_experimental < 1) throw ConfigError("K: must be >= 1");
    if (c.sample_size < 1) throw ConfigError("n: must be >= 1");
    if (static_cast<int>(c.entry.size()) != c.num_experimental) throw ConfigError("d: length must equal K");
    if (static_cast<int>(c.effect.size()) != c.num_experimental) throw ConfigError("theta: length must equal K");
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha: must lie in (0, 1)");
    if (c.replications < 1) throw ConfigError("replications: must be >= 1");
    if (!(c.residual_sd >= 0.0)) throw ConfigError("sd: must be non-negative");
    if (c.trend.random_sd < 0.0) throw ConfigError("trend.random_sd: must be non-negative");
    for (const auto& [k, v] : c.trend.overrides) {
        if (k < 0 || k > c.num_experimental) throw ConfigError("trend.lambda_overrides: arm " + std::to_string(k) + " out of range");
    }
    for (int k : c.trend.pinned) {
        if (k < 0 || k > c.num_experimental) throw ConfigError("trend.pinned: arm " + std::to_string(k) + " out of range");
    }
    for (int k : c.analysed_arms) {
        if (k < 1 || k > c.num_experimental) throw ConfigError("arms: arm " + std::to_string(k) + " out of range");
    }
    if (c.methods.empty()) throw ConfigError("methods: at least one method is required");
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
        if (c.grid[i].values.empty()) throw ConfigError("grid[" + std::to_string(i) + "].values: must not be empty");
    }
}

ScenarioConfig parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("<root>: expected an object");
    ScenarioConfig c;
    c.name = field<std::string>(j, "name", "", c.name);
    c.num_experimental = as<int>(require(j, "K", ""), "K");
    c.sample_size = as<int>(require(j, "n", ""), "n");
    if (j.contains("d")) {
        c.entry = as_vector<int>(j.at("d"), "d");
    } else if (j.contains("d_spacing")) {
        const int spacing = as<int>(j.at("d_spacing"), "d_spacing");
        c.entry.clear();
        for (int k = 1; k <= c.num_experimental; ++k) c.entry.push_back(spacing * (k - 1));
    } else {
        fail("d", "missing required field (give d or d_spacing)");
    }
    const std::string hyp = field<std::string>(j, "hypothesis", "", "null");
    if (hyp == "null") c.hypothesis = Hypothesis::null;
    else if (hyp == "alternative") c.hypothesis = Hypothesis::alternative;
    else fail("hypothesis", "expected 'null' or 'alternative'");
    c.control_mean = field(j, "eta0", "", c.control_mean);
    if (j.contains("theta")) {
        if (j.at("theta").is_array()) c.effect = as_vector<double>(j.at("theta"), "theta");
        else c.effect.assign(c.num_experimental, as<double>(j.at("theta"), "theta"));
    } else {
        c.effect.assign(c.num_experimental, 0.25);
    }
    c.residual_sd = field(j, "sd", "", c.residual_sd);
    if (j.contains("trend")) {
        const json& t = j.at("trend");
        if (!t.is_object()) fail("trend", "expected an object");
        try {
            c.trend.pattern = parse_trend_pattern(as<std::string>(require(t, "pattern", "trend"), "trend.pattern"));
        } catch (const std::invalid_argument& e) {
            fail("trend.pattern", e.what());
        }
        c.trend.lambda0 = field(t, "lambda0", "trend", c.trend.lambda0);
        if (t.contains("lambda_overrides")) {
            const json& o = t.at("lambda_overrides");
            if (!o.is_object()) fail("trend.lambda_overrides", "expected an object mapping arm index to lambda");
            for (auto it = o.begin(); it != o.end(); ++it) {
                int k = 0;
                try {
                    k = std::stoi(it.key());
                } catch (const std::exception&) {
                    fail("trend.lambda_overrides." + it.key(), "key must be an arm index");
                }
                c.trend.overrides[k] = as<double>(it.value(), "trend.lambda_overrides." + it.key());
            }
        }
        c.trend.random_sd = field(t, "random_sd", "trend", c.trend.random_sd);
        if (t.contains("pinned")) c.trend.pinned = as_vector<int>(t.at("pinned"), "trend.pinned");
        c.trend.peak = field(t, "peak", "trend", c.trend.peak);
    }
    if (j.contains("methods")) {
        const json& m = j.at("methods");
        if (!m.is_array()) fail("methods", "expected an array");
        c.methods.clear();
        for (std::size_t i = 0; i < m.size(); ++i) c.methods.push_back(parse_method_config(m[i], "methods[" + std::to_string(i) + "]"));
    } else {
        c.methods = default_methods();
    }
    c.alpha = field(j, "alpha", "", c.alpha);
    c.replications = field(j, "replications", "", c.replications);
    c.seed = field<std::uint64_t>(j, "seed", "", c.seed);
    if (j.contains("arms")) c.analysed_arms = as_vector<int>(j.at("arms"), "arms");
    if (j.contains("grid")) {
        const json& g = j.at("grid");
        if (!g.is_array()) fail("grid", "expected an array");
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::string p = "grid[" + std::to_string(i) + "]";
            GridAxis axis;
            axis.parameter = as<std::string>(require(g[i], "parameter", p), p + ".parameter");
            axis.values = as_vector<double>(require(g[i], "values", p), p + ".values");
            c.grid.push_back(std::move(axis));
        }
    }
    validate(c);
    // Surface unknown grid parameters at load time.
    expand_grid(c);
    return c;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

json to_json(const ScenarioConfig& c) {
    json j;
    j["name"] = c.name;
    j["K"] = c.num_experimental;
    j["n"] = c.sample_size;
    j["d"] = c.entry;
    j["hypothesis"] = c.hypothesis == Hypothesis::null ? "null" : "alternative";
    j["eta0"] = c.control_mean;
    j["theta"] = c.effect;
    j["sd"] = c.residual_sd;
    json t{{"pattern", std::string(to_string(c.trend.pattern))}, {"lambda0", c.trend.lambda0}};
    if (!c.trend.overrides.empty()) {
        json o = json::object();
        for (const auto& [k, v] : c.trend.overrides) o[std::to_string(k)] = v;
        t["lambda_overrides"] = o;
    }
    t["random_sd"] = c.trend.random_sd;
    if (!c.trend.pinned.empty()) t["pinned"] = c.trend.pinned;
    t["peak"] = c.trend.peak;
    j["trend"] = t;
    j["methods"] = json::array();
    for (const auto& m : c.methods) j["methods"].push_back(method_json(m));
    j["alpha"] = c.alpha;
    j["replications"] = c.replications;
    j["seed"] = c.seed;
    if (!c.analysed_arms.empty()) j["arms"] = c.analysed_arms;
    if (!c.grid.empty()) {
        j["grid"] = json::array();
        for (const auto& a : c.grid) j["grid"].push_back({{"parameter", a.parameter}, {"values", a.values}});
    }
    return j;
}

std::vector<ScenarioConfig> expand_grid(const ScenarioConfig& config) {
    std::vector<ScenarioConfig> out{config};
    out.front().grid.clear();
    for (const auto& axis : config.grid) {
        std::vector<ScenarioConfig> next;
        for (const auto& base : out) {
            for (double v : axis.values) {
                ScenarioConfig c = base;
                apply_grid_value(c, axis.parameter, v);
                c.name += "/" + axis.parameter + "=" + format_value(v);
                next.push_back(std::move(c));
            }
        }
        out = std::move(next);
    }
    for (const auto& c : out) validate(c);
    return out;
}

std::vector<double> resolve_lambdas(const ScenarioConfig& config, std::uint64_t replication_seed) {
    const auto& t = config.trend;
    std::vector<double> lambda;
    if (t.random_sd > 0.0) {
        std::set<int> pinned(t.pinned.begin(), t.pinned.end());
        if (pinned.empty()) pinned = {0, config.num_experimental};
        lambda = sample_arm_lambdas(t.lambda0, t.random_sd, config.num_experimental, pinned,
                                    stream_seed(replication_seed, Stream::lambdas));
    } else {
        lambda.assign(config.num_experimental + 1, t.lambda0);
    }
    for (const auto& [k, v] : t.overrides) lambda.at(k) = v;
    return lambda;
}

std::pair<double, double> prediction_band(double alpha, int replications) {
    if (replications < 1) throw std::invalid_argument("prediction_band: R must be >= 1");
    const double half = 1.96 * std::sqrt(alpha * (1.0 - alpha) / replications);
    return {std::clamp(alpha - half, 0.0, 1.0), std::clamp(alpha + half, 0.0, 1.0)};
}

std::vector<DecisionRecord> run_replication(const ScenarioConfig& config, int replication) {
    const std::uint64_t rep_seed = derive_seed(config.seed, {static_cast<std::uint64_t>(replication)});
    const auto arms = make_arms(config.sample_size, config.entry);
    const TrialSchedule schedule = build_schedule(arms, stream_seed(rep_seed, Stream::schedule));

    ScenarioTruth truth;
    truth.control_mean = config.control_mean;
    truth.residual_sd = config.residual_sd;
    truth.effect = config.hypothesis == Hypothesis::alternative ? config.effect
                                                                : std::vector<double>(config.num_experimental, 0.0);
    TimeTrendSpec trend;
    trend.pattern = config.trend.pattern;
    trend.peak = config.trend.peak;
    trend.lambda = resolve_lambdas(config, rep_seed);
    const TrialDataset data = generate_trial(schedule, truth, trend, stream_seed(rep_seed, Stream::responses));

    std::vector<int> analysed = config.analysed_arms;
    if (analysed.empty()) {
        for (int k = 1; k <= config.num_experimental; ++k) analysed.push_back(k);
    }

    std::vector<DecisionRecord> out;
    for (int k : analysed) {
        for (std::size_t mi = 0; mi < config.methods.size(); ++mi) {
            const MethodConfig& m = config.methods[mi];
            const std::uint64_t method_seed = stream_seed(rep_seed, Stream::method, mi * 1000 + k);
            DecisionRecord rec{config.name, config.seed, replication, k, std::string(to_string(m.kind))};
            auto take_freq = [&](const FreqResult& r) {
                rec.reject = r.reject;
                rec.estimate = r.estimate;
                rec.statistic = r.p_value;
            };
            auto take_bayes = [&](const PosteriorSummary& s) {
                rec.reject = s.reject;
                rec.estimate = s.mean;
                rec.statistic = s.prob_positive;
            };
            switch (m.kind) {
                case MethodKind::separate: take_freq(separate_ttest(data, k, config.alpha)); break;
                case MethodKind::pooled: take_freq(pooled_ttest(data, k, config.alpha)); break;
                case MethodKind::regression: take_freq(regression_model(data, k, config.alpha)); break;
                case MethodKind::timemachine: {
                    McmcSettings mcmc = m.mcmc;
                    mcmc.seed = method_seed;
                    take_bayes(fit_time_machine(data, k, m.tm, mcmc, config.alpha));
                    break;
                }
                case MethodKind::map: {
                    MapConfig mc = m.map;
                    mc.mcmc = m.mcmc;
                    mc.mcmc.seed = method_seed;
                    take_bayes(map_analysis(data, k, mc, config.alpha));
                    break;
                }
            }
            out.push_back(std::move(rec));
        }
    }
    return out;
}

const CellMetrics& AggregateMetrics::cell(int arm, std::string_view method) const {
    for (const auto& c : cells) {
        if (c.arm == arm && c.method == method) return c;
    }
    throw std::out_of_range("no metrics for arm " + std::to_string(arm) + " method " + std::string(method));
}

namespace {

void fill_cells(AggregateMetrics& m) {
    m.cells.clear();
    std::vector<double> estimate_sums;
    for (const auto& d : m.decisions) {
        auto it = std::find_if(m.cells.begin(), m.cells.end(),
                               [&](const CellMetrics& c) { return c.arm == d.arm && c.method == d.method; });
        if (it == m.cells.end()) {
            m.cells.push_back({d.arm, d.method});
            estimate_sums.push_back(0.0);
            it = m.cells.end() - 1;
        }
        const auto idx = static_cast<std::size_t>(it - m.cells.begin());
        it->replications += 1;
        it->rejections += d.reject ? 1 : 0;
        estimate_sums[idx] += d.estimate;
    }
    for (std::size_t i = 0; i < m.cells.size(); ++i) {
        auto& c = m.cells[i];
        const double r = c.replications;
        c.rate = c.rejections / r;
        c.mcse = std::sqrt(c.rate * (1.0 - c.rate) / r);
        std::tie(c.band_lo, c.band_hi) = prediction_band(m.alpha, c.replications);
        c.mean_estimate = estimate_sums[i] / r;
    }
}

}  // namespace

AggregateMetrics run_scenario(const ScenarioConfig& config, int workers) {
    validate(config);
    if (!config.grid.empty()) throw ConfigError("run_scenario: expand the grid first");
    const int reps = config.replications;
    std::vector<std::vector<DecisionRecord>> results(reps);
    std::vector<std::string> errors(reps);
    std::atomic<int> next{0};

    auto work = [&] {
        for (int r = next++; r < reps; r = next++) {
            try {
                results[r] = run_replication(config, r);
            } catch (const std::exception& e) {
                errors[r] = e.what();
                if (errors[r].empty()) errors[r] = "unknown error";
            }
        }
    };
    workers = std::max(1, workers);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }

    AggregateMetrics m;
    m.setting = config.name;
    m.seed = config.seed;
    m.alpha = config.alpha;
    m.replications = reps;
    for (int r = 0; r < reps; ++r) {
        if (!errors[r].empty()) {
            ++m.errors;
            if (m.error_messages.size() < 10) m.error_messages.push_back("replication " + std::to_string(r) + ": " + errors[r]);
            continue;
        }
        for (auto& d : results[r]) m.decisions.push_back(std::move(d));
    }
    if (m.errors > 0.01 * reps) {
        throw std::runtime_error("run_scenario: " + std::to_string(m.errors) + " of " + std::to_string(reps) +
                                 " replications failed; first: " + m.error_messages.front());
    }
    fill_cells(m);
    return m;
}

std::vector<AggregateMetrics> aggregate_decisions(const std::vector<DecisionRecord>& records, double alpha) {
    std::vector<AggregateMetrics> out;
    for (const auto& d : records) {
        auto it = std::find_if(out.begin(), out.end(), [&](const AggregateMetrics& m) { return m.setting == d.setting; });
        if (it == out.end()) {
            AggregateMetrics m;
            m.setting = d.setting;
            m.seed = d.seed;
            m.alpha = alpha;
            out.push_back(std::move(m));
            it = out.end() - 1;
        }
        it->decisions.push_back(d);
    }
    for (auto& m : out) {
        std::set<int> reps;
        for (const auto& d : m.decisions) reps.insert(d.replication);
        m.replications = static_cast<int>(reps.size());
        fill_cells(m);
    }
    return out;
}

void write_decisions_csv(const std::vector<DecisionRecord>& records, std::ostream& out) {
    out << "setting,seed,replication,arm,method,reject,estimate,statistic\n";
    const auto prec = out.precision(17);
    for (const auto& d : records) {
        out << d.setting << ',' << d.seed << ',' << d.replication << ',' << d.arm << ',' << d.method << ','
            << (d.reject ? 1 : 0) << ',' << d.estimate << ',' << d.statistic << '\n';
    }
    out.precision(prec);
}

std::vector<DecisionRecord> read_decisions_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("decisions csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "setting,seed,replication,arm,method,reject,estimate,statistic") {
        throw std::runtime_error("decisions csv: unexpected header '" + line + "'");
    }
    std::vector<DecisionRecord> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 8) throw std::runtime_error("decisions csv: row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
        try {
            DecisionRecord d;
            d.setting = f[0];
            d.seed = std::stoull(f[1]);
            d.replication = std::stoi(f[2]);
            d.arm = std::stoi(f[3]);
            d.method = f[4];
            d.reject = std::stoi(f[5]) != 0;
            d.estimate = std::stod(f[6]);
            d.statistic = std::stod(f[7]);
            out.push_back(std::move(d));
        } catch (const std::exception&) {
            throw std::runtime_error("decisions csv: malformed row " + std::to_string(row));
        }
    }
    return out;
}

void write_results_csv(const std::vector<AggregateMetrics>& results, std::ostream& out) {
    out << "setting,arm,method,metric,value,R,seed\n";
    const auto prec = out.precision(10);
    for (const auto& m : results) {
        for (const auto& c : m.cells) {
            const std::pair<const char*, double> rows[] = {
                {"rejection_rate", c.rate}, {"mcse", c.mcse},           {"band_lo", c.band_lo},
                {"band_hi", c.band_hi},     {"mean_estimate", c.mean_estimate}, {"errors", static_cast<double>(m.errors)},
            };
            for (const auto& [name, value] : rows) {
                out << m.setting << ',' << c.arm << ',' << c.method << ',' << name << ',' << value << ','
                    << c.replications << ',' << m.seed << '\n';
            }
        }
    }
    out.precision(prec);
}

json results_to_json(const std::vector<AggregateMetrics>& results) {
    json j = json::array();
    for (const auto& m : results) {
        json s{{"setting", m.setting}, {"seed", m.seed}, {"alpha", m.alpha}, {"replications", m.replications},
               {"errors", m.errors}, {"error_messages", m.error_messages}, {"cells", json::array()}};
        for (const auto& c : m.cells) {
            s["cells"].push_back({{"arm", c.arm}, {"method", c.method}, {"rejections", c.rejections},
                                  {"R", c.replications}, {"rejection_rate", c.rate}, {"mcse", c.mcse},
                                  {"band", {c.band_lo, c.band_hi}}, {"mean_estimate", c.mean_estimate}});
        }
        j.push_back(std::move(s));
    }
    return j;
}

void write_results(const std::vector<AggregateMetrics>& results, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "results.csv");
        write_results_csv(results, out);
    }
    {
        std::ofstream out(dir / "results.json");
        out << results_to_json(results).dump(2) << '\n';
    }
    std::ofstream out(dir / "decisions.csv");
    std::vector<DecisionRecord> all;
    for (const auto& m : results) all.insert(all.end(), m.decisions.begin(), m.decisions.end());
    write_decisions_csv(all, out);
}

}  // namespace ncc
