#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ncc/datagen.hpp"
#include "ncc/map_prior.hpp"
#include "ncc/time_machine.hpp"

namespace ncc {

enum class Hypothesis { null, alternative };
enum class MethodKind { separate, pooled, regression, timemachine, map };

std::string_view to_string(MethodKind m);
MethodKind parse_method(std::string_view name);

struct MethodConfig {
    MethodKind kind = MethodKind::separate;
    // Time Machine: when both are set the drift prior is calibrated from them
    // and overrides tm.drift_shape / tm.drift_rate.
    std::optional<double> d_expected;
    std::optional<double> d_maximum;
    double iota = 0.01;
    TMPrior tm;
    MapConfig map;
    McmcSettings mcmc;  // seed is ignored; replications derive their own

    bool operator==(const MethodConfig&) const = default;
};

struct TrendConfig {
    TrendPattern pattern = TrendPattern::none;
    double lambda0 = 0.0;
    std::map<int, double> overrides;  // arm -> lambda
    double random_sd = 0.0;           // > 0: non-pinned arms drawn from normal(lambda0, sd^2)
    std::vector<int> pinned;          // empty: control and arm K
    int peak = 0;                     // 0: floor(N / 2)

    bool operator==(const TrendConfig&) const = default;
};

struct GridAxis {
    std::string parameter;  // d_spacing | d:<k> | lambda0 | lambda:<k>[,<k>...] | theta
    std::vector<double> values;

    bool operator==(const GridAxis&) const = default;
};

struct ScenarioConfig {
    std::string name = "scenario";
    int num_experimental = 3;
    int sample_size = 250;
    std::vector<int> entry{0, 250, 500};
    Hypothesis hypothesis = Hypothesis::null;
    double control_mean = 0.0;
    std::vector<double> effect{0.25, 0.25, 0.25};  // used under the alternative
    double residual_sd = 1.0;
    TrendConfig trend;
    std::vector<MethodConfig> methods;
    double alpha = 0.025;
    int replications = 1000;
    std::uint64_t seed = 20240101;
    std::vector<int> analysed_arms;  // empty: every experimental arm
    std::vector<GridAxis> grid;

    bool operator==(const ScenarioConfig&) const = default;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws ConfigError naming the offending field path.
ScenarioConfig parse_config(const nlohmann::json& j);
ScenarioConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ScenarioConfig& config);
void validate(const ScenarioConfig& config);

// One config per point of the Cartesian product of the grid axes (the
// config itself when there is no grid). Expanded configs have no grid.
std::vector<ScenarioConfig> expand_grid(const ScenarioConfig& config);

// Per-arm trend strengths for one replication.
std::vector<double> resolve_lambdas(const ScenarioConfig& config, std::uint64_t replication_seed);

struct DecisionRecord {
    std::string setting;
    std::uint64_t seed = 0;
    int replication = 0;
    int arm = 0;
    std::string method;
    bool reject = false;
    double estimate = 0.0;
    double statistic = 0.0;  // one-sided p-value or posterior P(theta > 0)

    bool operator==(const DecisionRecord&) const = default;
};

struct CellMetrics {
    int arm = 0;
    std::string method;
    int rejections = 0;
    int replications = 0;
    double rate = 0.0;
    double mcse = 0.0;
    double band_lo = 0.0;
    double band_hi = 0.0;
    double mean_estimate = 0.0;
};

struct AggregateMetrics {
    std::string setting;
    std::uint64_t seed = 0;
    double alpha = 0.025;
    int replications = 0;  // requested
    int errors = 0;        // excluded replications
    std::vector<CellMetrics> cells;
    std::vector<DecisionRecord> decisions;
    std::vector<std::string> error_messages;

    const CellMetrics& cell(int arm, std::string_view method) const;
};

// alpha +/- 1.96 sqrt(alpha (1 - alpha) / R), clamped to [0, 1].
std::pair<double, double> prediction_band(double alpha, int replications);

// Decisions for one replication, independent of any other replication.
std::vector<DecisionRecord> run_replication(const ScenarioConfig& config, int replication);

// Throws std::runtime_error if more than 1% of replications fail.
AggregateMetrics run_scenario(const ScenarioConfig& config, int workers = 1);

// Groups by (setting, arm, method); order of first appearance is kept.
std::vector<AggregateMetrics> aggregate_decisions(const std::vector<DecisionRecord>& records, double alpha);

void write_decisions_csv(const std::vector<DecisionRecord>& records, std::ostream& out);
std::vector<DecisionRecord> read_decisions_csv(std::istream& in);

// Long format: setting,arm,method,metric,value,R,seed
void write_results_csv(const std::vector<AggregateMetrics>& results, std::ostream& out);
nlohmann::json results_to_json(const std::vector<AggregateMetrics>& results);
// Writes results.csv, results.json and decisions.csv into `dir`.
void write_results(const std::vector<AggregateMetrics>& results, const std::filesystem::path& dir);

}  // namespace ncc
