#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ncc/trial_design.hpp"

namespace ncc {

enum class TrendPattern { none, stepwise, linear, inverted_u };

std::string_view to_string(TrendPattern p);
TrendPattern parse_trend_pattern(std::string_view name);

struct TimeTrendSpec {
    TrendPattern pattern = TrendPattern::none;
    std::vector<double> lambda;  // per arm, k = 0..K
    int peak = 0;                // N_p; 0 means floor(N / 2)
};

struct ScenarioTruth {
    double control_mean = 0.0;   // eta_0
    std::vector<double> effect;  // theta_k for k = 1..K
    double residual_sd = 1.0;
};

struct TrialDataset {
    TrialSchedule schedule;
    std::vector<double> response;  // y_j

    int total() const { return schedule.total(); }
    double y(int j) const { return response.at(j - 1); }
};

// f(j) for a patient on arm k. `arms_entered` counts experimental arms that
// had entered by patient j; N is the trial size and `peak` is N_p.
double trend_value(const TimeTrendSpec& spec, int j, int k, int arms_entered, int total, int peak);

// Resolves peak = 0 to floor(N / 2).
int effective_peak(const TimeTrendSpec& spec, int total);

TrialDataset generate_trial(const TrialSchedule& schedule, const ScenarioTruth& truth,
                            const TimeTrendSpec& trend, std::uint64_t seed);

// lambda_k = center for pinned arms, otherwise normal(center, sd^2).
std::vector<double> sample_arm_lambdas(double center, double sd, int num_experimental,
                                       const std::set<int>& pinned, std::uint64_t seed);

// CSV with header "j,k,s,y".
void write_dataset_csv(const TrialDataset& data, std::ostream& out);
TrialDataset read_dataset_csv(std::istream& in);

}  // namespace ncc
