#include "ncc/datagen.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "ncc/rng.hpp"

namespace ncc {

std::string_view to_string(TrendPattern p) {
    switch (p) {
        case TrendPattern::none: return "none";
        case TrendPattern::stepwise: return "stepwise";
        case TrendPattern::linear: return "linear";
        case TrendPattern::inverted_u: return "inverted_u";
    }
    return "none";
}

TrendPattern parse_trend_pattern(std::string_view name) {
    if (name == "none") return TrendPattern::none;
    if (name == "stepwise") return TrendPattern::stepwise;
    if (name == "linear") return TrendPattern::linear;
    if (name == "inverted_u") return TrendPattern::inverted_u;
    throw std::invalid_argument("unknown trend pattern '" + std::string(name) +
                                "' (expected none, stepwise, linear or inverted_u)");
}

int effective_peak(const TimeTrendSpec& spec, int total) {
    return spec.peak > 0 ? spec.peak : total / 2;
}

double trend_value(const TimeTrendSpec& spec, int j, int k, int arms_entered, int total, int peak) {
    if (j < 1 || j > total) throw std::out_of_range("trend_value: patient index outside 1..N");
    if (spec.pattern == TrendPattern::none) return 0.0;
    const double lambda = spec.lambda.at(k);
    switch (spec.pattern) {
        case TrendPattern::stepwise:
            return lambda * (arms_entered - 1);
        case TrendPattern::linear:
            if (total < 2) throw std::invalid_argument("trend_value: linear trend needs N >= 2");
            return lambda * (j - 1) / (total - 1.0);
        case TrendPattern::inverted_u: {
            if (total < 2) throw std::invalid_argument("trend_value: inverted-U trend needs N >= 2");
            if (peak < 2 || peak > total - 1) throw std::invalid_argument("trend_value: peak must lie in [2, N - 1]");
            if (j <= peak) return lambda * (j - 1) / (total - 1.0);
            return -lambda * (j - peak) / (total - 1.0) + lambda * (peak - 1) / (total - 1.0);
        }
        case TrendPattern::none: break;
    }
    return 0.0;
}

TrialDataset generate_trial(const TrialSchedule& schedule, const ScenarioTruth& truth,
                            const TimeTrendSpec& trend, std::uint64_t seed) {
    const int num_arms = schedule.num_experimental() + 1;
    if (static_cast<int>(truth.effect.size()) != num_arms - 1) {
        throw std::invalid_argument("generate_trial: effect vector length must equal K");
    }
    if (trend.pattern != TrendPattern::none && static_cast<int>(trend.lambda.size()) != num_arms) {
        throw std::invalid_argument("generate_trial: lambda vector length must equal K + 1");
    }
    const int total = schedule.total();
    const int peak = effective_peak(trend, total);
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    TrialDataset data{schedule, std::vector<double>(total)};
    for (int j = 1; j <= total; ++j) {
        const int k = schedule.arm_of(j);
        double mean = truth.control_mean + (k > 0 ? truth.effect[k - 1] : 0.0);
        mean += trend_value(trend, j, k, schedule.arms_entered_by(j), total, peak);
        const double eps = noise(rng);
        data.response[j - 1] = mean + truth.residual_sd * eps;
    }
    return data;
}

std::vector<double> sample_arm_lambdas(double center, double sd, int num_experimental,
                                       const std::set<int>& pinned, std::uint64_t seed) {
    if (sd < 0.0) throw std::invalid_argument("sample_arm_lambdas: sd must be non-negative");
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> lambda(num_experimental + 1, center);
    for (int k = 0; k <= num_experimental; ++k) {
        // Draw for every arm so that pinning one arm does not shift the others.
        const double z = normal(rng);
        if (!pinned.contains(k)) lambda[k] = center + sd * z;
    }
    return lambda;
}

void write_dataset_csv(const TrialDataset& data, std::ostream& out) {
    out << "j,k,s,y\n";
    out << std::setprecision(17);
    for (int j = 1; j <= data.total(); ++j) {
        out << j << ',' << data.schedule.arm_of(j) << ',' << data.schedule.period_of(j) << ',' << data.y(j) << '\n';
    }
}

TrialDataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("dataset csv: empty input");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "j,k,s,y") throw std::runtime_error("dataset csv: expected header 'j,k,s,y', got '" + line + "'");
    std::vector<int> arm, period;
    std::vector<double> y;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        std::istringstream ss(line);
        int j = 0, k = 0, s = 0;
        double value = 0.0;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ss >> j >> c1 >> k >> c2 >> s >> c3 >> value) || c1 != ',' || c2 != ',' || c3 != ',') {
            throw std::runtime_error("dataset csv: malformed row " + std::to_string(row));
        }
        if (j != static_cast<int>(arm.size()) + 1) {
            throw std::runtime_error("dataset csv: patient indices must be 1..N in order (row " + std::to_string(row) + ")");
        }
        arm.push_back(k);
        period.push_back(s);
        y.push_back(value);
    }
    return TrialDataset{reconstruct_schedule(std::move(arm), std::move(period)), std::move(y)};
}

}  // namespace ncc
