#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ncc/datagen.hpp"

namespace ncc {

// Gamma(shape, rate) prior on the drift precision tau.
struct DriftPrior {
    double shape = 0.0;
    double rate = 0.0;
};

// Solves E(tau) = 1 / d_expected^2 and P(tau < 1 / d_maximum^2) = iota.
// Since shape/rate is pinned by the mean, this is a 1-d root search in the
// shape. Throws std::runtime_error if the root cannot be bracketed.
DriftPrior calibrate_drift_prior(double d_expected, double d_maximum, double iota);

struct TMPrior {
    double drift_shape = 11.562217;  // calibrated for (1, 1.5, 0.01)
    double drift_rate = 11.562217;
    double response_shape = 0.001;
    double response_rate = 0.001;
    double intercept_var = 1000.0;
    double effect_var = 1000.0;
    int bucket_size = 25;
    // Pin the hyper-precisions instead of sampling them (degenerate priors).
    std::optional<double> fixed_drift_precision;
    std::optional<double> fixed_response_precision;

    bool operator==(const TMPrior&) const = default;
};

struct McmcSettings {
    int iterations = 4000;
    int burn_in = 1000;
    int thin = 1;
    int chains = 1;
    std::uint64_t seed = 1;

    bool operator==(const McmcSettings&) const = default;
};

void validate(const McmcSettings& mcmc);

struct PosteriorSummary {
    std::string method;
    double mean = 0.0;  // posterior mean of theta_k
    double sd = 0.0;
    double prob_positive = 0.0;
    bool reject = false;
    double ess = 0.0;
    std::vector<double> draws;  // retained theta_k draws (empty when computed in closed form)
    std::vector<std::string> warnings;
};

// reject <=> prob_positive > 1 - alpha (strict).
bool tm_decision(const PosteriorSummary& summary, double alpha);

// Regression layout of the bucketed model for arm k: intercept, one effect
// per experimental arm with data in buckets 1..C_k, then omega_2..omega_C.
struct TimeMachineDesign {
    Eigen::MatrixXd x;
    Eigen::VectorXd y;
    std::vector<std::string> names;
    int num_fixed = 0;   // intercept + effects
    int num_buckets = 1; // C_k
    int target = -1;     // column of theta_k
};

TimeMachineDesign build_time_machine_design(const TrialDataset& data, int k, int bucket_size);

// Second-order random walk operator on (omega_2, ..., omega_C) with
// omega_1 = 0: row 0 is omega_2, row i is omega_{i+2} - 2 omega_{i+1} + omega_i.
Eigen::MatrixXd drift_difference_operator(int num_drift);

struct TimeMachineDraws {
    Eigen::MatrixXd coef;  // one row per retained draw
    std::vector<double> drift_precision;
    std::vector<double> response_precision;
};

class TimeMachineSampler {
public:
    TimeMachineSampler(TimeMachineDesign design, TMPrior prior);

    // Chains are pooled in order; each chain is seeded from mcmc.seed and its index.
    TimeMachineDraws run(const McmcSettings& mcmc) const;

    // Prior precision of the coefficient vector given drift precision tau.
    Eigen::MatrixXd prior_precision(double tau) const;

    const TimeMachineDesign& design() const { return design_; }

private:
    void run_chain(std::uint64_t seed, const McmcSettings& mcmc, TimeMachineDraws& out, Eigen::Index& row) const;

    TimeMachineDesign design_;
    TMPrior prior_;
    Eigen::MatrixXd xtx_;
    Eigen::VectorXd xty_;
    double yty_ = 0.0;
    Eigen::MatrixXd drift_gram_;  // A^T A
};

PosteriorSummary fit_time_machine(const TrialDataset& data, int k, const TMPrior& prior,
                                  const McmcSettings& mcmc, double alpha);

// Initial-positive-sequence estimator.
double effective_sample_size(std::span<const double> draws);

// Long format: iteration, parameter, value.
void write_draws_csv(const TimeMachineDraws& draws, const std::vector<std::string>& names, std::ostream& out);

}  // namespace ncc
