#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ncc/datagen.hpp"

namespace ncc {

struct FreqResult {
    std::string method;
    double estimate = 0.0;
    double std_error = 0.0;
    double t_stat = 0.0;
    double df = 0.0;
    double p_value = 1.0;  // one-sided, upper tail
    bool reject = false;
    std::vector<std::string> dropped_columns;  // aliased design columns (regression only)
};

// Pooled-variance two-sample t-test of treat vs control, one-sided upper tail.
FreqResult two_sample_ttest(std::span<const double> treat, std::span<const double> control, double alpha,
                            std::string method);

// Arm k against concurrent controls only.
FreqResult separate_ttest(const TrialDataset& data, int k, double alpha);

// Arm k against concurrent and non-concurrent controls, no adjustment.
FreqResult pooled_ttest(const TrialDataset& data, int k, double alpha);

struct OlsFit {
    Eigen::VectorXd coef;       // kept columns only, in original order
    Eigen::VectorXd std_error;
    std::vector<int> kept;      // indices into the original columns
    std::vector<int> dropped;
    double rss = 0.0;
    int df = 0;
};

// Least squares via Householder QR. Columns that are linearly dependent on
// earlier columns (relative residual below `alias_tol`) are dropped.
OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alias_tol = 1e-9);

// Period-adjusted linear model on all data with s_j <= S_k: intercept,
// one effect per experimental arm present, one step per period 2..S_k.
FreqResult regression_model(const TrialDataset& data, int k, double alpha);

}  // namespace ncc
