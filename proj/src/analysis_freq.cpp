#include "ncc/analysis_freq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "ncc/special_functions.hpp"

namespace ncc {
namespace {

double safe_t(double estimate, double se) {
    if (se > 0.0) return estimate / se;
    if (estimate == 0.0) return 0.0;
    return std::copysign(std::numeric_limits<double>::infinity(), estimate);
}

void finish(FreqResult& r, double alpha) {
    r.t_stat = safe_t(r.estimate, r.std_error);
    r.p_value = special::student_t_sf(r.t_stat, r.df);
    r.reject = r.p_value < alpha;
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

std::vector<double> arm_responses(const TrialDataset& data, int k) {
    std::vector<double> out;
    const int last = data.schedule.exit.at(k);
    for (int j = 1; j <= last; ++j) {
        if (data.schedule.arm_of(j) == k) out.push_back(data.y(j));
    }
    return out;
}

std::vector<double> responses_at(const TrialDataset& data, std::span<const int> patients) {
    std::vector<double> out;
    out.reserve(patients.size());
    for (int j : patients) out.push_back(data.y(j));
    return out;
}

}  // namespace

FreqResult two_sample_ttest(std::span<const double> treat, std::span<const double> control, double alpha,
                            std::string method) {
    check_alpha(alpha);
    if (treat.size() < 2 || control.size() < 2) {
        throw std::invalid_argument(method + ": need at least 2 observations per group");
    }
    const double n1 = static_cast<double>(treat.size());
    const double n0 = static_cast<double>(control.size());
    const double m1 = std::accumulate(treat.begin(), treat.end(), 0.0) / n1;
    const double m0 = std::accumulate(control.begin(), control.end(), 0.0) / n0;
    double ss = 0.0;
    for (double v : treat) ss += (v - m1) * (v - m1);
    for (double v : control) ss += (v - m0) * (v - m0);

    FreqResult r;
    r.method = std::move(method);
    r.df = n1 + n0 - 2.0;
    r.estimate = m1 - m0;
    const double pooled_var = ss / r.df;
    r.std_error = std::sqrt(pooled_var * (1.0 / n1 + 1.0 / n0));
    finish(r, alpha);
    return r;
}

FreqResult separate_ttest(const TrialDataset& data, int k, double alpha) {
    const auto split = split_controls(data.schedule, k);
    const auto treat = arm_responses(data, k);
    const auto control = responses_at(data, split.concurrent);
    return two_sample_ttest(treat, control, alpha, "separate");
}

FreqResult pooled_ttest(const TrialDataset& data, int k, double alpha) {
    const auto split = split_controls(data.schedule, k);
    const auto treat = arm_responses(data, k);
    auto control = responses_at(data, split.non_concurrent);
    const auto cc = responses_at(data, split.concurrent);
    control.insert(control.end(), cc.begin(), cc.end());
    return two_sample_ttest(treat, control, alpha, "pooled");
}

OlsFit ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double alias_tol) {
    const Eigen::Index m = x.rows();
    const Eigen::Index p = x.cols();
    if (y.size() != m) throw std::invalid_argument("ols_fit: row count mismatch");

    // Greedy column screening against an orthonormal basis of the kept columns.
    OlsFit fit;
    Eigen::MatrixXd basis(m, p);
    Eigen::Index rank = 0;
    for (Eigen::Index c = 0; c < p; ++c) {
        Eigen::VectorXd v = x.col(c);
        const double norm0 = v.norm();
        for (int pass = 0; pass < 2; ++pass) {
            for (Eigen::Index b = 0; b < rank; ++b) v -= basis.col(b).dot(v) * basis.col(b);
        }
        const double norm1 = v.norm();
        if (norm0 == 0.0 || norm1 <= alias_tol * norm0) {
            fit.dropped.push_back(static_cast<int>(c));
            continue;
        }
        basis.col(rank++) = v / norm1;
        fit.kept.push_back(static_cast<int>(c));
    }
    const auto kept = static_cast<Eigen::Index>(fit.kept.size());
    if (m <= kept) throw std::invalid_argument("ols_fit: no residual degrees of freedom");

    Eigen::MatrixXd xk(m, kept);
    for (Eigen::Index c = 0; c < kept; ++c) xk.col(c) = x.col(fit.kept[c]);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(xk);
    fit.coef = qr.solve(y);
    fit.rss = (y - xk * fit.coef).squaredNorm();
    fit.df = static_cast<int>(m - kept);
    const double sigma2 = fit.rss / fit.df;

    // diag((R^T R)^{-1}) = squared norms of the columns of R^{-T}.
    const Eigen::MatrixXd r = qr.matrixQR().topRows(kept).triangularView<Eigen::Upper>();
    const Eigen::MatrixXd r_inv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(kept, kept));
    fit.std_error = (r_inv.rowwise().squaredNorm() * sigma2).cwiseSqrt();
    return fit;
}

FreqResult regression_model(const TrialDataset& data, int k, double alpha) {
    check_alpha(alpha);
    const auto& sched = data.schedule;
    if (k < 1 || k > sched.num_experimental()) throw std::invalid_argument("regression_model: unknown arm");
    const int exit_period = sched.exit_period(k);
    const int last = sched.periods.at(exit_period - 1).last;

    // Experimental arms observed in periods 1..S_k.
    std::vector<int> arm_column(sched.num_experimental() + 1, -1);
    std::vector<std::string> names{"intercept"};
    for (int j = 1; j <= last; ++j) {
        const int a = sched.arm_of(j);
        if (a > 0 && arm_column[a] < 0) arm_column[a] = 0;
    }
    int col = 1;
    for (int a = 1; a <= sched.num_experimental(); ++a) {
        if (arm_column[a] == 0) {
            arm_column[a] = col++;
            names.push_back("theta_" + std::to_string(a));
        }
    }
    const int first_period_col = col;
    for (int s = 2; s <= exit_period; ++s) names.push_back("tau_" + std::to_string(s));
    const int p = first_period_col + (exit_period - 1);

    Eigen::MatrixXd x = Eigen::MatrixXd::Zero(last, p);
    Eigen::VectorXd y(last);
    for (int j = 1; j <= last; ++j) {
        const int row = j - 1;
        x(row, 0) = 1.0;
        const int a = sched.arm_of(j);
        if (a > 0) x(row, arm_column[a]) = 1.0;
        const int s = sched.period_of(j);
        if (s >= 2) x(row, first_period_col + s - 2) = 1.0;
        y(row) = data.y(j);
    }

    const OlsFit fit = ols_fit(x, y);
    FreqResult r;
    r.method = "regression";
    for (int d : fit.dropped) r.dropped_columns.push_back(names[d]);
    const int target = arm_column[k];
    const auto it = std::find(fit.kept.begin(), fit.kept.end(), target);
    if (it == fit.kept.end()) throw std::runtime_error("regression_model: effect of arm " + std::to_string(k) + " is not identifiable");
    const auto idx = static_cast<Eigen::Index>(it - fit.kept.begin());
    r.estimate = fit.coef(idx);
    r.std_error = fit.std_error(idx);
    r.df = fit.df;
    finish(r, alpha);
    return r;
}

}  // namespace ncc
