#include "ncc/time_machine.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include <boost/math/tools/roots.hpp>

#include "ncc/rng.hpp"
#include "ncc/special_functions.hpp"

namespace ncc {

DriftPrior calibrate_drift_prior(double d_expected, double d_maximum, double iota) {
    if (!(d_expected > 0.0 && d_expected < d_maximum)) {
        throw std::invalid_argument("calibrate_drift_prior: need 0 < D_expected < D_maximum");
    }
    if (!(iota > 0.0 && iota < 1.0)) throw std::invalid_argument("calibrate_drift_prior: iota must lie in (0, 1)");

    const double v_exp = d_expected * d_expected;
    const double threshold = 1.0 / (d_maximum * d_maximum);
    // P(tau < threshold) falls from 1 to 0 as the shape grows (mean held fixed).
    auto excess = [&](double shape) { return special::gamma_cdf(threshold, shape, shape * v_exp) - iota; };

    double lo = 1.0, hi = 1.0;
    while (excess(lo) < 0.0) {
        lo /= 4.0;
        if (lo < 1e-8) throw std::runtime_error("calibrate_drift_prior: bracket expansion failed below shape 1e-8");
    }
    while (excess(hi) > 0.0) {
        hi *= 4.0;
        if (hi > 1e8) throw std::runtime_error("calibrate_drift_prior: bracket expansion failed above shape 1e8");
    }
    if (lo == hi) return {lo, lo * v_exp};

    std::uintmax_t max_iter = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(excess, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                         max_iter);
    const double shape = 0.5 * (a + b);
    if (std::abs(excess(shape)) > 1e-6) throw std::runtime_error("calibrate_drift_prior: root search did not converge");
    return {shape, shape * v_exp};
}

void validate(const McmcSettings& mcmc) {
    if (mcmc.iterations < 1) throw std::invalid_argument("mcmc: iterations must be >= 1");
    if (mcmc.burn_in < 0 || mcmc.burn_in >= mcmc.iterations) throw std::invalid_argument("mcmc: need 0 <= burn_in < iterations");
    if (mcmc.thin < 1) throw std::invalid_argument("mcmc: thin must be >= 1");
    if (mcmc.chains < 1) throw std::invalid_argument("mcmc: chains must be >= 1");
}

bool tm_decision(const PosteriorSummary& summary, double alpha) { return summary.prob_positive > 1.0 - alpha; }

Eigen::MatrixXd drift_difference_operator(int num_drift) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_drift, num_drift);
    for (int i = 0; i < num_drift; ++i) {
        a(i, i) = 1.0;
        if (i >= 1) a(i, i - 1) = -2.0;
        if (i >= 2) a(i, i - 2) = 1.0;
    }
    return a;
}

TimeMachineDesign build_time_machine_design(const TrialDataset& data, int k, int bucket_size) {
    const auto& sched = data.schedule;
    const BucketAssignment buckets = derive_buckets(sched, k, bucket_size);
    const int m = buckets.last_patient;

    std::vector<int> arm_column(sched.num_experimental() + 1, -1);
    for (int j = 1; j <= m; ++j) {
        const int a = sched.arm_of(j);
        if (a > 0) arm_column[a] = 0;
    }
    TimeMachineDesign d;
    d.names.push_back("eta0");
    int col = 1;
    for (int a = 1; a <= sched.num_experimental(); ++a) {
        if (arm_column[a] == 0) {
            arm_column[a] = col++;
            d.names.push_back("theta_" + std::to_string(a));
        }
    }
    d.num_fixed = col;
    d.num_buckets = buckets.count;
    d.target = arm_column[k];
    for (int c = 2; c <= buckets.count; ++c) d.names.push_back("omega_" + std::to_string(c));
    const int p = col + buckets.count - 1;

    d.x = Eigen::MatrixXd::Zero(m, p);
    d.y.resize(m);
    for (int j = 1; j <= m; ++j) {
        const int row = j - 1;
        d.x(row, 0) = 1.0;
        const int a = sched.arm_of(j);
        if (a > 0) d.x(row, arm_column[a]) = 1.0;
        const int c = buckets.bucket_of(j);
        if (c >= 2) d.x(row, col + c - 2) = 1.0;
        d.y(row) = data.y(j);
    }
    return d;
}

TimeMachineSampler::TimeMachineSampler(TimeMachineDesign design, TMPrior prior)
    : design_(std::move(design)), prior_(prior) {
    if (design_.x.rows() != design_.y.size() || design_.x.rows() < 1) {
        throw std::invalid_argument("time machine: empty or inconsistent design");
    }
    if (design_.num_fixed + design_.num_buckets - 1 != design_.x.cols()) {
        throw std::invalid_argument("time machine: column layout does not match bucket count");
    }
    for (double v : {prior_.drift_shape, prior_.drift_rate, prior_.response_shape, prior_.response_rate,
                     prior_.intercept_var, prior_.effect_var}) {
        if (!(v > 0.0)) throw std::invalid_argument("time machine: prior parameters must be positive");
    }
    xtx_ = design_.x.transpose() * design_.x;
    xty_ = design_.x.transpose() * design_.y;
    yty_ = design_.y.squaredNorm();
    const Eigen::MatrixXd a = drift_difference_operator(design_.num_buckets - 1);
    drift_gram_ = a.transpose() * a;
}

Eigen::MatrixXd TimeMachineSampler::prior_precision(double tau) const {
    const Eigen::Index p = design_.x.cols();
    const int nf = design_.num_fixed;
    Eigen::MatrixXd prec = Eigen::MatrixXd::Zero(p, p);
    prec(0, 0) = 1.0 / prior_.intercept_var;
    for (int i = 1; i < nf; ++i) prec(i, i) = 1.0 / prior_.effect_var;
    const int nd = design_.num_buckets - 1;
    if (nd > 0) prec.bottomRightCorner(nd, nd) = tau * drift_gram_;
    return prec;
}

void TimeMachineSampler::run_chain(std::uint64_t seed, const McmcSettings& mcmc, TimeMachineDraws& out,
                                   Eigen::Index& row) const {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const Eigen::Index p = design_.x.cols();
    const int nd = design_.num_buckets - 1;
    const double m = static_cast<double>(design_.y.size());

    double tau = prior_.fixed_drift_precision.value_or(prior_.drift_shape / prior_.drift_rate);
    double tau_y = prior_.fixed_response_precision.value_or(1.0);
    if (!prior_.fixed_response_precision) {
        const double mean = design_.y.mean();
        const double var = (design_.y.array() - mean).square().sum() / std::max(1.0, m - 1.0);
        if (var > 0.0) tau_y = 1.0 / var;
    }

    Eigen::VectorXd beta(p), z(p);
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int it = 0; it < mcmc.iterations; ++it) {
        // Coefficients | tau, tau_y: N(Q^{-1} tau_y X^T y, Q^{-1}).
        Eigen::MatrixXd q = tau_y * xtx_ + prior_precision(tau);
        llt.compute(q);
        if (llt.info() != Eigen::Success) {
            const double scale = q.diagonal().mean();
            bool ok = false;
            for (double jitter : {1e-12, 1e-10, 1e-8}) {
                q.diagonal().array() += jitter * scale;
                llt.compute(q);
                if (llt.info() == Eigen::Success) {
                    ok = true;
                    break;
                }
            }
            if (!ok) throw std::runtime_error("time machine: posterior precision is not positive definite");
        }
        const Eigen::VectorXd mean = llt.solve(tau_y * xty_);
        for (Eigen::Index i = 0; i < p; ++i) z(i) = normal(rng);
        beta = mean + llt.matrixU().solve(z);

        if (!prior_.fixed_drift_precision && nd > 0) {
            const auto omega = beta.tail(nd);
            const double quad = omega.dot(drift_gram_ * omega);
            std::gamma_distribution<double> g(prior_.drift_shape + 0.5 * nd, 1.0 / (prior_.drift_rate + 0.5 * quad));
            tau = g(rng);
        }
        if (!prior_.fixed_response_precision) {
            const double rss = std::max(0.0, yty_ - 2.0 * beta.dot(xty_) + beta.dot(xtx_ * beta));
            std::gamma_distribution<double> g(prior_.response_shape + 0.5 * m, 1.0 / (prior_.response_rate + 0.5 * rss));
            tau_y = g(rng);
        }
        if (!beta.allFinite() || !std::isfinite(tau) || !std::isfinite(tau_y)) {
            throw std::runtime_error("time machine: non-finite draw");
        }

        if (it >= mcmc.burn_in && (it - mcmc.burn_in) % mcmc.thin == 0) {
            out.coef.row(row) = beta.transpose();
            out.drift_precision[row] = tau;
            out.response_precision[row] = tau_y;
            ++row;
        }
    }
}

TimeMachineDraws TimeMachineSampler::run(const McmcSettings& mcmc) const {
    validate(mcmc);
    const int per_chain = (mcmc.iterations - mcmc.burn_in + mcmc.thin - 1) / mcmc.thin;
    const Eigen::Index total = static_cast<Eigen::Index>(per_chain) * mcmc.chains;
    TimeMachineDraws out;
    out.coef.resize(total, design_.x.cols());
    out.drift_precision.resize(total);
    out.response_precision.resize(total);
    Eigen::Index row = 0;
    for (int c = 0; c < mcmc.chains; ++c) {
        run_chain(derive_seed(mcmc.seed, {static_cast<std::uint64_t>(c)}), mcmc, out, row);
    }
    return out;
}

double effective_sample_size(std::span<const double> draws) {
    const std::size_t n = draws.size();
    if (n < 4) return static_cast<double>(n);
    double mean = 0.0;
    for (double v : draws) mean += v;
    mean /= n;
    double c0 = 0.0;
    for (double v : draws) c0 += (v - mean) * (v - mean);
    c0 /= n;
    if (c0 <= 0.0) return static_cast<double>(n);
    auto autocov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (draws[i] - mean) * (draws[i + lag] - mean);
        return s / n;
    };
    // Geyer: sum consecutive pairs while they stay positive.
    double sum = 0.0;
    for (std::size_t lag = 0; lag + 1 < n; lag += 2) {
        const double pair = autocov(lag) + autocov(lag + 1);
        if (pair <= 0.0) break;
        sum += pair;
    }
    const double tau_int = std::max(1.0, (2.0 * sum / c0) - 1.0);
    return std::min(static_cast<double>(n), n / tau_int);
}

PosteriorSummary fit_time_machine(const TrialDataset& data, int k, const TMPrior& prior,
                                  const McmcSettings& mcmc, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (k < 1 || k > data.schedule.num_experimental()) throw std::invalid_argument("time machine: unknown arm");
    TimeMachineSampler sampler(build_time_machine_design(data, k, prior.bucket_size), prior);
    const TimeMachineDraws draws = sampler.run(mcmc);
    const int target = sampler.design().target;

    PosteriorSummary s;
    s.method = "timemachine";
    s.draws.assign(draws.coef.col(target).data(), draws.coef.col(target).data() + draws.coef.rows());
    const double n = static_cast<double>(s.draws.size());
    double positive = 0.0, sum = 0.0;
    for (double v : s.draws) {
        sum += v;
        if (v > 0.0) positive += 1.0;
    }
    s.mean = sum / n;
    double ss = 0.0;
    for (double v : s.draws) ss += (v - s.mean) * (v - s.mean);
    s.sd = n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.prob_positive = positive / n;
    s.ess = effective_sample_size(s.draws);
    s.reject = tm_decision(s, alpha);
    return s;
}

void write_draws_csv(const TimeMachineDraws& draws, const std::vector<std::string>& names, std::ostream& out) {
    out << "iteration,parameter,value\n";
    const auto prec = out.precision(17);
    for (Eigen::Index i = 0; i < draws.coef.rows(); ++i) {
        for (Eigen::Index c = 0; c < draws.coef.cols(); ++c) {
            out << i << ',' << names.at(c) << ',' << draws.coef(i, c) << '\n';
        }
        out << i << ",tau," << draws.drift_precision[i] << '\n';
        out << i << ",tau_y," << draws.response_precision[i] << '\n';
    }
    out.precision(prec);
}

}  // namespace ncc
