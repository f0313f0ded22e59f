#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ncc/datagen.hpp"
#include "ncc/time_machine.hpp"

namespace ncc {

struct NormalComponent {
    double weight = 1.0;
    double mean = 0.0;
    double sd = 1.0;

    bool operator==(const NormalComponent&) const = default;
};

struct NormalMixture {
    std::vector<NormalComponent> components;

    double mean() const;
    double variance() const;
    double density(double x) const;
    // Throws if weights are negative, do not sum to 1 (1e-12) or an sd is not positive.
    void validate() const;
};

struct MapConfig {
    double beta_var = 1000.0;      // sigma^2_beta, population-mean prior variance
    double tau_scale_var = 500.0;  // sigma^2_tau, half-normal scale on between-period sd
    double robust_weight = 0.1;    // a_R
    std::optional<double> unit_info_sd;  // default: pooled within-period sd of the non-concurrent controls
    double response_shape = 0.001;  // Gamma prior on the residual precision
    double response_rate = 0.001;
    std::optional<double> fixed_residual_sd;
    double effect_prior_var = 1000.0;  // treatment-arm mean prior
    int mixture_components = 2;
    int em_restarts = 5;
    int posterior_draws = 10000;
    McmcSettings mcmc;

    bool operator==(const MapConfig&) const = default;
};

struct MapPriorFit {
    NormalMixture prior;
    std::vector<double> predictive;  // eta_new draws
    std::vector<double> beta;        // population-mean draws
    double tau_acceptance = 0.0;     // post burn-in Metropolis acceptance rate
    double pooled_residual_var = 0.0;  // within-period variance of the input data (NaN if no df)
    std::vector<std::string> warnings;
};

// Hierarchical normal model over the non-concurrent periods (one vector of
// control responses per period), followed by an EM mixture fit to the
// predictive draws for a new period.
MapPriorFit build_map_prior(std::span<const std::vector<double>> periods, const MapConfig& config);

// (1 - a_R) * MAP components + a_R * unit_info. unit_info.weight is ignored.
NormalMixture robustify(const NormalMixture& map_prior, double robust_weight, NormalComponent unit_info);

// Conjugate update of each component with n observations of known sd whose
// mean is sample_mean; weights reweighted by the component marginal likelihood.
NormalMixture posterior_update_mixture(const NormalMixture& prior, double sample_mean, int n, double sd);

// Maximum-likelihood fit by EM, best of `restarts` initialisations. Degenerate
// components (vanishing sd or weight) reduce the component count.
NormalMixture fit_normal_mixture(std::span<const double> x, int components, int restarts, std::uint64_t seed);

PosteriorSummary map_analysis(const TrialDataset& data, int k, const MapConfig& config, double alpha);

std::string mixture_to_json(const NormalMixture& mixture);

}  // namespace ncc
