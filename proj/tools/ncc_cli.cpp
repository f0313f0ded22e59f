// Command-line front end: calibrate, simulate, analyze, aggregate, bands.
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncc/analysis_freq.hpp"
#include "ncc/harness.hpp"
#include "ncc/map_prior.hpp"
#include "ncc/time_machine.hpp"

using nlohmann::json;

namespace {

struct Common {
    std::string format = "csv";
    std::string out;
};

std::ostream& output(const Common& c, std::ofstream& file) {
    if (c.out.empty() || c.out == "-") return std::cout;
    file.open(c.out);
    if (!file) throw std::runtime_error("cannot open " + c.out);
    return file;
}

void add_format(CLI::App* app, Common& c) {
    app->add_option("--format", c.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Platform-trial simulation and analysis with non-concurrent controls"};
    app.require_subcommand(1);

    // calibrate
    Common cal_io;
    double d_expected = 1.0, d_maximum = 1.5, iota = 0.01;
    auto* cal = app.add_subcommand("calibrate", "Gamma prior on the drift precision from expected/maximum change");
    cal->add_option("--d-expected", d_expected, "Most plausible between-bucket change")->required();
    cal->add_option("--d-maximum", d_maximum, "Implausibly large change")->required();
    cal->add_option("--iota", iota, "Prior probability of exceeding d-maximum");
    cal->add_option("--out", cal_io.out, "Output file (default stdout)");
    add_format(cal, cal_io);

    // simulate
    Common sim_io;
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> reps;
    int workers = 1;
    auto* sim = app.add_subcommand("simulate", "Run a scenario config (grid expanded) and write results");
    sim->add_option("--config", config_path, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
    sim->add_option("--seed", seed, "Override the master seed");
    sim->add_option("--reps", reps, "Override the replication count");
    sim->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    sim->add_option("--out", sim_io.out, "Output directory")->required();
    add_format(sim, sim_io);

    // analyze
    Common an_io;
    std::string data_path, method = "regression", an_config, dump;
    int arm = 1;
    double alpha = 0.025;
    std::uint64_t an_seed = 1;
    auto* an = app.add_subcommand("analyze", "Analyse one dataset CSV (j,k,s,y) for one arm");
    an->add_option("--data", data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    an->add_option("--arm", arm, "Experimental arm to analyse");
    an->add_option("--method", method, "separate|pooled|regression|timemachine|map");
    an->add_option("--alpha", alpha, "One-sided level");
    an->add_option("--config", an_config, "Scenario config whose method settings are used");
    an->add_option("--seed", an_seed, "MCMC seed");
    an->add_option("--dump", dump, "Write TM draws (CSV) or the MAP prior (JSON) here");
    an->add_option("--out", an_io.out, "Output file (default stdout)");
    add_format(an, an_io);

    // aggregate
    Common ag_io;
    std::vector<std::string> inputs;
    double ag_alpha = 0.025;
    auto* ag = app.add_subcommand("aggregate", "Aggregate decision logs into rejection rates");
    ag->add_option("inputs", inputs, "decisions.csv files")->required()->check(CLI::ExistingFile);
    ag->add_option("--alpha", ag_alpha, "Nominal level for the prediction band");
    ag->add_option("--out", ag_io.out, "Output file (default stdout)");
    add_format(ag, ag_io);

    // bands
    Common band_io;
    double b_alpha = 0.025;
    int b_reps = 1000;
    auto* bands = app.add_subcommand("bands", "95% prediction band for a simulated rejection rate");
    bands->add_option("--alpha", b_alpha, "True rate");
    bands->add_option("--reps", b_reps, "Replications")->check(CLI::PositiveNumber);
    bands->add_option("--out", band_io.out, "Output file (default stdout)");
    add_format(bands, band_io);

    CLI11_PARSE(app, argc, argv);

    try {
        std::ofstream file;
        if (*cal) {
            const auto p = ncc::calibrate_drift_prior(d_expected, d_maximum, iota);
            auto& out = output(cal_io, file);
            out << std::setprecision(10);
            if (cal_io.format == "json") {
                out << json{{"d_expected", d_expected}, {"d_maximum", d_maximum}, {"iota", iota},
                            {"a_tau", p.shape}, {"b_tau", p.rate}}.dump(2) << '\n';
            } else {
                out << "d_expected,d_maximum,iota,a_tau,b_tau\n"
                    << d_expected << ',' << d_maximum << ',' << iota << ',' << p.shape << ',' << p.rate << '\n';
            }
        } else if (*sim) {
            auto config = ncc::load_config(config_path);
            if (seed) config.seed = *seed;
            if (reps) config.replications = *reps;
            std::vector<ncc::AggregateMetrics> results;
            for (const auto& point : ncc::expand_grid(config)) {
                std::cerr << "running " << point.name << " (R=" << point.replications << ")\n";
                results.push_back(ncc::run_scenario(point, workers));
            }
            ncc::write_results(results, sim_io.out);
            if (sim_io.format == "json") {
                std::cout << ncc::results_to_json(results).dump(2) << '\n';
            } else {
                ncc::write_results_csv(results, std::cout);
            }
        } else if (*an) {
            std::ifstream in(data_path);
            const auto data = ncc::read_dataset_csv(in);
            const auto kind = ncc::parse_method(method);
            ncc::MethodConfig mc;
            mc.kind = kind;
            if (!an_config.empty()) {
                const auto cfg = ncc::load_config(an_config);
                alpha = cfg.alpha;
                for (const auto& m : cfg.methods) {
                    if (m.kind == kind) mc = m;
                }
            }
            json result{{"method", method}, {"arm", arm}, {"alpha", alpha}};
            if (kind == ncc::MethodKind::separate || kind == ncc::MethodKind::pooled || kind == ncc::MethodKind::regression) {
                const auto r = kind == ncc::MethodKind::separate ? ncc::separate_ttest(data, arm, alpha)
                             : kind == ncc::MethodKind::pooled   ? ncc::pooled_ttest(data, arm, alpha)
                                                                 : ncc::regression_model(data, arm, alpha);
                result.update({{"estimate", r.estimate}, {"std_error", r.std_error}, {"t", r.t_stat}, {"df", r.df},
                               {"p_value", r.p_value}, {"reject", r.reject}, {"dropped_columns", r.dropped_columns}});
            } else {
                ncc::McmcSettings mcmc = mc.mcmc;
                mcmc.seed = an_seed;
                ncc::PosteriorSummary s;
                if (kind == ncc::MethodKind::timemachine) {
                    s = ncc::fit_time_machine(data, arm, mc.tm, mcmc, alpha);
                    if (!dump.empty()) {
                        ncc::TimeMachineSampler sampler(ncc::build_time_machine_design(data, arm, mc.tm.bucket_size), mc.tm);
                        std::ofstream d(dump);
                        ncc::write_draws_csv(sampler.run(mcmc), sampler.design().names, d);
                    }
                } else {
                    mc.map.mcmc = mcmc;
                    s = ncc::map_analysis(data, arm, mc.map, alpha);
                    if (!dump.empty()) {
                        const auto split = ncc::split_controls(data.schedule, arm);
                        std::vector<std::vector<double>> periods(split.last_period_before_entry);
                        for (int j : split.non_concurrent) periods[data.schedule.period_of(j) - 1].push_back(data.y(j));
                        std::ofstream d(dump);
                        d << ncc::mixture_to_json(ncc::build_map_prior(periods, mc.map).prior) << '\n';
                    }
                }
                result.update({{"estimate", s.mean}, {"sd", s.sd}, {"prob_positive", s.prob_positive},
                               {"reject", s.reject}, {"ess", s.ess}, {"warnings", s.warnings}});
            }
            auto& out = output(an_io, file);
            if (an_io.format == "json") {
                out << result.dump(2) << '\n';
            } else {
                out << "key,value\n";
                for (auto it = result.begin(); it != result.end(); ++it) {
                    if (it.value().is_array()) continue;
                    out << it.key() << ',' << (it.value().is_string() ? it.value().get<std::string>() : it.value().dump()) << '\n';
                }
            }
        } else if (*ag) {
            std::vector<ncc::DecisionRecord> all;
            for (const auto& path : inputs) {
                std::ifstream in(path);
                auto recs = ncc::read_decisions_csv(in);
                all.insert(all.end(), recs.begin(), recs.end());
            }
            const auto metrics = ncc::aggregate_decisions(all, ag_alpha);
            auto& out = output(ag_io, file);
            if (ag_io.format == "json") out << ncc::results_to_json(metrics).dump(2) << '\n';
            else ncc::write_results_csv(metrics, out);
        } else if (*bands) {
            const auto [lo, hi] = ncc::prediction_band(b_alpha, b_reps);
            auto& out = output(band_io, file);
            out << std::setprecision(10);
            if (band_io.format == "json") out << json{{"alpha", b_alpha}, {"R", b_reps}, {"lo", lo}, {"hi", hi}}.dump(2) << '\n';
            else out << "alpha,R,lo,hi\n" << b_alpha << ',' << b_reps << ',' << lo << ',' << hi << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
