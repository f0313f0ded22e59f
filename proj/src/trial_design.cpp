#include "ncc/trial_design.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "ncc/rng.hpp"

namespace ncc {
namespace {

void validate_arms(std::span<const ArmSpec> arms) {
    if (arms.size() < 2) throw std::invalid_argument("build_schedule: need the control and at least one experimental arm");
    for (std::size_t i = 0; i < arms.size(); ++i) {
        if (arms[i].index != static_cast<int>(i)) {
            throw std::invalid_argument("build_schedule: arm indices must be contiguous 0..K");
        }
        if (i == 0) continue;
        if (arms[i].sample_size < 1) {
            throw std::invalid_argument("build_schedule: arm " + std::to_string(i) + " has sample size < 1");
        }
        if (arms[i].entry_threshold < 0) {
            throw std::invalid_argument("build_schedule: arm " + std::to_string(i) + " has negative entry threshold");
        }
        if (i >= 2 && arms[i].entry_threshold < arms[i - 1].entry_threshold) {
            throw std::invalid_argument("build_schedule: entry thresholds must be non-decreasing");
        }
    }
    if (arms[1].entry_threshold != 0) {
        throw std::invalid_argument("build_schedule: the first experimental arm must enter at the start (d_1 = 0)");
    }
}

}  // namespace

std::vector<ArmSpec> make_arms(int sample_size, std::span<const int> entry_thresholds) {
    std::vector<ArmSpec> arms;
    arms.push_back({0, 0, 0});
    for (std::size_t i = 0; i < entry_thresholds.size(); ++i) {
        arms.push_back({static_cast<int>(i + 1), sample_size, entry_thresholds[i]});
    }
    return arms;
}

int TrialSchedule::arms_entered_by(int j) const {
    int c = 0;
    for (std::size_t k = 1; k < entry.size(); ++k) {
        if (entry[k] <= j) ++c;
    }
    return c;
}

TrialSchedule build_schedule(std::span<const ArmSpec> arms, std::uint64_t seed) {
    validate_arms(arms);
    const int num_arms = static_cast<int>(arms.size());
    Rng rng(seed);

    TrialSchedule s;
    s.entry.assign(num_arms, 0);
    s.exit.assign(num_arms, 0);
    s.entry[0] = 1;

    std::vector<int> accrued(num_arms, 0);
    std::vector<bool> entered(num_arms, false), exited(num_arms, false);
    entered[0] = true;
    int recruited = 0;
    std::vector<int> active{0};

    while (true) {
        // Block boundary at `recruited` patients.
        bool changed = false;
        for (int k = 1; k < num_arms; ++k) {
            if (entered[k] && !exited[k] && accrued[k] >= arms[k].sample_size) {
                exited[k] = true;
                s.exit[k] = recruited;
                changed = true;
            }
        }
        for (int k = 1; k < num_arms; ++k) {
            if (!entered[k] && arms[k].entry_threshold <= recruited) {
                entered[k] = true;
                s.entry[k] = recruited + 1;
                changed = true;
            }
        }
        if (changed || s.periods.empty()) {
            active.assign(1, 0);
            for (int k = 1; k < num_arms; ++k) {
                if (entered[k] && !exited[k]) active.push_back(k);
            }
        }
        if (active.size() == 1) {
            if (std::all_of(entered.begin(), entered.end(), [](bool e) { return e; })) break;
            throw std::invalid_argument("build_schedule: inconsistent entry thresholds; the trial would stop at " +
                                        std::to_string(recruited) + " patients before every arm entered");
        }
        if (s.periods.empty() || s.periods.back().active != active) {
            s.periods.push_back({recruited + 1, recruited, active});
        }

        std::vector<int> block = active;
        std::shuffle(block.begin(), block.end(), rng);
        const int period_index = s.num_periods();
        for (int k : block) {
            s.arm.push_back(k);
            s.period.push_back(period_index);
            ++accrued[k];
        }
        recruited += static_cast<int>(block.size());
        s.periods.back().last = recruited;
    }
    s.exit[0] = recruited;
    return s;
}

TrialSchedule reconstruct_schedule(std::vector<int> arm, std::vector<int> period) {
    if (arm.size() != period.size() || arm.empty()) {
        throw std::invalid_argument("reconstruct_schedule: arm and period columns must be non-empty and equal length");
    }
    TrialSchedule s;
    s.arm = std::move(arm);
    s.period = std::move(period);
    const int n = s.total();
    const int num_arms = *std::max_element(s.arm.begin(), s.arm.end()) + 1;
    if (*std::min_element(s.arm.begin(), s.arm.end()) < 0 || num_arms < 2) {
        throw std::invalid_argument("reconstruct_schedule: arm labels must be in 0..K with K >= 1");
    }
    if (s.period.front() != 1) throw std::invalid_argument("reconstruct_schedule: first period must be 1");
    for (int j = 1; j <= n; ++j) {
        const int p = s.period[j - 1];
        if (j == 1 || p != s.period[j - 2]) {
            if (j > 1 && p != s.period[j - 2] + 1) {
                throw std::invalid_argument("reconstruct_schedule: periods must be consecutive at patient " + std::to_string(j));
            }
            s.periods.push_back({j, j, {}});
        }
        auto& cur = s.periods.back();
        cur.last = j;
        const int k = s.arm[j - 1];
        if (!std::binary_search(cur.active.begin(), cur.active.end(), k)) {
            cur.active.insert(std::upper_bound(cur.active.begin(), cur.active.end(), k), k);
        }
    }
    s.entry.assign(num_arms, 0);
    s.exit.assign(num_arms, 0);
    for (int k = 0; k < num_arms; ++k) {
        int first_period = 0, last_period = 0;
        for (int j = 1; j <= n; ++j) {
            if (s.arm[j - 1] != k) continue;
            if (first_period == 0) first_period = s.period[j - 1];
            last_period = s.period[j - 1];
        }
        if (first_period == 0) {
            throw std::invalid_argument("reconstruct_schedule: arm " + std::to_string(k) + " has no patients");
        }
        // Entry and exit change the active set, so they sit on period boundaries.
        s.entry[k] = s.periods[first_period - 1].first;
        s.exit[k] = s.periods[last_period - 1].last;
    }
    s.entry[0] = 1;
    s.exit[0] = n;
    return s;
}

BucketAssignment derive_buckets(const TrialSchedule& schedule, int k, int bucket_size) {
    if (bucket_size < 1) throw std::invalid_argument("derive_buckets: bucket size must be >= 1");
    if (k < 0 || k > schedule.num_experimental()) throw std::invalid_argument("derive_buckets: unknown arm");
    const int last = schedule.exit[k];
    if (last < 1) throw std::invalid_argument("derive_buckets: arm " + std::to_string(k) + " never completes");
    BucketAssignment b;
    b.last_patient = last;
    b.count = (last + bucket_size - 1) / bucket_size;
    b.bucket.resize(last);
    for (int j = 1; j <= last; ++j) {
        b.bucket[j - 1] = (last - j + bucket_size) / bucket_size;
    }
    return b;
}

ControlSplit split_controls(const TrialSchedule& schedule, int k) {
    if (k < 1 || k > schedule.num_experimental()) throw std::invalid_argument("split_controls: k must be an experimental arm");
    ControlSplit out;
    out.last_period_before_entry = schedule.entry_period(k) - 1;
    out.exit_period = schedule.exit_period(k);
    for (int j = 1; j <= schedule.total(); ++j) {
        if (schedule.arm_of(j) != 0) continue;
        const int s = schedule.period_of(j);
        if (s <= out.last_period_before_entry) {
            out.non_concurrent.push_back(j);
        } else if (s <= out.exit_period) {
            out.concurrent.push_back(j);
        }
    }
    return out;
}

}  // namespace ncc
