#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ncc {

// Patient indices are 1-based throughout the public API (j = 1..N); the
// per-patient vectors store patient j at position j - 1.

struct ArmSpec {
    int index = 0;            // 0 = control
    int sample_size = 0;      // n; ignored for the control arm
    int entry_threshold = 0;  // d_k, patients recruited before the arm may enter
};

// Control plus K experimental arms sharing the same target size n.
std::vector<ArmSpec> make_arms(int sample_size, std::span<const int> entry_thresholds);

struct Period {
    int first = 0;  // first patient index (inclusive)
    int last = 0;   // last patient index (inclusive)
    std::vector<int> active;  // sorted arm indices, control included

    int size() const { return last - first + 1; }
};

struct TrialSchedule {
    std::vector<int> arm;      // k_j
    std::vector<int> period;   // s_j in 1..S
    std::vector<Period> periods;
    std::vector<int> entry;    // first patient index at which arm k is active
    std::vector<int> exit;     // T_k, last patient index of the block in which arm k completes

    int total() const { return static_cast<int>(arm.size()); }
    int num_experimental() const { return static_cast<int>(entry.size()) - 1; }
    int num_periods() const { return static_cast<int>(periods.size()); }
    int arm_of(int j) const { return arm.at(j - 1); }
    int period_of(int j) const { return period.at(j - 1); }
    int entry_period(int k) const { return period_of(entry.at(k)); }
    int exit_period(int k) const { return period_of(exit.at(k)); }
    // Number of experimental arms whose entry index is <= j.
    int arms_entered_by(int j) const;
};

// Block-randomised schedule. Entry and exit happen at block boundaries; a
// block holds one patient per active arm in a uniformly random order.
TrialSchedule build_schedule(std::span<const ArmSpec> arms, std::uint64_t seed);

// Rebuild the schedule metadata from per-patient arm and period labels, e.g.
// for a dataset read back from disk. Period boundaries must coincide with
// changes of the active set, as produced by build_schedule.
TrialSchedule reconstruct_schedule(std::vector<int> arm, std::vector<int> period);

struct BucketAssignment {
    int last_patient = 0;     // T_k
    int count = 0;            // C_k
    std::vector<int> bucket;  // c_j for j = 1..T_k; 1 is the most recent

    int bucket_of(int j) const { return bucket.at(j - 1); }
};

BucketAssignment derive_buckets(const TrialSchedule& schedule, int k, int bucket_size);

struct ControlSplit {
    std::vector<int> concurrent;      // patient indices
    std::vector<int> non_concurrent;  // patient indices
    int last_period_before_entry = 0; // S-bar_k
    int exit_period = 0;              // S_k
};

ControlSplit split_controls(const TrialSchedule& schedule, int k);

}  // namespace ncc
