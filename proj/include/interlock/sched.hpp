#pragma once

#include <cstdint>
#include <vector>

#include "interlock/routing.hpp"

namespace interlock::sched {

// A pipeline of `a` accelerators, one component per accelerator, running `b`
// training steps (batches) under a strategy. Unit-cost model: one forward box
// and one backward box per component touched, communication free.
struct PipelineConfig {
    int a = 1;
    int b = 1;
    RoutingPolicy::Kind strategy = RoutingPolicy::Kind::EndToEnd;
    int nwise = 1;
    int group = 1;
    bool mix_local = false;

    void validate() const;
    RoutingPolicy policy() const;
};

enum class Phase { Forward, Backward };

struct Event {
    int accel;  // 1-based component/accelerator
    int slot;   // 0-based timeslot
    int batch;  // 1-based
    Phase phase;
    int flow;  // loss index carried by a backward box; 0 for forwards
};

struct Trace {
    PipelineConfig config;
    std::vector<Event> events;
    int makespan = 0;
    std::vector<double> utilization;  // busy fraction per accelerator
};

// Fig-style closed forms: end_to_end 2ba, hogwild 2(b+a-1), n_wise 2bN+a-N
// (N=1 is local learning), grouped_local 2bg+a-g with g clamped to a.
std::int64_t closed_form_timesteps(const PipelineConfig& cfg);

// Greedy earliest-start simulation under the causality rules; backward work
// outranks forwards on each accelerator, older batches first.
Trace simulate(const PipelineConfig& cfg);

// Updates applied to component k between forward(k, i) and the application of
// batch i's own gradient. Zero for every blocking strategy; a-k at steady
// state under hogwild.
struct StalenessRecord {
    std::vector<std::vector<int>> per_batch;  // [component-1][batch-1]
    std::vector<int> steady;                  // value at the final batch
};
StalenessRecord staleness(const Trace& trace);

}  // namespace interlock::sched
