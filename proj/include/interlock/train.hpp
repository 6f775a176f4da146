#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "interlock/data.hpp"
#include "interlock/model.hpp"
#include "interlock/optim.hpp"
#include "interlock/routing.hpp"
#include "interlock/sched.hpp"

namespace interlock {

struct Budget {
    enum class Kind { Steps, Epochs, LogicalTime };
    Kind kind = Kind::Steps;
    std::int64_t amount = 100;
};

enum class RunMode { Reference, Pipelined };

struct TrainOptions {
    RoutingPolicy policy;
    OptimizerConfig optim;
    LrSchedule schedule;
    Budget budget;
    int batch_size = 16;
    std::uint64_t seed = 1;
    RunMode mode = RunMode::Reference;
    AugmentPolicy augment;
    int eval_every = 0;     // 0 = evaluate at the end only
    int eval_train_n = 0;   // cap on train examples per eval (0 = all)
    int eval_test_n = 0;
    std::string metrics_path;  // empty = keep metrics in memory only
    // Deterministic hogwild pipelines the gradient application on a fixed
    // logical schedule; the free-running variant applies on OS arrival order.
    bool hogwild_free_run = false;
};

struct EvalResult {
    // head_acc[k-1]: accuracy of head k (the last head is the task output).
    std::vector<double> head_acc;
    // ensemble_acc[m-1]: averaged softmax probabilities of the top m heads.
    std::vector<double> ensemble_acc;
};

struct StepRecord {
    std::int64_t step;
    std::int64_t time_logical;
    double time_wall;
    double lr;
    std::vector<double> losses;
};

struct RunResult {
    std::int64_t steps = 0;
    std::int64_t time_logical = 0;
    double time_wall = 0.0;
    std::vector<StepRecord> history;
    EvalResult train_eval, test_eval;
    std::vector<double> staleness_mean;  // per component, hogwild runs
    std::vector<int> staleness_last;     // measured at the final applied batch
};

// Logical cost of `steps` optimization steps under the strategy on an
// n-component pipeline (the schedule closed form).
std::int64_t logical_time(const RoutingPolicy& policy, int components, std::int64_t steps);

RunResult train(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt);

// Accuracy per head plus top-m probability-ensemble accuracies over one split.
EvalResult evaluate(PartitionedModel& model, const Dataset& ds, bool test_split, int limit = 0,
                    int eval_batch = 64);

// Appendix-style convenience: fraction correct of averaged softmax outputs.
double accuracy_of_logits(const Tensor& logits, const std::vector<int>& targets);

namespace detail {
RunResult train_reference(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt,
                          std::int64_t total_steps);
RunResult train_pipelined(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt,
                          std::int64_t total_steps);
std::int64_t resolve_steps(const TrainOptions& opt, const Dataset& ds, int components);
}  // namespace detail

}  // namespace interlock
