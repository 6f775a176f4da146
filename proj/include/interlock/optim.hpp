#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "interlock/tape.hpp"

namespace interlock {

struct OptimizerConfig {
    enum class Kind { Sgd, Adam };
    Kind kind = Kind::Sgd;
    double lr = 0.1;  // base rate; schedules scale from this where applicable
    double momentum = 0.0;
    double weight_decay = 0.0;  // classic L2, added to the gradient before momentum
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::string kind_name() const { return kind == Kind::Sgd ? "sgd" : "adam"; }
};

struct LrSchedule {
    enum class Kind { Constant, StepDecay, InvSqrtWarmup };
    Kind kind = Kind::Constant;
    double base = 0.1;
    std::vector<std::int64_t> milestones;  // steps at which the rate divides
    double factor = 10.0;
    int dim = 1024;
    std::int64_t warmup = 4000;

    // step is 1-based
    double lr(std::int64_t step) const;
};

// Owns per-parameter slots for a fixed parameter list (one instance per
// component body / head so pipelined workers stay independent).
class Optimizer {
public:
    Optimizer(const OptimizerConfig& cfg, std::vector<Parameter*> params);

    // Applies accumulated gradients at the given rate and zeroes them.
    // Throws NumericError on non-finite gradients or resulting parameters.
    void apply(double lr);
    std::int64_t step() const { return step_; }
    const std::vector<Parameter*>& params() const { return params_; }

private:
    OptimizerConfig cfg_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> slot1_;  // momentum / first moment
    std::vector<Tensor> slot2_;  // second moment (adam)
    std::int64_t step_ = 0;
};

}  // namespace interlock
