#include "interlock/optim.hpp"

#include <cmath>

#include "interlock/errors.hpp"

namespace interlock {

double LrSchedule::lr(std::int64_t step) const {
    if (step < 1) throw ConfigError("lr schedule: step must be >= 1");
    switch (kind) {
        case Kind::Constant:
            return base;
        case Kind::StepDecay: {
            double v = base;
            for (std::int64_t m : milestones)
                if (step >= m) v /= factor;
            return v;
        }
        case Kind::InvSqrtWarmup: {
            const double s = static_cast<double>(step);
            const double w = static_cast<double>(warmup);
            return std::pow(static_cast<double>(dim), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
        }
    }
    throw InternalError("unreachable");
}

Optimizer::Optimizer(const OptimizerConfig& cfg, std::vector<Parameter*> params) : cfg_(cfg) {
    for (Parameter* p : params)
        if (p->trainable) params_.push_back(p);
    slot1_.reserve(params_.size());
    for (Parameter* p : params_) slot1_.emplace_back(p->value.shape());
    if (cfg_.kind == OptimizerConfig::Kind::Adam) {
        slot2_.reserve(params_.size());
        for (Parameter* p : params_) slot2_.emplace_back(p->value.shape());
    }
}

void Optimizer::apply(double lr) {
    ++step_;
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Parameter& p = *params_[pi];
        const std::int64_t n = p.value.size();
        for (std::int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(p.grad[i]))
                throw NumericError("non-finite gradient in parameter '" + p.id + "' at step " +
                                   std::to_string(step_));
        }
        if (cfg_.kind == OptimizerConfig::Kind::Sgd) {
            Tensor& v = slot1_[pi];
            for (std::int64_t i = 0; i < n; ++i) {
                const double g = p.grad[i] + cfg_.weight_decay * p.value[i];
                v[i] = cfg_.momentum * v[i] + g;
                p.value[i] -= lr * v[i];
            }
        } else {
            Tensor& m = slot1_[pi];
            Tensor& v = slot2_[pi];
            const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
            const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
            for (std::int64_t i = 0; i < n; ++i) {
                const double g = p.grad[i] + cfg_.weight_decay * p.value[i];
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p.value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
        for (std::int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(p.value[i]))
                throw NumericError("parameter '" + p.id + "' became non-finite at step " + std::to_string(step_));
        }
        p.zero_grad();
    }
}

}  // namespace interlock
