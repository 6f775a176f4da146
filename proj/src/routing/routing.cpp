#include "interlock/routing.hpp"

#include <algorithm>
#include <cmath>

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"
#include "interlock/rng.hpp"

namespace interlock {

RoutingPolicy RoutingPolicy::n_wise(int n, bool mix) {
    RoutingPolicy p;
    p.kind = Kind::NWise;
    p.nwise = n;
    p.mix_local = mix;
    return p;
}

RoutingPolicy RoutingPolicy::grouped_local(int g) {
    RoutingPolicy p;
    p.kind = Kind::GroupedLocal;
    p.group = g;
    return p;
}

RoutingPolicy RoutingPolicy::hogwild(bool aux) {
    RoutingPolicy p;
    p.kind = Kind::Hogwild;
    p.hogwild_aux = aux;
    return p;
}

void RoutingPolicy::validate() const {
    if (kind == Kind::NWise && nwise < 1) throw ConfigError("strategy.n: n_wise window must be >= 1");
    if (kind == Kind::GroupedLocal && group < 1) throw ConfigError("strategy.g: group size must be >= 1");
    if (aux_weight < 0.0) throw ConfigError("strategy.aux_weight must be >= 0");
}

std::string RoutingPolicy::kind_name() const {
    switch (kind) {
        case Kind::EndToEnd: return "end_to_end";
        case Kind::NWise: return "n_wise";
        case Kind::GroupedLocal: return "grouped_local";
        case Kind::Hogwild: return "hogwild";
    }
    return "?";
}

GradientAssignment assignment(const RoutingPolicy& policy, int n) {
    if (n < 1) throw ConfigError("assignment: need at least one component");
    policy.validate();
    GradientAssignment ga;
    ga.source_loss.assign(static_cast<std::size_t>(n), n);
    ga.reach.assign(static_cast<std::size_t>(n), {});

    switch (policy.kind) {
        case RoutingPolicy::Kind::EndToEnd:
            for (int k = 1; k <= n; ++k) ga.reach.back().push_back(k);
            break;

        case RoutingPolicy::Kind::Hogwild:
            for (int k = 1; k <= n; ++k) ga.reach.back().push_back(k);
            break;

        case RoutingPolicy::Kind::NWise: {
            const int N = policy.nwise;
            for (int k = 1; k <= n; ++k)
                ga.source_loss[static_cast<std::size_t>(k - 1)] = std::min(k + N - 1, n);
            if (policy.mix_local) {
                // windowed reading: every loss in {k .. min(k+N-1, n)} updates body k
                for (int j = 1; j <= n; ++j)
                    for (int k = std::max(1, j - N + 1); k <= j; ++k)
                        ga.reach[static_cast<std::size_t>(j - 1)].push_back(k);
            } else {
                for (int k = 1; k <= n; ++k)
                    ga.reach[static_cast<std::size_t>(ga.source_loss[static_cast<std::size_t>(k - 1)] - 1)]
                        .push_back(k);
            }
            break;
        }

        case RoutingPolicy::Kind::GroupedLocal: {
            const int g = policy.group;
            for (int lo = 1; lo <= n; lo += g) {
                const int hi = std::min(lo + g - 1, n);
                for (int k = lo; k <= hi; ++k) {
                    ga.source_loss[static_cast<std::size_t>(k - 1)] = hi;
                    ga.reach[static_cast<std::size_t>(hi - 1)].push_back(k);
                }
            }
            break;
        }
    }
    for (auto& r : ga.reach) std::sort(r.begin(), r.end());
    return ga;
}

std::vector<LossRoute> plan_routes(const RoutingPolicy& policy, int n) {
    const GradientAssignment ga = assignment(policy, n);
    std::vector<LossRoute> routes;
    for (int j = 1; j <= n; ++j) {
        LossRoute r;
        r.loss = j;
        r.weight = j == n ? 1.0 : policy.aux_weight;
        r.body_targets = ga.reach[static_cast<std::size_t>(j - 1)];
        r.train_head = j < n;
        if (policy.kind == RoutingPolicy::Kind::Hogwild && !policy.hogwild_aux) r.train_head = false;
        r.flow_bottom = r.body_targets.empty() ? j + 1 : r.body_targets.front();
        if (r.body_targets.empty() && !r.train_head) continue;  // loss unused under this policy
        routes.push_back(std::move(r));
    }
    return routes;
}

std::vector<Value> route_cuts(const LossRoute& route, const ForwardPass& fp) {
    // Stop the flow just below component flow_bottom, i.e. at a_{flow_bottom-1}.
    if (route.flow_bottom <= 1) return {};
    return {fp.act[static_cast<std::size_t>(route.flow_bottom - 2)]};
}

void harvest_route(Tape& t, const LossRoute& route, const ForwardPass& fp, PartitionedModel& model) {
    const auto& k = kernels::active();
    auto harvest = [&](const ParamBinds& binds) {
        for (const auto& [param, value] : binds) {
            if (!param->trainable || !t.grad_touched(value)) continue;
            const Tensor& g = t.grad(value);
            k.axpy(1.0, g.data(), param->grad.data(), g.size());
        }
    };
    for (int comp : route.body_targets) harvest(fp.binds[static_cast<std::size_t>(comp - 1)].body);
    if (route.train_head) harvest(fp.binds[static_cast<std::size_t>(route.loss - 1)].head);
}

std::vector<double> backward_routed(Tape& t, PartitionedModel& model, const ForwardPass& fp,
                                    const std::vector<int>& targets, const RoutingPolicy& policy) {
    const int n = model.n();
    const auto losses = component_losses(t, fp, targets);
    std::vector<double> values;
    values.reserve(losses.size());
    for (Value l : losses) values.push_back(t.val(l).item());

    for (const LossRoute& route : plan_routes(policy, n)) {
        t.zero_grads();
        t.backward(losses[static_cast<std::size_t>(route.loss - 1)], route.weight, route_cuts(route, fp));
        harvest_route(t, route, fp, model);
    }
    t.zero_grads();
    return values;
}

RoutedCheckReport routed_grad_check(PartitionedModel& model, const RoutingPolicy& policy, const Tensor& x,
                                    const std::vector<int>& targets, double eps, int max_coords,
                                    std::uint64_t seed) {
    const int n = model.n();
    const auto routes = plan_routes(policy, n);

    // analytic: one routed backward, grads copied out per parameter
    for (Parameter* p : model.all_params()) p->zero_grad();
    {
        Tape t;
        auto fp = model.forward(t, t.leaf(x), /*training=*/true);
        backward_routed(t, model, fp, targets, policy);
    }

    // losses whose gradients the policy routes into each component's body/head
    struct Driver {
        int loss;
        double weight;
    };
    std::vector<std::vector<Driver>> body_drivers(static_cast<std::size_t>(n));
    std::vector<std::vector<Driver>> head_drivers(static_cast<std::size_t>(n));
    for (const LossRoute& r : routes) {
        for (int k : r.body_targets) body_drivers[static_cast<std::size_t>(k - 1)].push_back({r.loss, r.weight});
        if (r.train_head) head_drivers[static_cast<std::size_t>(r.loss - 1)].push_back({r.loss, r.weight});
    }

    auto loss_sum = [&](const std::vector<Driver>& drivers) {
        Tape t;
        auto fp = model.forward(t, t.leaf(x), /*training=*/true);
        const auto losses = component_losses(t, fp, targets);
        double total = 0.0;
        for (const Driver& d : drivers) total += d.weight * t.val(losses[static_cast<std::size_t>(d.loss - 1)]).item();
        return total;
    };

    RoutedCheckReport rep;
    rep.per_component.assign(static_cast<std::size_t>(n), 0.0);
    Rng rng(derive_seed(seed, "routed-check"));
    auto check_params = [&](const std::vector<Parameter*>& params, const std::vector<Driver>& drivers, int comp) {
        if (drivers.empty()) return;
        for (Parameter* p : params) {
            if (!p->trainable) continue;
            const Tensor analytic = p->grad;
            const std::int64_t total = p->value.size();
            const std::int64_t probes = max_coords > 0 ? std::min<std::int64_t>(max_coords, total) : total;
            for (std::int64_t t = 0; t < probes; ++t) {
                const std::int64_t c =
                    max_coords > 0 ? rng.uniform_int(static_cast<int>(total)) : t;
                const double saved = p->value[c];
                p->value[c] = saved + eps;
                const double up = loss_sum(drivers);
                p->value[c] = saved - eps;
                const double down = loss_sum(drivers);
                p->value[c] = saved;
                const double numeric = (up - down) / (2.0 * eps);
                const double rel = std::abs(analytic[c] - numeric) /
                                   std::max(1e-8, std::abs(analytic[c]) + std::abs(numeric));
                auto& slot = rep.per_component[static_cast<std::size_t>(comp - 1)];
                slot = std::max(slot, rel);
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst_param = p->id;
                }
            }
        }
    };
    for (int k = 1; k <= n; ++k) {
        check_params(model.comp(k).body_params(), body_drivers[static_cast<std::size_t>(k - 1)], k);
        check_params(model.comp(k).head_params(), head_drivers[static_cast<std::size_t>(k - 1)], k);
    }
    return rep;
}

std::vector<double> backward_end_to_end_with_aux(Tape& t, PartitionedModel& model, const ForwardPass& fp,
                                                 const std::vector<int>& targets, double aux_weight) {
    const int n = model.n();
    const auto losses = component_losses(t, fp, targets);
    std::vector<double> values;
    values.reserve(losses.size());
    for (Value l : losses) values.push_back(t.val(l).item());

    Value total = losses[static_cast<std::size_t>(n - 1)];
    for (int j = 1; j < n; ++j)
        total = add(t, total, scale(t, losses[static_cast<std::size_t>(j - 1)], aux_weight));

    t.zero_grads();
    t.backward(total, 1.0, {});
    const auto& k = kernels::active();
    for (int comp = 1; comp <= n; ++comp) {
        for (const ParamBinds* binds : {&fp.binds[static_cast<std::size_t>(comp - 1)].body,
                                        &fp.binds[static_cast<std::size_t>(comp - 1)].head}) {
            for (const auto& [param, value] : *binds) {
                if (!param->trainable || !t.grad_touched(value)) continue;
                const Tensor& g = t.grad(value);
                k.axpy(1.0, g.data(), param->grad.data(), g.size());
            }
        }
    }
    t.zero_grads();
    return values;
}

}  // namespace interlock
