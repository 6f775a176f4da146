#pragma once

#include <string>
#include <vector>

#include "interlock/model.hpp"

namespace interlock {

// Which loss's gradients update which component's body parameters.
//
//   end_to_end:       every body is driven by the task loss L_n.
//   n_wise(N):        body k is driven by L_{min(k+N-1, n)}; the gradient
//                     travels N-1 component boundaries before stopping.
//                     mix_local=true instead sums every loss in the window
//                     {k .. min(k+N-1, n)} into body k (the windowed reading).
//   grouped_local(g): consecutive components form non-overlapping blocks of g;
//                     each block trains off the aux head of its top component.
//   hogwild:          task loss only, applied greedily by the runtime;
//                     graph-wise identical to end_to_end. hogwild_aux
//                     additionally trains each aux head on its own loss.
//
// Auxiliary heads always train solely on their own loss.
struct RoutingPolicy {
    enum class Kind { EndToEnd, NWise, GroupedLocal, Hogwild };

    Kind kind = Kind::EndToEnd;
    int nwise = 1;    // N for n_wise
    int group = 1;    // g for grouped_local
    bool mix_local = false;
    bool hogwild_aux = false;
    double aux_weight = 1.0;

    static RoutingPolicy end_to_end() { return {}; }
    static RoutingPolicy n_wise(int n, bool mix = false);
    static RoutingPolicy grouped_local(int g);
    static RoutingPolicy hogwild(bool aux = false);

    void validate() const;
    std::string kind_name() const;
};

struct GradientAssignment {
    // source_loss[k-1]: 1-based index of the loss whose gradients update
    // component k's body (the primary source under mixed readings).
    std::vector<int> source_loss;
    // reach[j-1]: components whose bodies receive gradients from loss j.
    std::vector<std::vector<int>> reach;
};

GradientAssignment assignment(const RoutingPolicy& policy, int n);

// One backward pass: loss j seeds `weight`, flows down to component
// flow_bottom (a cut is placed just below it), and is harvested into the
// bodies listed in body_targets plus, when train_head is set, head j.
struct LossRoute {
    int loss = 0;
    double weight = 1.0;
    int flow_bottom = 1;  // loss+1 means head-only (cut directly below the head)
    std::vector<int> body_targets;
    bool train_head = false;
};

std::vector<LossRoute> plan_routes(const RoutingPolicy& policy, int n);

// Shared helpers between the reference engine and tests.
std::vector<Value> route_cuts(const LossRoute& route, const ForwardPass& fp);
void harvest_route(Tape& t, const LossRoute& route, const ForwardPass& fp, PartitionedModel& model);

// Builds per-head losses, runs every route's backward with its cuts, and
// accumulates the routed gradients into the model's Parameter::grad buffers.
// Returns the per-component loss values.
std::vector<double> backward_routed(Tape& t, PartitionedModel& model, const ForwardPass& fp,
                                    const std::vector<int>& targets, const RoutingPolicy& policy);

// Reference implementation for the N = n limit: one backward pass of
// L_n + aux_weight * sum of aux losses with no gradient boundaries.
std::vector<double> backward_end_to_end_with_aux(Tape& t, PartitionedModel& model, const ForwardPass& fp,
                                                 const std::vector<int>& targets, double aux_weight);

// Central-difference check of the routed gradients: each parameter's harvested
// gradient is compared against finite differences of the weighted sum of the
// losses the policy routes into it. max_coords samples coordinates per
// parameter (0 = all).
struct RoutedCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<double> per_component;  // max relative error per component
};
RoutedCheckReport routed_grad_check(PartitionedModel& model, const RoutingPolicy& policy, const Tensor& x,
                                    const std::vector<int>& targets, double eps, int max_coords,
                                    std::uint64_t seed);

}  // namespace interlock
