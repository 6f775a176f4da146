#include "interlock/sched.hpp"

#include <algorithm>

#include "interlock/errors.hpp"

namespace interlock::sched {

void PipelineConfig::validate() const {
    if (a < 1) throw ConfigError("simulate: accelerator count must be >= 1");
    if (b < 1) throw ConfigError("simulate: batch count must be >= 1");
    if (strategy == RoutingPolicy::Kind::NWise && (nwise < 1 || nwise > a))
        throw ConfigError("simulate: n_wise window must satisfy 1 <= n <= accelerators, got n=" +
                          std::to_string(nwise) + " a=" + std::to_string(a));
    if (strategy == RoutingPolicy::Kind::GroupedLocal && group < 1)
        throw ConfigError("simulate: group size must be >= 1");
}

RoutingPolicy PipelineConfig::policy() const {
    RoutingPolicy p;
    p.kind = strategy;
    p.nwise = nwise;
    p.group = group;
    p.mix_local = mix_local;
    return p;
}

std::int64_t closed_form_timesteps(const PipelineConfig& cfg) {
    cfg.validate();
    const std::int64_t a = cfg.a, b = cfg.b;
    switch (cfg.strategy) {
        case RoutingPolicy::Kind::EndToEnd: return 2 * b * a;
        case RoutingPolicy::Kind::Hogwild: return 2 * (b + a - 1);
        case RoutingPolicy::Kind::NWise: return 2 * b * cfg.nwise + a - cfg.nwise;
        case RoutingPolicy::Kind::GroupedLocal: {
            // blocks of g from the bottom; a trailing partial block of size r
            // drains in max(r, g-r) slots instead of g
            const std::int64_t g = std::min<std::int64_t>(cfg.group, a);
            const std::int64_t r = a % g;
            const std::int64_t tail = r == 0 ? g : std::max(r, g - r);
            return 2 * g * (b - 1) + a + tail;
        }
    }
    throw InternalError("unreachable");
}

namespace {

struct Flow {
    int loss;                 // component carrying the loss (box chain starts here)
    int lo;                   // lowest component the flow reaches
    std::vector<char> apply;  // apply[k-1]: this flow's gradient updates body k
};

std::vector<Flow> make_flows(const PipelineConfig& cfg) {
    const GradientAssignment ga = assignment(cfg.policy(), cfg.a);
    std::vector<Flow> flows;
    for (int j = 1; j <= cfg.a; ++j) {
        const auto& reach = ga.reach[static_cast<std::size_t>(j - 1)];
        if (reach.empty()) continue;  // head-only losses cost no schedule box
        Flow f;
        f.loss = j;
        f.lo = *std::min_element(reach.begin(), reach.end());
        f.apply.assign(static_cast<std::size_t>(cfg.a), 0);
        for (int k : reach) f.apply[static_cast<std::size_t>(k - 1)] = 1;
        flows.push_back(std::move(f));
    }
    return flows;
}

}  // namespace

Trace simulate(const PipelineConfig& cfg) {
    cfg.validate();
    const int a = cfg.a, b = cfg.b;
    const bool blocking = cfg.strategy != RoutingPolicy::Kind::Hogwild;
    const std::vector<Flow> flows = make_flows(cfg);
    const int nf = static_cast<int>(flows.size());

    const auto idx = [b](int k, int i) { return static_cast<std::size_t>(k - 1) * b + (i - 1); };
    std::vector<int> f_done(static_cast<std::size_t>(a) * b, -1);
    // b_done[fi][ (k - lo) * b + i - 1 ]
    std::vector<std::vector<int>> b_done(static_cast<std::size_t>(nf));
    std::vector<std::vector<int>> b_next(static_cast<std::size_t>(nf));  // next batch per comp in the chain
    for (int fi = 0; fi < nf; ++fi) {
        const int span = flows[static_cast<std::size_t>(fi)].loss - flows[static_cast<std::size_t>(fi)].lo + 1;
        b_done[static_cast<std::size_t>(fi)].assign(static_cast<std::size_t>(span) * b, -1);
        b_next[static_cast<std::size_t>(fi)].assign(static_cast<std::size_t>(span), 1);
    }
    // flows applying to each component, in loss order
    std::vector<std::vector<int>> applying(static_cast<std::size_t>(a));
    for (int fi = 0; fi < nf; ++fi)
        for (int k = 1; k <= a; ++k)
            if (flows[static_cast<std::size_t>(fi)].apply[static_cast<std::size_t>(k - 1)])
                applying[static_cast<std::size_t>(k - 1)].push_back(fi);

    std::vector<int> next_fwd(static_cast<std::size_t>(a), 1);
    std::vector<int> busy(static_cast<std::size_t>(a), 0);

    const auto bslot = [&](int fi, int k, int i) -> int {
        const Flow& f = flows[static_cast<std::size_t>(fi)];
        return b_done[static_cast<std::size_t>(fi)][static_cast<std::size_t>(k - f.lo) * b + (i - 1)];
    };
    const auto applied_slot = [&](int k, int i) -> int {
        // slot at which every applying flow has delivered batch i, or -1
        int s = -1;
        for (int fi : applying[static_cast<std::size_t>(k - 1)]) {
            const int d = bslot(fi, k, i);
            if (d < 0) return -1;
            s = std::max(s, d);
        }
        return s;
    };

    Trace trace;
    trace.config = cfg;
    std::int64_t remaining = static_cast<std::int64_t>(a) * b;
    for (int fi = 0; fi < nf; ++fi) {
        const Flow& f = flows[static_cast<std::size_t>(fi)];
        remaining += static_cast<std::int64_t>(f.loss - f.lo + 1) * b;
    }

    int slot = 0;
    const std::int64_t slot_limit = 4 * remaining + 16;  // deadlock guard
    while (remaining > 0) {
        if (slot > slot_limit) throw InternalError("simulate: schedule failed to make progress");
        struct Pick {
            int k;
            bool fwd;
            int fi = -1;
            int batch = 0;
        };
        std::vector<Pick> picks;
        for (int k = 1; k <= a; ++k) {
            // backward candidates: the next batch of each flow chain crossing k
            int best_fi = -1, best_batch = 0;
            for (int fi = 0; fi < nf; ++fi) {
                const Flow& f = flows[static_cast<std::size_t>(fi)];
                if (k < f.lo || k > f.loss) continue;
                const int i = b_next[static_cast<std::size_t>(fi)][static_cast<std::size_t>(k - f.lo)];
                if (i > b) continue;
                bool ready;
                if (k == f.loss) {
                    const int d = f_done[idx(k, i)];
                    ready = d >= 0 && d < slot;
                } else {
                    const int d = bslot(fi, k + 1, i);
                    ready = d >= 0 && d < slot;
                }
                if (!ready) continue;
                if (best_fi < 0 || i < best_batch ||
                    (i == best_batch && f.loss < flows[static_cast<std::size_t>(best_fi)].loss)) {
                    best_fi = fi;
                    best_batch = i;
                }
            }
            if (best_fi >= 0) {
                picks.push_back({k, false, best_fi, best_batch});
                continue;
            }
            // forward candidate
            const int i = next_fwd[static_cast<std::size_t>(k - 1)];
            if (i > b) continue;
            bool ready = true;
            if (k > 1) {
                const int d = f_done[idx(k - 1, i)];
                ready = d >= 0 && d < slot;
            }
            if (ready && k < a && i > 1) {
                const int d = f_done[idx(k + 1, i - 1)];  // single activation buffer
                ready = d >= 0 && d < slot;
            }
            if (ready && blocking && i > 1) {
                const int d = applied_slot(k, i - 1);
                ready = d >= 0 && d < slot;
            }
            if (ready) picks.push_back({k, true, -1, i});
        }

        for (const Pick& p : picks) {
            busy[static_cast<std::size_t>(p.k - 1)]++;
            if (p.fwd) {
                f_done[idx(p.k, p.batch)] = slot;
                next_fwd[static_cast<std::size_t>(p.k - 1)]++;
                trace.events.push_back({p.k, slot, p.batch, Phase::Forward, 0});
            } else {
                const Flow& f = flows[static_cast<std::size_t>(p.fi)];
                b_done[static_cast<std::size_t>(p.fi)][static_cast<std::size_t>(p.k - f.lo) * b + (p.batch - 1)] =
                    slot;
                b_next[static_cast<std::size_t>(p.fi)][static_cast<std::size_t>(p.k - f.lo)]++;
                trace.events.push_back({p.k, slot, p.batch, Phase::Backward, f.loss});
            }
            --remaining;
        }
        if (picks.empty() && remaining > 0) {
            // no box was ready and none will become ready: starved schedule
            throw InternalError("simulate: deadlock with " + std::to_string(remaining) + " boxes pending");
        }
        ++slot;
    }

    trace.makespan = slot;
    trace.utilization.resize(static_cast<std::size_t>(a));
    for (int k = 0; k < a; ++k)
        trace.utilization[static_cast<std::size_t>(k)] = static_cast<double>(busy[static_cast<std::size_t>(k)]) / slot;
    return trace;
}

StalenessRecord staleness(const Trace& trace) {
    const PipelineConfig& cfg = trace.config;
    const int a = cfg.a, b = cfg.b;
    const GradientAssignment ga = assignment(cfg.policy(), a);

    // apply slot of (k, i) = latest backward box at k for batch i among flows
    // that update k; forward slots straight from the events.
    std::vector<int> fwd(static_cast<std::size_t>(a) * b, -1);
    std::vector<int> app(static_cast<std::size_t>(a) * b, -1);
    const auto idx = [b](int k, int i) { return static_cast<std::size_t>(k - 1) * b + (i - 1); };
    for (const Event& e : trace.events) {
        if (e.phase == Phase::Forward) {
            fwd[idx(e.accel, e.batch)] = e.slot;
        } else {
            const auto& reach = ga.reach[static_cast<std::size_t>(e.flow - 1)];
            if (std::find(reach.begin(), reach.end(), e.accel) != reach.end())
                app[idx(e.accel, e.batch)] = std::max(app[idx(e.accel, e.batch)], e.slot);
        }
    }

    StalenessRecord rec;
    rec.per_batch.assign(static_cast<std::size_t>(a), std::vector<int>(static_cast<std::size_t>(b), 0));
    rec.steady.assign(static_cast<std::size_t>(a), 0);
    for (int k = 1; k <= a; ++k) {
        for (int i = 1; i <= b; ++i) {
            const int f = fwd[idx(k, i)], ap = app[idx(k, i)];
            if (f < 0 || ap < 0) continue;
            int updates = 0;
            for (int j = 1; j <= b; ++j) {
                if (j == i) continue;
                const int oj = app[idx(k, j)];
                if (oj > f && oj < ap) ++updates;
            }
            rec.per_batch[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(i - 1)] = updates;
        }
        rec.steady[static_cast<std::size_t>(k - 1)] = rec.per_batch[static_cast<std::size_t>(k - 1)].back();
    }
    return rec;
}

}  // namespace interlock::sched
