#include "interlock/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"
#include "interlock/metrics.hpp"

namespace interlock {

std::int64_t logical_time(const RoutingPolicy& policy, int components, std::int64_t steps) {
    sched::PipelineConfig cfg;
    cfg.a = components;
    cfg.b = 1;
    cfg.strategy = policy.kind;
    cfg.nwise = std::min(policy.nwise, components);  // window clamps at the top
    cfg.group = policy.group;
    cfg.validate();
    // closed form is linear in b; evaluate directly
    cfg.b = static_cast<int>(std::min<std::int64_t>(steps, 1));
    if (steps <= 0) return 0;
    const std::int64_t at1 = closed_form_timesteps(cfg);
    cfg.b = 2;
    const std::int64_t at2 = closed_form_timesteps(cfg);
    return at1 + (at2 - at1) * (steps - 1);
}

std::int64_t detail::resolve_steps(const TrainOptions& opt, const Dataset& ds, int components) {
    switch (opt.budget.kind) {
        case Budget::Kind::Steps:
            return opt.budget.amount;
        case Budget::Kind::Epochs: {
            const std::int64_t per = (ds.train_count + opt.batch_size - 1) / opt.batch_size;
            return opt.budget.amount * per;
        }
        case Budget::Kind::LogicalTime: {
            std::int64_t steps = 0;
            while (logical_time(opt.policy, components, steps + 1) <= opt.budget.amount) ++steps;
            return steps;
        }
    }
    throw InternalError("unreachable");
}

double accuracy_of_logits(const Tensor& logits, const std::vector<int>& targets) {
    const int n = logits.dim(0), k = logits.dim(1);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == targets[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

EvalResult evaluate(PartitionedModel& model, const Dataset& ds, bool test_split, int limit, int eval_batch) {
    const int n = model.n();
    const int begin = test_split ? ds.train_count : 0;
    int count = test_split ? ds.test_count() : ds.train_count;
    if (limit > 0) count = std::min(count, limit);
    if (count < 1) throw DataError("evaluate: empty split");

    const std::int64_t per_ex = ds.inputs.size() / ds.count();
    std::vector<int> correct_head(static_cast<std::size_t>(n), 0);
    std::vector<int> correct_ens(static_cast<std::size_t>(n), 0);

    Tape tape;
    for (int at = 0; at < count; at += eval_batch) {
        const int take = std::min(eval_batch, count - at);
        std::vector<int> shape = ds.inputs.shape();
        shape[0] = take;
        Tensor x(shape);
        std::vector<int> y(static_cast<std::size_t>(take));
        for (int i = 0; i < take; ++i) {
            const int src = begin + at + i;
            std::copy(ds.inputs.data() + src * per_ex, ds.inputs.data() + (src + 1) * per_ex,
                      x.data() + static_cast<std::int64_t>(i) * per_ex);
            y[static_cast<std::size_t>(i)] = ds.targets[static_cast<std::size_t>(src)];
        }
        tape.clear();
        const auto fp = model.forward(tape, tape.leaf(std::move(x)), /*training=*/false);

        // per-head hits and running top-m probability averages from the top down
        std::vector<Tensor> probs;
        probs.reserve(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) probs.push_back(softmax_rows(tape.val(fp.logits[static_cast<std::size_t>(k)])));
        for (int k = 0; k < n; ++k) {
            const Tensor& p = probs[static_cast<std::size_t>(k)];
            for (int i = 0; i < take; ++i) {
                int best = 0;
                for (int j = 1; j < p.dim(1); ++j)
                    if (p.at(i, j) > p.at(i, best)) best = j;
                if (best == y[static_cast<std::size_t>(i)]) ++correct_head[static_cast<std::size_t>(k)];
            }
        }
        Tensor acc_probs(probs.back().shape());
        for (int m = 1; m <= n; ++m) {
            const Tensor& p = probs[static_cast<std::size_t>(n - m)];
            kernels::active().axpy(1.0, p.data(), acc_probs.data(), acc_probs.size());
            for (int i = 0; i < take; ++i) {
                int best = 0;
                for (int j = 1; j < acc_probs.dim(1); ++j)
                    if (acc_probs.at(i, j) > acc_probs.at(i, best)) best = j;
                if (best == y[static_cast<std::size_t>(i)]) ++correct_ens[static_cast<std::size_t>(m - 1)];
            }
        }
    }

    EvalResult res;
    for (int k = 0; k < n; ++k)
        res.head_acc.push_back(static_cast<double>(correct_head[static_cast<std::size_t>(k)]) / count);
    for (int m = 0; m < n; ++m)
        res.ensemble_acc.push_back(static_cast<double>(correct_ens[static_cast<std::size_t>(m)]) / count);
    return res;
}

namespace {

struct CompOptimizers {
    std::vector<Optimizer> body;  // one per component
    std::vector<Optimizer> head;
};

CompOptimizers make_optimizers(PartitionedModel& model, const OptimizerConfig& cfg) {
    CompOptimizers o;
    for (int k = 1; k <= model.n(); ++k) {
        o.body.emplace_back(cfg, model.comp(k).body_params());
        o.head.emplace_back(cfg, model.comp(k).head_params());
    }
    return o;
}

// Grad snapshot of one component's body, in parameter order.
std::vector<Tensor> take_body_grads(PartitionedModel& model, int k) {
    std::vector<Tensor> pack;
    for (Parameter* p : model.comp(k).body_params()) {
        if (!p->trainable) continue;
        pack.push_back(p->grad);
        p->zero_grad();
    }
    return pack;
}

void load_body_grads(PartitionedModel& model, int k, const std::vector<Tensor>& pack) {
    std::size_t i = 0;
    for (Parameter* p : model.comp(k).body_params()) {
        if (!p->trainable) continue;
        p->grad = pack[i++];
    }
}

}  // namespace

RunResult detail::train_reference(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt,
                                  std::int64_t total_steps) {
    const int n = model.n();
    const bool hogwild = opt.policy.kind == RoutingPolicy::Kind::Hogwild;
    CompOptimizers opts = make_optimizers(model, opt.optim);
    BatchIterator batches(ds, opt.batch_size, derive_seed(opt.seed, "batches"), opt.augment);

    std::unique_ptr<MetricsWriter> metrics;
    if (!opt.metrics_path.empty()) metrics = std::make_unique<MetricsWriter>(opt.metrics_path, n);

    // Hogwild emulation: component k applies the gradient of batch i just
    // before forwarding batch i + 1 + (n - k), giving the pipeline's staleness
    // of n - k updates between a batch's forward and its application.
    std::vector<std::deque<std::pair<std::vector<Tensor>, std::int64_t>>> queues(static_cast<std::size_t>(n));
    std::vector<std::vector<int>> stale_counts(static_cast<std::size_t>(n));

    RunResult res;
    Tape tape;
    const auto t0 = std::chrono::steady_clock::now();

    auto apply_front = [&](int k) {
        auto& q = queues[static_cast<std::size_t>(k - 1)];
        auto& [pack, fwd_updates] = q.front();
        load_body_grads(model, k, pack);
        const int staleness = static_cast<int>(opts.body[static_cast<std::size_t>(k - 1)].step() - fwd_updates);
        stale_counts[static_cast<std::size_t>(k - 1)].push_back(staleness);
        const double lr = opt.schedule.lr(opts.body[static_cast<std::size_t>(k - 1)].step() + 1);
        opts.body[static_cast<std::size_t>(k - 1)].apply(lr);
        q.pop_front();
    };

    auto run_eval = [&](std::int64_t step) {
        res.train_eval = evaluate(model, ds, false, opt.eval_train_n);
        res.test_eval = evaluate(model, ds, true, opt.eval_test_n);
        if (metrics) {
            metrics->eval_row("train", step, res.train_eval);
            metrics->eval_row("test", step, res.test_eval);
        }
    };

    for (std::int64_t step = 1; step <= total_steps; ++step) {
        if (hogwild) {
            for (int k = 1; k <= n; ++k) {
                auto& q = queues[static_cast<std::size_t>(k - 1)];
                while (static_cast<int>(q.size()) > n - k) apply_front(k);
            }
        }

        auto batch = batches.next();
        tape.clear();
        const Value x = tape.leaf(std::move(batch.x));
        auto fp = model.forward(tape, x, /*training=*/true);
        const std::vector<double> losses = backward_routed(tape, model, fp, batch.y, opt.policy);

        if (hogwild) {
            for (int k = 1; k <= n; ++k) {
                queues[static_cast<std::size_t>(k - 1)].emplace_back(
                    take_body_grads(model, k), opts.body[static_cast<std::size_t>(k - 1)].step());
                if (opt.policy.hogwild_aux && k < n) {
                    const double lr = opt.schedule.lr(opts.head[static_cast<std::size_t>(k - 1)].step() + 1);
                    opts.head[static_cast<std::size_t>(k - 1)].apply(lr);
                }
            }
        } else {
            for (int k = 1; k <= n; ++k) {
                const double lr_body = opt.schedule.lr(opts.body[static_cast<std::size_t>(k - 1)].step() + 1);
                opts.body[static_cast<std::size_t>(k - 1)].apply(lr_body);
                if (k < n) {
                    const double lr_head = opt.schedule.lr(opts.head[static_cast<std::size_t>(k - 1)].step() + 1);
                    opts.head[static_cast<std::size_t>(k - 1)].apply(lr_head);
                }
            }
        }

        StepRecord rec;
        rec.step = step;
        rec.time_logical = logical_time(opt.policy, n, step);
        rec.time_wall = 0.0;  // wall clock stays out of reference metrics: identical runs, identical bytes
        rec.lr = opt.schedule.lr(step);
        rec.losses = losses;
        if (metrics) metrics->train_row(rec);
        res.history.push_back(std::move(rec));

        if (opt.eval_every > 0 && step % opt.eval_every == 0 && step != total_steps) run_eval(step);
    }

    if (hogwild) {  // drain: apply the in-flight gradients in batch order
        for (int k = 1; k <= n; ++k) {
            auto& q = queues[static_cast<std::size_t>(k - 1)];
            while (!q.empty()) apply_front(k);
        }
        for (int k = 0; k < n; ++k) {
            const auto& sc = stale_counts[static_cast<std::size_t>(k)];
            double mean = 0.0;
            for (int s : sc) mean += s;
            res.staleness_mean.push_back(sc.empty() ? 0.0 : mean / static_cast<double>(sc.size()));
            res.staleness_last.push_back(sc.empty() ? 0 : sc.back());
        }
    }

    res.steps = total_steps;
    res.time_logical = logical_time(opt.policy, n, total_steps);
    run_eval(total_steps);
    res.time_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics) metrics->flush();
    return res;
}

RunResult train(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt) {
    opt.policy.validate();
    if (ds.num_classes != model.num_classes())
        throw ConfigError("dataset has " + std::to_string(ds.num_classes) + " classes, model expects " +
                          std::to_string(model.num_classes()));
    const std::int64_t total = detail::resolve_steps(opt, ds, model.n());
    if (total < 1) throw ConfigError("budget resolves to zero steps");
    if (opt.mode == RunMode::Reference) return detail::train_reference(model, ds, opt, total);
    return detail::train_pipelined(model, ds, opt, total);
}

}  // namespace interlock
