// Pipelined execution: one worker thread per component, activations flowing
// up and gradient bundles flowing down. Non-hogwild strategies keep the
// blocking rule (a component forwards batch i+1 only after applying batch i),
// which makes the arithmetic identical to reference mode. Hogwild applies
// gradients the moment they arrive; deterministic mode pins the forward/apply
// interleaving to the fixed pipeline schedule so runs are reproducible.
//
// Worker-to-worker channels are unbounded (the blocking protocol itself
// bounds in-flight work); only the batch feeder is credit-throttled so it
// cannot run arbitrarily far ahead of component 1.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <variant>

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"
#include "interlock/metrics.hpp"
#include "interlock/train.hpp"

namespace interlock {

namespace {

struct AbortSignal {};

template <typename T>
class Channel {
public:
    void send(T v) {
        std::unique_lock lk(m_);
        if (aborted_) throw AbortSignal{};
        q_.push_back(std::move(v));
        cv_.notify_one();
    }

    T recv() {
        std::unique_lock lk(m_);
        cv_.wait(lk, [&] { return !q_.empty() || aborted_; });
        if (aborted_) throw AbortSignal{};
        T v = std::move(q_.front());
        q_.pop_front();
        return v;
    }

    void abort() {
        std::lock_guard lk(m_);
        aborted_ = true;
        cv_.notify_all();
    }

private:
    std::deque<T> q_;
    bool aborted_ = false;
    std::mutex m_;
    std::condition_variable cv_;
};

// Counting credits for the feeder; released by component 1 per forward.
class Credits {
public:
    explicit Credits(int initial) : count_(initial) {}
    void acquire(const std::atomic<bool>& abort) {
        std::unique_lock lk(m_);
        while (count_ == 0) {
            if (abort.load()) throw AbortSignal{};
            cv_.wait_for(lk, std::chrono::milliseconds(20));
        }
        --count_;
    }
    void release() {
        std::lock_guard lk(m_);
        ++count_;
        cv_.notify_one();
    }

private:
    int count_;
    std::mutex m_;
    std::condition_variable cv_;
};

struct ActMsg {
    int batch = 0;
    Tensor x;
    std::vector<int> targets;
};
struct GradMsg {
    int batch = 0;
    int flow = 0;
    Tensor g;
};
using WorkerMsg = std::variant<ActMsg, GradMsg>;

struct LossMsg {
    int batch, comp;
    double loss;
};
struct StaleMsg {
    int comp, batch, staleness;
};
struct ErrorMsg {
    int comp;
    std::string what;
};
struct DoneMsg {
    int comp;
};
using CollectorMsg = std::variant<LossMsg, StaleMsg, ErrorMsg, DoneMsg>;

// Routing facts one worker needs.
struct WorkerPlan {
    std::optional<LossRoute> own;     // route for this component's own loss
    std::vector<LossRoute> crossing;  // flows arriving from above, loss ascending
    bool body_applies_own = false;
};

WorkerPlan make_plan(const RoutingPolicy& policy, int n, int k) {
    WorkerPlan plan;
    for (const LossRoute& r : plan_routes(policy, n)) {
        if (r.loss == k) {
            plan.own = r;
            for (int t : r.body_targets)
                if (t == k) plan.body_applies_own = true;
        } else if (r.loss > k && r.flow_bottom <= k) {
            plan.crossing.push_back(r);
        }
    }
    return plan;
}

struct BatchState {
    int batch = 0;
    Tape tape;
    Value input{};
    Value act{};
    CompBinds binds;
    int grads_done = 0;
    std::int64_t updates_at_forward = 0;
};

struct Shared {
    PartitionedModel* model;
    const TrainOptions* opt;
    int n;
    int total;
    std::vector<std::unique_ptr<Channel<WorkerMsg>>>* inboxes;
    Channel<CollectorMsg>* collector;
    std::atomic<bool>* abort;
    Credits* credits;
};

class Worker {
public:
    Worker(Shared& sh, int k)
        : sh_(sh),
          k_(k),
          comp_(sh.model->comp(k)),
          plan_(make_plan(sh.opt->policy, sh.n, k)),
          opt_body_(sh.opt->optim, comp_.body_params()),
          opt_head_(sh.opt->optim, comp_.head_params()) {}

    void run() {
        try {
            if (sh_.opt->policy.kind == RoutingPolicy::Kind::Hogwild) run_hogwild();
            else run_blocking();
            sh_.collector->send(DoneMsg{k_});
        } catch (const AbortSignal&) {
            // peer failure; unwind quietly
        } catch (const std::exception& e) {
            sh_.abort->store(true);
            for (auto& ch : *sh_.inboxes) ch->abort();
            try {
                sh_.collector->send(ErrorMsg{k_, e.what()});
            } catch (...) {
            }
        }
    }

private:
    Channel<WorkerMsg>& inbox() { return *(*sh_.inboxes)[static_cast<std::size_t>(k_ - 1)]; }
    void send_up(ActMsg m) {
        if (k_ < sh_.n) (*sh_.inboxes)[static_cast<std::size_t>(k_)]->send(WorkerMsg{std::move(m)});
    }
    void send_down(GradMsg m) {
        if (k_ > 1) (*sh_.inboxes)[static_cast<std::size_t>(k_ - 2)]->send(WorkerMsg{std::move(m)});
    }

    void harvest(Tape& t, const ParamBinds& binds) {
        for (const auto& [param, value] : binds) {
            if (!param->trainable || !t.grad_touched(value)) continue;
            const Tensor& g = t.grad(value);
            kernels::active().axpy(1.0, g.data(), param->grad.data(), g.size());
        }
    }

    // Forward one batch on a private tape; ships the activation up, logs the
    // local loss, and runs the own-loss backward (head training plus body
    // harvest / downward flow where the policy routes it).
    void forward_batch(ActMsg msg, BatchState& st) {
        st.batch = msg.batch;
        st.tape.clear();
        st.binds = CompBinds{};
        st.input = st.tape.leaf(std::move(msg.x));
        Value cur = st.input;
        LayerCtx ctx{st.tape, true, &st.binds.body};
        for (auto& l : comp_.body) cur = l->forward(ctx, cur);
        st.act = cur;
        st.grads_done = 0;
        st.updates_at_forward = opt_body_.step();
        if (k_ < sh_.n) send_up(ActMsg{st.batch, st.tape.val(cur), msg.targets});
        if (k_ == 1) sh_.credits->release();

        Value logits = cur;
        if (k_ < sh_.n) {
            LayerCtx hctx{st.tape, true, &st.binds.head};
            for (auto& l : comp_.aux_head) logits = l->forward(hctx, logits);
        }
        const Value loss = softmax_cross_entropy(st.tape, logits, msg.targets);
        sh_.collector->send(LossMsg{st.batch, k_, st.tape.val(loss).item()});

        if (plan_.own) {
            st.tape.zero_grads();
            st.tape.backward(loss, plan_.own->weight);
            if (plan_.own->train_head) harvest(st.tape, st.binds.head);
            if (plan_.body_applies_own) harvest(st.tape, st.binds.body);
            if (plan_.own->flow_bottom < k_) send_down(GradMsg{st.batch, k_, st.tape.grad(st.input)});
        }
    }

    // Backward one arriving flow through the batch's saved tape.
    void process_grad(const GradMsg& msg, BatchState& st) {
        const LossRoute* route = nullptr;
        for (const LossRoute& r : plan_.crossing)
            if (r.loss == msg.flow) route = &r;
        if (!route || msg.batch != st.batch)
            throw InternalError("pipeline protocol violation at component " + std::to_string(k_));
        st.tape.zero_grads();
        st.tape.backward_seeded(st.act, msg.g);
        bool applies = false;
        for (int t : route->body_targets) applies |= t == k_;
        if (applies) harvest(st.tape, st.binds.body);
        if (route->flow_bottom < k_) send_down(GradMsg{msg.batch, msg.flow, st.tape.grad(st.input)});
        ++st.grads_done;
    }

    void apply_body() { opt_body_.apply(sh_.opt->schedule.lr(opt_body_.step() + 1)); }
    void apply_head() {
        if (k_ < sh_.n && plan_.own && plan_.own->train_head)
            opt_head_.apply(sh_.opt->schedule.lr(opt_head_.step() + 1));
    }

    void run_blocking() {
        const int expected = static_cast<int>(plan_.crossing.size());
        BatchState st;
        std::deque<ActMsg> acts;
        for (int i = 1; i <= sh_.total; ++i) {
            while (acts.empty()) buffer_msg(inbox().recv(), acts, nullptr);
            ActMsg act = std::move(acts.front());
            acts.pop_front();
            if (act.batch != i) throw InternalError("activation order violation at component " + std::to_string(k_));
            forward_batch(std::move(act), st);
            while (st.grads_done < expected) {
                std::deque<GradMsg> grads;
                buffer_msg(inbox().recv(), acts, &grads);
                for (auto& g : grads) process_grad(g, st);
            }
            apply_body();
            apply_head();
        }
    }

    void run_hogwild() {
        const int delay = sh_.n - k_;
        const bool deterministic = !sh_.opt->hogwild_free_run;
        std::map<int, std::unique_ptr<BatchState>> tapes;
        std::deque<ActMsg> acts;
        std::deque<GradMsg> grads;
        int forwarded = 0, applied = 0;

        auto do_apply = [&](GradMsg g) {
            const auto it = tapes.find(g.batch);
            if (it == tapes.end()) throw InternalError("hogwild gradient for unknown batch");
            BatchState& st = *it->second;
            st.tape.zero_grads();
            st.tape.backward_seeded(st.act, g.g);
            harvest(st.tape, st.binds.body);
            send_down(GradMsg{g.batch, g.flow, st.tape.grad(st.input)});
            const int staleness = static_cast<int>(opt_body_.step() - st.updates_at_forward);
            apply_body();  // greedy: the moment the gradient is here
            ++applied;
            sh_.collector->send(StaleMsg{k_, g.batch, staleness});
            tapes.erase(it);
        };

        while (applied < sh_.total) {
            // Deterministic mode pins each component to the pipeline schedule:
            // apply batch j only once batch j+delay has been forwarded, and
            // forward batch i only once batch i-1-delay has been applied. The
            // two rules force the exact interleaving the schedule produces
            // regardless of OS thread timing.
            const bool may_apply =
                !grads.empty() &&
                (!deterministic || forwarded >= std::min(grads.front().batch + delay, sh_.total));
            if (may_apply) {
                GradMsg g = std::move(grads.front());
                grads.pop_front();
                do_apply(std::move(g));
                continue;
            }
            const bool may_forward =
                forwarded < sh_.total && !acts.empty() &&
                (!deterministic || applied >= forwarded - delay);
            if (may_forward) {
                ActMsg act = std::move(acts.front());
                acts.pop_front();
                ++forwarded;
                if (k_ == sh_.n) {
                    BatchState st;
                    forward_batch(std::move(act), st);  // own backward ships the flow down
                    const int staleness = static_cast<int>(opt_body_.step() - st.updates_at_forward);
                    apply_body();
                    ++applied;
                    sh_.collector->send(StaleMsg{k_, st.batch, staleness});
                } else {
                    auto st = std::make_unique<BatchState>();
                    forward_batch(std::move(act), *st);
                    apply_head();  // hogwild_aux trains heads locally, no staleness
                    tapes.emplace(st->batch, std::move(st));
                }
                continue;
            }
            buffer_msg(inbox().recv(), acts, &grads);
        }
    }

    void buffer_msg(WorkerMsg m, std::deque<ActMsg>& acts, std::deque<GradMsg>* grads) {
        if (std::holds_alternative<ActMsg>(m)) {
            acts.push_back(std::get<ActMsg>(std::move(m)));
        } else {
            if (!grads) throw InternalError("unexpected gradient at component " + std::to_string(k_));
            grads->push_back(std::get<GradMsg>(std::move(m)));
        }
    }

    Shared& sh_;
    int k_;
    Component& comp_;
    WorkerPlan plan_;
    Optimizer opt_body_, opt_head_;
};

}  // namespace

RunResult detail::train_pipelined(PartitionedModel& model, const Dataset& ds, const TrainOptions& opt,
                                  std::int64_t total_steps) {
    const int n = model.n();
    const int total = static_cast<int>(total_steps);
    kernels::active();  // settle backend selection before threads spawn

    std::vector<std::unique_ptr<Channel<WorkerMsg>>> inboxes;
    for (int k = 0; k < n; ++k) inboxes.push_back(std::make_unique<Channel<WorkerMsg>>());
    Channel<CollectorMsg> collector;
    std::atomic<bool> abort{false};
    Credits credits(4);

    Shared shared{&model, &opt, n, total, &inboxes, &collector, &abort, &credits};

    std::vector<std::unique_ptr<Worker>> workers;
    for (int k = 1; k <= n; ++k) workers.push_back(std::make_unique<Worker>(shared, k));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k < n; ++k) threads.emplace_back([&workers, k] { workers[static_cast<std::size_t>(k)]->run(); });

    threads.emplace_back([&] {  // batch feeder
        try {
            BatchIterator batches(ds, opt.batch_size, derive_seed(opt.seed, "batches"), opt.augment);
            for (int i = 1; i <= total; ++i) {
                credits.acquire(abort);
                auto b = batches.next();
                inboxes[0]->send(WorkerMsg{ActMsg{i, std::move(b.x), std::move(b.y)}});
            }
        } catch (const AbortSignal&) {
        } catch (const std::exception& e) {
            abort.store(true);
            for (auto& ch : inboxes) ch->abort();
            try {
                collector.send(ErrorMsg{0, e.what()});
            } catch (...) {
            }
        }
    });

    std::unique_ptr<MetricsWriter> metrics;
    if (!opt.metrics_path.empty()) metrics = std::make_unique<MetricsWriter>(opt.metrics_path, n);

    RunResult res;
    std::map<int, std::vector<double>> loss_buf;
    std::map<int, int> loss_counts;
    int next_row = 1;
    int done_workers = 0;
    std::string error;
    std::vector<std::vector<int>> stale(static_cast<std::size_t>(n));
    const auto t0 = std::chrono::steady_clock::now();

    while (done_workers < n && error.empty()) {
        CollectorMsg m = collector.recv();
        if (std::holds_alternative<LossMsg>(m)) {
            const auto& lm = std::get<LossMsg>(m);
            auto& row = loss_buf[lm.batch];
            if (row.empty()) row.assign(static_cast<std::size_t>(n), 0.0);
            row[static_cast<std::size_t>(lm.comp - 1)] = lm.loss;
            ++loss_counts[lm.batch];
            while (loss_counts.count(next_row) != 0 && loss_counts[next_row] == n) {
                StepRecord rec;
                rec.step = next_row;
                rec.time_logical = logical_time(opt.policy, n, next_row);
                rec.time_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                rec.lr = opt.schedule.lr(next_row);
                rec.losses = loss_buf[next_row];
                if (metrics) metrics->train_row(rec);
                res.history.push_back(std::move(rec));
                loss_buf.erase(next_row);
                loss_counts.erase(next_row);
                ++next_row;
            }
        } else if (std::holds_alternative<StaleMsg>(m)) {
            const auto& sm = std::get<StaleMsg>(m);
            stale[static_cast<std::size_t>(sm.comp - 1)].push_back(sm.staleness);
        } else if (std::holds_alternative<ErrorMsg>(m)) {
            const auto& em = std::get<ErrorMsg>(m);
            error = (em.comp ? "worker " + std::to_string(em.comp) : std::string("feeder")) + ": " + em.what;
        } else {
            ++done_workers;
        }
    }

    if (!error.empty()) {
        abort.store(true);
        for (auto& ch : inboxes) ch->abort();
        collector.abort();
    }
    for (auto& t : threads) t.join();
    if (metrics) metrics->flush();
    if (!error.empty()) throw RunAborted("pipelined run aborted (partial metrics flushed): " + error);

    if (opt.policy.kind == RoutingPolicy::Kind::Hogwild) {
        for (int k = 0; k < n; ++k) {
            const auto& sc = stale[static_cast<std::size_t>(k)];
            double mean = 0.0;
            for (int s : sc) mean += s;
            res.staleness_mean.push_back(sc.empty() ? 0.0 : mean / static_cast<double>(sc.size()));
            res.staleness_last.push_back(sc.empty() ? 0 : sc.back());
        }
    }

    res.steps = total_steps;
    res.time_logical = logical_time(opt.policy, n, total_steps);
    res.train_eval = evaluate(model, ds, false, opt.eval_train_n);
    res.test_eval = evaluate(model, ds, true, opt.eval_test_n);
    if (metrics) {
        metrics->eval_row("train", total_steps, res.train_eval);
        metrics->eval_row("test", total_steps, res.test_eval);
        metrics->flush();
    }
    res.time_wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace interlock
