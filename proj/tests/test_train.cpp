#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "interlock/checkpoint.hpp"
#include "interlock/errors.hpp"
#include "interlock/metrics.hpp"
#include "interlock/rng.hpp"
#include "interlock/train.hpp"

using namespace interlock;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec small_mlp(std::vector<int> widths, int input_dim, int classes) {
    ArchitectureSpec s;
    s.preset = ArchitectureSpec::Preset::Mlp;
    s.widths = std::move(widths);
    s.input_shape = {input_dim};
    s.num_classes = classes;
    return s;
}

TrainOptions base_options(RoutingPolicy policy, int steps, double lr = 0.01) {
    TrainOptions opt;
    opt.policy = policy;
    opt.optim.kind = OptimizerConfig::Kind::Adam;
    opt.optim.lr = lr;
    opt.schedule.kind = LrSchedule::Kind::Constant;
    opt.schedule.base = lr;
    opt.budget = {Budget::Kind::Steps, steps};
    opt.batch_size = 16;
    opt.seed = 3;
    return opt;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("end-to-end training solves separable blobs") {
    const Dataset ds = synth_blobs(3, 8, 800, 200, 17, 6.0);
    auto model = build_model(small_mlp({16, 16, 16}, 8, 3), derive_seed(17, "init"));
    auto opt = base_options(RoutingPolicy::end_to_end(), 200);
    const RunResult res = train(model, ds, opt);
    CHECK(res.steps == 200);
    CHECK(res.train_eval.head_acc.back() > 0.95);
}

TEST_CASE("identical seeds produce bit-identical metrics files") {
    const auto dir = fs::temp_directory_path() / "interlock_train_det";
    fs::create_directories(dir);
    const Dataset ds = synth_blobs(3, 6, 300, 60, 5, 4.0);
    std::string contents[2];
    for (int rep = 0; rep < 2; ++rep) {
        auto model = build_model(small_mlp({8, 8, 8}, 6, 3), derive_seed(9, "init"));
        auto opt = base_options(RoutingPolicy::n_wise(2), 60);
        opt.seed = 9;
        opt.metrics_path = (dir / ("m" + std::to_string(rep) + ".csv")).string();
        train(model, ds, opt);
        contents[rep] = slurp(opt.metrics_path);
    }
    CHECK(contents[0] == contents[1]);
    CHECK(contents[0].find("train,1,") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("logical time charges the schedule's closed form per step") {
    CHECK(logical_time(RoutingPolicy::end_to_end(), 4, 10) == 80);
    CHECK(logical_time(RoutingPolicy::n_wise(2), 4, 10) == 42);
    CHECK(logical_time(RoutingPolicy::n_wise(1), 4, 10) == 23);
    CHECK(logical_time(RoutingPolicy::hogwild(), 4, 10) == 26);
    // windows clamp to the component count
    CHECK(logical_time(RoutingPolicy::n_wise(9), 4, 10) == 80);
}

TEST_CASE("budgets resolve to steps consistently") {
    const Dataset ds = synth_blobs(2, 4, 100, 20, 3);
    TrainOptions opt = base_options(RoutingPolicy::n_wise(1), 1);
    opt.budget = {Budget::Kind::Epochs, 3};
    CHECK(detail::resolve_steps(opt, ds, 3) == 3 * ((100 + 15) / 16));
    opt.budget = {Budget::Kind::LogicalTime, 42};
    // 1-wise on 3 components: 2b + 2 <= 42 -> b = 20
    CHECK(detail::resolve_steps(opt, ds, 3) == 20);
    opt.budget = {Budget::Kind::Steps, 7};
    CHECK(detail::resolve_steps(opt, ds, 3) == 7);
}

TEST_CASE("wall-clock proxy: logical throughput ratio follows the closed forms") {
    const int n = 4;
    const std::int64_t b = 50;
    const double local = static_cast<double>(logical_time(RoutingPolicy::n_wise(1), n, b));
    const double global = static_cast<double>(logical_time(RoutingPolicy::end_to_end(), n, b));
    const double expected = static_cast<double>(n) * 2.0 * static_cast<double>(b) / (2.0 * b + n - 1);
    CHECK(global / local == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("ensembling: top-1 equals the final head exactly") {
    const Dataset ds = synth_blobs(3, 6, 200, 80, 23, 4.0);
    auto model = build_model(small_mlp({8, 8}, 6, 3), derive_seed(23, "init"));
    auto opt = base_options(RoutingPolicy::n_wise(1), 40);
    train(model, ds, opt);
    const EvalResult ev = evaluate(model, ds, true);
    CHECK(ev.ensemble_acc[0] == ev.head_acc.back());
}

TEST_CASE("ensembling a random head with a perfect head lands between them") {
    // brute-force oracle over a tiny labeled set with hand-built probabilities
    Rng rng(31);
    const int n_examples = 100, classes = 4;
    Tensor perfect({n_examples, classes}), noisy({n_examples, classes});
    std::vector<int> targets;
    for (int i = 0; i < n_examples; ++i) {
        targets.push_back(rng.uniform_int(classes));
        for (int j = 0; j < classes; ++j) {
            perfect.at(i, j) = j == targets.back() ? 8.0 : 0.0;
            noisy.at(i, j) = 4.0 * rng.normal();
        }
    }
    const Tensor p_perfect = softmax_rows(perfect);
    const Tensor p_noisy = softmax_rows(noisy);
    int correct_noisy = 0, correct_mix = 0;
    for (int i = 0; i < n_examples; ++i) {
        int b1 = 0, b2 = 0;
        for (int j = 1; j < classes; ++j) {
            if (p_noisy.at(i, j) > p_noisy.at(i, b1)) b1 = j;
            const double mix_j = p_noisy.at(i, j) + p_perfect.at(i, j);
            const double mix_b = p_noisy.at(i, b2) + p_perfect.at(i, b2);
            if (mix_j > mix_b) b2 = j;
        }
        correct_noisy += b1 == targets[static_cast<std::size_t>(i)];
        correct_mix += b2 == targets[static_cast<std::size_t>(i)];
    }
    // averaging the perfect head in dominates the noisy head alone
    CHECK(correct_mix > correct_noisy);
    CHECK(correct_mix <= n_examples);
}

TEST_CASE("identical heads make every ensemble equal the single head") {
    const Dataset ds = synth_blobs(2, 4, 120, 60, 3);
    // width-1 trick: use a 2-component model and copy head parameters so all
    // heads emit identical logits
    auto model = build_mlp_partitioned(4, {5, 5}, 2, {1, 1}, {"h1"}, 7);
    // make h1 replicate the task head applied after unit 2; simplest identical
    // case: zero everything so every head is uniform
    for (Parameter* p : model.all_params())
        if (p->trainable) p->value.fill(0.0);
    const EvalResult ev = evaluate(model, ds, true);
    for (double acc : ev.ensemble_acc) CHECK(acc == ev.ensemble_acc[0]);
}

TEST_CASE("hogwild emulation applies gradients with the pipeline delay") {
    // 2 components, delay(1) = 1, delay(2) = 0: component 1's batch-i gradient
    // lands right before forward i+2. Verify against a hand-stepped oracle.
    const Dataset ds = synth_blobs(2, 4, 64, 16, 11);
    const auto spec = small_mlp({4, 4}, 4, 2);

    auto hog = build_model(spec, derive_seed(4, "init"));
    TrainOptions opt = base_options(RoutingPolicy::hogwild(), 6, 0.05);
    opt.optim.kind = OptimizerConfig::Kind::Sgd;
    opt.seed = 4;
    opt.batch_size = 8;
    const RunResult res = train(hog, ds, opt);
    REQUIRE(res.staleness_last.size() == 2);
    CHECK(res.staleness_last[0] == 1);
    CHECK(res.staleness_last[1] == 0);

    // oracle: replay the same batches, delaying component 1's task-loss
    // gradient by one step
    auto ref = build_model(spec, derive_seed(4, "init"));
    BatchIterator batches(ds, 8, derive_seed(4, "batches"));
    Optimizer opt1(opt.optim, ref.comp(1).body_params());
    Optimizer opt2(opt.optim, ref.comp(2).body_params());
    std::deque<std::vector<Tensor>> pending;  // comp 1 grads, applied two steps later
    auto apply_front = [&] {
        std::size_t i = 0;
        for (Parameter* p : ref.comp(1).body_params())
            if (p->trainable) p->grad = pending.front()[i++];
        opt1.apply(0.05);
        pending.pop_front();
    };
    Tape t;
    for (int step = 1; step <= 6; ++step) {
        if (pending.size() > 1) apply_front();
        auto b = batches.next();
        t.clear();
        auto fp = ref.forward(t, t.leaf(std::move(b.x)), true);
        backward_routed(t, ref, fp, b.y, RoutingPolicy::hogwild());
        std::vector<Tensor> pack;
        for (Parameter* p : ref.comp(1).body_params())
            if (p->trainable) {
                pack.push_back(p->grad);
                p->zero_grad();
            }
        pending.push_back(std::move(pack));
        opt2.apply(0.05);
    }
    while (!pending.empty()) apply_front();
    const auto ph = hog.all_params();
    const auto pr = ref.all_params();
    for (std::size_t i = 0; i < ph.size(); ++i) {
        if (ph[i]->id[0] == 'h') continue;  // heads stay untrained under hogwild
        for (std::int64_t j = 0; j < ph[i]->value.size(); ++j)
            CHECK(ph[i]->value[j] == doctest::Approx(pr[i]->value[j]).epsilon(1e-12));
    }
}

TEST_CASE("aborts carry the parameter name when gradients blow up") {
    const Dataset ds = synth_blobs(2, 4, 64, 16, 11);
    auto model = build_model(small_mlp({4, 4}, 4, 2), 3);
    // poison a weight so the forward pass goes non-finite
    model.all_params()[0]->value.fill(std::numeric_limits<double>::infinity());
    auto opt = base_options(RoutingPolicy::end_to_end(), 3);
    CHECK_THROWS_AS(train(model, ds, opt), NumericError);
}

TEST_CASE("checkpoints round-trip the whole model") {
    const auto dir = fs::temp_directory_path() / "interlock_ckpt";
    fs::create_directories(dir);
    const std::string path = (dir / "model.ilck").string();

    const Dataset ds = synth_blobs(3, 6, 200, 60, 29, 4.0);
    auto model = build_model(small_mlp({8, 8}, 6, 3), derive_seed(29, "init"));
    auto opt = base_options(RoutingPolicy::n_wise(2), 50);
    train(model, ds, opt);
    save_checkpoint(path, model, 29, 50);

    const Checkpoint ck = load_checkpoint(path);
    CHECK(ck.step == 50);
    CHECK(ck.seed == 29);
    auto restored = restore_model(ck);
    const auto pa = model.all_params();
    const auto pb = restored.all_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), sizeof(double) * pa[i]->value.size()) == 0);

    const EvalResult e1 = evaluate(model, ds, true);
    const EvalResult e2 = evaluate(restored, ds, true);
    CHECK(e1.head_acc == e2.head_acc);
    fs::remove_all(dir);
}

TEST_CASE("metrics files read back their eval rows") {
    const auto dir = fs::temp_directory_path() / "interlock_metrics";
    fs::create_directories(dir);
    const std::string path = (dir / "m.csv").string();
    const Dataset ds = synth_blobs(2, 4, 100, 30, 7);
    auto model = build_model(small_mlp({6, 6}, 4, 2), 1);
    auto opt = base_options(RoutingPolicy::n_wise(1), 20);
    opt.metrics_path = path;
    const RunResult res = train(model, ds, opt);

    const MetricsSummary sum = read_metrics(path);
    CHECK(sum.last_step == 20);
    REQUIRE(sum.last_losses.size() == 2);
    CHECK(sum.last_losses[0] == doctest::Approx(res.history.back().losses[0]).epsilon(1e-12));
    CHECK(sum.final_test_head_acc == res.test_eval.head_acc);
    CHECK(sum.final_train_ens_acc == res.train_eval.ensemble_acc);
    fs::remove_all(dir);
}

}  // TEST_SUITE
