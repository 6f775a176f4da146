#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>

#include "interlock/errors.hpp"
#include "interlock/gradcheck.hpp"
#include "interlock/ops.hpp"
#include "interlock/rng.hpp"

using namespace interlock;

namespace {

Tensor randt(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

// Finite-difference check of a scalar graph over named parameters. The graph
// builder mounts each parameter and returns the loss node.
double fd_check(std::vector<Parameter*> params,
                const std::function<Value(Tape&, const std::vector<Value>&)>& build, double eps = 1e-5) {
    auto mount_all = [&](Tape& t) {
        std::vector<Value> vals;
        for (Parameter* p : params) vals.push_back(t.leaf(p->value));
        return vals;
    };
    auto loss = [&] {
        Tape t;
        auto vals = mount_all(t);
        return t.val(build(t, vals)).item();
    };
    auto grads = [&] {
        Tape t;
        auto vals = mount_all(t);
        t.backward(build(t, vals));
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& g = t.grad(vals[i]);
            for (std::int64_t j = 0; j < g.size(); ++j) params[i]->grad[j] += g[j];
        }
    };
    return grad_check(params, loss, grads, eps).max_rel_err;
}

// Mean of all elements, as a differentiable scalar: matmul with a ones vector
// twice keeps the graph inside the supported op set.
Value sum_to_scalar(Tape& t, Value x) {
    const Tensor& v = t.val(x);
    Value flat = reshape(t, x, {1, static_cast<int>(v.size())});
    Value ones = t.leaf(Tensor::full({static_cast<int>(v.size()), 1}, 1.0));
    return matmul(t, flat, ones);
}

}  // namespace

TEST_SUITE("tensor_ops") {

TEST_CASE("matmul identity and basic products") {
    Tape t;
    Value eye = t.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}));
    Value b = t.leaf(Tensor::from({2, 2}, {3, 4, 5, 6}));
    CHECK(t.val(matmul(t, eye, b)).vec() == std::vector<double>{3, 4, 5, 6});

    Value r = t.leaf(Tensor::from({1, 2}, {1, 2}));
    Value c = t.leaf(Tensor::from({2, 1}, {3, 4}));
    CHECK(t.val(matmul(t, r, c)).item() == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tape t;
    Value a = t.leaf(Tensor({2, 3}));
    Value b = t.leaf(Tensor({4, 2}));
    try {
        matmul(t, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences") {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        Parameter a("a", randt({3, 4}, rng));
        Parameter b("b", randt({4, 2}, rng));
        const double err = fd_check({&a, &b}, [&](Tape& t, const std::vector<Value>& v) {
            return sum_to_scalar(t, relu(t, matmul(t, v[0], v[1])));
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("conv2d ones kernel sums the neighborhood") {
    Tape t;
    Value x = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    Value w = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
    const Tensor& y = t.val(conv2d(t, x, w, 1, 1));
    CHECK(y.at(0, 0, 1, 1) == 9.0);  // center sees all nine ones
    CHECK(y.at(0, 0, 0, 0) == 4.0);  // corner sees a 2x2 patch
}

TEST_CASE("conv2d impulse response reproduces the flipped stencil") {
    Tape t;
    Tensor x({1, 1, 5, 5});
    x.at(0, 0, 2, 2) = 1.0;
    Rng rng(3);
    Tensor w = randt({1, 1, 3, 3}, rng);
    Value y = conv2d(t, t.leaf(x), t.leaf(w), 1, 1);
    // out[oy][ox] = sum_k w[ky][kx] x[oy-1+ky][ox-1+kx]; the impulse at (2,2)
    // picks out w[3-oy][3-ox]: the kernel flipped about the impulse
    for (int oy = 1; oy <= 3; ++oy)
        for (int ox = 1; ox <= 3; ++ox)
            CHECK(t.val(y).at(0, 0, oy, ox) == w.at(0, 0, 3 - oy, 3 - ox));
}

TEST_CASE("conv2d rejects non-integral output sizes") {
    Tape t;
    Value x = t.leaf(Tensor({1, 1, 8, 8}));
    Value w = t.leaf(Tensor({1, 1, 3, 3}));
    CHECK_THROWS_AS(conv2d(t, x, w, 1, 2), ConfigError);  // (8 + 2 - 3) % 2 != 0
}

TEST_CASE("conv2d gradients match finite differences") {
    Rng rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        Parameter x("x", randt({2, 3, 8, 8}, rng));
        Parameter w("w", randt({4, 3, 3, 3}, rng));
        const double err = fd_check(
            {&x, &w},
            [&](Tape& t, const std::vector<Value>& v) {
                return sum_to_scalar(t, relu(t, conv2d(t, v[0], v[1], 1, 1)));
            },
            1e-4);
        CHECK(err < 1e-5);
    }
    // stride-2 path
    Parameter x("x", randt({1, 2, 9, 9}, rng));
    Parameter w("w", randt({2, 2, 3, 3}, rng));
    const double err = fd_check({&x, &w}, [&](Tape& t, const std::vector<Value>& v) {
        return sum_to_scalar(t, conv2d(t, v[0], v[1], 1, 2));
    });
    CHECK(err < 1e-5);
}

TEST_CASE("maxpool basics and the first-occurrence tie rule") {
    Tape t;
    Value x = t.leaf(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(t.val(maxpool2d(t, x, 2, 1)).item() == 4.0);

    Value c = t.leaf(Tensor::full({1, 1, 2, 2}, 5.0));
    Value pooled = maxpool2d(t, c, 2, 1);
    CHECK(t.val(pooled).item() == 5.0);
    t.backward(pooled);
    const Tensor& g = t.grad(c);
    CHECK(g.vec() == std::vector<double>{1, 0, 0, 0});  // full gradient to the first window element
}

TEST_CASE("maxpool rejects kernels larger than the input") {
    Tape t;
    Value x = t.leaf(Tensor({1, 1, 2, 2}));
    CHECK_THROWS_AS(maxpool2d(t, x, 3, 1), ConfigError);
}

TEST_CASE("maxpool gradients match finite differences away from ties") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        Parameter x("x", randt({1, 1, 5, 5}, rng));
        const double err = fd_check({&x}, [&](Tape& t, const std::vector<Value>& v) {
            return sum_to_scalar(t, maxpool2d(t, v[0], 2, 1));
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("relu, batchnorm and global_avg_pool basics") {
    Tape t;
    Value x = t.leaf(Tensor::from({1, 2}, {-1, 2}));
    CHECK(t.val(relu(t, x)).vec() == std::vector<double>{0, 2});

    // an exactly standardized batch passes through batchnorm unchanged
    Tensor std_batch = Tensor::from({2, 1}, {-1, 1});
    Tensor rm({1}), rv = Tensor::full({1}, 1.0);
    BatchNormStats stats{&rm, &rv, 0.1, 1e-12};
    Value bx = t.leaf(std_batch);
    Value gamma = t.leaf(Tensor::full({1}, 1.0));
    Value beta = t.leaf(Tensor({1}));
    const Tensor& y = t.val(batchnorm(t, bx, gamma, beta, stats, true));
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y.at(1, 0) == doctest::Approx(1.0).epsilon(1e-6));

    Value g = t.leaf(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(t.val(global_avg_pool(t, g)).item() == 2.5);
}

TEST_CASE("batchnorm rejects a train-mode batch of one") {
    Tape t;
    Tensor rm({2}), rv = Tensor::full({2}, 1.0);
    BatchNormStats stats{&rm, &rv};
    Value x = t.leaf(Tensor({1, 2}));
    Value gamma = t.leaf(Tensor::full({2}, 1.0));
    Value beta = t.leaf(Tensor({2}));
    CHECK_THROWS_AS(batchnorm(t, x, gamma, beta, stats, true), ConfigError);
    CHECK_NOTHROW(batchnorm(t, x, gamma, beta, stats, false));
}

TEST_CASE("batchnorm maintains running statistics with momentum 0.1") {
    Tensor rm({1}), rv = Tensor::full({1}, 1.0);
    BatchNormStats stats{&rm, &rv, 0.1, 1e-5};
    Tape t;
    Value x = t.leaf(Tensor::from({2, 1}, {1.0, 3.0}));  // mean 2, biased var 1
    Value gamma = t.leaf(Tensor::full({1}, 1.0));
    Value beta = t.leaf(Tensor({1}));
    batchnorm(t, x, gamma, beta, stats, true);
    CHECK(rm[0] == doctest::Approx(0.2));
    CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 1.0));
}

TEST_CASE("batchnorm gradients match finite differences in both modes") {
    Rng rng(17);
    Tensor rm = randt({3}, rng), rv = Tensor::full({3}, 1.3);
    for (const bool training : {true, false}) {
        Parameter x("x", randt({4, 3, 2, 2}, rng));
        Parameter gamma("gamma", randt({3}, rng));
        Parameter beta("beta", randt({3}, rng));
        BatchNormStats stats{&rm, &rv};
        const double err = fd_check({&x, &gamma, &beta}, [&](Tape& t, const std::vector<Value>& v) {
            BatchNormStats frozen{nullptr, nullptr};
            Tensor m = rm, va = rv;  // keep probes from touching the shared buffers
            frozen.running_mean = &m;
            frozen.running_var = &va;
            return sum_to_scalar(t, relu(t, batchnorm(t, v[0], v[1], v[2], frozen, training)));
        });
        CHECK(err < 1e-5);
    }
}

TEST_CASE("softmax cross entropy values and stabilization") {
    Tape t;
    Value l = t.leaf(Tensor::from({1, 2}, {0, 0}));
    CHECK(t.val(softmax_cross_entropy(t, l, {0})).item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    Value big = t.leaf(Tensor::from({1, 2}, {1000, 0}));
    const double loss = t.val(softmax_cross_entropy(t, big, {0})).item();
    CHECK(std::isfinite(loss));
    CHECK(loss < 1e-9);

    CHECK_THROWS_AS(softmax_cross_entropy(t, l, {5}), DataError);
}

TEST_CASE("softmax cross entropy gradients match finite differences") {
    Rng rng(19);
    std::vector<int> targets = {2, 0, 1, 2};
    for (int rep = 0; rep < 20; ++rep) {
        Parameter l("logits", randt({4, 3}, rng));
        const double err = fd_check({&l}, [&](Tape& t, const std::vector<Value>& v) {
            return softmax_cross_entropy(t, v[0], targets);
        });
        CHECK(err < 1e-6);
    }
}

TEST_CASE("stop_gradient passes values and blocks gradients") {
    Tape t;
    Rng rng(23);
    Tensor xv = randt({2, 3}, rng);
    Value x = t.leaf(xv);
    Value sg = stop_gradient(t, x);
    CHECK(std::memcmp(t.val(sg).data(), xv.data(), sizeof(double) * xv.size()) == 0);

    Value w = t.leaf(randt({3, 1}, rng));
    Value y = sum_to_scalar(t, matmul(t, sg, w));
    t.backward(y);
    CHECK_FALSE(t.grad_touched(x));
    for (std::int64_t i = 0; i < t.grad(x).size(); ++i) CHECK(t.grad(x)[i] == 0.0);
    CHECK(t.grad_touched(w));
}

TEST_CASE("a stop_gradient between two layers zeroes the lower layer's grads") {
    Rng rng(29);
    Tensor x = randt({4, 3}, rng);
    Parameter w1("w1", randt({3, 5}, rng));
    Parameter w2("w2", randt({5, 2}, rng));
    std::vector<int> targets = {0, 1, 1, 0};

    auto run = [&](bool cut) {
        Tape t;
        Value xin = t.leaf(x);
        Value v1 = t.leaf(w1.value);
        Value v2 = t.leaf(w2.value);
        Value h = relu(t, matmul(t, xin, v1));
        if (cut) h = stop_gradient(t, h);
        Value loss = softmax_cross_entropy(t, matmul(t, h, v2), targets);
        t.backward(loss);
        double w1_mass = 0.0;
        for (std::int64_t i = 0; i < t.grad(v1).size(); ++i) w1_mass += std::abs(t.grad(v1)[i]);
        return w1_mass;
    };
    CHECK(run(false) > 1e-6);
    CHECK(run(true) == 0.0);
}

TEST_CASE("backward accumulates: a second pass doubles every gradient") {
    Rng rng(31);
    Tape t;
    Value x = t.leaf(randt({3, 3}, rng));
    Value w = t.leaf(randt({3, 3}, rng));
    Value loss = sum_to_scalar(t, relu(t, matmul(t, x, w)));
    t.backward(loss);
    const Tensor once = t.grad(w);
    t.backward(loss);
    for (std::int64_t i = 0; i < once.size(); ++i) CHECK(t.grad(w)[i] == 2.0 * once[i]);

    t.zero_grads();
    CHECK_FALSE(t.grad_touched(w));
    for (std::int64_t i = 0; i < once.size(); ++i) CHECK(t.grad(w)[i] == 0.0);
}

TEST_CASE("identical seeds give bitwise-identical forwards and gradients") {
    auto run = [] {
        Rng rng(777);
        Tape t;
        Value x = t.leaf(randt({4, 6}, rng));
        Value w = t.leaf(randt({6, 3}, rng));
        Value loss = softmax_cross_entropy(t, matmul(t, x, w), {0, 1, 2, 0});
        t.backward(loss);
        std::pair<Tensor, Tensor> out{t.val(loss), t.grad(w)};
        return out;
    };
    const auto [l1, g1] = run();
    const auto [l2, g2] = run();
    CHECK(std::memcmp(l1.data(), l2.data(), sizeof(double)) == 0);
    CHECK(std::memcmp(g1.data(), g2.data(), sizeof(double) * g1.size()) == 0);
}

TEST_CASE("forward values stay finite on finite inputs") {
    Rng rng(37);
    Tape t;
    Value x = t.leaf(randt({2, 3, 6, 6}, rng));
    Value w = t.leaf(randt({4, 3, 3, 3}, rng));
    Value y = relu(t, conv2d(t, x, w, 1, 1));
    Value p = maxpool2d(t, y, 2, 1);
    Value gap = global_avg_pool(t, p);
    CHECK(t.val(gap).all_finite());
}

TEST_CASE("grad_check on a linear map is exact to rounding") {
    Rng rng(41);
    Parameter w("w", randt({4, 1}, rng));
    Tensor x = randt({1, 4}, rng);
    auto loss = [&] {
        Tape t;
        return t.val(matmul(t, t.leaf(x), t.leaf(w.value))).item();
    };
    auto grads = [&] {
        Tape t;
        Value wv = t.leaf(w.value);
        t.backward(matmul(t, t.leaf(x), wv));
        for (std::int64_t i = 0; i < w.grad.size(); ++i) w.grad[i] += t.grad(wv)[i];
    };
    CHECK(grad_check({&w}, loss, grads, 1e-5).max_rel_err < 1e-9);
}

TEST_CASE("grad_check treats stop_gradient paths as constants consistently") {
    Rng rng(43);
    Parameter w_free("w_free", randt({3, 2}, rng));
    Parameter w_blocked("w_blocked", randt({3, 2}, rng));
    Tensor x = randt({2, 3}, rng);
    std::vector<int> targets = {0, 1};
    auto build = [&](Tape& t, Value vf, Value vb) {
        Value free_path = matmul(t, t.leaf(x), vf);
        Value blocked = stop_gradient(t, matmul(t, t.leaf(x), vb));
        return softmax_cross_entropy(t, add(t, free_path, blocked), targets);
    };
    auto loss = [&] {
        Tape t;
        return t.val(build(t, t.leaf(w_free.value), t.leaf(w_blocked.value))).item();
    };
    auto grads = [&] {
        Tape t;
        Value vf = t.leaf(w_free.value);
        Value vb = t.leaf(w_blocked.value);
        t.backward(build(t, vf, vb));
        for (std::int64_t i = 0; i < w_free.grad.size(); ++i) w_free.grad[i] += t.grad(vf)[i];
        // blocked path: analytic gradient is exactly zero by construction
        for (std::int64_t i = 0; i < w_blocked.grad.size(); ++i) w_blocked.grad[i] += t.grad(vb)[i];
    };
    // only perturbing the unblocked parameter: both analytic and numeric see the same function
    CHECK(grad_check({&w_free}, loss, grads, 1e-5).max_rel_err < 1e-6);
}

TEST_CASE("every differentiable op passes randomized finite-difference checks") {
    Rng rng(47);
    for (int rep = 0; rep < 20; ++rep) {
        Parameter x("x", randt({3, 2, 4, 4}, rng));
        Parameter w("w", randt({2, 2, 3, 3}, rng));
        Parameter gamma("gamma", randt({2}, rng));
        Parameter beta("beta", randt({2}, rng));
        Parameter lin("lin", randt({2, 3}, rng));
        Parameter bias("bias", randt({3}, rng));
        std::vector<int> targets = {0, 2, 1};
        const double err =
            fd_check({&x, &w, &gamma, &beta, &lin, &bias}, [&](Tape& t, const std::vector<Value>& v) {
                Tensor m({2}), va = Tensor::full({2}, 1.0);
                BatchNormStats stats{&m, &va};
                Value y = conv2d(t, v[0], v[1], 1, 1);
                y = batchnorm(t, y, v[2], v[3], stats, true);
                y = relu(t, y);
                y = maxpool2d(t, y, 2, 1);
                y = global_avg_pool(t, y);
                y = add_bias(t, matmul(t, y, v[4]), v[5]);
                return softmax_cross_entropy(t, y, targets);
            });
        CHECK(err < 1e-4);
    }
}

}  // TEST_SUITE
