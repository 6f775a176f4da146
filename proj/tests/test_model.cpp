#include <doctest.h>

#include <cmath>
#include <cstring>

#include "interlock/errors.hpp"
#include "interlock/model.hpp"
#include "interlock/rng.hpp"

using namespace interlock;

namespace {

ArchitectureSpec toy_conv(int depth, std::vector<int> input = {3, 32, 32}, int classes = 10) {
    ArchitectureSpec s;
    s.preset = ArchitectureSpec::Preset::ToyConv;
    s.depth = depth;
    s.aux_head = ArchitectureSpec::AuxHead::Linear;
    s.input_shape = std::move(input);
    s.num_classes = classes;
    return s;
}

ArchitectureSpec mlp(std::vector<int> widths, int input_dim, int classes) {
    ArchitectureSpec s;
    s.preset = ArchitectureSpec::Preset::Mlp;
    s.widths = std::move(widths);
    s.input_shape = {input_dim};
    s.num_classes = classes;
    return s;
}

Tensor randt(std::vector<int> shape, std::uint64_t seed) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

long param_count(PartitionedModel& m) {
    long total = 0;
    for (const Parameter* p : m.all_params()) total += p->value.size();
    return total;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("toy_conv(3) has the fixed component layout") {
    auto m = build_model(toy_conv(3), 1);
    REQUIRE(m.n() == 3);
    CHECK(m.comp(1).body.size() == 3);  // conv32 + bn + relu
    CHECK(m.comp(2).body.size() == 4);  // conv64 + bn + relu + pool
    CHECK(m.comp(3).body.size() == 6);  // conv64 + bn + relu + pool + flatten + task linear
    CHECK(m.comp(1).aux_head.size() == 2);
    CHECK(m.comp(2).aux_head.size() == 2);
    CHECK(m.comp(3).aux_head.empty());

    CHECK(m.comp(1).body[0]->describe() == "conv2d 3->32 k=3 p=1 s=1");
    CHECK(m.comp(2).body[0]->describe() == "conv2d 32->64 k=3 p=1 s=1");
    CHECK(m.comp(3).body[0]->describe() == "conv2d 64->64 k=3 p=1 s=1");
}

TEST_CASE("toy_conv(10) repeats the narrow block through component 8") {
    auto m = build_model(toy_conv(10), 1);
    REQUIRE(m.n() == 10);
    for (int k = 2; k <= 8; ++k) {
        CHECK(m.comp(k).body[0]->describe() == "conv2d 32->32 k=3 p=1 s=1");
        CHECK(m.comp(k).body.size() == 3);
    }
    CHECK(m.comp(9).body[0]->describe() == "conv2d 32->64 k=3 p=1 s=1");
}

TEST_CASE("depth below 3 is rejected") {
    CHECK_THROWS_AS(build_model(toy_conv(2), 1), ConfigError);
}

TEST_CASE("mlp builds are deterministic in the seed") {
    auto a = build_model(mlp({4, 4, 4}, 6, 2), 42);
    auto b = build_model(mlp({4, 4, 4}, 6, 2), 42);
    REQUIRE(a.n() == 3);
    CHECK(param_count(a) == param_count(b));
    const auto pa = a.all_params(), pb = b.all_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->id == pb[i]->id);
        CHECK(std::memcmp(pa[i]->value.data(), pb[i]->value.data(), sizeof(double) * pa[i]->value.size()) == 0);
    }
    auto c = build_model(mlp({4, 4, 4}, 6, 2), 43);
    bool any_diff = false;
    const auto pc = c.all_params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        any_diff |= std::memcmp(pa[i]->value.data(), pc[i]->value.data(), sizeof(double) * pa[i]->value.size()) != 0;
    CHECK(any_diff);
}

TEST_CASE("forward activation shapes follow the shape oracle") {
    auto m = build_model(toy_conv(6, {3, 16, 16}, 10), 5);
    const auto expect = m.activation_shapes(4);
    Tape t;
    const auto fp = m.forward(t, t.leaf(randt({4, 3, 16, 16}, 9)), true);
    REQUIRE(fp.act.size() == 6);
    for (int k = 0; k < 6; ++k) {
        std::vector<int> want = expect[static_cast<std::size_t>(k)];
        CHECK(t.val(fp.act[static_cast<std::size_t>(k)]).shape() == want);
    }
    // pooling kicks in for the top two components only
    CHECK(expect[3] == std::vector<int>{4, 32, 16, 16});
    CHECK(expect[4] == std::vector<int>{4, 64, 15, 15});
    CHECK(expect[5] == std::vector<int>{4, 10});
}

TEST_CASE("partition transparency: the final head equals the unpartitioned stack bitwise") {
    auto model = build_model(mlp({5, 7, 4}, 6, 3), 21);
    // same stack, one component: identical unit names, identical weights
    auto merged = build_mlp_partitioned(6, {5, 7, 4}, 3, {3}, {}, 21);
    Tensor x = randt({8, 6}, 33);
    Tape t1, t2;
    const auto fp1 = model.forward(t1, t1.leaf(x), false);
    const auto fp2 = merged.forward(t2, t2.leaf(x), false);
    const Tensor& a = t1.val(fp1.logits.back());
    const Tensor& b = t2.val(fp2.logits.back());
    CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0);
}

TEST_CASE("single-component model is a plain layer stack") {
    auto m = build_mlp_partitioned(4, {6}, 2, {1}, {}, 3);
    CHECK(m.n() == 1);
    Tape t;
    const auto fp = m.forward(t, t.leaf(randt({5, 4}, 10)), false);
    CHECK(fp.logits.size() == 1);
    CHECK(t.val(fp.logits[0]).shape() == std::vector<int>{5, 2});
}

TEST_CASE("uniform logits price every head at log(classes)") {
    auto m = build_model(mlp({4, 4}, 6, 10), 2);
    Tape t;
    for (Parameter* p : m.all_params())
        if (p->trainable) p->value.fill(0.0);  // every head emits uniform logits
    const auto fp = m.forward(t, t.leaf(randt({6, 6}, 4)), false);
    const auto losses = component_losses(t, fp, {0, 1, 2, 3, 4, 5});
    for (Value l : losses) CHECK(t.val(l).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("final-component loss equals an unpartitioned reference") {
    auto model = build_model(mlp({6, 5, 4}, 8, 3), 77);
    auto merged = build_mlp_partitioned(8, {6, 5, 4}, 3, {3}, {}, 77);
    Tensor x = randt({10, 8}, 5);
    std::vector<int> y = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
    Tape t1, t2;
    auto fp1 = model.forward(t1, t1.leaf(x), false);
    auto fp2 = merged.forward(t2, t2.leaf(x), false);
    const auto l1 = component_losses(t1, fp1, y);
    const auto l2 = component_losses(t2, fp2, y);
    CHECK(t1.val(l1.back()).item() == t2.val(l2.back()).item());
}

TEST_CASE("head isolation: a head's loss moves no other head's parameters") {
    auto m = build_model(mlp({4, 4, 4, 4}, 5, 3), 13);
    Tape t;
    auto fp = m.forward(t, t.leaf(randt({6, 5}, 6)), true);
    const auto losses = component_losses(t, fp, {0, 1, 2, 0, 1, 2});
    t.backward(losses[1]);  // head 2's loss
    for (int k = 1; k <= m.n(); ++k) {
        if (k == 2) continue;
        for (const auto& [param, value] : fp.binds[static_cast<std::size_t>(k - 1)].head) {
            (void)param;
            CHECK_FALSE(t.grad_touched(value));
        }
    }
}

TEST_CASE("shape mismatch reports the component index") {
    auto m = build_model(mlp({4, 4}, 5, 2), 1);
    Tape t;
    try {
        m.forward(t, t.leaf(Tensor({3, 7})), false);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("component 1") != std::string::npos);
    }
}

TEST_CASE("detached activations carry identical forward values") {
    auto m = build_model(mlp({4, 4}, 5, 2), 9);
    Tape t;
    const auto fp = m.forward(t, t.leaf(randt({3, 5}, 2)), false);
    for (std::size_t k = 0; k < fp.act.size(); ++k) {
        const Tensor& a = t.val(fp.act[k]);
        const Tensor& d = t.val(fp.act_detached[k]);
        CHECK(std::memcmp(a.data(), d.data(), sizeof(double) * a.size()) == 0);
    }
}

TEST_CASE("architecture specs round-trip through their text form") {
    for (const auto& spec : {toy_conv(6, {3, 16, 16}, 10), mlp({8, 8, 8}, 12, 4)}) {
        const auto back = ArchitectureSpec::parse(spec.to_string());
        CHECK(back.to_string() == spec.to_string());
        CHECK(back.components() == spec.components());
    }
    ArchitectureSpec r;
    r.preset = ArchitectureSpec::Preset::ResnetLite;
    r.depth = 4;
    r.aux_head = ArchitectureSpec::AuxHead::ConvHead;
    r.input_shape = {3, 12, 12};
    r.num_classes = 5;
    CHECK(ArchitectureSpec::parse(r.to_string()).to_string() == r.to_string());
}

TEST_CASE("resnet_lite builds and runs forward") {
    ArchitectureSpec r;
    r.preset = ArchitectureSpec::Preset::ResnetLite;
    r.depth = 3;
    r.aux_head = ArchitectureSpec::AuxHead::ConvHead;
    r.input_shape = {3, 8, 8};
    r.num_classes = 4;
    auto m = build_model(r, 6);
    REQUIRE(m.n() == 3);
    Tape t;
    const auto fp = m.forward(t, t.leaf(randt({4, 3, 8, 8}, 8)), true);
    CHECK(t.val(fp.logits.back()).shape() == std::vector<int>{4, 4});
    CHECK(t.val(fp.logits[0]).shape() == std::vector<int>{4, 4});
    for (Value a : fp.act) CHECK(t.val(a).all_finite());
}

}  // TEST_SUITE
