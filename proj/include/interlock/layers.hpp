#pragma once

#include <memory>
#include <string>
#include <vector>

#include "interlock/ops.hpp"
#include "interlock/tape.hpp"

namespace interlock {

// Per-forward bookkeeping: which tape node each mounted parameter got.
using ParamBinds = std::vector<std::pair<Parameter*, Value>>;

struct LayerCtx {
    Tape& tape;
    bool training = false;
    ParamBinds* binds = nullptr;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Value forward(LayerCtx& ctx, Value in) = 0;
    virtual void collect_params(std::vector<Parameter*>&) {}
    virtual std::vector<int> out_shape(const std::vector<int>& in) const = 0;
    virtual std::string describe() const = 0;

protected:
    static Value mount(LayerCtx& ctx, Parameter& p) {
        Value v = ctx.tape.leaf(p.value);
        if (ctx.binds) ctx.binds->emplace_back(&p, v);
        return v;
    }
};

using LayerPtr = std::unique_ptr<Layer>;
using LayerStack = std::vector<LayerPtr>;

// x[N x In] * W[In x Out] + b. Weights uniform(-s, s) with s = sqrt(1/fan_in),
// bias zero, seeded per parameter id.
class LinearLayer : public Layer {
public:
    LinearLayer(const std::string& name, int in, int out, std::uint64_t seed);
    Value forward(LayerCtx& ctx, Value in) override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<int> out_shape(const std::vector<int>& in) const override;
    std::string describe() const override;

private:
    Parameter w_, b_;
    int in_, out_;
};

class Conv2dLayer : public Layer {
public:
    Conv2dLayer(const std::string& name, int cin, int cout, int kernel, int pad, int stride, std::uint64_t seed);
    Value forward(LayerCtx& ctx, Value in) override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<int> out_shape(const std::vector<int>& in) const override;
    std::string describe() const override;

private:
    Parameter w_;
    int cin_, cout_, kernel_, pad_, stride_;
};

class BatchNormLayer : public Layer {
public:
    BatchNormLayer(const std::string& name, int channels);
    Value forward(LayerCtx& ctx, Value in) override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    std::string describe() const override;

private:
    Parameter gamma_, beta_;
    Parameter running_mean_, running_var_;  // state, not gradient-trained
    int channels_;
};

class ReluLayer : public Layer {
public:
    Value forward(LayerCtx& ctx, Value in) override { return relu(ctx.tape, in); }
    std::vector<int> out_shape(const std::vector<int>& in) const override { return in; }
    std::string describe() const override { return "relu"; }
};

class MaxPool2dLayer : public Layer {
public:
    MaxPool2dLayer(int kernel, int stride) : kernel_(kernel), stride_(stride) {}
    Value forward(LayerCtx& ctx, Value in) override { return maxpool2d(ctx.tape, in, kernel_, stride_); }
    std::vector<int> out_shape(const std::vector<int>& in) const override;
    std::string describe() const override;

private:
    int kernel_, stride_;
};

class GlobalAvgPoolLayer : public Layer {
public:
    Value forward(LayerCtx& ctx, Value in) override { return global_avg_pool(ctx.tape, in); }
    std::vector<int> out_shape(const std::vector<int>& in) const override { return {in[0], in[1]}; }
    std::string describe() const override { return "global_avg_pool"; }
};

class FlattenLayer : public Layer {
public:
    Value forward(LayerCtx& ctx, Value in) override { return flatten(ctx.tape, in); }
    std::vector<int> out_shape(const std::vector<int>& in) const override;
    std::string describe() const override { return "flatten"; }
};

// Residual block: relu(inner(x) + proj(x)), proj defaults to identity.
class ResidualLayer : public Layer {
public:
    ResidualLayer(LayerStack inner, LayerPtr projection);
    Value forward(LayerCtx& ctx, Value in) override;
    void collect_params(std::vector<Parameter*>& out) override;
    std::vector<int> out_shape(const std::vector<int>& in) const override;
    std::string describe() const override;

private:
    LayerStack inner_;
    LayerPtr proj_;
};

std::vector<int> stack_out_shape(const LayerStack& stack, std::vector<int> in);

}  // namespace interlock
