#include "interlock/layers.hpp"

#include <cmath>

#include "interlock/errors.hpp"
#include "interlock/rng.hpp"

namespace interlock {

namespace {

Tensor init_uniform(std::vector<int> shape, int fan_in, std::uint64_t seed, const std::string& param_id) {
    Tensor t(std::move(shape));
    Rng rng(derive_seed(seed, param_id));
    const double s = std::sqrt(1.0 / fan_in);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-s, s);
    return t;
}

}  // namespace

LinearLayer::LinearLayer(const std::string& name, int in, int out, std::uint64_t seed)
    : w_(name + ".w", init_uniform({in, out}, in, seed, name + ".w")),
      b_(name + ".b", Tensor({out})),
      in_(in),
      out_(out) {}

Value LinearLayer::forward(LayerCtx& ctx, Value in) {
    Value w = mount(ctx, w_);
    Value b = mount(ctx, b_);
    return add_bias(ctx.tape, matmul(ctx.tape, in, w), b);
}

void LinearLayer::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&w_);
    out.push_back(&b_);
}

std::vector<int> LinearLayer::out_shape(const std::vector<int>& in) const {
    if (in.size() != 2 || in[1] != in_)
        throw ShapeError("linear expects [N x " + std::to_string(in_) + "] input");
    return {in[0], out_};
}

std::string LinearLayer::describe() const {
    return "linear " + std::to_string(in_) + "->" + std::to_string(out_);
}

Conv2dLayer::Conv2dLayer(const std::string& name, int cin, int cout, int kernel, int pad, int stride,
                         std::uint64_t seed)
    : w_(name + ".w", init_uniform({cout, cin, kernel, kernel}, cin * kernel * kernel, seed, name + ".w")),
      cin_(cin),
      cout_(cout),
      kernel_(kernel),
      pad_(pad),
      stride_(stride) {}

Value Conv2dLayer::forward(LayerCtx& ctx, Value in) {
    Value w = mount(ctx, w_);
    return conv2d(ctx.tape, in, w, pad_, stride_);
}

void Conv2dLayer::collect_params(std::vector<Parameter*>& out) { out.push_back(&w_); }

std::vector<int> Conv2dLayer::out_shape(const std::vector<int>& in) const {
    if (in.size() != 4 || in[1] != cin_)
        throw ShapeError("conv2d expects NCHW input with C=" + std::to_string(cin_));
    const int oh = (in[2] + 2 * pad_ - kernel_) / stride_ + 1;
    const int ow = (in[3] + 2 * pad_ - kernel_) / stride_ + 1;
    return {in[0], cout_, oh, ow};
}

std::string Conv2dLayer::describe() const {
    return "conv2d " + std::to_string(cin_) + "->" + std::to_string(cout_) + " k=" + std::to_string(kernel_) +
           " p=" + std::to_string(pad_) + " s=" + std::to_string(stride_);
}

BatchNormLayer::BatchNormLayer(const std::string& name, int channels)
    : gamma_(name + ".gamma", Tensor::full({channels}, 1.0)),
      beta_(name + ".beta", Tensor({channels})),
      running_mean_(name + ".rmean", Tensor({channels}), /*train=*/false),
      running_var_(name + ".rvar", Tensor::full({channels}, 1.0), /*train=*/false),
      channels_(channels) {}

Value BatchNormLayer::forward(LayerCtx& ctx, Value in) {
    Value g = mount(ctx, gamma_);
    Value b = mount(ctx, beta_);
    BatchNormStats stats;
    stats.running_mean = &running_mean_.value;
    stats.running_var = &running_var_.value;
    return batchnorm(ctx.tape, in, g, b, stats, ctx.training);
}

void BatchNormLayer::collect_params(std::vector<Parameter*>& out) {
    out.push_back(&gamma_);
    out.push_back(&beta_);
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
}

std::string BatchNormLayer::describe() const { return "batchnorm " + std::to_string(channels_); }

std::vector<int> MaxPool2dLayer::out_shape(const std::vector<int>& in) const {
    if (in.size() != 4) throw ShapeError("maxpool2d expects NCHW input");
    return {in[0], in[1], (in[2] - kernel_) / stride_ + 1, (in[3] - kernel_) / stride_ + 1};
}

std::string MaxPool2dLayer::describe() const {
    return "maxpool2d k=" + std::to_string(kernel_) + " s=" + std::to_string(stride_);
}

std::vector<int> FlattenLayer::out_shape(const std::vector<int>& in) const {
    int f = 1;
    for (std::size_t i = 1; i < in.size(); ++i) f *= in[i];
    return {in[0], f};
}

ResidualLayer::ResidualLayer(LayerStack inner, LayerPtr projection)
    : inner_(std::move(inner)), proj_(std::move(projection)) {}

Value ResidualLayer::forward(LayerCtx& ctx, Value in) {
    Value y = in;
    for (auto& l : inner_) y = l->forward(ctx, y);
    Value skip = proj_ ? proj_->forward(ctx, in) : in;
    return relu(ctx.tape, add(ctx.tape, y, skip));
}

void ResidualLayer::collect_params(std::vector<Parameter*>& out) {
    for (auto& l : inner_) l->collect_params(out);
    if (proj_) proj_->collect_params(out);
}

std::vector<int> ResidualLayer::out_shape(const std::vector<int>& in) const {
    std::vector<int> s = in;
    for (const auto& l : inner_) s = l->out_shape(s);
    return s;
}

std::string ResidualLayer::describe() const {
    std::string s = "residual[";
    for (std::size_t i = 0; i < inner_.size(); ++i) {
        if (i) s += ", ";
        s += inner_[i]->describe();
    }
    if (proj_) s += " | proj " + proj_->describe();
    return s + "]";
}

std::vector<int> stack_out_shape(const LayerStack& stack, std::vector<int> in) {
    for (const auto& l : stack) in = l->out_shape(in);
    return in;
}

}  // namespace interlock
