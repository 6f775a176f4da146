#include "interlock/tape.hpp"

#include "interlock/errors.hpp"
#include "interlock/kernels.hpp"

namespace interlock {

Value Tape::leaf(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
}

Value Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return Value{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

const Tensor& Tape::grad(Value v) {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw InternalError("grad() on invalid value");
    return grad_buf(v.id);
}

void Tape::backward(Value root, double seed, const std::vector<Value>& cuts) {
    run_backward(root, nullptr, seed, cuts);
}

void Tape::backward_seeded(Value root, const Tensor& seed, const std::vector<Value>& cuts) {
    if (root.valid() && !seed.same_shape(node(root).value))
        throw ShapeError("backward_seeded: seed shape " + seed.shape_str() + " does not match node " +
                         node(root).value.shape_str());
    run_backward(root, &seed, 1.0, cuts);
}

void Tape::run_backward(Value root, const Tensor* seed_tensor, double seed, const std::vector<Value>& cuts) {
    if (!root.valid() || static_cast<std::size_t>(root.id) >= nodes_.size())
        throw InternalError("backward() on invalid value");

    // Pass-local gradients; merged into the persistent node grads at the end
    // so repeated backward calls accumulate without double-propagating.
    pending_buf_.assign(nodes_.size(), Tensor());
    pending_list_.clear();

    cut_.assign(nodes_.size(), 0);
    for (Value v : cuts) {
        if (v.valid()) cut_[static_cast<std::size_t>(v.id)] = 1;
    }

    Tensor& r = pend(root.id);
    if (seed_tensor) {
        kernels::active().axpy(1.0, seed_tensor->data(), r.data(), r.size());
    } else {
        for (std::int64_t i = 0; i < r.size(); ++i) r[i] += seed;
    }

    for (int id = root.id; id >= 0; --id) {
        if (pending_buf_[static_cast<std::size_t>(id)].empty()) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op == Op::Leaf || n.op == Op::StopGradient) continue;
        if (cut_[static_cast<std::size_t>(id)]) continue;
        backward_node(id);
    }

    const auto& k = kernels::active();
    for (int id : pending_list_) {
        Tensor& dst = grad_buf(id);
        const Tensor& src = pending_buf_[static_cast<std::size_t>(id)];
        k.axpy(1.0, src.data(), dst.data(), dst.size());
        if (!nodes_[static_cast<std::size_t>(id)].touched) {
            nodes_[static_cast<std::size_t>(id)].touched = true;
            touched_.push_back(id);
        }
    }
    pending_buf_.clear();
}

Tensor& Tape::pend(int id) {
    Tensor& t = pending_buf_[static_cast<std::size_t>(id)];
    if (t.empty()) {
        t = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
        pending_list_.push_back(id);
    }
    return t;
}

const Tensor& Tape::pending(int id) const { return pending_buf_[static_cast<std::size_t>(id)]; }

void Tape::zero_grads() {
    for (int id : touched_) {
        nodes_[static_cast<std::size_t>(id)].grad.fill(0.0);
        nodes_[static_cast<std::size_t>(id)].touched = false;
    }
    touched_.clear();
}

std::vector<char> Tape::reachable(Value root, const std::vector<Value>& cuts) const {
    std::vector<char> reach(nodes_.size(), 0);
    if (!root.valid()) return reach;
    std::vector<char> cut(nodes_.size(), 0);
    for (Value v : cuts)
        if (v.valid()) cut[static_cast<std::size_t>(v.id)] = 1;
    reach[static_cast<std::size_t>(root.id)] = 1;
    for (int id = root.id; id >= 0; --id) {
        if (!reach[static_cast<std::size_t>(id)]) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.op == Op::Leaf || n.op == Op::StopGradient || cut[static_cast<std::size_t>(id)]) continue;
        if (n.a >= 0) reach[static_cast<std::size_t>(n.a)] = 1;
        if (n.b >= 0) reach[static_cast<std::size_t>(n.b)] = 1;
        if (n.c >= 0) reach[static_cast<std::size_t>(n.c)] = 1;
    }
    return reach;
}

void Tape::clear() {
    nodes_.clear();
    touched_.clear();
    cut_.clear();
    pending_buf_.clear();
    pending_list_.clear();
}

}  // namespace interlock
