#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "interlock/tensor.hpp"

namespace interlock {

// Handle to a node on a Tape.
struct Value {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Named trainable (or state) tensor living in a layer. grad accumulates
// across backward passes until zeroed by the optimizer or zero_grad().
struct Parameter {
    std::string id;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name, Tensor v, bool train = true)
        : id(std::move(name)), value(std::move(v)), trainable(train) {
        grad = Tensor(value.shape());
    }
    void zero_grad() { grad.fill(0.0); }
};

enum class Op : std::uint8_t {
    Leaf,
    Matmul,
    AddBias,
    Add,
    Scale,
    Relu,
    Conv2d,
    MaxPool2d,
    GlobalAvgPool,
    BatchNorm,
    Reshape,
    StopGradient,
    SoftmaxXent,
};

// Reverse-mode tape over dense f64 tensors. Nodes are appended in execution
// order; backward replays them in reverse. Gradients accumulate until
// zero_grads(), so repeated backward calls sum their contributions.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1, c = -1;  // operand node ids
        Tensor value;
        Tensor grad;                  // lazily allocated; zeros when untouched
        bool touched = false;
        int i0 = 0, i1 = 0;           // op-specific ints (pad/stride/kernel)
        double d0 = 0.0;              // op-specific scalar (scale factor)
        Tensor s0, s1;                // op-specific saved tensors
        std::vector<std::int32_t> idx;  // argmax positions / class targets
    };

    Value leaf(Tensor v);

    const Tensor& val(Value v) const { return node(v).value; }
    // Gradient of a node; zeros if never touched since the last zero_grads().
    const Tensor& grad(Value v);
    bool grad_touched(Value v) const { return node(v).touched; }

    // Accumulates seed * d(root)/d(node) into every node gradient reachable
    // from root. Nodes listed in `cuts` (and StopGradient nodes) receive
    // gradient but do not propagate it further down.
    void backward(Value root, double seed = 1.0, const std::vector<Value>& cuts = {});
    // Same, seeding the root with a full gradient tensor (pipelined relays).
    void backward_seeded(Value root, const Tensor& seed, const std::vector<Value>& cuts = {});

    // Zeroes only gradients touched since the last call.
    void zero_grads();

    // Reachability of each node from root following operand edges, honoring
    // cuts and stop-gradient nodes. reachable[root] is true.
    std::vector<char> reachable(Value root, const std::vector<Value>& cuts = {}) const;

    void clear();
    std::size_t num_nodes() const { return nodes_.size(); }

    Node& node(Value v) { return nodes_[static_cast<std::size_t>(v.id)]; }
    const Node& node(Value v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
    Value push(Node n);

private:
    void run_backward(Value root, const Tensor* seed_tensor, double seed, const std::vector<Value>& cuts);
    void backward_node(int id);
    Tensor& grad_buf(int id);
    Tensor& pend(int id);
    const Tensor& pending(int id) const;

    std::deque<Node> nodes_;  // stable addresses: val() references survive later pushes
    std::vector<int> touched_;
    std::vector<char> cut_;
    std::vector<Tensor> pending_buf_;
    std::vector<int> pending_list_;
};

}  // namespace interlock
