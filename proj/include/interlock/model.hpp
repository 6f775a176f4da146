#pragma once

#include <string>
#include <vector>

#include "interlock/layers.hpp"

namespace interlock {

// One pipeline stage: a body (the stage's slice of the main network) and an
// auxiliary classification head. The last component has no head; its body
// ends in the task head.
struct Component {
    int index = 0;  // 1-based
    LayerStack body;
    LayerStack aux_head;

    std::vector<Parameter*> body_params() const;
    std::vector<Parameter*> head_params() const;
};

struct CompBinds {
    ParamBinds body;
    ParamBinds head;
};

// One forward pass of the whole model on a tape.
struct ForwardPass {
    std::vector<Value> act;           // a_k per component
    std::vector<Value> act_detached;  // stop_gradient(a_k)
    std::vector<Value> logits;        // head logits; last entry is the task logits (= act.back())
    std::vector<CompBinds> binds;
};

// Named architecture preset. Serializes to a single config-style line so
// checkpoints can rebuild the model they were saved from.
struct ArchitectureSpec {
    enum class Preset { ToyConv, Mlp, ResnetLite };
    enum class AuxHead { Linear, ConvHead };

    Preset preset = Preset::Mlp;
    int depth = 4;                 // toy_conv conv layers / resnet_lite blocks
    std::vector<int> widths;       // mlp hidden width per component
    AuxHead aux_head = AuxHead::Linear;
    std::vector<int> input_shape;  // {C,H,W} for conv presets, {F} for mlp
    int num_classes = 2;

    void validate() const;
    int components() const;
    std::string to_string() const;
    static ArchitectureSpec parse(const std::string& text);
};

class PartitionedModel {
public:
    PartitionedModel() = default;
    PartitionedModel(ArchitectureSpec spec, std::vector<Component> comps)
        : spec_(std::move(spec)), comps_(std::move(comps)) {}

    int n() const { return static_cast<int>(comps_.size()); }
    int num_classes() const { return spec_.num_classes; }
    Component& comp(int k) { return comps_[static_cast<std::size_t>(k - 1)]; }  // 1-based
    const Component& comp(int k) const { return comps_[static_cast<std::size_t>(k - 1)]; }
    const ArchitectureSpec& spec() const { return spec_; }

    ForwardPass forward(Tape& t, Value x, bool training);

    std::vector<Parameter*> all_params();
    // Component output shapes for a given batch size (the shape oracle).
    std::vector<std::vector<int>> activation_shapes(int batch) const;

private:
    ArchitectureSpec spec_;
    std::vector<Component> comps_;
};

// Per-head cross-entropy losses; one per component, the last being the task loss.
std::vector<Value> component_losses(Tape& t, const ForwardPass& fp, const std::vector<int>& targets);

// Deterministic construction from a spec and seed.
PartitionedModel build_model(const ArchitectureSpec& spec, std::uint64_t seed);

// Test/experiment helper: an MLP built from `unit_widths` Linear+ReLU units
// (parameters named by global unit position), partitioned so that component i
// holds comp_units[i] consecutive units. Heads are named by head_names so two
// partitionings of the same stack can share head parameters too. The task
// head linear is appended to the last component.
PartitionedModel build_mlp_partitioned(int input_dim, const std::vector<int>& unit_widths, int num_classes,
                                       const std::vector<int>& comp_units,
                                       const std::vector<std::string>& head_names, std::uint64_t seed);

}  // namespace interlock
