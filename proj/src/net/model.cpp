#include "interlock/model.hpp"

#include "interlock/errors.hpp"

namespace interlock {

std::vector<Parameter*> Component::body_params() const {
    std::vector<Parameter*> out;
    for (const auto& l : body) l->collect_params(out);
    return out;
}

std::vector<Parameter*> Component::head_params() const {
    std::vector<Parameter*> out;
    for (const auto& l : aux_head) l->collect_params(out);
    return out;
}

ForwardPass PartitionedModel::forward(Tape& t, Value x, bool training) {
    ForwardPass fp;
    fp.binds.resize(comps_.size());
    Value cur = x;
    for (int k = 1; k <= n(); ++k) {
        Component& c = comp(k);
        try {
            LayerCtx ctx{t, training, &fp.binds[static_cast<std::size_t>(k - 1)].body};
            for (auto& l : c.body) cur = l->forward(ctx, cur);
            fp.act.push_back(cur);
            fp.act_detached.push_back(stop_gradient(t, cur));
            if (k < n()) {
                LayerCtx hctx{t, training, &fp.binds[static_cast<std::size_t>(k - 1)].head};
                Value h = cur;
                for (auto& l : c.aux_head) h = l->forward(hctx, h);
                fp.logits.push_back(h);
            } else {
                fp.logits.push_back(cur);
            }
        } catch (const ShapeError& e) {
            throw ShapeError("component " + std::to_string(k) + ": " + e.what());
        }
    }
    return fp;
}

std::vector<Parameter*> PartitionedModel::all_params() {
    std::vector<Parameter*> out;
    for (auto& c : comps_) {
        for (auto& l : c.body) l->collect_params(out);
        for (auto& l : c.aux_head) l->collect_params(out);
    }
    return out;
}

std::vector<std::vector<int>> PartitionedModel::activation_shapes(int batch) const {
    std::vector<std::vector<int>> shapes;
    std::vector<int> cur = spec_.input_shape;
    cur.insert(cur.begin(), batch);
    for (const auto& c : comps_) {
        cur = stack_out_shape(c.body, cur);
        shapes.push_back(cur);
    }
    return shapes;
}

std::vector<Value> component_losses(Tape& t, const ForwardPass& fp, const std::vector<int>& targets) {
    std::vector<Value> losses;
    losses.reserve(fp.logits.size());
    for (Value l : fp.logits) losses.push_back(softmax_cross_entropy(t, l, targets));
    return losses;
}

}  // namespace interlock
