#include <sstream>

#include "interlock/errors.hpp"
#include "interlock/model.hpp"

namespace interlock {

namespace {

std::vector<int> parse_dims(const std::string& s) {
    std::vector<int> dims;
    std::string cur;
    for (char ch : s + "x") {
        if (ch == 'x') {
            if (!cur.empty()) dims.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return dims;
}

std::vector<int> parse_list(const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(std::stoi(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

std::string join_dims(const std::vector<int>& v, char sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += sep;
        s += std::to_string(v[i]);
    }
    return s;
}

}  // namespace

void ArchitectureSpec::validate() const {
    if (num_classes < 2) throw ConfigError("arch: classes must be >= 2");
    switch (preset) {
        case Preset::ToyConv:
            if (depth < 3) throw ConfigError("arch: toy_conv depth must be >= 3 (top two components are fixed)");
            if (input_shape.size() != 3) throw ConfigError("arch: toy_conv needs CxHxW input shape");
            break;
        case Preset::Mlp:
            if (widths.empty()) throw ConfigError("arch: mlp needs a non-empty widths list");
            for (int w : widths)
                if (w < 1) throw ConfigError("arch: mlp widths must be positive");
            if (input_shape.size() != 1) throw ConfigError("arch: mlp needs a flat input shape");
            if (aux_head == AuxHead::ConvHead) throw ConfigError("arch: conv aux head requires spatial activations");
            break;
        case Preset::ResnetLite:
            if (depth < 1) throw ConfigError("arch: resnet_lite depth must be >= 1");
            if (input_shape.size() != 3) throw ConfigError("arch: resnet_lite needs CxHxW input shape");
            break;
    }
}

int ArchitectureSpec::components() const {
    return preset == Preset::Mlp ? static_cast<int>(widths.size()) : depth;
}

std::string ArchitectureSpec::to_string() const {
    std::ostringstream os;
    switch (preset) {
        case Preset::ToyConv: os << "preset=toy_conv depth=" << depth; break;
        case Preset::Mlp: os << "preset=mlp widths=" << join_dims(widths, ','); break;
        case Preset::ResnetLite: os << "preset=resnet_lite depth=" << depth; break;
    }
    os << " aux=" << (aux_head == AuxHead::Linear ? "linear" : "conv_head");
    os << " input=" << join_dims(input_shape, 'x');
    os << " classes=" << num_classes;
    return os.str();
}

ArchitectureSpec ArchitectureSpec::parse(const std::string& text) {
    ArchitectureSpec spec;
    bool have_preset = false;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) throw ConfigError("arch: bad token '" + tok + "'");
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "preset") {
            have_preset = true;
            if (val == "toy_conv") spec.preset = Preset::ToyConv;
            else if (val == "mlp") spec.preset = Preset::Mlp;
            else if (val == "resnet_lite") spec.preset = Preset::ResnetLite;
            else throw ConfigError("arch: unknown preset '" + val + "'");
        } else if (key == "depth") {
            spec.depth = std::stoi(val);
        } else if (key == "widths") {
            spec.widths = parse_list(val);
        } else if (key == "aux") {
            if (val == "linear") spec.aux_head = AuxHead::Linear;
            else if (val == "conv_head") spec.aux_head = AuxHead::ConvHead;
            else throw ConfigError("arch: unknown aux head '" + val + "'");
        } else if (key == "input") {
            spec.input_shape = parse_dims(val);
        } else if (key == "classes") {
            spec.num_classes = std::stoi(val);
        } else {
            throw ConfigError("arch: unknown key '" + key + "'");
        }
    }
    if (!have_preset) throw ConfigError("arch: missing preset");
    spec.validate();
    return spec;
}

namespace {

LayerStack make_aux_head(const ArchitectureSpec& spec, const std::vector<int>& act_shape, int comp_index,
                         std::uint64_t seed) {
    LayerStack head;
    const std::string prefix = "h" + std::to_string(comp_index) + ".";
    if (spec.aux_head == ArchitectureSpec::AuxHead::Linear) {
        int feat = 1;
        for (std::size_t i = 1; i < act_shape.size(); ++i) feat *= act_shape[i];
        if (act_shape.size() > 2) head.push_back(std::make_unique<FlattenLayer>());
        head.push_back(std::make_unique<LinearLayer>(prefix + "0", feat, spec.num_classes, seed));
    } else {
        const int c = act_shape[1];
        head.push_back(std::make_unique<Conv2dLayer>(prefix + "0", c, 2 * c, 3, 1, 1, seed));
        head.push_back(std::make_unique<BatchNormLayer>(prefix + "1", 2 * c));
        head.push_back(std::make_unique<ReluLayer>());
        head.push_back(std::make_unique<Conv2dLayer>(prefix + "2", 2 * c, c, 3, 1, 1, seed));
        head.push_back(std::make_unique<BatchNormLayer>(prefix + "3", c));
        head.push_back(std::make_unique<ReluLayer>());
        head.push_back(std::make_unique<GlobalAvgPoolLayer>());
        head.push_back(std::make_unique<LinearLayer>(prefix + "4", c, spec.num_classes, seed));
    }
    return head;
}

PartitionedModel build_toy_conv(const ArchitectureSpec& spec, std::uint64_t seed) {
    const int d = spec.depth;
    std::vector<Component> comps;
    std::vector<int> shape = {1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    int layer_idx = 0;
    for (int k = 1; k <= d; ++k) {
        Component c;
        c.index = k;
        const int cout = k <= d - 2 ? 32 : 64;
        const std::string b = "b" + std::to_string(layer_idx++);
        c.body.push_back(std::make_unique<Conv2dLayer>(b, shape[1], cout, 3, 1, 1, seed));
        c.body.push_back(std::make_unique<BatchNormLayer>("b" + std::to_string(layer_idx++), cout));
        c.body.push_back(std::make_unique<ReluLayer>());
        if (k >= d - 1) c.body.push_back(std::make_unique<MaxPool2dLayer>(2, 1));
        shape = stack_out_shape(c.body, shape);
        if (k == d) {
            c.body.push_back(std::make_unique<FlattenLayer>());
            int feat = shape[1] * shape[2] * shape[3];
            c.body.push_back(std::make_unique<LinearLayer>("task", feat, spec.num_classes, seed));
            shape = {1, spec.num_classes};
        } else {
            c.aux_head = make_aux_head(spec, shape, k, seed);
        }
        comps.push_back(std::move(c));
    }
    return PartitionedModel(spec, std::move(comps));
}

PartitionedModel build_resnet_lite(const ArchitectureSpec& spec, std::uint64_t seed) {
    constexpr int kWidth = 16;
    std::vector<Component> comps;
    std::vector<int> shape = {1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    int layer_idx = 0;
    for (int k = 1; k <= spec.depth; ++k) {
        Component c;
        c.index = k;
        const int cin = shape[1];
        LayerStack inner;
        inner.push_back(std::make_unique<Conv2dLayer>("b" + std::to_string(layer_idx++), cin, kWidth, 3, 1, 1, seed));
        inner.push_back(std::make_unique<BatchNormLayer>("b" + std::to_string(layer_idx++), kWidth));
        inner.push_back(std::make_unique<ReluLayer>());
        inner.push_back(std::make_unique<Conv2dLayer>("b" + std::to_string(layer_idx++), kWidth, kWidth, 3, 1, 1, seed));
        inner.push_back(std::make_unique<BatchNormLayer>("b" + std::to_string(layer_idx++), kWidth));
        LayerPtr proj;
        if (cin != kWidth)
            proj = std::make_unique<Conv2dLayer>("b" + std::to_string(layer_idx++), cin, kWidth, 1, 0, 1, seed);
        c.body.push_back(std::make_unique<ResidualLayer>(std::move(inner), std::move(proj)));
        shape = stack_out_shape(c.body, shape);
        if (k == spec.depth) {
            c.body.push_back(std::make_unique<GlobalAvgPoolLayer>());
            c.body.push_back(std::make_unique<LinearLayer>("task", kWidth, spec.num_classes, seed));
            shape = {1, spec.num_classes};
        } else {
            c.aux_head = make_aux_head(spec, shape, k, seed);
        }
        comps.push_back(std::move(c));
    }
    return PartitionedModel(spec, std::move(comps));
}

}  // namespace

PartitionedModel build_mlp_partitioned(int input_dim, const std::vector<int>& unit_widths, int num_classes,
                                       const std::vector<int>& comp_units,
                                       const std::vector<std::string>& head_names, std::uint64_t seed) {
    int total_units = 0;
    for (int u : comp_units) total_units += u;
    if (total_units != static_cast<int>(unit_widths.size()))
        throw ConfigError("build_mlp_partitioned: comp_units must cover every unit");
    if (head_names.size() + 1 != comp_units.size())
        throw ConfigError("build_mlp_partitioned: need one head name per non-final component");

    std::vector<Component> comps;
    int unit = 0;
    int prev = input_dim;
    const int n = static_cast<int>(comp_units.size());
    for (int k = 1; k <= n; ++k) {
        Component c;
        c.index = k;
        for (int u = 0; u < comp_units[static_cast<std::size_t>(k - 1)]; ++u) {
            const int w = unit_widths[static_cast<std::size_t>(unit)];
            c.body.push_back(std::make_unique<LinearLayer>("u" + std::to_string(unit), prev, w, seed));
            c.body.push_back(std::make_unique<ReluLayer>());
            prev = w;
            ++unit;
        }
        if (k == n) {
            c.body.push_back(std::make_unique<LinearLayer>("task", prev, num_classes, seed));
        } else {
            c.aux_head.push_back(std::make_unique<LinearLayer>(head_names[static_cast<std::size_t>(k - 1)], prev,
                                                               num_classes, seed));
        }
        comps.push_back(std::move(c));
    }

    ArchitectureSpec spec;
    spec.preset = ArchitectureSpec::Preset::Mlp;
    spec.widths = unit_widths;
    spec.input_shape = {input_dim};
    spec.num_classes = num_classes;
    return PartitionedModel(spec, std::move(comps));
}

PartitionedModel build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
    spec.validate();
    switch (spec.preset) {
        case ArchitectureSpec::Preset::ToyConv: return build_toy_conv(spec, seed);
        case ArchitectureSpec::Preset::ResnetLite: return build_resnet_lite(spec, seed);
        case ArchitectureSpec::Preset::Mlp: {
            std::vector<int> comp_units(spec.widths.size(), 1);
            std::vector<std::string> heads;
            for (std::size_t k = 1; k < spec.widths.size(); ++k) heads.push_back("h" + std::to_string(k));
            PartitionedModel m = build_mlp_partitioned(spec.input_shape[0], spec.widths, spec.num_classes,
                                                       comp_units, heads, seed);
            return PartitionedModel(spec, [&m] {
                std::vector<Component> cs;
                for (int k = 1; k <= m.n(); ++k) cs.push_back(std::move(m.comp(k)));
                return cs;
            }());
        }
    }
    throw InternalError("unreachable");
}

}  // namespace interlock
