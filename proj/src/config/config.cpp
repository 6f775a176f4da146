#include "interlock/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "interlock/errors.hpp"
#include "interlock/rng.hpp"

namespace interlock {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

const char* const kKnownKeys[] = {
    "run.seed", "run.seeds", "run.mode", "run.out", "run.eval_every", "run.eval_train_n", "run.eval_test_n",
    "run.hogwild_free_run", "run.data_seed",
    "budget.steps", "budget.epochs", "budget.logical_time",
    "model.arch", "model.depth", "model.widths", "model.aux_head", "model.input", "model.classes",
    "strategy.kind", "strategy.n", "strategy.g", "strategy.mix_local", "strategy.hogwild_aux",
    "strategy.aux_weight",
    "optimizer.kind", "optimizer.lr", "optimizer.momentum", "optimizer.weight_decay", "optimizer.beta1",
    "optimizer.beta2", "optimizer.eps",
    "schedule.kind", "schedule.milestones", "schedule.factor", "schedule.dim", "schedule.warmup",
    "data.kind", "data.dims", "data.n_train", "data.n_test", "data.noise", "data.separation", "data.patch",
    "data.train_images", "data.train_labels", "data.test_images", "data.test_labels",
    "data.augment_hflip", "data.augment_crop_pad",
    "train.batch",
};

bool known_key(const std::string& k) {
    for (const char* kk : kKnownKeys)
        if (k == kk) return true;
    return false;
}

}  // namespace

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + line +
                              "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        cfg.set(key, val);
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : kv_) out += k + " = " + v + "\n";
    return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known_key(key)) throw ConfigError("unknown config key '" + key + "'");
    kv_[key] = value;
}

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

std::string RunConfig::require(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw ConfigError("missing required config key '" + key + "'");
    return it->second;
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stoi(it->second);
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + it->second + "'");
    }
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected number, got '" + it->second + "'");
    }
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + it->second + "'");
}

std::vector<int> RunConfig::get_ints(const std::string& key) const {
    std::vector<int> out;
    const auto it = kv_.find(key);
    if (it == kv_.end()) return out;
    std::string cur;
    for (char c : it->second + ",") {
        if (c == ',') {
            if (!trim(cur).empty()) {
                try {
                    out.push_back(std::stoi(trim(cur)));
                } catch (...) {
                    throw ConfigError("config key '" + key + "': expected integer list");
                }
            }
            cur.clear();
        } else {
            cur += c;
        }
    }
    return out;
}

std::vector<std::uint64_t> RunConfig::seeds() const {
    std::vector<std::uint64_t> out;
    if (has("run.seeds")) {
        for (int s : get_ints("run.seeds")) out.push_back(static_cast<std::uint64_t>(s));
    } else if (has("run.seed")) {
        out.push_back(static_cast<std::uint64_t>(get_int("run.seed", 1)));
    }
    if (out.empty()) throw ConfigError("config needs run.seed or run.seeds");
    return out;
}

ArchitectureSpec RunConfig::arch() const {
    ArchitectureSpec spec;
    const std::string preset = require("model.arch");
    if (preset == "toy_conv") spec.preset = ArchitectureSpec::Preset::ToyConv;
    else if (preset == "mlp") spec.preset = ArchitectureSpec::Preset::Mlp;
    else if (preset == "resnet_lite") spec.preset = ArchitectureSpec::Preset::ResnetLite;
    else throw ConfigError("model.arch: unknown preset '" + preset + "'");
    spec.depth = get_int("model.depth", 4);
    spec.widths = get_ints("model.widths");
    const std::string aux = get("model.aux_head", spec.preset == ArchitectureSpec::Preset::ResnetLite
                                                      ? "conv_head"
                                                      : "linear");
    if (aux == "linear") spec.aux_head = ArchitectureSpec::AuxHead::Linear;
    else if (aux == "conv_head") spec.aux_head = ArchitectureSpec::AuxHead::ConvHead;
    else throw ConfigError("model.aux_head: unknown kind '" + aux + "'");
    {
        const std::string in = require("model.input");
        std::vector<int> dims;
        std::string cur;
        for (char c : in + "x") {
            if (c == 'x') {
                if (!cur.empty()) dims.push_back(std::stoi(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        spec.input_shape = dims;
    }
    spec.num_classes = get_int("model.classes", 2);
    spec.validate();
    return spec;
}

RoutingPolicy RunConfig::policy() const {
    RoutingPolicy p;
    const std::string kind = require("strategy.kind");
    if (kind == "end_to_end") p.kind = RoutingPolicy::Kind::EndToEnd;
    else if (kind == "n_wise") p.kind = RoutingPolicy::Kind::NWise;
    else if (kind == "grouped_local") p.kind = RoutingPolicy::Kind::GroupedLocal;
    else if (kind == "hogwild") p.kind = RoutingPolicy::Kind::Hogwild;
    else throw ConfigError("strategy.kind: unknown strategy '" + kind + "'");
    p.nwise = get_int("strategy.n", 1);
    p.group = get_int("strategy.g", 1);
    p.mix_local = get_bool("strategy.mix_local", false);
    p.hogwild_aux = get_bool("strategy.hogwild_aux", false);
    p.aux_weight = get_double("strategy.aux_weight", 1.0);
    p.validate();
    return p;
}

OptimizerConfig RunConfig::optimizer() const {
    OptimizerConfig o;
    const std::string kind = get("optimizer.kind", "sgd");
    if (kind == "sgd") o.kind = OptimizerConfig::Kind::Sgd;
    else if (kind == "adam") o.kind = OptimizerConfig::Kind::Adam;
    else throw ConfigError("optimizer.kind: unknown optimizer '" + kind + "'");
    o.lr = get_double("optimizer.lr", 0.1);
    o.momentum = get_double("optimizer.momentum", 0.0);
    o.weight_decay = get_double("optimizer.weight_decay", 0.0);
    o.beta1 = get_double("optimizer.beta1", 0.9);
    o.beta2 = get_double("optimizer.beta2", 0.999);
    o.eps = get_double("optimizer.eps", 1e-8);
    return o;
}

LrSchedule RunConfig::schedule() const {
    LrSchedule s;
    const std::string kind = get("schedule.kind", "constant");
    if (kind == "constant") s.kind = LrSchedule::Kind::Constant;
    else if (kind == "step_decay") s.kind = LrSchedule::Kind::StepDecay;
    else if (kind == "inv_sqrt_warmup") s.kind = LrSchedule::Kind::InvSqrtWarmup;
    else throw ConfigError("schedule.kind: unknown schedule '" + kind + "'");
    s.base = get_double("optimizer.lr", 0.1);
    for (int m : get_ints("schedule.milestones")) s.milestones.push_back(m);
    s.factor = get_double("schedule.factor", 10.0);
    s.dim = get_int("schedule.dim", 1024);
    s.warmup = get_int("schedule.warmup", 4000);
    return s;
}

Budget RunConfig::budget() const {
    Budget b;
    int kinds = 0;
    if (has("budget.steps")) {
        b.kind = Budget::Kind::Steps;
        b.amount = get_int("budget.steps", 0);
        ++kinds;
    }
    if (has("budget.epochs")) {
        b.kind = Budget::Kind::Epochs;
        b.amount = get_int("budget.epochs", 0);
        ++kinds;
    }
    if (has("budget.logical_time")) {
        b.kind = Budget::Kind::LogicalTime;
        b.amount = get_int("budget.logical_time", 0);
        ++kinds;
    }
    if (kinds != 1)
        throw ConfigError("config needs exactly one of budget.steps / budget.epochs / budget.logical_time");
    if (b.amount < 1) throw ConfigError("budget amount must be >= 1");
    return b;
}

RunMode RunConfig::mode() const {
    const std::string m = get("run.mode", "reference");
    if (m == "reference") return RunMode::Reference;
    if (m == "pipelined") return RunMode::Pipelined;
    throw ConfigError("run.mode: expected reference or pipelined, got '" + m + "'");
}

AugmentPolicy RunConfig::augment() const {
    AugmentPolicy a;
    a.hflip = get_bool("data.augment_hflip", false);
    a.crop_pad = get_int("data.augment_crop_pad", 0);
    return a;
}

Dataset RunConfig::make_dataset(std::uint64_t seed) const {
    const std::uint64_t data_seed =
        has("run.data_seed") ? static_cast<std::uint64_t>(get_int("run.data_seed", 0)) : derive_seed(seed, "data");
    const std::string kind = require("data.kind");
    const int classes = get_int("model.classes", 2);
    const int n_train = get_int("data.n_train", 1000);
    const int n_test = get_int("data.n_test", 200);
    if (kind == "blobs")
        return synth_blobs(classes, get_int("data.dims", 16), n_train, n_test, data_seed,
                           get_double("data.separation", 3.0));
    if (kind == "spirals") return synth_spirals(classes, n_train, n_test, get_double("data.noise", 0.1), data_seed);
    if (kind == "images") {
        const ArchitectureSpec spec = arch();
        if (spec.input_shape.size() != 3) throw ConfigError("data.kind=images requires CxHxW model input");
        return synth_images(classes, spec.input_shape[1], spec.input_shape[2], spec.input_shape[0], n_train,
                            n_test, data_seed, get_double("data.noise", 0.35), get_int("data.patch", 6));
    }
    if (kind == "idx")
        return dataset_from_idx(require("data.train_images"), require("data.train_labels"),
                                require("data.test_images"), require("data.test_labels"), classes);
    throw ConfigError("data.kind: unknown dataset '" + kind + "'");
}

TrainOptions RunConfig::train_options(std::uint64_t seed) const {
    TrainOptions opt;
    opt.policy = policy();
    opt.optim = optimizer();
    opt.schedule = schedule();
    opt.budget = budget();
    opt.batch_size = batch_size();
    opt.seed = seed;
    opt.mode = mode();
    opt.augment = augment();
    opt.eval_every = get_int("run.eval_every", 0);
    opt.eval_train_n = get_int("run.eval_train_n", 0);
    opt.eval_test_n = get_int("run.eval_test_n", 0);
    opt.hogwild_free_run = get_bool("run.hogwild_free_run", false);
    return opt;
}

void RunConfig::validate() const {
    seeds();
    budget();
    arch();
    policy();
    optimizer();
    schedule();
    mode();
    augment();
    require("data.kind");
    if (batch_size() < 1) throw ConfigError("train.batch must be >= 1");
}

std::string run_id(const RunConfig& cfg, std::uint64_t seed) {
    // FNV-1a over the canonical serialization plus the seed
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : cfg.serialize()) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    h ^= seed;
    h *= 0x100000001b3ull;
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08x", static_cast<unsigned>(h ^ (h >> 32)));
    return buf;
}

}  // namespace interlock
