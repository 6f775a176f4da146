#pragma once

#include <map>
#include <string>
#include <vector>

#include "interlock/data.hpp"
#include "interlock/train.hpp"

namespace interlock {

// Flat `key = value` run configuration with dotted section keys. Parsing and
// serialization round-trip losslessly (keys are held sorted; '#' starts a
// comment). Unknown keys are rejected with the offending key named.
class RunConfig {
public:
    static RunConfig parse_text(const std::string& text);
    static RunConfig parse_file(const std::string& path);

    std::string serialize() const;
    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get(const std::string& key, const std::string& fallback) const;
    std::string require(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_ints(const std::string& key) const;
    std::vector<std::uint64_t> seeds() const;

    // Domain views (each validates its section).
    ArchitectureSpec arch() const;
    RoutingPolicy policy() const;
    OptimizerConfig optimizer() const;
    LrSchedule schedule() const;
    Budget budget() const;
    RunMode mode() const;
    AugmentPolicy augment() const;
    Dataset make_dataset(std::uint64_t seed) const;
    TrainOptions train_options(std::uint64_t seed) const;  // metrics_path left empty
    int batch_size() const { return get_int("train.batch", 16); }

    // Full-config validation: known keys, exactly one budget, seeds present.
    void validate() const;

    const std::map<std::string, std::string>& items() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

// Stable 8-hex-digit id of a config + seed (run directory naming).
std::string run_id(const RunConfig& cfg, std::uint64_t seed);

}  // namespace interlock
