#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "interlock/model.hpp"

namespace interlock {

// Versioned binary container: magic "ILCK", u32 version, the architecture
// line, seed, step, then named tensor records (id, dims, raw little-endian
// f64 payload). Batch-norm running statistics ride along as records too.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string arch;
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    std::map<std::string, Tensor> params;
};

void save_checkpoint(const std::string& path, PartitionedModel& model, std::uint64_t seed, std::uint64_t step);
Checkpoint load_checkpoint(const std::string& path);

// Rebuilds the model recorded in the checkpoint and restores every parameter.
PartitionedModel restore_model(const Checkpoint& ck);

}  // namespace interlock
