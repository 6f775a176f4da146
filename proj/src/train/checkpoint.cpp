#include "interlock/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "interlock/errors.hpp"

namespace interlock {

namespace {

constexpr std::uint32_t kMagic = 0x494C434Bu;  // "ILCK"

void put_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ofstream& f, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<char*>(b), 8);
}

void put_str(std::ofstream& f, const std::string& s) {
    put_u32(f, static_cast<std::uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::ifstream& f) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (!f) throw DataError("checkpoint truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::ifstream& f) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw DataError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::string get_str(std::ifstream& f) {
    const std::uint32_t len = get_u32(f);
    if (len > (1u << 20)) throw DataError("checkpoint string too long");
    std::string s(len, '\0');
    f.read(s.data(), len);
    if (!f) throw DataError("checkpoint truncated");
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, PartitionedModel& model, std::uint64_t seed, std::uint64_t step) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write checkpoint: " + path);
    put_u32(f, kMagic);
    put_u32(f, 1);
    put_str(f, model.spec().to_string());
    put_u64(f, seed);
    put_u64(f, step);
    const auto params = model.all_params();
    put_u32(f, static_cast<std::uint32_t>(params.size()));
    for (const Parameter* p : params) {
        put_str(f, p->id);
        put_u32(f, static_cast<std::uint32_t>(p->value.ndim()));
        for (int d : p->value.shape()) put_u32(f, static_cast<std::uint32_t>(d));
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            const double v = p->value[i];
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u64(f, bits);
        }
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path);
    if (get_u32(f) != kMagic) throw DataError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.version = get_u32(f);
    if (ck.version != 1) throw DataError("unsupported checkpoint version " + std::to_string(ck.version));
    ck.arch = get_str(f);
    ck.seed = get_u64(f);
    ck.step = get_u64(f);
    const std::uint32_t count = get_u32(f);
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::string id = get_str(f);
        const std::uint32_t ndim = get_u32(f);
        if (ndim > 8) throw DataError("checkpoint record rank too large");
        std::vector<int> shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(get_u32(f)));
        Tensor t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const std::uint64_t bits = get_u64(f);
            std::memcpy(&t[i], &bits, 8);
        }
        ck.params.emplace(id, std::move(t));
    }
    return ck;
}

PartitionedModel restore_model(const Checkpoint& ck) {
    PartitionedModel model = build_model(ArchitectureSpec::parse(ck.arch), ck.seed);
    for (Parameter* p : model.all_params()) {
        const auto it = ck.params.find(p->id);
        if (it == ck.params.end()) throw DataError("checkpoint missing parameter '" + p->id + "'");
        if (!it->second.same_shape(p->value))
            throw DataError("checkpoint parameter '" + p->id + "' has shape " + it->second.shape_str() +
                            ", model expects " + p->value.shape_str());
        p->value = it->second;
    }
    return model;
}

}  // namespace interlock
