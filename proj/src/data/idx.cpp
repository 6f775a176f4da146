#include <cstring>
#include <fstream>

#include "interlock/data.hpp"
#include "interlock/errors.hpp"

namespace interlock {

namespace {

[[noreturn]] void parse_fail(const std::string& path, std::size_t offset, const std::string& what) {
    throw DataError("idx parse error in " + path + " at byte " + std::to_string(offset) + ": " + what);
}

std::uint32_t read_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

}  // namespace

Tensor load_idx(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open idx file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 4) parse_fail(path, bytes.size(), "truncated magic");
    if (bytes[0] != 0 || bytes[1] != 0) parse_fail(path, 0, "bad magic prefix");
    const int dtype = bytes[2];
    const int ndim = bytes[3];
    if (ndim < 1 || ndim > 4) parse_fail(path, 3, "unsupported rank " + std::to_string(ndim));

    std::size_t off = 4;
    std::vector<int> shape;
    for (int d = 0; d < ndim; ++d) {
        if (off + 4 > bytes.size()) parse_fail(path, off, "truncated dimension header");
        const std::uint32_t v = read_u32_be(bytes.data() + off);
        if (v == 0 || v > (1u << 30)) parse_fail(path, off, "implausible dimension " + std::to_string(v));
        shape.push_back(static_cast<int>(v));
        off += 4;
    }

    std::size_t elem_size;
    switch (dtype) {
        case 0x08: case 0x09: elem_size = 1; break;
        case 0x0B: elem_size = 2; break;
        case 0x0C: elem_size = 4; break;
        case 0x0D: elem_size = 4; break;
        case 0x0E: elem_size = 8; break;
        default: parse_fail(path, 2, "unsupported dtype 0x" + std::to_string(dtype));
    }
    const std::int64_t numel = shape_numel(shape);
    if (off + elem_size * static_cast<std::size_t>(numel) != bytes.size())
        parse_fail(path, off, "payload size mismatch: expected " + std::to_string(elem_size * numel) +
                              " bytes, file holds " + std::to_string(bytes.size() - off));

    Tensor t(shape);
    const unsigned char* p = bytes.data() + off;
    for (std::int64_t i = 0; i < numel; ++i, p += elem_size) {
        switch (dtype) {
            case 0x08: t[i] = static_cast<double>(*p); break;
            case 0x09: t[i] = static_cast<double>(static_cast<signed char>(*p)); break;
            case 0x0B: {
                const std::int16_t v = static_cast<std::int16_t>((p[0] << 8) | p[1]);
                t[i] = static_cast<double>(v);
                break;
            }
            case 0x0C: t[i] = static_cast<double>(static_cast<std::int32_t>(read_u32_be(p))); break;
            case 0x0D: {
                const std::uint32_t bits = read_u32_be(p);
                float fv;
                std::memcpy(&fv, &bits, 4);
                t[i] = static_cast<double>(fv);
                break;
            }
            case 0x0E: {
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b) bits = (bits << 8) | p[b];
                double dv;
                std::memcpy(&dv, &bits, 8);
                t[i] = dv;
                break;
            }
        }
    }
    return t;
}

namespace {

void write_header(std::ofstream& f, int dtype, const std::vector<int>& shape) {
    unsigned char magic[4] = {0, 0, static_cast<unsigned char>(dtype), static_cast<unsigned char>(shape.size())};
    f.write(reinterpret_cast<char*>(magic), 4);
    for (int d : shape) {
        unsigned char be[4] = {static_cast<unsigned char>((d >> 24) & 0xff), static_cast<unsigned char>((d >> 16) & 0xff),
                               static_cast<unsigned char>((d >> 8) & 0xff), static_cast<unsigned char>(d & 0xff)};
        f.write(reinterpret_cast<char*>(be), 4);
    }
}

}  // namespace

void write_idx_u8(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write idx file: " + path);
    write_header(f, 0x08, t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) {
        double v = t[i];
        if (v < 0.0) v = 0.0;
        if (v > 255.0) v = 255.0;
        const unsigned char b = static_cast<unsigned char>(v + 0.5);
        f.write(reinterpret_cast<const char*>(&b), 1);
    }
}

void write_idx_f64(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write idx file: " + path);
    write_header(f, 0x0E, t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double v = t[i];
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char be[8];
        for (int b = 0; b < 8; ++b) be[b] = static_cast<unsigned char>((bits >> (56 - 8 * b)) & 0xff);
        f.write(reinterpret_cast<char*>(be), 8);
    }
}

Dataset dataset_from_idx(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels, int num_classes) {
    Tensor xtr = load_idx(train_images);
    Tensor ytr = load_idx(train_labels);
    Tensor xte = load_idx(test_images);
    Tensor yte = load_idx(test_labels);
    if (ytr.ndim() != 1 || yte.ndim() != 1) throw ConfigError("idx labels must be rank 1");
    if (xtr.dim(0) != ytr.dim(0) || xte.dim(0) != yte.dim(0))
        throw ConfigError("idx images/labels counts disagree");
    if (xtr.ndim() != xte.ndim()) throw ConfigError("idx train/test ranks disagree");
    for (int d = 1; d < xtr.ndim(); ++d)
        if (xtr.dim(d) != xte.dim(d)) throw ConfigError("idx train/test example shapes disagree");

    // [N x H x W] image files gain an explicit single channel.
    auto with_channel = [](Tensor t) {
        if (t.ndim() == 3) {
            std::vector<int> s = {t.dim(0), 1, t.dim(1), t.dim(2)};
            return Tensor::from(s, t.vec());
        }
        return t;
    };
    xtr = with_channel(std::move(xtr));
    xte = with_channel(std::move(xte));

    Dataset ds;
    std::vector<int> shape = xtr.shape();
    shape[0] = xtr.dim(0) + xte.dim(0);
    ds.inputs = Tensor(shape);
    std::copy(xtr.data(), xtr.data() + xtr.size(), ds.inputs.data());
    std::copy(xte.data(), xte.data() + xte.size(), ds.inputs.data() + xtr.size());
    ds.train_count = xtr.dim(0);
    ds.targets.resize(static_cast<std::size_t>(shape[0]));
    int max_label = 0;
    for (int i = 0; i < ytr.dim(0); ++i) ds.targets[static_cast<std::size_t>(i)] = static_cast<int>(ytr[i]);
    for (int i = 0; i < yte.dim(0); ++i)
        ds.targets[static_cast<std::size_t>(ds.train_count + i)] = static_cast<int>(yte[i]);
    for (int t : ds.targets) {
        if (t < 0) throw DataError("negative label in idx data");
        max_label = std::max(max_label, t);
    }
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    if (max_label >= ds.num_classes)
        throw ConfigError("idx labels exceed configured class count " + std::to_string(ds.num_classes));
    normalize_from_train(ds);
    return ds;
}

}  // namespace interlock
