#include "interlock/data.hpp"

#include <algorithm>
#include <cmath>

#include "interlock/errors.hpp"

namespace interlock {

std::vector<int> Dataset::example_shape() const {
    std::vector<int> s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
}

void normalize_from_train(Dataset& ds) {
    if (ds.train_count < 1) throw DataError("normalize: empty train split");
    const int channels = ds.inputs.ndim() >= 2 ? ds.inputs.dim(1) : 1;
    const std::int64_t per_ex = ds.inputs.size() / ds.count();
    const std::int64_t spatial = per_ex / channels;

    ds.mean = Tensor({channels});
    ds.stddev = Tensor({channels});
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < ds.train_count; ++i) {
            const double* p = ds.inputs.data() + i * per_ex + c * spatial;
            for (std::int64_t s = 0; s < spatial; ++s) {
                sum += p[s];
                sq += p[s] * p[s];
            }
        }
        const double m = static_cast<double>(ds.train_count) * spatial;
        const double mean = sum / m;
        double var = sq / m - mean * mean;
        if (var < 0.0) var = 0.0;
        ds.mean[c] = mean;
        ds.stddev[c] = std::sqrt(var);
    }
    for (int i = 0; i < ds.count(); ++i) {
        for (int c = 0; c < channels; ++c) {
            const double m = ds.mean[c];
            const double inv = 1.0 / std::max(ds.stddev[c], 1e-12);
            double* p = ds.inputs.data() + i * per_ex + c * spatial;
            for (std::int64_t s = 0; s < spatial; ++s) p[s] = (p[s] - m) * inv;
        }
    }
}

Dataset synth_blobs(int classes, int dims, int n_train, int n_test, std::uint64_t seed, double separation) {
    if (classes < 2 || dims < 1 || n_train < classes || n_test < 1)
        throw ConfigError("synth_blobs: need classes >= 2, dims >= 1, n_train >= classes, n_test >= 1");
    Rng rng(derive_seed(seed, "blobs"));

    // Rejection-sample centers until pairwise distances reach the separation.
    std::vector<Tensor> centers;
    while (static_cast<int>(centers.size()) < classes) {
        Tensor c({dims});
        for (int d = 0; d < dims; ++d) c[d] = rng.normal();
        double norm = 0.0;
        for (int d = 0; d < dims; ++d) norm += c[d] * c[d];
        norm = std::sqrt(std::max(norm, 1e-12));
        for (int d = 0; d < dims; ++d) c[d] *= separation / norm * 1.2;
        bool ok = true;
        for (const Tensor& o : centers) {
            double dist = 0.0;
            for (int d = 0; d < dims; ++d) dist += (c[d] - o[d]) * (c[d] - o[d]);
            if (std::sqrt(dist) < separation) {
                ok = false;
                break;
            }
        }
        if (ok) centers.push_back(std::move(c));
    }

    const int n = n_train + n_test;
    Dataset ds;
    ds.inputs = Tensor({n, dims});
    ds.targets.resize(static_cast<std::size_t>(n));
    ds.num_classes = classes;
    ds.train_count = n_train;
    for (int i = 0; i < n; ++i) {
        const int cls = rng.uniform_int(classes);
        ds.targets[static_cast<std::size_t>(i)] = cls;
        for (int d = 0; d < dims; ++d) ds.inputs.at(i, d) = centers[static_cast<std::size_t>(cls)][d] + rng.normal();
    }
    normalize_from_train(ds);
    return ds;
}

Dataset synth_spirals(int classes, int n_train, int n_test, double noise, std::uint64_t seed) {
    if (classes < 2 || n_train < classes || n_test < 1)
        throw ConfigError("synth_spirals: need classes >= 2, n_train >= classes, n_test >= 1");
    Rng rng(derive_seed(seed, "spirals"));
    const int n = n_train + n_test;
    Dataset ds;
    ds.inputs = Tensor({n, 2});
    ds.targets.resize(static_cast<std::size_t>(n));
    ds.num_classes = classes;
    ds.train_count = n_train;
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (int i = 0; i < n; ++i) {
        const int cls = rng.uniform_int(classes);
        const double t = rng.uniform();
        const double r = 0.3 + 2.2 * t;
        const double theta = 3.0 * 3.14159265358979323846 * t + two_pi * cls / classes;
        ds.targets[static_cast<std::size_t>(i)] = cls;
        ds.inputs.at(i, 0) = r * std::cos(theta) + noise * rng.normal();
        ds.inputs.at(i, 1) = r * std::sin(theta) + noise * rng.normal();
    }
    normalize_from_train(ds);
    return ds;
}

Dataset synth_images(int classes, int h, int w, int channels, int n_train, int n_test, std::uint64_t seed,
                     double noise, int patch) {
    if (classes < 2 || n_train < classes || n_test < 1)
        throw ConfigError("synth_images: need classes >= 2, n_train >= classes, n_test >= 1");
    if (h < patch || w < 2 * patch)
        throw ConfigError("synth_images: image too small for two " + std::to_string(patch) + "-wide patches");

    // Prototype patches share a palette of 2x2 solid blocks; identity lives in
    // the block arrangement, so 3x3 neighborhoods look alike across prototypes
    // and telling them apart needs a receptive field spanning the patch.
    int protos = 2;
    while (protos * (protos - 1) / 2 < classes) ++protos;
    Rng rng(derive_seed(seed, "images"));
    const int blocks = patch / 2;
    std::vector<Tensor> proto;
    for (int p = 0; p < protos; ++p) {
        Tensor t({channels, patch, patch});
        for (int c = 0; c < channels; ++c)
            for (int by = 0; by < blocks; ++by)
                for (int bx = 0; bx < blocks; ++bx) {
                    const double v = rng.bernoulli(0.5) ? 1.0 : -1.0;
                    for (int dy = 0; dy < 2; ++dy)
                        for (int dx = 0; dx < 2; ++dx) t.at(c, 2 * by + dy, 2 * bx + dx) = v;
                }
        proto.push_back(std::move(t));
    }
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < protos && static_cast<int>(pairs.size()) < classes; ++i)
        for (int j = i + 1; j < protos && static_cast<int>(pairs.size()) < classes; ++j)
            pairs.emplace_back(i, j);

    const int n = n_train + n_test;
    Dataset ds;
    ds.inputs = Tensor({n, channels, h, w});
    ds.targets.resize(static_cast<std::size_t>(n));
    ds.num_classes = classes;
    ds.train_count = n_train;

    auto place = [&](int img, const Tensor& pt, int y0, int x0, double contrast) {
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    ds.inputs.at(img, c, y0 + y, x0 + x) += contrast * pt.at(c, y, x);
    };

    for (int i = 0; i < n; ++i) {
        const int cls = rng.uniform_int(classes);
        ds.targets[static_cast<std::size_t>(i)] = cls;
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) ds.inputs.at(i, c, y, x) = noise * rng.normal();
        // one patch in each horizontal half, order randomized
        auto [pa, pb] = pairs[static_cast<std::size_t>(cls)];
        if (rng.bernoulli(0.5)) std::swap(pa, pb);
        const int ya = rng.uniform_int(h - patch + 1);
        const int xa = rng.uniform_int(w / 2 - patch + 1);
        const int yb = rng.uniform_int(h - patch + 1);
        const int xb = w / 2 + rng.uniform_int(w - w / 2 - patch + 1);
        place(i, proto[static_cast<std::size_t>(pa)], ya, xa, rng.uniform(0.8, 1.2));
        place(i, proto[static_cast<std::size_t>(pb)], yb, xb, rng.uniform(0.8, 1.2));
    }
    normalize_from_train(ds);
    return ds;
}

Tensor hflip_image(const Tensor& img) {
    if (img.ndim() != 3) throw ShapeError("hflip_image expects [C x H x W]");
    Tensor out(img.shape());
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y, w - 1 - x);
    return out;
}

Tensor pad_crop_image(const Tensor& img, int pad, int dy, int dx) {
    if (img.ndim() != 3) throw ShapeError("pad_crop_image expects [C x H x W]");
    if (dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad)
        throw ConfigError("pad_crop_image: offsets must lie in [0, 2*pad]");
    Tensor out(img.shape());
    const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            const int sy = y + dy - pad;
            for (int x = 0; x < w; ++x) {
                const int sx = x + dx - pad;
                out.at(ch, y, x) = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? img.at(ch, sy, sx) : 0.0;
            }
        }
    }
    return out;
}

BatchIterator::BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, AugmentPolicy augment)
    : ds_(ds), batch_(batch_size), aug_(augment), rng_(seed) {
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!aug_.identity() && ds.inputs.ndim() != 4)
        throw ConfigError("augmentation requires image-shaped inputs");
    reshuffle();
}

int BatchIterator::batches_per_epoch() const { return (ds_.train_count + batch_ - 1) / batch_; }

void BatchIterator::reshuffle() {
    order_.resize(static_cast<std::size_t>(ds_.train_count));
    for (int i = 0; i < ds_.train_count; ++i) order_[static_cast<std::size_t>(i)] = i;
    for (int i = ds_.train_count - 1; i > 0; --i)
        std::swap(order_[static_cast<std::size_t>(i)], order_[static_cast<std::size_t>(rng_.uniform_int(i + 1))]);
    cursor_ = 0;
}

BatchIterator::Batch BatchIterator::next() {
    const std::int64_t per_ex = ds_.inputs.size() / ds_.count();
    const int take = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(batch_),
                                                            order_.size() - cursor_));
    std::vector<int> shape = ds_.inputs.shape();
    shape[0] = take;
    Batch out;
    out.x = Tensor(shape);
    out.y.resize(static_cast<std::size_t>(take));
    for (int i = 0; i < take; ++i) {
        const int src = order_[cursor_ + static_cast<std::size_t>(i)];
        out.y[static_cast<std::size_t>(i)] = ds_.targets[static_cast<std::size_t>(src)];
        const double* sp = ds_.inputs.data() + src * per_ex;
        double* dp = out.x.data() + static_cast<std::int64_t>(i) * per_ex;
        std::copy(sp, sp + per_ex, dp);
        if (!aug_.identity()) {
            Tensor img = Tensor::from(ds_.example_shape(),
                                      std::vector<double>(dp, dp + per_ex));
            if (aug_.hflip && rng_.bernoulli(0.5)) img = hflip_image(img);
            if (aug_.crop_pad > 0) {
                const int dy = rng_.uniform_int(2 * aug_.crop_pad + 1);
                const int dx = rng_.uniform_int(2 * aug_.crop_pad + 1);
                img = pad_crop_image(img, aug_.crop_pad, dy, dx);
            }
            std::copy(img.data(), img.data() + per_ex, dp);
        }
    }
    cursor_ += static_cast<std::size_t>(take);
    if (cursor_ >= order_.size()) reshuffle();
    return out;
}

}  // namespace interlock
