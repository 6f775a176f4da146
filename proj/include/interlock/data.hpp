#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "interlock/rng.hpp"
#include "interlock/tensor.hpp"

namespace interlock {

// Inputs are stored normalized by per-channel train-split statistics; the raw
// statistics are kept for reporting. Examples [0, train_count) are the train
// split, the rest the test split.
struct Dataset {
    Tensor inputs;  // [N x F] or [N x C x H x W]
    std::vector<int> targets;
    int num_classes = 0;
    int train_count = 0;
    Tensor mean, stddev;  // per-channel, computed on the train split

    int count() const { return inputs.dim(0); }
    int test_count() const { return count() - train_count; }
    std::vector<int> example_shape() const;  // without the leading N
};

// Normalizes in place from train-split statistics (per channel for 4-D data,
// per feature for 2-D). Generators and loaders call this themselves.
void normalize_from_train(Dataset& ds);

// Gaussian clusters with pairwise center distance >= separation (in units of
// the within-cluster sigma).
Dataset synth_blobs(int classes, int dims, int n_train, int n_test, std::uint64_t seed, double separation = 3.0);

// Interleaved 2-D spiral arms.
Dataset synth_spirals(int classes, int n_train, int n_test, double noise, std::uint64_t seed);

// Texture-pair composition task: each class is an unordered pair of patch
// prototypes placed at random positions over background noise, so class
// identity needs both patches recognized and combined.
Dataset synth_images(int classes, int h, int w, int channels, int n_train, int n_test, std::uint64_t seed,
                     double noise = 0.35, int patch = 6);

// IDX (magic 0x00 0x00 dtype ndim, big-endian u32 dims, raw payload).
// Supported dtypes: u8, i8, i16, i32, f32, f64; everything widens to f64.
Tensor load_idx(const std::string& path);
void write_idx_u8(const std::string& path, const Tensor& t);     // clamps to [0,255]
void write_idx_f64(const std::string& path, const Tensor& t);
Dataset dataset_from_idx(const std::string& train_images, const std::string& train_labels,
                         const std::string& test_images, const std::string& test_labels, int num_classes = 0);

struct AugmentPolicy {
    bool hflip = false;
    int crop_pad = 0;  // zero-pad then random-crop back to the original size
    bool identity() const { return !hflip && crop_pad == 0; }
};

// Deterministic augmentation primitives over a single [C x H x W] image.
Tensor hflip_image(const Tensor& img);
Tensor pad_crop_image(const Tensor& img, int pad, int dy, int dx);

// Shuffled train-split batches, reshuffling each epoch; augmentation is
// applied per example with draws from the iterator's stream.
class BatchIterator {
public:
    BatchIterator(const Dataset& ds, int batch_size, std::uint64_t seed, AugmentPolicy augment = {});

    struct Batch {
        Tensor x;
        std::vector<int> y;
    };
    Batch next();
    int batches_per_epoch() const;

private:
    void reshuffle();

    const Dataset& ds_;
    int batch_;
    AugmentPolicy aug_;
    Rng rng_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
};

}  // namespace interlock
