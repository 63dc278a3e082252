#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unipool/rng.hpp"
#include "unipool/tensor.hpp"

namespace unipool {

/// Images as [N,3,H,W] float64 in normalized units, with the constants that
/// map them back to raw [0,1] pixels.
struct Dataset {
  Tensor<double> images;
  std::vector<std::int32_t> labels;
  std::vector<std::string> class_names;
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> stddev{1, 1, 1};

  std::int64_t size() const { return images.defined() ? images.extent(0) : 0; }
  std::int64_t image_size() const {
    return images.defined() ? images.extent(2) : 0;
  }
  std::int64_t num_classes() const;
};

/// Reads the standard binary batches (data_batch_1..5.bin, test_batch.bin):
/// per record 1 label byte + 3072 pixel bytes (1024 per channel, R,G,B).
/// Pixels are scaled to [0,1] and normalized with train-split statistics.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

/// Reads one binary batch file of square images with the given extent.
Dataset load_cifar_file(const std::string& path, std::int64_t image_size);

/// Serializes a dataset back to the binary batch layout. De-normalizes with
/// the stored constants; a loaded batch reproduces its source bytes.
void save_cifar_file(const Dataset& ds, const std::string& path);

struct SyntheticSpec {
  std::int64_t num_classes = 4;
  std::int64_t samples_per_class = 96;
  std::int64_t image_size = 16;
  double noise_std = 0.1;
  std::uint64_t seed = 1;
};

/// Class-dependent stripe patterns plus Gaussian noise, raw [0,1] pixels.
/// The patterns depend only on the class index; the seed drives the noise.
Dataset synthetic(const SyntheticSpec& spec);

/// Applies train-split channel statistics to both datasets in place.
void normalize_pair(Dataset& train, Dataset& test);

/// Stratified subset of n_per_class samples per class.
Dataset subset(const Dataset& ds, std::int64_t n_per_class, std::uint64_t seed);

struct Batch {
  Tensor<double> images;  // [B,3,H,W]
  std::vector<std::int32_t> labels;
};

/// Seeded epoch iteration: every index exactly once, batches in permutation
/// order. The final batch may be short.
class BatchIter {
 public:
  BatchIter(const Dataset& ds, std::int64_t batch_size, std::uint64_t seed,
            bool shuffle);

  /// False when the epoch is exhausted.
  bool next(Batch& out);
  std::int64_t num_batches() const;

 private:
  const Dataset* ds_;
  std::int64_t batch_size_;
  std::vector<std::uint32_t> order_;
  std::int64_t pos_ = 0;
};

/// Random crop (pad 4) + horizontal flip on one batch; optional and off by
/// default in training.
void augment_batch(Batch& batch, Rng& rng);

/// f32 copy of a batch image block.
Tensor<float> to_f32(const Tensor<double>& t);

}  // namespace unipool
