#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unipool/model.hpp"
#include "unipool/train.hpp"

namespace unipool {

// Checkpoint file: magic "UPL1", format_version u32, manifest (count;
// per-tensor: name length + UTF-8 name, rank, extents as u64), then
// little-endian f64 payloads in manifest order, trailing CRC32 of all
// preceding bytes. Parameters, momentum buffers, batch-norm running stats
// and run metadata (config echo, epoch, RNG state) all travel as named
// tensors.

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint32_t crc32(const void* data, std::size_t len,
                    std::uint32_t seed = 0);

/// Everything needed to resume a run bitwise.
template <typename T>
struct Checkpoint {
  ModelConfig cfg;
  std::int64_t epoch = 0;
  std::array<std::uint64_t, 4> rng_state{0, 0, 0, 0};
  /// Name -> flat f64 payload with shape, in save order.
  std::vector<std::pair<std::string, Tensor<double>>> tensors;
};

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const OptState<T>& opt, std::int64_t epoch,
                     const std::array<std::uint64_t, 4>& rng_state);

/// Rebuilds the model from the stored config echo and restores parameters,
/// momentum and running stats. Throws DataError on bad magic, version,
/// length or CRC.
template <typename T>
struct LoadedRun {
  Model<T> model;
  OptState<T> opt;
  std::int64_t epoch = 0;
  std::array<std::uint64_t, 4> rng_state{0, 0, 0, 0};
};

template <typename T>
LoadedRun<T> load_checkpoint(const std::string& path);

/// Reads just the stored precision (32 or 64) so callers can pick the
/// element type before loading.
std::int64_t checkpoint_precision(const std::string& path);

extern template struct Checkpoint<float>;
extern template struct Checkpoint<double>;
extern template void save_checkpoint(const std::string&, Model<float>&,
                                     const OptState<float>&, std::int64_t,
                                     const std::array<std::uint64_t, 4>&);
extern template void save_checkpoint(const std::string&, Model<double>&,
                                     const OptState<double>&, std::int64_t,
                                     const std::array<std::uint64_t, 4>&);
extern template struct LoadedRun<float>;
extern template struct LoadedRun<double>;
extern template LoadedRun<float> load_checkpoint<float>(const std::string&);
extern template LoadedRun<double> load_checkpoint<double>(const std::string&);

}  // namespace unipool
