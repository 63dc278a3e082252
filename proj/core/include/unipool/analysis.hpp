#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipool/data.hpp"
#include "unipool/model.hpp"

namespace unipool {

// Behavioral taxonomy of trained universal-pooling channels: a channel is
//   Average  when its attention stays near uniform on every input,
//   Flexible when the attention pattern follows the input,
//   Fixed    when it is nonuniform but input-independent.

enum class PoolCategory { kAverage, kFlexible, kFixed };
std::string category_name(PoolCategory c);

struct ChannelPoolingProfile {
  std::int64_t site = 0;
  std::int64_t channel = 0;
  PoolCategory category = PoolCategory::kAverage;
  /// Mean over inputs of the max deviation of attention from 1/S^2.
  double uniformity = 0;
  /// Mean over input pairs of per-block L1 distance between attention maps.
  double sensitivity = 0;
  std::int64_t n_inputs = 0;
};

struct AnalysisThresholds {
  /// Average when uniformity < eps_u; eps_u scales with 1 - 1/S^2.
  double eps_u_factor = 0.05;
  /// Flexible when sensitivity >= eps_s.
  double eps_s = 0.1;
};

/// Attention maps of every universal site for each input of the batch;
/// maps[site] has the site's pre-pool shape. Throws UsageError when the
/// model has no universal site.
template <typename T>
struct SiteWeights {
  std::string name;
  std::int64_t site = 0;
  std::int64_t s = 0;
  Tensor<T> pi;       // [N,C,H,W]
  Tensor<T> feature;  // matching pre-pool features
};

template <typename T>
std::vector<SiteWeights<T>> extract_weights(Model<T>& model,
                                            const Tensor<T>& batch);

/// Per-channel profiles over the batch plus per-site category counts.
template <typename T>
std::vector<ChannelPoolingProfile> categorize(
    const std::vector<SiteWeights<T>>& maps, const AnalysisThresholds& th);

struct CategoryCounts {
  std::int64_t site = 0;
  std::int64_t average = 0;
  std::int64_t flexible = 0;
  std::int64_t fixed = 0;
};
std::vector<CategoryCounts> summarize(
    const std::vector<ChannelPoolingProfile>& profiles);

/// Fixed-width table of per-site counts.
std::string summary_table(const std::vector<CategoryCounts>& counts);

/// summary.csv: site,channel,category,uniformity,sensitivity.
void write_profiles_csv(const std::string& path,
                        const std::vector<ChannelPoolingProfile>& profiles);

/// One row per pixel: site,channel,input,row,col,pi,feature at full
/// precision (%.17g).
template <typename T>
void export_csv(const std::vector<SiteWeights<T>>& maps,
                const std::string& path);

/// Binary P5 PGM per (site,channel,input), min-max rescaled to 8 bits with
/// the scale recorded in a sidecar text file; constant maps render as 0.
/// Returns the written image paths.
template <typename T>
std::vector<std::string> export_pgm(const std::vector<SiteWeights<T>>& maps,
                                    const std::string& out_dir);

#define UNIPOOL_EXTERN_ANALYSIS(T)                                      \
  extern template struct SiteWeights<T>;                                \
  extern template std::vector<SiteWeights<T>> extract_weights(          \
      Model<T>&, const Tensor<T>&);                                     \
  extern template std::vector<ChannelPoolingProfile> categorize(        \
      const std::vector<SiteWeights<T>>&, const AnalysisThresholds&);   \
  extern template void export_csv(const std::vector<SiteWeights<T>>&,   \
                                  const std::string&);                  \
  extern template std::vector<std::string> export_pgm(                  \
      const std::vector<SiteWeights<T>>&, const std::string&);

UNIPOOL_EXTERN_ANALYSIS(float)
UNIPOOL_EXTERN_ANALYSIS(double)
#undef UNIPOOL_EXTERN_ANALYSIS

}  // namespace unipool
