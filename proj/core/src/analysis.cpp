#include "unipool/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "unipool/ops.hpp"

namespace unipool {
namespace {

char fmt_buf[512];

void append_g17(std::string& out, double v) {
  std::snprintf(fmt_buf, sizeof fmt_buf, "%.17g", v);
  out += fmt_buf;
}

}  // namespace

std::string category_name(PoolCategory c) {
  switch (c) {
    case PoolCategory::kAverage:
      return "Average";
    case PoolCategory::kFlexible:
      return "Flexible";
    case PoolCategory::kFixed:
      return "Fixed";
  }
  throw UsageError("unknown pooling category");
}

template <typename T>
std::vector<SiteWeights<T>> extract_weights(Model<T>& model,
                                            const Tensor<T>& batch) {
  auto site_ptrs = model.sites();
  bool any = false;
  for (PoolSite<T>* s : site_ptrs)
    if (s->spec.variant == PoolVariant::kUniversal) any = true;
  if (!any)
    throw UsageError("model has no trainable pooling site to analyze");

  ForwardOut<T> out = model.forward(batch, false);
  const double tol = std::is_same_v<T, float> ? 1e-6 : 1e-12;

  std::vector<SiteWeights<T>> maps;
  for (std::size_t i = 0; i < site_ptrs.size(); ++i) {
    PoolSite<T>* site = site_ptrs[i];
    if (site->spec.variant != PoolVariant::kUniversal) continue;
    SiteWeights<T> w;
    w.name = site->name;
    w.site = static_cast<std::int64_t>(i);
    w.s = site->s;
    w.pi = out.pool_pi[i];
    w.feature = out.pool_in[i];
    if (w.feature.extent(2) != w.pi.extent(2) ||
        w.feature.extent(3) != w.pi.extent(3))
      w.feature = crop2d(w.feature, w.pi.extent(2), w.pi.extent(3));

    // Block sums stay 1 by construction; re-assert on the extracted maps.
    const std::int64_t n = w.pi.extent(0), c = w.pi.extent(1);
    const std::int64_t h = w.pi.extent(2), wd = w.pi.extent(3);
    const std::int64_t s = w.s;
    auto pv = w.pi.data();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t br = 0; br < h; br += s)
          for (std::int64_t bc = 0; bc < wd; bc += s) {
            double sum = 0;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q)
                sum += static_cast<double>(
                    pv[((in * c + ch) * h + br + r) * wd + bc + q]);
            if (std::fabs(sum - 1.0) > tol)
              throw NumericError("attention block sum " +
                                 std::to_string(sum) + " at site " +
                                 std::to_string(i));
          }
    maps.push_back(std::move(w));
  }
  return maps;
}

template <typename T>
std::vector<ChannelPoolingProfile> categorize(
    const std::vector<SiteWeights<T>>& maps, const AnalysisThresholds& th) {
  std::vector<ChannelPoolingProfile> profiles;
  for (const auto& m : maps) {
    const std::int64_t n = m.pi.extent(0), c = m.pi.extent(1);
    const std::int64_t h = m.pi.extent(2), w = m.pi.extent(3);
    if (n < 2)
      throw UsageError("behavior analysis needs at least 2 inputs, got " +
                       std::to_string(n));
    const std::int64_t s2 = m.s * m.s;
    const std::int64_t n_blocks = (h / m.s) * (w / m.s);
    const double inv = 1.0 / static_cast<double>(s2);
    const double eps_u =
        th.eps_u_factor * (1.0 - 1.0 / static_cast<double>(s2));
    auto pv = m.pi.data();
    const std::int64_t plane = h * w;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double uniformity = 0;
      for (std::int64_t in = 0; in < n; ++in) {
        const T* map = pv.data() + (in * c + ch) * plane;
        double dev = 0;
        for (std::int64_t p = 0; p < plane; ++p)
          dev = std::max(dev, std::fabs(static_cast<double>(map[p]) - inv));
        uniformity += dev;
      }
      uniformity /= static_cast<double>(n);

      double sensitivity = 0;
      std::int64_t pairs = 0;
      for (std::int64_t a = 0; a < n; ++a)
        for (std::int64_t b = a + 1; b < n; ++b) {
          const T* ma = pv.data() + (a * c + ch) * plane;
          const T* mb = pv.data() + (b * c + ch) * plane;
          double l1 = 0;
          for (std::int64_t p = 0; p < plane; ++p)
            l1 += std::fabs(static_cast<double>(ma[p]) -
                            static_cast<double>(mb[p]));
          sensitivity += l1 / static_cast<double>(n_blocks);
          ++pairs;
        }
      sensitivity /= static_cast<double>(pairs);

      ChannelPoolingProfile prof;
      prof.site = m.site;
      prof.channel = ch;
      prof.uniformity = uniformity;
      prof.sensitivity = sensitivity;
      prof.n_inputs = n;
      if (uniformity < eps_u)
        prof.category = PoolCategory::kAverage;
      else if (sensitivity >= th.eps_s)
        prof.category = PoolCategory::kFlexible;
      else
        prof.category = PoolCategory::kFixed;
      profiles.push_back(prof);
    }
  }
  return profiles;
}

std::vector<CategoryCounts> summarize(
    const std::vector<ChannelPoolingProfile>& profiles) {
  std::vector<CategoryCounts> counts;
  for (const auto& p : profiles) {
    CategoryCounts* row = nullptr;
    for (auto& c : counts)
      if (c.site == p.site) row = &c;
    if (!row) {
      counts.push_back(CategoryCounts{p.site, 0, 0, 0});
      row = &counts.back();
    }
    switch (p.category) {
      case PoolCategory::kAverage:
        ++row->average;
        break;
      case PoolCategory::kFlexible:
        ++row->flexible;
        break;
      case PoolCategory::kFixed:
        ++row->fixed;
        break;
    }
  }
  std::sort(counts.begin(), counts.end(),
            [](const CategoryCounts& a, const CategoryCounts& b) {
              return a.site < b.site;
            });
  return counts;
}

std::string summary_table(const std::vector<CategoryCounts>& counts) {
  std::string out;
  out += "  site   average  flexible     fixed     total\n";
  for (const auto& c : counts) {
    std::snprintf(fmt_buf, sizeof fmt_buf, "%6lld  %8lld  %8lld  %8lld  %8lld\n",
                  static_cast<long long>(c.site),
                  static_cast<long long>(c.average),
                  static_cast<long long>(c.flexible),
                  static_cast<long long>(c.fixed),
                  static_cast<long long>(c.average + c.flexible + c.fixed));
    out += fmt_buf;
  }
  return out;
}

void write_profiles_csv(const std::string& path,
                        const std::vector<ChannelPoolingProfile>& profiles) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "site,channel,category,uniformity,sensitivity\n";
  for (const auto& p : profiles) {
    std::string line;
    line += std::to_string(p.site);
    line += ',';
    line += std::to_string(p.channel);
    line += ',';
    line += category_name(p.category);
    line += ',';
    append_g17(line, p.uniformity);
    line += ',';
    append_g17(line, p.sensitivity);
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("short write on " + path);
}

template <typename T>
void export_csv(const std::vector<SiteWeights<T>>& maps,
                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "site,channel,input,row,col,pi,feature\n";
  for (const auto& m : maps) {
    const std::int64_t n = m.pi.extent(0), c = m.pi.extent(1);
    const std::int64_t h = m.pi.extent(2), w = m.pi.extent(3);
    auto pv = m.pi.data();
    auto fv = m.feature.data();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t r = 0; r < h; ++r)
          for (std::int64_t q = 0; q < w; ++q) {
            const std::size_t idx =
                static_cast<std::size_t>(((in * c + ch) * h + r) * w + q);
            std::string line;
            line += std::to_string(m.site);
            line += ',';
            line += std::to_string(ch);
            line += ',';
            line += std::to_string(in);
            line += ',';
            line += std::to_string(r);
            line += ',';
            line += std::to_string(q);
            line += ',';
            append_g17(line, static_cast<double>(pv[idx]));
            line += ',';
            append_g17(line, static_cast<double>(fv[idx]));
            line += '\n';
            out << line;
          }
  }
  if (!out) throw DataError("short write on " + path);
}

template <typename T>
std::vector<std::string> export_pgm(const std::vector<SiteWeights<T>>& maps,
                                    const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const auto& m : maps) {
    const std::int64_t n = m.pi.extent(0), c = m.pi.extent(1);
    const std::int64_t h = m.pi.extent(2), w = m.pi.extent(3);
    auto pv = m.pi.data();
    for (std::int64_t in = 0; in < n; ++in)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T* map = pv.data() + (in * c + ch) * h * w;
        double lo = static_cast<double>(map[0]);
        double hi = lo;
        for (std::int64_t p = 1; p < h * w; ++p) {
          const double v = static_cast<double>(map[p]);
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        std::snprintf(fmt_buf, sizeof fmt_buf, "site%lld_ch%lld_in%lld.pgm",
                      static_cast<long long>(m.site),
                      static_cast<long long>(ch),
                      static_cast<long long>(in));
        const std::string path =
            (std::filesystem::path(out_dir) / fmt_buf).string();
        std::ofstream img(path, std::ios::binary);
        if (!img) throw DataError("cannot write " + path);
        img << "P5\n" << w << " " << h << "\n255\n";
        const double span = hi - lo;
        for (std::int64_t p = 0; p < h * w; ++p) {
          unsigned char byte = 0;
          if (span > 0) {
            const double scaled =
                (static_cast<double>(map[p]) - lo) / span * 255.0;
            byte = static_cast<unsigned char>(std::lround(scaled));
          }
          img.put(static_cast<char>(byte));
        }
        if (!img) throw DataError("short write on " + path);
        std::ofstream side(path + ".scale");
        if (!side) throw DataError("cannot write " + path + ".scale");
        std::string line = "min ";
        append_g17(line, lo);
        line += "\nmax ";
        append_g17(line, hi);
        line += '\n';
        side << line;
        paths.push_back(path);
      }
  }
  return paths;
}

#define UNIPOOL_INST_ANALYSIS(T)                                        \
  template struct SiteWeights<T>;                                       \
  template std::vector<SiteWeights<T>> extract_weights(Model<T>&,       \
                                                       const Tensor<T>&); \
  template std::vector<ChannelPoolingProfile> categorize(               \
      const std::vector<SiteWeights<T>>&, const AnalysisThresholds&);   \
  template void export_csv(const std::vector<SiteWeights<T>>&,          \
                           const std::string&);                         \
  template std::vector<std::string> export_pgm(                         \
      const std::vector<SiteWeights<T>>&, const std::string&);

UNIPOOL_INST_ANALYSIS(float)
UNIPOOL_INST_ANALYSIS(double)
#undef UNIPOOL_INST_ANALYSIS

}  // namespace unipool
