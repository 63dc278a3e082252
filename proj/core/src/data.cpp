#include "unipool/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace unipool {
namespace {

constexpr const char* kCifarNames[10] = {
    "airplane", "automobile", "bird",  "cat",  "deer",
    "dog",      "frog",       "horse", "ship", "truck"};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("short read on " + path);
  return bytes;
}

Dataset decode_records(const std::vector<unsigned char>& bytes,
                       std::int64_t image_size, const std::string& origin) {
  const std::int64_t plane = image_size * image_size;
  const std::int64_t record = 1 + 3 * plane;
  if (bytes.empty() || static_cast<std::int64_t>(bytes.size()) % record != 0)
    throw DataError(origin + ": size " + std::to_string(bytes.size()) +
                    " is not a multiple of record length " +
                    std::to_string(record));
  const std::int64_t n = static_cast<std::int64_t>(bytes.size()) / record;
  Dataset ds;
  ds.images = Tensor<double>({n, 3, image_size, image_size});
  ds.labels.resize(static_cast<std::size_t>(n));
  auto img = ds.images.mut();
  for (std::int64_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * record;
    ds.labels[static_cast<std::size_t>(i)] = rec[0];
    for (std::int64_t j = 0; j < 3 * plane; ++j)
      img[static_cast<std::size_t>(i * 3 * plane + j)] =
          static_cast<double>(rec[1 + j]) / 255.0;
  }
  return ds;
}

void append_dataset(Dataset& dst, const Dataset& src) {
  if (!dst.images.defined() || dst.size() == 0) {
    dst.images = src.images;
    dst.labels = src.labels;
    return;
  }
  const auto a = dst.images.shape();
  const auto b = src.images.shape();
  if (a[1] != b[1] || a[2] != b[2] || a[3] != b[3])
    throw DataError("batch shapes disagree across files");
  Tensor<double> merged({a[0] + b[0], a[1], a[2], a[3]});
  auto m = merged.mut();
  auto pa = dst.images.data();
  auto pb = src.images.data();
  std::copy(pa.begin(), pa.end(), m.begin());
  std::copy(pb.begin(), pb.end(), m.begin() + pa.size());
  dst.images = merged;
  dst.labels.insert(dst.labels.end(), src.labels.begin(), src.labels.end());
}

}  // namespace

std::int64_t Dataset::num_classes() const {
  if (!class_names.empty())
    return static_cast<std::int64_t>(class_names.size());
  std::int32_t mx = -1;
  for (const auto l : labels) mx = std::max(mx, l);
  return mx + 1;
}

Dataset load_cifar_file(const std::string& path, std::int64_t image_size) {
  return decode_records(read_file(path), image_size, path);
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
  Dataset train, test;
  for (int i = 1; i <= 5; ++i) {
    const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
    Dataset part = load_cifar_file(path, 32);
    if (part.size() != 10000)
      throw DataError(path + ": expected 10000 records, found " +
                      std::to_string(part.size()));
    append_dataset(train, part);
  }
  {
    const std::string path = dir + "/test_batch.bin";
    test = load_cifar_file(path, 32);
    if (test.size() != 10000)
      throw DataError(path + ": expected 10000 records, found " +
                      std::to_string(test.size()));
  }
  for (const Dataset* ds : {&train, &test})
    for (const auto l : ds->labels)
      if (l < 0 || l > 9)
        throw DataError(dir + ": label " + std::to_string(l) +
                        " outside [0,10)");
  train.class_names.assign(kCifarNames, kCifarNames + 10);
  test.class_names = train.class_names;
  normalize_pair(train, test);
  return {std::move(train), std::move(test)};
}

void save_cifar_file(const Dataset& ds, const std::string& path) {
  const std::int64_t n = ds.size();
  const std::int64_t size = ds.image_size();
  const std::int64_t plane = size * size;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  std::vector<unsigned char> rec(static_cast<std::size_t>(1 + 3 * plane));
  auto img = ds.images.data();
  for (std::int64_t i = 0; i < n; ++i) {
    rec[0] = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]);
    for (std::int64_t j = 0; j < 3 * plane; ++j) {
      const std::int64_t ch = j / plane;
      const double raw =
          img[static_cast<std::size_t>(i * 3 * plane + j)] * ds.stddev[ch] +
          ds.mean[ch];
      const double scaled = std::clamp(raw, 0.0, 1.0) * 255.0;
      rec[static_cast<std::size_t>(1 + j)] =
          static_cast<unsigned char>(std::lround(scaled));
    }
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw DataError("short write on " + path);
}

Dataset synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1 || spec.samples_per_class < 1 ||
      spec.image_size < 1)
    throw DataError("synthetic: bad spec");
  const std::int64_t n = spec.num_classes * spec.samples_per_class;
  const std::int64_t size = spec.image_size;
  Dataset ds;
  ds.images = Tensor<double>({n, 3, size, size});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t k = 0; k < spec.num_classes; ++k)
    ds.class_names.push_back("synth" + std::to_string(k));
  Rng rng(Rng::derive(spec.seed, 0x5d47a));
  auto img = ds.images.mut();
  const double pi = 3.14159265358979323846;
  std::int64_t idx = 0;
  for (std::int64_t k = 0; k < spec.num_classes; ++k) {
    const double theta = pi * static_cast<double>(k) /
                         static_cast<double>(spec.num_classes);
    const double freq = 1.0 + static_cast<double>(k % 3);
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::int64_t s = 0; s < spec.samples_per_class; ++s, ++idx) {
      ds.labels[static_cast<std::size_t>(idx)] =
          static_cast<std::int32_t>(k);
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        const double phase = static_cast<double>(ch) * pi / 3.0;
        for (std::int64_t y = 0; y < size; ++y)
          for (std::int64_t x = 0; x < size; ++x) {
            const double t =
                (static_cast<double>(x) * ct + static_cast<double>(y) * st) /
                static_cast<double>(size);
            double v = 0.5 + 0.35 * std::sin(2.0 * pi * freq * t + phase);
            if (spec.noise_std > 0) v += spec.noise_std * rng.normal();
            img[static_cast<std::size_t>(
                ((idx * 3 + ch) * size + y) * size + x)] =
                std::clamp(v, 0.0, 1.0);
          }
      }
    }
  }
  return ds;
}

void normalize_pair(Dataset& train, Dataset& test) {
  const std::int64_t plane = train.image_size() * train.image_size();
  auto img = train.images.mut();
  std::array<double, 3> mean{}, stddev{};
  for (std::int64_t ch = 0; ch < 3; ++ch) {
    double s = 0, s2 = 0;
    std::int64_t count = 0;
    for (std::int64_t i = 0; i < train.size(); ++i) {
      const double* p = img.data() + ((i * 3 + ch) * plane);
      for (std::int64_t j = 0; j < plane; ++j) {
        s += p[j];
        s2 += p[j] * p[j];
        ++count;
      }
    }
    const double m = s / static_cast<double>(count);
    double var = s2 / static_cast<double>(count) - m * m;
    if (var < 0) var = 0;
    mean[static_cast<std::size_t>(ch)] = m;
    const double sd = std::sqrt(var);
    stddev[static_cast<std::size_t>(ch)] = sd > 0 ? sd : 1.0;
  }
  for (Dataset* ds : {&train, &test}) {
    auto p = ds->images.mut();
    const std::int64_t pl = ds->image_size() * ds->image_size();
    for (std::int64_t i = 0; i < ds->size(); ++i)
      for (std::int64_t ch = 0; ch < 3; ++ch) {
        double* row = p.data() + ((i * 3 + ch) * pl);
        for (std::int64_t j = 0; j < pl; ++j)
          row[j] = (row[j] - mean[static_cast<std::size_t>(ch)]) /
                   stddev[static_cast<std::size_t>(ch)];
      }
    ds->mean = mean;
    ds->stddev = stddev;
  }
}

Dataset subset(const Dataset& ds, std::int64_t n_per_class,
               std::uint64_t seed) {
  const std::int64_t k = ds.num_classes();
  std::vector<std::vector<std::int64_t>> by_class(
      static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(
        static_cast<std::int64_t>(i));
  std::vector<std::int64_t> keep;
  for (std::int64_t c = 0; c < k; ++c) {
    auto& idxs = by_class[static_cast<std::size_t>(c)];
    if (static_cast<std::int64_t>(idxs.size()) < n_per_class)
      throw DataError("subset: class " + std::to_string(c) + " has " +
                      std::to_string(idxs.size()) + " samples, need " +
                      std::to_string(n_per_class));
    Rng rng(Rng::derive(seed, 0x50b0 + static_cast<std::uint64_t>(c)));
    const auto perm = rng.permutation(idxs.size());
    for (std::int64_t i = 0; i < n_per_class; ++i)
      keep.push_back(idxs[perm[static_cast<std::size_t>(i)]]);
  }
  const std::int64_t size = ds.image_size();
  const std::int64_t chunk = 3 * size * size;
  Dataset out;
  out.images =
      Tensor<double>({static_cast<std::int64_t>(keep.size()), 3, size, size});
  out.class_names = ds.class_names;
  out.mean = ds.mean;
  out.stddev = ds.stddev;
  auto dst = out.images.mut();
  auto src = ds.images.data();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.labels.push_back(ds.labels[static_cast<std::size_t>(keep[i])]);
    std::copy(src.begin() + keep[i] * chunk,
              src.begin() + (keep[i] + 1) * chunk,
              dst.begin() + static_cast<std::int64_t>(i) * chunk);
  }
  return out;
}

BatchIter::BatchIter(const Dataset& ds, std::int64_t batch_size,
                     std::uint64_t seed, bool shuffle)
    : ds_(&ds), batch_size_(batch_size) {
  if (batch_size < 1 || batch_size > ds.size())
    throw DataError("batch size " + std::to_string(batch_size) + " for " +
                    std::to_string(ds.size()) + " samples");
  if (shuffle) {
    Rng rng(Rng::derive(seed, 0xba7c4));
    order_ = rng.permutation(static_cast<std::size_t>(ds.size()));
  } else {
    order_.resize(static_cast<std::size_t>(ds.size()));
    for (std::size_t i = 0; i < order_.size(); ++i)
      order_[i] = static_cast<std::uint32_t>(i);
  }
}

std::int64_t BatchIter::num_batches() const {
  return (static_cast<std::int64_t>(order_.size()) + batch_size_ - 1) /
         batch_size_;
}

bool BatchIter::next(Batch& out) {
  const std::int64_t n = static_cast<std::int64_t>(order_.size());
  if (pos_ >= n) return false;
  const std::int64_t b = std::min(batch_size_, n - pos_);
  const std::int64_t size = ds_->image_size();
  const std::int64_t chunk = 3 * size * size;
  out.images = Tensor<double>({b, 3, size, size});
  out.labels.resize(static_cast<std::size_t>(b));
  auto dst = out.images.mut();
  auto src = ds_->images.data();
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t idx = order_[static_cast<std::size_t>(pos_ + i)];
    out.labels[static_cast<std::size_t>(i)] =
        ds_->labels[static_cast<std::size_t>(idx)];
    std::copy(src.begin() + idx * chunk, src.begin() + (idx + 1) * chunk,
              dst.begin() + i * chunk);
  }
  pos_ += b;
  return true;
}

void augment_batch(Batch& batch, Rng& rng) {
  const std::int64_t b = batch.images.extent(0);
  const std::int64_t size = batch.images.extent(2);
  const std::int64_t plane = size * size;
  constexpr std::int64_t kPad = 4;
  std::vector<double> padded(
      static_cast<std::size_t>((size + 2 * kPad) * (size + 2 * kPad)));
  const std::int64_t ps = size + 2 * kPad;
  auto img = batch.images.mut();
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t dy = static_cast<std::int64_t>(rng.index(2 * kPad + 1));
    const std::int64_t dx = static_cast<std::int64_t>(rng.index(2 * kPad + 1));
    const bool flip = rng.index(2) == 1;
    for (std::int64_t ch = 0; ch < 3; ++ch) {
      double* p = img.data() + ((i * 3 + ch) * plane);
      std::fill(padded.begin(), padded.end(), 0.0);
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x)
          padded[static_cast<std::size_t>((y + kPad) * ps + (x + kPad))] =
              p[y * size + x];
      for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
          const std::int64_t sx = flip ? (size - 1 - x) : x;
          p[y * size + x] =
              padded[static_cast<std::size_t>((y + dy) * ps + (sx + dx))];
        }
    }
  }
}

Tensor<float> to_f32(const Tensor<double>& t) {
  Tensor<float> out(t.shape());
  auto o = out.mut();
  auto p = t.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = static_cast<float>(p[i]);
  return out;
}

}  // namespace unipool
