#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/data.hpp"
#include "unipool/errors.hpp"

using namespace unipool;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("synthetic generation is deterministic and stratified") {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.samples_per_class = 10;
  spec.image_size = 8;
  spec.seed = 5;

  auto a = synthetic(spec);
  auto b = synthetic(spec);
  REQUIRE(a.size() == 30);
  REQUIRE(a.images.extent(1) == 3);
  REQUIRE(a.images.extent(2) == 8);
  CHECK(a.num_classes() == 3);

  std::vector<int> counts(3, 0);
  for (auto l : a.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 3);
    counts[static_cast<std::size_t>(l)]++;
  }
  for (int c : counts) CHECK(c == 10);

  CHECK(oracle::max_abs_diff(a.images, b.images) == 0);
  CHECK(a.labels == b.labels);

  spec.seed = 6;
  auto c = synthetic(spec);
  CHECK(oracle::max_abs_diff(a.images, c.images) > 0);
  // Raw pixels live in [0,1].
  for (auto v : a.images.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("classes differ more than noise realizations do") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 1;
  spec.image_size = 8;
  auto ds = synthetic(spec);
  double between = 0;
  for (std::int64_t i = 0; i < 3 * 64; ++i)
    between += std::abs(ds.images.at(i) - ds.images.at(3 * 64 + i));
  CHECK(between / (3 * 64) > 0.05);
}

TEST_CASE("normalize_pair applies train statistics to both splits") {
  SyntheticSpec spec;
  spec.samples_per_class = 20;
  auto train = synthetic(spec);
  spec.seed = 99;
  auto test = synthetic(spec);
  normalize_pair(train, test);

  const std::int64_t hw =
      train.images.extent(2) * train.images.extent(3);
  for (std::int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    const double cnt = static_cast<double>(train.size() * hw);
    for (std::int64_t n = 0; n < train.size(); ++n)
      for (std::int64_t i = 0; i < hw; ++i)
        mean += train.images.at((n * 3 + c) * hw + i);
    mean /= cnt;
    for (std::int64_t n = 0; n < train.size(); ++n)
      for (std::int64_t i = 0; i < hw; ++i) {
        const double d = train.images.at((n * 3 + c) * hw + i) - mean;
        var += d * d;
      }
    var /= cnt;
    CHECK(mean == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
    // Stored constants reflect the train split.
    CHECK(train.mean[static_cast<std::size_t>(c)] ==
          test.mean[static_cast<std::size_t>(c)]);
    CHECK(train.stddev[static_cast<std::size_t>(c)] ==
          test.stddev[static_cast<std::size_t>(c)]);
  }
}

TEST_CASE("stratified subset keeps per-class counts") {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.samples_per_class = 12;
  auto ds = synthetic(spec);
  auto sub = subset(ds, 3, 1);
  REQUIRE(sub.size() == 12);
  std::vector<int> counts(4, 0);
  for (auto l : sub.labels) counts[static_cast<std::size_t>(l)]++;
  for (int c : counts) CHECK(c == 3);

  auto sub2 = subset(ds, 3, 1);
  CHECK(oracle::max_abs_diff(sub.images, sub2.images) == 0);
  CHECK_THROWS_AS(subset(ds, 13, 1), DataError);
}

TEST_CASE("batch iteration covers every sample exactly once") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.samples_per_class = 11;  // odd total forces a short final batch
  auto ds = synthetic(spec);

  for (bool shuffle : {false, true}) {
    BatchIter it(ds, 5, 77, shuffle);
    CHECK(it.num_batches() == 5);
    Batch b;
    std::multiset<double> seen, want;
    std::int64_t total = 0, batches = 0;
    while (it.next(b)) {
      ++batches;
      total += b.images.extent(0);
      CHECK(b.images.extent(0) <= 5);
      REQUIRE(b.images.extent(0) ==
              static_cast<std::int64_t>(b.labels.size()));
      for (std::int64_t i = 0; i < b.images.extent(0); ++i)
        seen.insert(b.images.at(i * b.images.size() / b.images.extent(0)));
    }
    CHECK(total == 22);
    CHECK(batches == 5);
    for (std::int64_t n = 0; n < ds.size(); ++n)
      want.insert(ds.images.at(n * 3 * 16 * 16));
    CHECK(seen == want);
  }

  // Unshuffled order is the dataset order.
  BatchIter it(ds, 4, 0, false);
  Batch b;
  REQUIRE(it.next(b));
  for (std::int64_t i = 0; i < 4; ++i)
    CHECK(b.labels[static_cast<std::size_t>(i)] == ds.labels[static_cast<std::size_t>(i)]);

  // Same seed, same order; different seed, different order.
  auto first_labels = [&](std::uint64_t seed) {
    BatchIter jt(ds, 22, seed, true);
    Batch bb;
    jt.next(bb);
    return bb.labels;
  };
  CHECK(first_labels(3) == first_labels(3));
  CHECK(first_labels(3) != first_labels(4));
}

TEST_CASE("binary batch files round trip byte for byte") {
  SyntheticSpec spec;
  spec.num_classes = 5;
  spec.samples_per_class = 7;
  spec.image_size = 6;
  auto ds = synthetic(spec);

  const auto p1 = tmp_path("unipool_rt1.bin");
  const auto p2 = tmp_path("unipool_rt2.bin");
  save_cifar_file(ds, p1);
  auto loaded = load_cifar_file(p1, 6);
  REQUIRE(loaded.size() == 35);
  CHECK(loaded.labels == ds.labels);
  save_cifar_file(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));

  // Normalized datasets serialize back to the same raw bytes.
  SyntheticSpec tspec = spec;
  tspec.seed = 1234;
  auto test = synthetic(tspec);
  auto norm = synthetic(spec);
  normalize_pair(norm, test);
  const auto p3 = tmp_path("unipool_rt3.bin");
  save_cifar_file(norm, p3);
  CHECK(slurp(p3) == slurp(p1));

  fs::remove(p1);
  fs::remove(p2);
  fs::remove(p3);
}

TEST_CASE("file size must match the record layout") {
  const auto path = tmp_path("unipool_trunc.bin");
  {
    std::ofstream out(path, std::ios::binary);
    const std::vector<char> bytes(1 + 3 * 6 * 6 + 7, 1);  // trailing garbage
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_cifar_file(path, 6), DataError);
  fs::remove(path);
  CHECK_THROWS_AS(load_cifar_file(tmp_path("unipool_missing.bin"), 6),
                  DataError);
  CHECK_THROWS_AS(load_cifar10(tmp_path("unipool_missing_dir")), DataError);
}

TEST_CASE("augmentation is seeded and shape preserving") {
  SyntheticSpec spec;
  spec.samples_per_class = 4;
  auto ds = synthetic(spec);
  BatchIter it(ds, 8, 0, false);
  Batch a;
  REQUIRE(it.next(a));
  Batch b;
  b.images = a.images.clone();
  b.labels = a.labels;

  Rng r1(9), r2(9), r3(10);
  augment_batch(a, r1);
  augment_batch(b, r2);
  CHECK(oracle::max_abs_diff(a.images, b.images) == 0);
  CHECK(a.images.extent(2) == 16);

  Batch c;
  BatchIter it2(ds, 8, 0, false);
  REQUIRE(it2.next(c));
  augment_batch(c, r3);
  CHECK(oracle::max_abs_diff(a.images, c.images) > 0);
}

TEST_CASE("f32 conversion preserves values within float precision") {
  Tensor<double> x({3}, {0.25, -1.5, 1.0 / 3.0});
  auto f = to_f32(x);
  CHECK(f.at(0) == 0.25f);
  CHECK(f.at(1) == -1.5f);
  CHECK(f.at(2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("num_classes falls back to the label range") {
  Dataset ds;
  ds.images = Tensor<double>({2, 3, 2, 2});
  ds.labels = {0, 6};
  CHECK(ds.num_classes() == 7);
  ds.class_names = {"a", "b", "c"};
  CHECK(ds.num_classes() == 3);
}

}  // TEST_SUITE
