#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "unipool/checkpoint.hpp"
#include "unipool/errors.hpp"
#include "unipool/train.hpp"

using namespace unipool;
namespace fs = std::filesystem;

namespace {

ModelConfig ck_cfg() {
  ModelConfig cfg;
  cfg.arch = Arch::kTinyResNet;
  cfg.local_pool = parse_pooling("universal:fc1");
  cfg.global_pool = parse_pooling("universal:conv");
  cfg.num_classes = 3;
  cfg.image_size = 16;
  return cfg;
}

std::string tmp(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void perturb(Model<T>& model, OptState<T>& opt, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& [name, t] : model.params())
    for (auto& v : t->mut()) v += static_cast<T>(rng.uniform(-0.1, 0.1));
  for (auto& [name, t] : model.buffers())
    for (auto& v : t->mut()) v += static_cast<T>(rng.uniform(0, 0.05));
  for (auto& m : opt.momentum)
    for (auto& v : m.mut()) v = static_cast<T>(rng.normal());
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("crc32 matches the reference vector") {
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const unsigned char*>(s), 9) == 0xcbf43926u);
  CHECK(crc32(nullptr, 0) == 0u);
}

TEST_CASE("save and load restore the full run state") {
  auto model = build_model<double>(ck_cfg(), 5);
  auto opt = OptState<double>::make(model);
  perturb(model, opt, 91);
  const std::array<std::uint64_t, 4> rng_state{1, 2, 3, 0xffffffffffffffffull};

  const auto path = tmp("unipool_ck1.upl");
  save_checkpoint(path, model, opt, 7, rng_state);
  auto run = load_checkpoint<double>(path);

  CHECK(run.epoch == 7);
  CHECK(run.rng_state == rng_state);
  CHECK(run.model.cfg.num_classes == 3);
  CHECK(format_pooling(run.model.cfg.local_pool) == "universal:fc1");
  CHECK(format_pooling(run.model.cfg.global_pool) == "universal:conv");

  auto pa = model.params(), pb = run.model.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    for (std::int64_t j = 0; j < pa[i].second->size(); ++j)
      CHECK(pa[i].second->at(j) == pb[i].second->at(j));
  }
  auto ba = model.buffers(), bb = run.model.buffers();
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i)
    for (std::int64_t j = 0; j < ba[i].second->size(); ++j)
      CHECK(ba[i].second->at(j) == bb[i].second->at(j));
  REQUIRE(opt.momentum.size() == run.opt.momentum.size());
  for (std::size_t i = 0; i < opt.momentum.size(); ++i)
    for (std::int64_t j = 0; j < opt.momentum[i].size(); ++j)
      CHECK(opt.momentum[i].at(j) == run.opt.momentum[i].at(j));
  fs::remove(path);
}

TEST_CASE("reserialization is byte identical") {
  auto model = build_model<double>(ck_cfg(), 6);
  auto opt = OptState<double>::make(model);
  perturb(model, opt, 92);
  const auto p1 = tmp("unipool_ck2a.upl");
  const auto p2 = tmp("unipool_ck2b.upl");
  save_checkpoint(p1, model, opt, 3, {9, 8, 7, 6});
  auto run = load_checkpoint<double>(p1);
  save_checkpoint(p2, run.model, run.opt, run.epoch, run.rng_state);
  CHECK(slurp(p1) == slurp(p2));
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("f32 runs survive the f64 wire format") {
  auto cfg = ck_cfg();
  auto model = build_model<float>(cfg, 7);
  auto opt = OptState<float>::make(model);
  perturb(model, opt, 93);
  const auto path = tmp("unipool_ck3.upl");
  save_checkpoint(path, model, opt, 1, {0, 0, 0, 0});
  CHECK(checkpoint_precision(path) == 32);
  auto run = load_checkpoint<float>(path);
  auto pa = model.params(), pb = run.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::int64_t j = 0; j < pa[i].second->size(); ++j)
      CHECK(pa[i].second->at(j) == pb[i].second->at(j));
  fs::remove(path);
}

TEST_CASE("precision peek reads the stored width") {
  auto model = build_model<double>(ck_cfg(), 8);
  auto opt = OptState<double>::make(model);
  const auto path = tmp("unipool_ck4.upl");
  save_checkpoint(path, model, opt, 0, {0, 0, 0, 0});
  CHECK(checkpoint_precision(path) == 64);
  fs::remove(path);
}

TEST_CASE("corruption is detected") {
  auto model = build_model<double>(ck_cfg(), 9);
  auto opt = OptState<double>::make(model);
  const auto path = tmp("unipool_ck5.upl");
  save_checkpoint(path, model, opt, 0, {0, 0, 0, 0});
  auto bytes = slurp(path);

  SUBCASE("flipped payload byte breaks the checksum") {
    bytes[bytes.size() / 2] ^= 0x40;
    spit(path, bytes);
    CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);
  }
  SUBCASE("truncation") {
    bytes.resize(bytes.size() - 5);
    spit(path, bytes);
    CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);
  }
  SUBCASE("bad magic") {
    bytes[0] ^= 0xff;
    spit(path, bytes);
    CHECK_THROWS_AS(load_checkpoint<double>(path), DataError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint<double>(tmp("unipool_ck_missing.upl")),
                    DataError);
    CHECK_THROWS_AS(checkpoint_precision(tmp("unipool_ck_missing.upl")),
                    DataError);
  }
  fs::remove(path);
}

TEST_CASE("momentum survives so resumed optimization continues exactly") {
  SyntheticSpec sspec;
  sspec.num_classes = 3;
  sspec.samples_per_class = 4;
  sspec.image_size = 16;
  auto train_ds = synthetic(sspec);
  sspec.seed = 2;
  auto test_ds = synthetic(sspec);
  normalize_pair(train_ds, test_ds);

  TrainConfig tcfg;
  tcfg.epochs = 4;
  tcfg.lr_decay_interval = 4;
  tcfg.batch_size = 4;
  tcfg.seed = 21;

  // Unbroken four epochs.
  auto m1 = build_model<double>(ck_cfg(), 10);
  auto o1 = OptState<double>::make(m1);
  train(m1, o1, train_ds, test_ds, tcfg);

  // Two epochs, checkpoint, reload, two more.
  auto m2 = build_model<double>(ck_cfg(), 10);
  auto o2 = OptState<double>::make(m2);
  auto half = tcfg;
  half.epochs = 2;
  half.lr_decay_interval = 2;
  train(m2, o2, train_ds, test_ds, half);
  const auto path = tmp("unipool_ck6.upl");
  save_checkpoint(path, m2, o2, 2, {0, 0, 0, 0});
  auto run = load_checkpoint<double>(path);
  train(run.model, run.opt, train_ds, test_ds, tcfg, nullptr, 2);

  auto pa = m1.params(), pb = run.model.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::int64_t j = 0; j < pa[i].second->size(); ++j)
      CHECK(pa[i].second->at(j) == pb[i].second->at(j));
  fs::remove(path);
}

}  // TEST_SUITE
