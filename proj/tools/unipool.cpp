#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "unipool/analysis.hpp"
#include "unipool/checkpoint.hpp"
#include "unipool/data.hpp"
#include "unipool/errors.hpp"
#include "unipool/gradcheck.hpp"
#include "unipool/model.hpp"
#include "unipool/train.hpp"

namespace fs = std::filesystem;
using namespace unipool;

namespace {

// ---------------------------------------------------------------------------
// Run configuration: defaults, then config-file pairs, then flag pairs, each
// applied in order through the same key handler.

struct RunConfig {
  std::string arch = "tiny-resnet";
  std::string scale = "tiny";  // tiny | paper
  PoolingSpec local;           // default max
  PoolingSpec global;          // default avg
  std::string dataset = "synthetic";  // cifar10 | synthetic | <dir from synth>
  std::string data_dir;
  std::string out = "run";
  std::int64_t num_classes = -1;  // -1: from dataset
  std::int64_t in_channels = 3;
  std::int64_t image_size = -1;  // -1: from dataset
  TrainConfig train;
  SyntheticSpec synth;
  bool epochs_set = false;
  bool interval_set = false;
};

RunConfig make_defaults() {
  RunConfig cfg;
  cfg.local.variant = PoolVariant::kMax;
  cfg.global.variant = PoolVariant::kAvg;
  return cfg;
}

std::int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected integer, got '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const unsigned long long r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected unsigned integer, got '" + v + "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError(key + ": expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError(key + ": expected boolean, got '" + v + "'");
}

PoolVariant to_variant(const std::string& key, const std::string& v) {
  PoolingSpec spec = parse_pooling(v == "universal" ? "universal:fc1" : v);
  if (v != "universal" && spec.variant == PoolVariant::kUniversal &&
      v.find(':') != std::string::npos)
    throw UsageError(key + ": variant takes no b1 suffix, got '" + v + "'");
  return spec.variant;
}

B1Kind to_b1(const std::string& key, const std::string& v) {
  if (v == "fc1") return B1Kind::kFc1;
  if (v == "fc2") return B1Kind::kFc2;
  if (v == "conv") return B1Kind::kConv;
  throw UsageError(key + ": expected fc1|fc2|conv, got '" + v + "'");
}

void apply_pool_key(PoolingSpec& p, const std::string& key,
                    const std::string& field, const std::string& v) {
  if (field.empty()) {
    p = parse_pooling(v);
  } else if (field == "variant") {
    p.variant = to_variant(key, v);
  } else if (field == "b1") {
    p.b1 = to_b1(key, v);
  } else if (field == "shared") {
    p.shared = to_bool(key, v);
  } else if (field == "offset_row") {
    p.offset_row = to_i64(key, v);
  } else if (field == "offset_col") {
    p.offset_col = to_i64(key, v);
  } else {
    throw UsageError("unknown config key: " + key);
  }
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& v) {
  if (key == "arch") {
    cfg.arch = v;
  } else if (key == "scale") {
    if (v != "tiny" && v != "paper")
      throw UsageError("scale: expected tiny|paper, got '" + v + "'");
    cfg.scale = v;
  } else if (key == "dataset") {
    cfg.dataset = v;
  } else if (key == "data") {
    cfg.data_dir = v;
  } else if (key == "out") {
    cfg.out = v;
  } else if (key.rfind("pool.local", 0) == 0) {
    const std::string field =
        key.size() > 10 ? key.substr(11) : std::string();
    if (key.size() > 10 && key[10] != '.')
      throw UsageError("unknown config key: " + key);
    apply_pool_key(cfg.local, key, field, v);
  } else if (key.rfind("pool.global", 0) == 0) {
    const std::string field =
        key.size() > 11 ? key.substr(12) : std::string();
    if (key.size() > 11 && key[11] != '.')
      throw UsageError("unknown config key: " + key);
    apply_pool_key(cfg.global, key, field, v);
  } else if (key == "model.num_classes") {
    cfg.num_classes = to_i64(key, v);
  } else if (key == "model.in_channels") {
    cfg.in_channels = to_i64(key, v);
  } else if (key == "model.image_size") {
    cfg.image_size = to_i64(key, v);
  } else if (key == "train.lr0") {
    cfg.train.lr0 = to_f64(key, v);
  } else if (key == "train.momentum") {
    cfg.train.momentum = to_f64(key, v);
  } else if (key == "train.weight_decay") {
    cfg.train.weight_decay = to_f64(key, v);
  } else if (key == "train.epochs") {
    cfg.train.epochs = to_i64(key, v);
    cfg.epochs_set = true;
  } else if (key == "train.lr_decay_interval") {
    cfg.train.lr_decay_interval = to_i64(key, v);
    cfg.interval_set = true;
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = to_i64(key, v);
  } else if (key == "train.seed") {
    cfg.train.seed = to_u64(key, v);
  } else if (key == "train.precision") {
    cfg.train.precision = to_i64(key, v);
  } else if (key == "train.augment") {
    cfg.train.augment = to_bool(key, v);
  } else if (key == "train.ckpt_interval") {
    cfg.train.ckpt_interval = to_i64(key, v);
  } else if (key == "synth.classes") {
    cfg.synth.num_classes = to_i64(key, v);
  } else if (key == "synth.per_class") {
    cfg.synth.samples_per_class = to_i64(key, v);
  } else if (key == "synth.image_size") {
    cfg.synth.image_size = to_i64(key, v);
  } else if (key == "synth.noise_std") {
    cfg.synth.noise_std = to_f64(key, v);
  } else if (key == "synth.seed") {
    cfg.synth.seed = to_u64(key, v);
  } else {
    throw UsageError("unknown config key: " + key);
  }
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file " + path);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) +
                       ": expected key = value");
    apply_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

/// Flag values captured in order; applied over the config file.
using KvList = std::vector<std::pair<std::string, std::string>>;

/// Final arch string after --scale resolution: tiny scale maps the
/// full-size names onto their desk-size counterparts.
std::string resolved_arch(const RunConfig& cfg) {
  if (cfg.scale == "tiny") {
    if (cfg.arch == "vgg") return "tiny-vgg";
    if (cfg.arch == "resnet") return "tiny-resnet";
  }
  return cfg.arch;
}

void resolve_scale(RunConfig& cfg) {
  if (cfg.scale == "paper") {
    if (!cfg.epochs_set) cfg.train.epochs = 450;
    if (!cfg.interval_set) cfg.train.lr_decay_interval = 150;
    std::fprintf(stderr,
                 "warning: paper scale (450 epochs, full-width network) is "
                 "not sized for desk CPU runs\n");
  }
}

std::string fmt_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string resolved_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "arch = " << resolved_arch(cfg) << "\n";
  out << "scale = " << cfg.scale << "\n";
  out << "dataset = " << cfg.dataset << "\n";
  out << "data = " << cfg.data_dir << "\n";
  out << "out = " << cfg.out << "\n";
  out << "pool.local = " << format_pooling(cfg.local) << "\n";
  out << "pool.local.offset_row = " << cfg.local.offset_row << "\n";
  out << "pool.local.offset_col = " << cfg.local.offset_col << "\n";
  out << "pool.global = " << format_pooling(cfg.global) << "\n";
  out << "pool.global.offset_row = " << cfg.global.offset_row << "\n";
  out << "pool.global.offset_col = " << cfg.global.offset_col << "\n";
  out << "model.num_classes = " << cfg.num_classes << "\n";
  out << "model.in_channels = " << cfg.in_channels << "\n";
  out << "model.image_size = " << cfg.image_size << "\n";
  out << "train.lr0 = " << fmt_g17(cfg.train.lr0) << "\n";
  out << "train.momentum = " << fmt_g17(cfg.train.momentum) << "\n";
  out << "train.weight_decay = " << fmt_g17(cfg.train.weight_decay) << "\n";
  out << "train.epochs = " << cfg.train.epochs << "\n";
  out << "train.lr_decay_interval = " << cfg.train.lr_decay_interval << "\n";
  out << "train.batch_size = " << cfg.train.batch_size << "\n";
  out << "train.seed = " << cfg.train.seed << "\n";
  out << "train.precision = " << cfg.train.precision << "\n";
  out << "train.augment = " << (cfg.train.augment ? "true" : "false") << "\n";
  out << "train.ckpt_interval = " << cfg.train.ckpt_interval << "\n";
  out << "synth.classes = " << cfg.synth.num_classes << "\n";
  out << "synth.per_class = " << cfg.synth.samples_per_class << "\n";
  out << "synth.image_size = " << cfg.synth.image_size << "\n";
  out << "synth.noise_std = " << fmt_g17(cfg.synth.noise_std) << "\n";
  out << "synth.seed = " << cfg.synth.seed << "\n";
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("short write on " + path);
}

// ---------------------------------------------------------------------------
// Data loading for the three dataset modes.

struct DataPair {
  Dataset train;
  Dataset test;
};

std::string data_root(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  if (const char* env = std::getenv("UNIPOOL_DATA_DIR")) return env;
  throw UsageError(
      "no dataset root: pass --data or set UNIPOOL_DATA_DIR");
}

std::int64_t meta_image_size(const std::string& dir) {
  std::ifstream in(dir + "/meta.txt");
  if (!in) throw DataError("missing " + dir + "/meta.txt");
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trim(line.substr(0, eq)) == "image_size")
      return to_i64("meta image_size", trim(line.substr(eq + 1)));
  }
  throw DataError(dir + "/meta.txt has no image_size entry");
}

DataPair load_data(const RunConfig& cfg) {
  DataPair d;
  if (cfg.dataset == "cifar10") {
    auto pair = load_cifar10(data_root(cfg));
    d.train = std::move(pair.first);
    d.test = std::move(pair.second);
    return d;
  }
  if (cfg.dataset == "synthetic") {
    d.train = synthetic(cfg.synth);
    SyntheticSpec test_spec = cfg.synth;
    test_spec.samples_per_class =
        std::max<std::int64_t>(1, cfg.synth.samples_per_class / 4);
    test_spec.seed = Rng::derive(cfg.synth.seed, 0x7e57);
    d.test = synthetic(test_spec);
    normalize_pair(d.train, d.test);
    return d;
  }
  // Directory written by the synth subcommand.
  const std::string dir = cfg.dataset;
  if (!fs::is_directory(dir))
    throw DataError("dataset '" + dir +
                    "' is not cifar10, synthetic, or a directory");
  const std::int64_t sz = meta_image_size(dir);
  d.train = load_cifar_file(dir + "/train.bin", sz);
  d.test = load_cifar_file(dir + "/test.bin", sz);
  normalize_pair(d.train, d.test);
  return d;
}

ModelConfig model_config(const RunConfig& cfg, const Dataset& train) {
  ModelConfig mc;
  mc.arch = parse_arch(resolved_arch(cfg));
  mc.local_pool = cfg.local;
  mc.global_pool = cfg.global;
  mc.num_classes = cfg.num_classes > 0 ? cfg.num_classes : train.num_classes();
  mc.in_channels = cfg.in_channels;
  mc.image_size = cfg.image_size > 0 ? cfg.image_size : train.image_size();
  return mc;
}

// ---------------------------------------------------------------------------
// train

std::vector<Metrics> read_metrics_csv(const std::string& path) {
  std::vector<Metrics> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    Metrics m;
    std::istringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    m.epoch = to_i64("metrics epoch", field);
    std::getline(ss, field, ',');
    m.train_loss = to_f64("metrics train_loss", field);
    std::getline(ss, field, ',');
    m.train_top1 = to_f64("metrics train_top1", field);
    std::getline(ss, field, ',');
    m.test_top1 = to_f64("metrics test_top1", field);
    std::getline(ss, field, ',');
    m.test_top5 = to_f64("metrics test_top5", field);
    std::getline(ss, field, ',');
    m.wall_time_s = to_f64("metrics wall_time_s", field);
    rows.push_back(m);
  }
  return rows;
}

template <typename T>
Metrics run_train(const RunConfig& cfg, const ModelConfig& mc, DataPair& data,
                  const std::string& resume) {
  Model<T> model = build_model<T>(mc, cfg.train.seed);
  OptState<T> opt = OptState<T>::make(model);
  std::int64_t start_epoch = 0;
  std::vector<Metrics> history;
  const std::string metrics_path = cfg.out + "/metrics.csv";
  if (!resume.empty()) {
    LoadedRun<T> run = load_checkpoint<T>(resume);
    model = std::move(run.model);
    opt = std::move(run.opt);
    start_epoch = run.epoch;
    if (start_epoch >= cfg.train.epochs)
      throw UsageError("resume: checkpoint is already at epoch " +
                       std::to_string(start_epoch) + ", --epochs " +
                       std::to_string(cfg.train.epochs) + " adds nothing");
    for (const Metrics& m : read_metrics_csv(metrics_path))
      if (m.epoch < start_epoch) history.push_back(m);
  }

  EpochHook hook = [&](const Metrics& m) {
    history.push_back(m);
    write_metrics_csv(metrics_path, history);
    std::printf(
        "epoch %3lld  lr %.5f  loss %8.5f  train %6.4f  test %6.4f  %7.1fs\n",
        static_cast<long long>(m.epoch), lr_at(cfg.train, m.epoch),
        m.train_loss, m.train_top1, m.test_top1, m.wall_time_s);
    std::fflush(stdout);
    const std::int64_t done = m.epoch + 1;
    const bool at_interval = cfg.train.ckpt_interval > 0 &&
                             done % cfg.train.ckpt_interval == 0;
    if (at_interval || done == cfg.train.epochs)
      save_checkpoint(cfg.out + "/ckpt_" + std::to_string(done) + ".upl",
                      model, opt, done,
                      Rng(Rng::derive(cfg.train.seed,
                                      900 + static_cast<std::uint64_t>(done)))
                          .state());
  };
  train(model, opt, data.train, data.test, cfg.train, hook, start_epoch);
  return history.back();
}

int cmd_train(RunConfig& cfg, const std::string& resume) {
  resolve_scale(cfg);
  validate(cfg.train);
  fs::create_directories(cfg.out);
  DataPair data = load_data(cfg);
  const ModelConfig mc = model_config(cfg, data.train);
  if (cfg.num_classes <= 0) cfg.num_classes = mc.num_classes;
  if (cfg.image_size <= 0) cfg.image_size = mc.image_size;
  write_text(cfg.out + "/config.resolved", resolved_config(cfg));
  Metrics last;
  if (cfg.train.precision == 32)
    last = run_train<float>(cfg, mc, data, resume);
  else
    last = run_train<double>(cfg, mc, data, resume);
  std::printf("final: train_top1 %.4f test_top1 %.4f test_top5 %.4f\n",
              last.train_top1, last.test_top1, last.test_top5);
  return 0;
}

// ---------------------------------------------------------------------------
// eval

template <typename T>
int run_eval(const std::string& ckpt, DataPair& data,
             std::int64_t batch_size) {
  LoadedRun<T> run = load_checkpoint<T>(ckpt);
  const Metrics m = evaluate(run.model, data.test, batch_size);
  std::printf("loss %.6f top1 %.4f top5 %.4f n %lld\n", m.train_loss,
              m.test_top1, m.test_top5,
              static_cast<long long>(data.test.size()));
  return 0;
}

int cmd_eval(RunConfig& cfg, const std::string& ckpt) {
  DataPair data = load_data(cfg);
  if (checkpoint_precision(ckpt) == 32)
    return run_eval<float>(ckpt, data, cfg.train.batch_size);
  return run_eval<double>(ckpt, data, cfg.train.batch_size);
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(RunConfig& cfg, const GradCheckOptions& opt,
                  std::int64_t batch_size) {
  ModelConfig mc;
  mc.arch = parse_arch(resolved_arch(cfg));
  mc.local_pool = cfg.local;
  mc.global_pool = cfg.global;
  mc.num_classes = cfg.num_classes > 0 ? cfg.num_classes : 10;
  mc.in_channels = cfg.in_channels;
  mc.image_size = cfg.image_size > 0 ? cfg.image_size : 32;
  Model<double> model = build_model<double>(mc, cfg.train.seed);

  Rng rng(Rng::derive(cfg.train.seed, 0x6c4d));
  Batch batch;
  batch.images = Tensor<double>::zeros(
      {batch_size, mc.in_channels, mc.image_size, mc.image_size});
  for (auto& v : batch.images.mut()) v = rng.normal(0.0, 1.0);
  batch.labels.resize(static_cast<std::size_t>(batch_size));
  for (std::int64_t i = 0; i < batch_size; ++i)
    batch.labels[static_cast<std::size_t>(i)] =
        static_cast<std::int32_t>(i % mc.num_classes);

  const GradCheckReport rep = grad_check_model(model, batch, opt);
  std::printf("max_rel_err %.3e  checked %lld  skipped %lld\n",
              rep.max_rel_err, static_cast<long long>(rep.checked),
              static_cast<long long>(rep.skipped));
  if (rep.worst_index >= 0)
    std::printf("worst %s[%lld]  analytic %.10e  numeric %.10e\n",
                rep.worst_param.c_str(),
                static_cast<long long>(rep.worst_index), rep.worst_analytic,
                rep.worst_numeric);
  if (rep.max_rel_err >= opt.tolerance)
    throw NumericError("gradient check failed: max rel err " +
                       fmt_g17(rep.max_rel_err) + " >= tolerance " +
                       fmt_g17(opt.tolerance));
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

template <typename T>
int run_analyze(const RunConfig& cfg, const std::string& ckpt,
                DataPair& data, std::int64_t n_inputs,
                std::int64_t pgm_inputs, const AnalysisThresholds& th) {
  LoadedRun<T> run = load_checkpoint<T>(ckpt);
  const std::int64_t classes = data.test.num_classes();
  const std::int64_t per_class =
      std::max<std::int64_t>(1, n_inputs / std::max<std::int64_t>(1, classes));
  Dataset sample = subset(data.test, per_class, 1);

  Tensor<T> batch;
  if constexpr (std::is_same_v<T, float>)
    batch = to_f32(sample.images);
  else
    batch = sample.images;

  const std::string dir = cfg.out + "/analysis";
  fs::create_directories(dir);
  std::vector<SiteWeights<T>> maps = extract_weights(run.model, batch);
  std::vector<ChannelPoolingProfile> profiles = categorize(maps, th);
  write_profiles_csv(dir + "/summary.csv", profiles);
  export_csv(maps, dir + "/weights.csv");

  const std::int64_t n_pgm = std::min<std::int64_t>(pgm_inputs, sample.size());
  Tensor<T> head = Tensor<T>::zeros({n_pgm, batch.extent(1), batch.extent(2),
                                     batch.extent(3)});
  std::copy(batch.data().begin(),
            batch.data().begin() + head.size(), head.mut().begin());
  std::vector<SiteWeights<T>> head_maps = extract_weights(run.model, head);
  export_pgm(head_maps, dir + "/pgm");

  const auto counts = summarize(profiles);
  std::fputs(summary_table(counts).c_str(), stdout);
  std::printf("wrote %s\n", dir.c_str());
  return 0;
}

int cmd_analyze(RunConfig& cfg, const std::string& ckpt,
                std::int64_t n_inputs, std::int64_t pgm_inputs,
                const AnalysisThresholds& th) {
  DataPair data = load_data(cfg);
  if (checkpoint_precision(ckpt) == 32)
    return run_analyze<float>(cfg, ckpt, data, n_inputs, pgm_inputs, th);
  return run_analyze<double>(cfg, ckpt, data, n_inputs, pgm_inputs, th);
}

// ---------------------------------------------------------------------------
// synth

int cmd_synth(RunConfig& cfg) {
  fs::create_directories(cfg.out);
  Dataset train = synthetic(cfg.synth);
  SyntheticSpec test_spec = cfg.synth;
  test_spec.samples_per_class =
      std::max<std::int64_t>(1, cfg.synth.samples_per_class / 4);
  test_spec.seed = Rng::derive(cfg.synth.seed, 0x7e57);
  Dataset test = synthetic(test_spec);
  save_cifar_file(train, cfg.out + "/train.bin");
  save_cifar_file(test, cfg.out + "/test.bin");
  std::ostringstream meta;
  meta << "image_size = " << cfg.synth.image_size << "\n"
       << "classes = " << cfg.synth.num_classes << "\n"
       << "noise_std = " << fmt_g17(cfg.synth.noise_std) << "\n"
       << "seed = " << cfg.synth.seed << "\n";
  write_text(cfg.out + "/meta.txt", meta.str());
  std::printf("wrote %s/train.bin (%lld) %s/test.bin (%lld)\n",
              cfg.out.c_str(), static_cast<long long>(train.size()),
              cfg.out.c_str(), static_cast<long long>(test.size()));
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct GridRow {
  const char* method;
  const char* local;
  const char* global;
};

constexpr GridRow kTable3Grid[] = {
    {"V1", "max", "max"},
    {"V2", "avg", "avg"},
    {"V3", "stride", "avg"},
    {"V4", "mixed", "mixed"},
    {"V5", "gated-ch", "gated-ch"},
    {"V6", "gated-layer", "gated-layer"},
    {"P1", "universal:fc1", "universal:fc1"},
    {"P2", "universal:fc1", "universal:fc2"},
    {"P3", "universal:fc2", "universal:fc2"},
    {"P4", "universal:fc1", "universal:conv"},
    {"P5", "universal:fc2", "universal:conv"},
};

int cmd_sweep(RunConfig& cfg, const std::string& grid, std::int64_t repeat) {
  if (grid != "table3")
    throw UsageError("unknown sweep grid '" + grid + "' (table3)");
  if (repeat < 1) throw UsageError("sweep repeat must be positive");
  resolve_scale(cfg);
  validate(cfg.train);
  fs::create_directories(cfg.out);

  std::ostringstream csv;
  csv << "method,local,global,seed,train_loss,train_top1,test_top1,test_top5,"
         "wall_time_s\n";
  for (const GridRow& row : kTable3Grid) {
    for (std::int64_t r = 0; r < repeat; ++r) {
      RunConfig cell = cfg;
      cell.local = parse_pooling(row.local);
      cell.global = parse_pooling(row.global);
      cell.train.seed = cfg.train.seed + static_cast<std::uint64_t>(r);
      cell.out = cfg.out + "/" + row.method + "_s" +
                 std::to_string(cell.train.seed);
      std::printf("== %s seed %llu  local %s  global %s\n", row.method,
                  static_cast<unsigned long long>(cell.train.seed), row.local,
                  row.global);
      std::fflush(stdout);
      fs::create_directories(cell.out);
      DataPair data = load_data(cell);
      const ModelConfig mc = model_config(cell, data.train);
      if (cell.num_classes <= 0) cell.num_classes = mc.num_classes;
      if (cell.image_size <= 0) cell.image_size = mc.image_size;
      write_text(cell.out + "/config.resolved", resolved_config(cell));
      Metrics last;
      if (cell.train.precision == 32)
        last = run_train<float>(cell, mc, data, "");
      else
        last = run_train<double>(cell, mc, data, "");
      csv << row.method << ',' << row.local << ',' << row.global << ','
          << cell.train.seed << ',' << fmt_g17(last.train_loss) << ','
          << fmt_g17(last.train_top1) << ',' << fmt_g17(last.test_top1) << ','
          << fmt_g17(last.test_top5) << ',' << fmt_g17(last.wall_time_s)
          << "\n";
      write_text(cfg.out + "/sweep.csv", csv.str());
    }
  }
  std::printf("wrote %s/sweep.csv\n", cfg.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

void add_common_options(CLI::App* cmd, std::string& config_path, KvList& kv) {
  cmd->add_option("--config", config_path,
                  "key = value config file; flags override");
  auto push = [&kv](const std::string& key) {
    return [&kv, key](const std::string& v) { kv.emplace_back(key, v); };
  };
  cmd->add_option_function<std::string>("--arch", push("arch"),
                                        "vgg|resnet|tiny-vgg|tiny-resnet");
  cmd->add_option_function<std::string>(
      "--scale", push("scale"),
      "tiny|paper; tiny maps vgg/resnet to desk-size variants, paper uses "
      "the 450-epoch protocol");
  cmd->add_option_function<std::string>(
      "--pool.local", push("pool.local"),
      "max|avg|stride|mixed|gated-ch|gated-layer|universal:{fc1|fc2|conv}"
      "[+shared]");
  cmd->add_option_function<std::string>("--pool.global", push("pool.global"),
                                        "global pooling, same names");
  cmd->add_option_function<std::string>(
      "--dataset", push("dataset"), "cifar10|synthetic|<dir from synth>");
  cmd->add_option_function<std::string>(
      "--data", push("data"), "dataset root (default $UNIPOOL_DATA_DIR)");
  cmd->add_option_function<std::string>("--out", push("out"),
                                        "output directory");
  cmd->add_option_function<std::string>("--seed", push("train.seed"),
                                        "run seed");
  cmd->add_option_function<std::string>("--precision", push("train.precision"),
                                        "32|64");
  cmd->add_option_function<std::string>("--batch-size",
                                        push("train.batch_size"),
                                        "minibatch size");
  cmd->add_option_function<std::string>("--epochs", push("train.epochs"),
                                        "training epochs");
  cmd->add_option_function<std::string>("--lr0", push("train.lr0"),
                                        "initial learning rate");
  cmd->add_option_function<std::string>("--momentum", push("train.momentum"),
                                        "SGD momentum");
  cmd->add_option_function<std::string>("--weight-decay",
                                        push("train.weight_decay"),
                                        "L2 penalty");
  cmd->add_option_function<std::string>("--lr-decay-interval",
                                        push("train.lr_decay_interval"),
                                        "epochs between x0.1 lr drops");
  cmd->add_option_function<std::string>("--ckpt-interval",
                                        push("train.ckpt_interval"),
                                        "epochs between checkpoints "
                                        "(0: final only)");
  cmd->add_flag_function(
      "--augment",
      [&kv](std::int64_t) { kv.emplace_back("train.augment", "true"); },
      "random crop + flip augmentation");
  cmd->add_option_function<std::string>("--classes", push("synth.classes"),
                                        "synthetic class count");
  cmd->add_option_function<std::string>("--per-class", push("synth.per_class"),
                                        "synthetic train samples per class");
  cmd->add_option_function<std::string>("--image-size",
                                        push("synth.image_size"),
                                        "synthetic image extent");
  cmd->add_option_function<std::string>("--noise-std", push("synth.noise_std"),
                                        "synthetic noise level");
  cmd->add_option_function<std::string>("--synth-seed", push("synth.seed"),
                                        "synthetic noise seed");
}

RunConfig resolve(const std::string& config_path, const KvList& kv) {
  RunConfig cfg = make_defaults();
  if (!config_path.empty()) load_config_file(cfg, config_path);
  for (const auto& [key, value] : kv) apply_key(cfg, key, value);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainable channel-wise pooling experiments"};
  app.require_subcommand(1);

  std::string config_path;
  KvList kv;
  std::string resume, ckpt, grid = "table3";
  std::int64_t repeat = 1, gc_batch = 2, n_inputs = 32, pgm_inputs = 4;
  GradCheckOptions gc_opt;
  AnalysisThresholds th;

  CLI::App* c_train = app.add_subcommand("train", "train a model");
  add_common_options(c_train, config_path, kv);
  c_train->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common_options(c_eval, config_path, kv);
  c_eval->add_option("--ckpt", ckpt, "checkpoint file")->required();

  CLI::App* c_grad =
      app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common_options(c_grad, config_path, kv);
  c_grad->add_option("--probes", gc_opt.max_probes,
                     "parameter elements to probe");
  c_grad->add_option("--step", gc_opt.step, "finite-difference step");
  c_grad->add_option("--tolerance", gc_opt.tolerance,
                     "max relative error allowed");
  c_grad->add_option("--gc-batch", gc_batch, "probe batch size");

  CLI::App* c_analyze =
      app.add_subcommand("analyze", "pooling-behavior taxonomy and exports");
  add_common_options(c_analyze, config_path, kv);
  c_analyze->add_option("--ckpt", ckpt, "checkpoint file")->required();
  c_analyze->add_option("--inputs", n_inputs, "evaluation images");
  c_analyze->add_option("--pgm-inputs", pgm_inputs,
                        "images exported as PGM maps");
  c_analyze->add_option("--eps-u-factor", th.eps_u_factor,
                        "Average threshold factor on 1 - 1/S^2");
  c_analyze->add_option("--eps-s", th.eps_s, "Flexible threshold");

  CLI::App* c_synth =
      app.add_subcommand("synth", "write a synthetic dataset in binary "
                                  "batch layout");
  add_common_options(c_synth, config_path, kv);

  CLI::App* c_sweep =
      app.add_subcommand("sweep", "pooling-method comparison grid");
  add_common_options(c_sweep, config_path, kv);
  c_sweep->add_option("--grid", grid, "grid name (table3)");
  c_sweep->add_option("--repeat", repeat, "seeds per grid cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "ERROR:1:" << e.what() << "\n";
    return 1;
  }

  try {
    RunConfig cfg = resolve(config_path, kv);
    if (c_train->parsed()) return cmd_train(cfg, resume);
    if (c_eval->parsed()) return cmd_eval(cfg, ckpt);
    if (c_grad->parsed()) return cmd_gradcheck(cfg, gc_opt, gc_batch);
    if (c_analyze->parsed())
      return cmd_analyze(cfg, ckpt, n_inputs, pgm_inputs, th);
    if (c_synth->parsed()) return cmd_synth(cfg);
    if (c_sweep->parsed()) return cmd_sweep(cfg, grid, repeat);
    throw UsageError("no subcommand");
  } catch (const UsageError& e) {
    std::cerr << "ERROR:1:" << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "ERROR:1:" << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "ERROR:2:" << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "ERROR:3:" << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ERROR:1:" << e.what() << "\n";
    return 1;
  }
}
