#include "unipool/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "unipool/errors.hpp"

namespace unipool {
namespace {

constexpr char kMagic[4] = {'U', 'P', 'L', '1'};

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k)
      c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

void put_u32(std::vector<char>& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::vector<char>& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    buf.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::vector<char>& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(
                                                        i)]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(
                                                        i)]))
           << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

double bits_as_f64(std::uint64_t bits) {
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::uint64_t f64_as_bits(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  return bits;
}

template <typename T>
Tensor<double> widen(const Tensor<T>& t) {
  Tensor<double> out = Tensor<double>::zeros(t.shape());
  auto src = t.data();
  auto dst = out.mut();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = static_cast<double>(src[i]);
  return out;
}

template <typename T>
void narrow_into(const Tensor<double>& src, Tensor<T>& dst,
                 const std::string& name) {
  if (!same_shape(src.shape(), dst.shape()))
    throw DataError("checkpoint tensor " + name + " has shape " +
                    shape_str(src.shape()) + ", expected " +
                    shape_str(dst.shape()));
  auto s = src.data();
  auto d = dst.mut();
  for (std::size_t i = 0; i < s.size(); ++i) d[i] = static_cast<T>(s[i]);
}

Tensor<double> encode_config(const ModelConfig& cfg, std::int64_t epoch,
                             std::int64_t precision) {
  Tensor<double> t = Tensor<double>::zeros({12});
  auto v = t.mut();
  v[0] = static_cast<double>(static_cast<int>(cfg.arch));
  v[1] = static_cast<double>(static_cast<int>(cfg.local_pool.variant));
  v[2] = static_cast<double>(static_cast<int>(cfg.local_pool.b1));
  v[3] = cfg.local_pool.shared ? 1.0 : 0.0;
  v[4] = static_cast<double>(static_cast<int>(cfg.global_pool.variant));
  v[5] = static_cast<double>(static_cast<int>(cfg.global_pool.b1));
  v[6] = cfg.global_pool.shared ? 1.0 : 0.0;
  v[7] = static_cast<double>(cfg.num_classes);
  v[8] = static_cast<double>(cfg.in_channels);
  v[9] = static_cast<double>(cfg.image_size);
  v[10] = static_cast<double>(epoch);
  v[11] = static_cast<double>(precision);
  return t;
}

ModelConfig decode_config(const Tensor<double>& t, std::int64_t& epoch) {
  if (t.size() != 12) throw DataError("checkpoint config block malformed");
  auto v = t.data();
  ModelConfig cfg;
  cfg.arch = static_cast<Arch>(static_cast<int>(v[0]));
  cfg.local_pool.variant = static_cast<PoolVariant>(static_cast<int>(v[1]));
  cfg.local_pool.b1 = static_cast<B1Kind>(static_cast<int>(v[2]));
  cfg.local_pool.shared = v[3] != 0.0;
  cfg.global_pool.variant = static_cast<PoolVariant>(static_cast<int>(v[4]));
  cfg.global_pool.b1 = static_cast<B1Kind>(static_cast<int>(v[5]));
  cfg.global_pool.shared = v[6] != 0.0;
  cfg.num_classes = static_cast<std::int64_t>(v[7]);
  cfg.in_channels = static_cast<std::int64_t>(v[8]);
  cfg.image_size = static_cast<std::int64_t>(v[9]);
  epoch = static_cast<std::int64_t>(v[10]);
  return cfg;
}

void write_blob(const std::string& path,
                const std::vector<std::pair<std::string, Tensor<double>>>&
                    tensors) {
  std::vector<char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_u64(buf, static_cast<std::uint64_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put_u64(buf, static_cast<std::uint64_t>(t.shape().size()));
    for (std::int64_t e : t.shape())
      put_u64(buf, static_cast<std::uint64_t>(e));
  }
  for (const auto& [name, t] : tensors) {
    (void)name;
    for (double v : t.data()) put_f64(buf, v);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("short write on " + path);
}

std::vector<std::pair<std::string, Tensor<double>>> read_blob(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (buf.size() < 16) throw DataError("checkpoint truncated");
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(buf[body + static_cast<
                                                            std::size_t>(i)]))
              << (8 * i);
  if (crc32(buf.data(), body) != stored)
    throw DataError("checkpoint CRC mismatch in " + path);

  Reader r{buf};
  if (r.str(4) != std::string(kMagic, 4))
    throw DataError("not a checkpoint file: " + path);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  const std::uint64_t count = r.u64();
  if (count > (1u << 20)) throw DataError("checkpoint manifest too large");

  std::vector<std::pair<std::string, Shape>> manifest;
  manifest.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = r.u64();
    if (name_len > (1u << 16)) throw DataError("checkpoint name too long");
    std::string name = r.str(name_len);
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw DataError("checkpoint tensor rank too large");
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d)
      shape.push_back(static_cast<std::int64_t>(r.u64()));
    manifest.emplace_back(std::move(name), std::move(shape));
  }

  std::vector<std::pair<std::string, Tensor<double>>> tensors;
  tensors.reserve(count);
  for (auto& [name, shape] : manifest) {
    Tensor<double> t = Tensor<double>::zeros(shape);
    auto dst = t.mut();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = r.f64();
    tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != body) throw DataError("checkpoint has trailing bytes");
  return tensors;
}

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t seed) {
  static const std::array<std::uint32_t, 256> table = make_crc_table();
  std::uint32_t c = seed ^ 0xffffffffu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i)
    c = table[(c ^ p[i]) & 0xffu] ^ (c >> 8);
  return c ^ 0xffffffffu;
}

template <typename T>
void save_checkpoint(const std::string& path, Model<T>& model,
                     const OptState<T>& opt, std::int64_t epoch,
                     const std::array<std::uint64_t, 4>& rng_state) {
  std::vector<std::pair<std::string, Tensor<double>>> tensors;
  auto params = model.params();
  if (params.size() != opt.momentum.size())
    throw ShapeError("optimizer state does not match parameter list");
  for (auto& [name, t] : params) tensors.emplace_back(name, widen(*t));
  for (std::size_t i = 0; i < params.size(); ++i)
    tensors.emplace_back("momentum." + params[i].first,
                         widen(opt.momentum[i]));
  for (auto& [name, t] : model.buffers())
    tensors.emplace_back(name, widen(*t));
  tensors.emplace_back(
      "meta.config",
      encode_config(model.cfg, epoch, std::is_same_v<T, float> ? 32 : 64));
  Tensor<double> rng = Tensor<double>::zeros({4});
  auto rv = rng.mut();
  for (int i = 0; i < 4; ++i)
    rv[static_cast<std::size_t>(i)] =
        bits_as_f64(rng_state[static_cast<std::size_t>(i)]);
  tensors.emplace_back("meta.rng_state", std::move(rng));
  write_blob(path, tensors);
}

template <typename T>
LoadedRun<T> load_checkpoint(const std::string& path) {
  auto tensors = read_blob(path);
  std::map<std::string, const Tensor<double>*> index;
  for (auto& [name, t] : tensors) {
    if (!index.emplace(name, &t).second)
      throw DataError("checkpoint has duplicate tensor " + name);
  }
  auto find = [&](const std::string& name) -> const Tensor<double>& {
    auto it = index.find(name);
    if (it == index.end())
      throw DataError("checkpoint is missing tensor " + name);
    return *it->second;
  };

  std::int64_t epoch = 0;
  ModelConfig cfg = decode_config(find("meta.config"), epoch);
  const Tensor<double>& rng = find("meta.rng_state");
  if (rng.size() != 4) throw DataError("checkpoint RNG state malformed");

  LoadedRun<T> run{build_model<T>(cfg, 0), OptState<T>{}, epoch,
                   {0, 0, 0, 0}};
  auto rv = rng.data();
  for (int i = 0; i < 4; ++i)
    run.rng_state[static_cast<std::size_t>(i)] =
        f64_as_bits(rv[static_cast<std::size_t>(i)]);
  run.opt = OptState<T>::make(run.model);

  auto params = run.model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    narrow_into(find(params[i].first), *params[i].second, params[i].first);
    narrow_into(find("momentum." + params[i].first), run.opt.momentum[i],
                "momentum." + params[i].first);
  }
  for (auto& [name, t] : run.model.buffers()) narrow_into(find(name), *t, name);
  return run;
}

std::int64_t checkpoint_precision(const std::string& path) {
  auto tensors = read_blob(path);
  for (auto& [name, t] : tensors) {
    if (name == "meta.config" && t.size() == 12)
      return static_cast<std::int64_t>(t.data()[11]);
  }
  throw DataError("checkpoint is missing tensor meta.config");
}

template struct Checkpoint<float>;
template struct Checkpoint<double>;
template struct LoadedRun<float>;
template struct LoadedRun<double>;
template void save_checkpoint(const std::string&, Model<float>&,
                              const OptState<float>&, std::int64_t,
                              const std::array<std::uint64_t, 4>&);
template void save_checkpoint(const std::string&, Model<double>&,
                              const OptState<double>&, std::int64_t,
                              const std::array<std::uint64_t, 4>&);
template LoadedRun<float> load_checkpoint<float>(const std::string&);
template LoadedRun<double> load_checkpoint<double>(const std::string&);

}  // namespace unipool
