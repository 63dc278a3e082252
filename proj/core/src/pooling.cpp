#include "unipool/pooling.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "unipool/branch_trace.hpp"

namespace unipool {
namespace {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct PoolDims {
  std::int64_t n, c, h, w;   // cropped input
  std::int64_t s, nbh, nbw;  // block grid
};

template <typename T>
PoolDims pool_dims(const char* op, const Tensor<T>& f, std::int64_t s) {
  if (f.shape().size() != 4)
    throw ShapeError(std::string(op) + ": input " + shape_str(f.shape()));
  if (s < 1) throw ShapeError(std::string(op) + ": block size must be >= 1");
  PoolDims d;
  d.n = f.extent(0);
  d.c = f.extent(1);
  d.h = f.extent(2);
  d.w = f.extent(3);
  if (d.h < s || d.w < s)
    throw ShapeError(std::string(op) + ": block " + std::to_string(s) +
                     " exceeds " + shape_str(f.shape()));
  d.s = s;
  d.nbh = d.h / s;
  d.nbw = d.w / s;
  return d;
}

/// Drops trailing rows/columns not covered by whole blocks.
template <typename T>
Tensor<T> crop_to_blocks(const Tensor<T>& f, std::int64_t s) {
  const PoolDims d = pool_dims("pool", f, s);
  return crop2d(f, d.nbh * s, d.nbw * s);
}

template <typename T>
std::int64_t block_argmax(const T* plane, std::int64_t w, std::int64_t bi,
                          std::int64_t bj, std::int64_t s) {
  std::int64_t best = 0;
  T bv = plane[(bi * s) * w + (bj * s)];
  for (std::int64_t r = 0; r < s; ++r)
    for (std::int64_t q = 0; q < s; ++q) {
      const T v = plane[(bi * s + r) * w + (bj * s + q)];
      if (v > bv) {
        bv = v;
        best = r * s + q;
      }
    }
  return best;
}

/// Packs one small index per byte into the branch hash.
class ArgmaxFeeder {
 public:
  explicit ArgmaxFeeder(bool active) : active_(active) {}
  void push(std::int64_t idx) {
    if (!active_) return;
    word_ = (word_ << 8) | static_cast<std::uint64_t>(idx & 0xff);
    if (++count_ == 8) flush();
  }
  ~ArgmaxFeeder() {
    if (active_ && count_ > 0) flush();
  }

 private:
  void flush() {
    branch_feed(word_ ^ 0xa7c15ull);
    word_ = 0;
    count_ = 0;
  }
  bool active_;
  std::uint64_t word_ = 0;
  int count_ = 0;
};

}  // namespace

PoolingSpec parse_pooling(const std::string& text) {
  PoolingSpec s;
  std::string base = text;
  bool shared = false;
  const auto plus = text.find("+shared");
  if (plus != std::string::npos && plus + 7 == text.size()) {
    shared = true;
    base = text.substr(0, plus);
  }
  if (base == "max") {
    s.variant = PoolVariant::kMax;
  } else if (base == "avg") {
    s.variant = PoolVariant::kAvg;
  } else if (base == "stride") {
    s.variant = PoolVariant::kStride;
  } else if (base == "mixed") {
    s.variant = PoolVariant::kMixed;
  } else if (base == "gated-ch") {
    s.variant = PoolVariant::kGatedChannel;
  } else if (base == "gated-layer") {
    s.variant = PoolVariant::kGatedLayer;
  } else if (base == "universal:fc1") {
    s.variant = PoolVariant::kUniversal;
    s.b1 = B1Kind::kFc1;
  } else if (base == "universal:fc2") {
    s.variant = PoolVariant::kUniversal;
    s.b1 = B1Kind::kFc2;
  } else if (base == "universal:conv") {
    s.variant = PoolVariant::kUniversal;
    s.b1 = B1Kind::kConv;
  } else {
    throw UsageError("unknown pooling \"" + text +
                     "\" (expected max|avg|stride|mixed|gated-ch|gated-layer|"
                     "universal:fc1|universal:fc2|universal:conv)");
  }
  if (shared && s.variant != PoolVariant::kUniversal)
    throw UsageError("\"+shared\" applies to universal pooling only");
  s.shared = shared;
  return s;
}

std::string format_pooling(const PoolingSpec& spec) {
  std::string out;
  switch (spec.variant) {
    case PoolVariant::kMax: out = "max"; break;
    case PoolVariant::kAvg: out = "avg"; break;
    case PoolVariant::kStride: out = "stride"; break;
    case PoolVariant::kMixed: out = "mixed"; break;
    case PoolVariant::kGatedChannel: out = "gated-ch"; break;
    case PoolVariant::kGatedLayer: out = "gated-layer"; break;
    case PoolVariant::kUniversal:
      switch (spec.b1) {
        case B1Kind::kFc1: out = "universal:fc1"; break;
        case B1Kind::kFc2: out = "universal:fc2"; break;
        case B1Kind::kConv: out = "universal:conv"; break;
      }
      break;
  }
  if (spec.shared) out += "+shared";
  return out;
}

template <typename T>
Tensor<T> max_pool(const Tensor<T>& f, std::int64_t s) {
  Tensor<T> fc = crop_to_blocks(f, s);
  const PoolDims d = pool_dims("max_pool", fc, s);
  Tensor<T> out({d.n, d.c, d.nbh, d.nbw});
  {
    auto o = out.mut();
    auto px = fc.data();
    ArgmaxFeeder feeder(BranchTrace::current() != nullptr);
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        T* po = o.data() + ((i * d.c + ch) * d.nbh * d.nbw);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            const std::int64_t am = block_argmax(plane, d.w, bi, bj, s);
            feeder.push(am);
            po[bi * d.nbw + bj] =
                plane[(bi * s + am / s) * d.w + (bj * s + am % s)];
          }
      }
  }
  ensure_finite("max_pool", out);
  if (Tape<T>::current() != nullptr && fc.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("max_pool", [fc, out, d, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = fc.data();
      auto gx = fc.grad_mut();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
          T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
          const T* gp = g.data() + ((i * d.c + ch) * d.nbh * d.nbw);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              const std::int64_t am = block_argmax(plane, d.w, bi, bj, s);
              gplane[(bi * s + am / s) * d.w + (bj * s + am % s)] +=
                  gp[bi * d.nbw + bj];
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& f, std::int64_t s) {
  Tensor<T> fc = crop_to_blocks(f, s);
  const PoolDims d = pool_dims("avg_pool", fc, s);
  const T inv = T(1) / static_cast<T>(s * s);
  Tensor<T> out({d.n, d.c, d.nbh, d.nbw});
  {
    auto o = out.mut();
    auto px = fc.data();
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        T* po = o.data() + ((i * d.c + ch) * d.nbh * d.nbw);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            double acc = 0;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q)
                acc += static_cast<double>(
                    plane[(bi * s + r) * d.w + (bj * s + q)]);
            po[bi * d.nbw + bj] = static_cast<T>(acc) * inv;
          }
      }
  }
  ensure_finite("avg_pool", out);
  if (Tape<T>::current() != nullptr && fc.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("avg_pool", [fc, out, d, s, inv]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = fc.grad_mut();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
          const T* gp = g.data() + ((i * d.c + ch) * d.nbh * d.nbw);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              const T gv = gp[bi * d.nbw + bj] * inv;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q)
                  gplane[(bi * s + r) * d.w + (bj * s + q)] += gv;
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> stride_pool(const Tensor<T>& f, std::int64_t s, std::int64_t off_r,
                      std::int64_t off_c) {
  if (off_r < 0 || off_r >= s || off_c < 0 || off_c >= s)
    throw ShapeError("stride_pool: offset (" + std::to_string(off_r) + "," +
                     std::to_string(off_c) + ") outside block of size " +
                     std::to_string(s));
  Tensor<T> fc = crop_to_blocks(f, s);
  const PoolDims d = pool_dims("stride_pool", fc, s);
  Tensor<T> out({d.n, d.c, d.nbh, d.nbw});
  {
    auto o = out.mut();
    auto px = fc.data();
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        T* po = o.data() + ((i * d.c + ch) * d.nbh * d.nbw);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj)
            po[bi * d.nbw + bj] =
                plane[(bi * s + off_r) * d.w + (bj * s + off_c)];
      }
  }
  ensure_finite("stride_pool", out);
  if (Tape<T>::current() != nullptr && fc.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("stride_pool",
                               [fc, out, d, s, off_r, off_c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = fc.grad_mut();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
          const T* gp = g.data() + ((i * d.c + ch) * d.nbh * d.nbw);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj)
              gplane[(bi * s + off_r) * d.w + (bj * s + off_c)] +=
                  gp[bi * d.nbw + bj];
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mixed_pool(const Tensor<T>& f, const Tensor<T>& a, std::int64_t s) {
  if (a.size() != 1)
    throw ShapeError("mixed_pool: mixing parameter has shape " +
                     shape_str(a.shape()));
  Tensor<T> m = sigmoid(a);
  Tensor<T> one_minus = add_scalar(scale(m, T(-1)), T(1));
  Tensor<T> mx = max_pool(f, s);
  Tensor<T> av = avg_pool(f, s);
  return add(bmul(mx, m), bmul(av, one_minus));
}

template <typename T>
Tensor<T> gated_pool(const Tensor<T>& f, const Tensor<T>& omega,
                     std::int64_t s, bool per_channel) {
  Tensor<T> fc = crop_to_blocks(f, s);
  const PoolDims d = pool_dims("gated_pool", fc, s);
  const std::int64_t s2 = s * s;
  const Shape want = per_channel ? Shape{d.c, s2} : Shape{1, s2};
  if (omega.shape() != want)
    throw ShapeError("gated_pool: gate " + shape_str(omega.shape()) +
                     ", expected " + shape_str(want));
  Tensor<T> out({d.n, d.c, d.nbh, d.nbw});
  {
    auto o = out.mut();
    auto px = fc.data();
    auto pw = omega.data();
    ArgmaxFeeder feeder(BranchTrace::current() != nullptr);
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        const T* wrow = pw.data() + (per_channel ? ch * s2 : 0);
        T* po = o.data() + ((i * d.c + ch) * d.nbh * d.nbw);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            double z = 0, acc = 0;
            T mx = plane[(bi * s) * d.w + (bj * s)];
            std::int64_t am = 0;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q) {
                const T v = plane[(bi * s + r) * d.w + (bj * s + q)];
                z += static_cast<double>(wrow[r * s + q]) *
                     static_cast<double>(v);
                acc += static_cast<double>(v);
                if (v > mx) {
                  mx = v;
                  am = r * s + q;
                }
              }
            feeder.push(am);
            const double gate =
                z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                       : std::exp(z) / (1.0 + std::exp(z));
            const double mean = acc / static_cast<double>(s2);
            po[bi * d.nbw + bj] = static_cast<T>(
                gate * static_cast<double>(mx) + (1.0 - gate) * mean);
          }
      }
  }
  ensure_finite("gated_pool", out);
  if (Tape<T>::current() != nullptr &&
      (fc.needs_grad() || omega.needs_grad())) {
    out.mark_in_graph();
    Tape<T>::current()->record("gated_pool", [fc, omega, out, d, s, s2,
                                              per_channel]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = fc.data();
      auto pw = omega.data();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
          const T* wrow = pw.data() + (per_channel ? ch * s2 : 0);
          const T* gp = g.data() + ((i * d.c + ch) * d.nbh * d.nbw);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              const T go = gp[bi * d.nbw + bj];
              if (go == T(0)) continue;
              double z = 0, acc = 0;
              T mx = plane[(bi * s) * d.w + (bj * s)];
              std::int64_t am = 0;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q) {
                  const T v = plane[(bi * s + r) * d.w + (bj * s + q)];
                  z += static_cast<double>(wrow[r * s + q]) *
                       static_cast<double>(v);
                  acc += static_cast<double>(v);
                  if (v > mx) {
                    mx = v;
                    am = r * s + q;
                  }
                }
              const double gate =
                  z >= 0 ? 1.0 / (1.0 + std::exp(-z))
                         : std::exp(z) / (1.0 + std::exp(z));
              const double mean = acc / static_cast<double>(s2);
              const double dgate = gate * (1.0 - gate) *
                                   (static_cast<double>(mx) - mean);
              if (omega.needs_grad()) {
                auto gw = omega.grad_mut();
                T* gwrow = gw.data() + (per_channel ? ch * s2 : 0);
                for (std::int64_t r = 0; r < s; ++r)
                  for (std::int64_t q = 0; q < s; ++q)
                    gwrow[r * s + q] += static_cast<T>(
                        static_cast<double>(go) * dgate *
                        static_cast<double>(
                            plane[(bi * s + r) * d.w + (bj * s + q)]));
              }
              if (fc.needs_grad()) {
                auto gx = fc.grad_mut();
                T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
                for (std::int64_t r = 0; r < s; ++r)
                  for (std::int64_t q = 0; q < s; ++q) {
                    double dv = dgate *
                                    static_cast<double>(wrow[r * s + q]) +
                                (1.0 - gate) / static_cast<double>(s2);
                    if (r * s + q == am) dv += gate;
                    gplane[(bi * s + r) * d.w + (bj * s + q)] +=
                        static_cast<T>(static_cast<double>(go) * dv);
                  }
              }
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> block_softmax(const Tensor<T>& fbar, std::int64_t s) {
  Tensor<T> fc = crop_to_blocks(fbar, s);
  const PoolDims d = pool_dims("block_softmax", fc, s);
  Tensor<T> out(fc.shape());
  {
    auto o = out.mut();
    auto px = fc.data();
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        T* po = o.data() + ((i * d.c + ch) * d.h * d.w);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            T mx = plane[(bi * s) * d.w + (bj * s)];
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q)
                mx = std::max(mx, plane[(bi * s + r) * d.w + (bj * s + q)]);
            double se = 0;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q) {
                const double e = std::exp(static_cast<double>(
                    plane[(bi * s + r) * d.w + (bj * s + q)] - mx));
                po[(bi * s + r) * d.w + (bj * s + q)] = static_cast<T>(e);
                se += e;
              }
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q) {
                T& v = po[(bi * s + r) * d.w + (bj * s + q)];
                v = static_cast<T>(static_cast<double>(v) / se);
              }
          }
      }
  }
  ensure_finite("block_softmax", out);
  if (Tape<T>::current() != nullptr && fc.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("block_softmax", [fc, out, d, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pp = out.data();
      auto gx = fc.grad_mut();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          const T* pi = pp.data() + ((i * d.c + ch) * d.h * d.w);
          const T* gp = g.data() + ((i * d.c + ch) * d.h * d.w);
          T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              double dot = 0;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q) {
                  const std::int64_t idx =
                      (bi * s + r) * d.w + (bj * s + q);
                  dot += static_cast<double>(pi[idx]) *
                         static_cast<double>(gp[idx]);
                }
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q) {
                  const std::int64_t idx =
                      (bi * s + r) * d.w + (bj * s + q);
                  gplane[idx] += static_cast<T>(
                      static_cast<double>(pi[idx]) *
                      (static_cast<double>(gp[idx]) - dot));
                }
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> block_weighted_sum(const Tensor<T>& pi, const Tensor<T>& f,
                             std::int64_t s) {
  if (!same_shape(pi.shape(), f.shape()))
    throw ShapeError("block_weighted_sum: " + shape_str(pi.shape()) + " vs " +
                     shape_str(f.shape()));
  const PoolDims d = pool_dims("block_weighted_sum", f, s);
  if (d.nbh * s != d.h || d.nbw * s != d.w)
    throw ShapeError("block_weighted_sum: input " + shape_str(f.shape()) +
                     " not divisible into blocks of " + std::to_string(s));
  Tensor<T> out({d.n, d.c, d.nbh, d.nbw});
  {
    auto o = out.mut();
    auto pp = pi.data();
    auto px = f.data();
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* wplane = pp.data() + ((i * d.c + ch) * d.h * d.w);
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        T* po = o.data() + ((i * d.c + ch) * d.nbh * d.nbw);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            double acc = 0;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q) {
                const std::int64_t idx = (bi * s + r) * d.w + (bj * s + q);
                acc += static_cast<double>(wplane[idx]) *
                       static_cast<double>(plane[idx]);
              }
            po[bi * d.nbw + bj] = static_cast<T>(acc);
          }
      }
  }
  ensure_finite("block_weighted_sum", out);
  if (Tape<T>::current() != nullptr && (pi.needs_grad() || f.needs_grad())) {
    out.mark_in_graph();
    Tape<T>::current()->record("block_weighted_sum",
                               [pi, f, out, d, s]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pp = pi.data();
      auto px = f.data();
      T* gpi = pi.needs_grad() ? pi.grad_mut().data() : nullptr;
      T* gf = f.needs_grad() ? f.grad_mut().data() : nullptr;
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          const std::int64_t plane_off = (i * d.c + ch) * d.h * d.w;
          const T* wplane = pp.data() + plane_off;
          const T* plane = px.data() + plane_off;
          const T* gp = g.data() + ((i * d.c + ch) * d.nbh * d.nbw);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              const T go = gp[bi * d.nbw + bj];
              if (go == T(0)) continue;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q) {
                  const std::int64_t idx =
                      (bi * s + r) * d.w + (bj * s + q);
                  if (gpi) gpi[plane_off + idx] += go * plane[idx];
                  if (gf) gf[plane_off + idx] += go * wplane[idx];
                }
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> blocks_to_rows(const Tensor<T>& f, std::int64_t s) {
  const PoolDims d = pool_dims("blocks_to_rows", f, s);
  if (d.nbh * s != d.h || d.nbw * s != d.w)
    throw ShapeError("blocks_to_rows: input " + shape_str(f.shape()) +
                     " not divisible into blocks of " + std::to_string(s));
  const std::int64_t s2 = s * s;
  Tensor<T> out({d.n * d.c * d.nbh * d.nbw, s2});
  {
    auto o = out.mut();
    auto px = f.data();
    std::int64_t row = 0;
    for (std::int64_t i = 0; i < d.n; ++i)
      for (std::int64_t ch = 0; ch < d.c; ++ch) {
        const T* plane = px.data() + ((i * d.c + ch) * d.h * d.w);
        for (std::int64_t bi = 0; bi < d.nbh; ++bi)
          for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
            T* dst = o.data() + row * s2;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q)
                dst[r * s + q] = plane[(bi * s + r) * d.w + (bj * s + q)];
            ++row;
          }
      }
  }
  if (Tape<T>::current() != nullptr && f.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("blocks_to_rows", [f, out, d, s, s2]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = f.grad_mut();
      std::int64_t row = 0;
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ch = 0; ch < d.c; ++ch) {
          T* gplane = gx.data() + ((i * d.c + ch) * d.h * d.w);
          for (std::int64_t bi = 0; bi < d.nbh; ++bi)
            for (std::int64_t bj = 0; bj < d.nbw; ++bj) {
              const T* src = g.data() + row * s2;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q)
                  gplane[(bi * s + r) * d.w + (bj * s + q)] += src[r * s + q];
              ++row;
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> rows_to_blocks(const Tensor<T>& rows, std::int64_t s, std::int64_t n,
                         std::int64_t c, std::int64_t h, std::int64_t w) {
  const std::int64_t s2 = s * s;
  const std::int64_t nbh = h / s, nbw = w / s;
  if (nbh * s != h || nbw * s != w || rows.shape().size() != 2 ||
      rows.extent(0) != n * c * nbh * nbw || rows.extent(1) != s2)
    throw ShapeError("rows_to_blocks: rows " + shape_str(rows.shape()) +
                     " for target [" + std::to_string(n) + "," +
                     std::to_string(c) + "," + std::to_string(h) + "," +
                     std::to_string(w) + "] blocks of " + std::to_string(s));
  Tensor<T> out({n, c, h, w});
  {
    auto o = out.mut();
    auto px = rows.data();
    std::int64_t row = 0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T* plane = o.data() + ((i * c + ch) * h * w);
        for (std::int64_t bi = 0; bi < nbh; ++bi)
          for (std::int64_t bj = 0; bj < nbw; ++bj) {
            const T* src = px.data() + row * s2;
            for (std::int64_t r = 0; r < s; ++r)
              for (std::int64_t q = 0; q < s; ++q)
                plane[(bi * s + r) * w + (bj * s + q)] = src[r * s + q];
            ++row;
          }
      }
  }
  if (Tape<T>::current() != nullptr && rows.needs_grad()) {
    out.mark_in_graph();
    Tape<T>::current()->record("rows_to_blocks",
                               [rows, out, s, s2, n, c, h, w, nbh,
                                nbw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = rows.grad_mut();
      std::int64_t row = 0;
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const T* gplane = g.data() + ((i * c + ch) * h * w);
          for (std::int64_t bi = 0; bi < nbh; ++bi)
            for (std::int64_t bj = 0; bj < nbw; ++bj) {
              T* dst = gx.data() + row * s2;
              for (std::int64_t r = 0; r < s; ++r)
                for (std::int64_t q = 0; q < s; ++q)
                  dst[r * s + q] += gplane[(bi * s + r) * w + (bj * s + q)];
              ++row;
            }
        }
    });
  }
  return out;
}

template <typename T>
Tensor<T> per_channel_linear(const Tensor<T>& rows, const Tensor<T>& w,
                             const Tensor<T>& b, std::int64_t n,
                             std::int64_t c, std::int64_t blocks) {
  if (rows.shape().size() != 2 || w.shape().size() != 3 ||
      b.shape().size() != 2)
    throw ShapeError("per_channel_linear: rows " + shape_str(rows.shape()) +
                     ", w " + shape_str(w.shape()) + ", b " +
                     shape_str(b.shape()));
  const std::int64_t in = rows.extent(1);
  const std::int64_t cw = w.extent(0);
  const std::int64_t outf = w.extent(1);
  if (rows.extent(0) != n * c * blocks || w.extent(2) != in ||
      b.extent(0) != cw || b.extent(1) != outf || (cw != 1 && cw != c))
    throw ShapeError("per_channel_linear: rows " + shape_str(rows.shape()) +
                     ", w " + shape_str(w.shape()) + ", b " +
                     shape_str(b.shape()) + " for n=" + std::to_string(n) +
                     " c=" + std::to_string(c) +
                     " blocks=" + std::to_string(blocks));
  Tensor<T> out({rows.extent(0), outf});
  {
    auto o = out.mut();
    auto pr = rows.data();
    auto pw = w.data();
    auto pb = b.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t r0 = (i * c + ch) * blocks;
        const std::int64_t wch = cw == 1 ? 0 : ch;
        ConstMatMap<T> R(pr.data() + r0 * in, blocks, in);
        ConstMatMap<T> W(pw.data() + wch * outf * in, outf, in);
        MatMap<T> O(o.data() + r0 * outf, blocks, outf);
        O.noalias() = R * W.transpose();
        const T* brow = pb.data() + wch * outf;
        for (std::int64_t r = 0; r < blocks; ++r)
          for (std::int64_t j = 0; j < outf; ++j) O(r, j) += brow[j];
      }
  }
  ensure_finite("per_channel_linear", out);
  if (Tape<T>::current() != nullptr &&
      (rows.needs_grad() || w.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    Tape<T>::current()->record("per_channel_linear",
                               [rows, w, b, out, n, c, blocks, in, outf,
                                cw]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pr = rows.data();
      auto pw = w.data();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t r0 = (i * c + ch) * blocks;
          const std::int64_t wch = cw == 1 ? 0 : ch;
          ConstMatMap<T> G(g.data() + r0 * outf, blocks, outf);
          if (rows.needs_grad()) {
            ConstMatMap<T> W(pw.data() + wch * outf * in, outf, in);
            MatMap<T> GR(rows.grad_mut().data() + r0 * in, blocks, in);
            GR.noalias() += G * W;
          }
          if (w.needs_grad()) {
            ConstMatMap<T> R(pr.data() + r0 * in, blocks, in);
            MatMap<T> GW(w.grad_mut().data() + wch * outf * in, outf, in);
            GW.noalias() += G.transpose() * R;
          }
          if (b.needs_grad()) {
            auto gb = b.grad_mut();
            T* gbrow = gb.data() + wch * outf;
            for (std::int64_t j = 0; j < outf; ++j) {
              double acc = 0;
              for (std::int64_t r = 0; r < blocks; ++r)
                acc += static_cast<double>(G(r, j));
              gbrow[j] += static_cast<T>(acc);
            }
          }
        }
    });
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>>
UniversalState<T>::named_params(const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  switch (kind) {
    case B1Kind::kFc1:
      out.emplace_back(prefix + ".fc1.weight", &weights[0]);
      out.emplace_back(prefix + ".fc1.bias", &biases[0]);
      break;
    case B1Kind::kFc2:
      out.emplace_back(prefix + ".fc1.weight", &weights[0]);
      out.emplace_back(prefix + ".fc1.bias", &biases[0]);
      out.emplace_back(prefix + ".fc2.weight", &weights[1]);
      out.emplace_back(prefix + ".fc2.bias", &biases[1]);
      break;
    case B1Kind::kConv:
      out.emplace_back(prefix + ".conv1.weight", &weights[0]);
      out.emplace_back(prefix + ".bn.gamma", &bn_gamma);
      out.emplace_back(prefix + ".bn.beta", &bn_beta);
      out.emplace_back(prefix + ".conv2.weight", &weights[1]);
      out.emplace_back(prefix + ".conv2.bias", &biases[0]);
      break;
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>>
UniversalState<T>::named_buffers(const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  if (kind == B1Kind::kConv) {
    out.emplace_back(prefix + ".bn.mean", &bn.mean);
    out.emplace_back(prefix + ".bn.var", &bn.var);
  }
  return out;
}

template <typename T>
UniversalState<T> make_universal(B1Kind kind, std::int64_t channels,
                                 std::int64_t s, bool shared, Rng& rng,
                                 std::int64_t hidden) {
  if (channels < 1 || s < 1)
    throw ShapeError("make_universal: channels " + std::to_string(channels) +
                     ", block " + std::to_string(s));
  UniversalState<T> st;
  st.kind = kind;
  st.channels = channels;
  st.s = s;
  st.shared = shared;
  const std::int64_t cw = shared ? 1 : channels;
  const std::int64_t s2 = s * s;
  auto uni = [&rng](Tensor<T>& t, std::int64_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.mut())
      v = static_cast<T>(rng.uniform(-limit, limit));
  };
  switch (kind) {
    case B1Kind::kFc1:
      st.hidden = 0;
      st.weights = {Tensor<T>::zeros({cw, s2, s2})};
      st.biases = {Tensor<T>::zeros({cw, s2})};
      break;
    case B1Kind::kFc2: {
      st.hidden = hidden > 0 ? hidden : s2;
      Tensor<T> w1({cw, st.hidden, s2});
      uni(w1, s2);
      st.weights = {w1, Tensor<T>::zeros({cw, s2, st.hidden})};
      st.biases = {Tensor<T>::zeros({cw, st.hidden}),
                   Tensor<T>::zeros({cw, s2})};
      break;
    }
    case B1Kind::kConv: {
      st.hidden = hidden > 0 ? hidden : 8;
      Tensor<T> w1({cw * st.hidden, 1, 3, 3});
      uni(w1, 9);
      st.weights = {w1, Tensor<T>::zeros({cw, st.hidden, 3, 3})};
      st.biases = {Tensor<T>::zeros({cw})};
      st.bn_gamma = Tensor<T>::full({cw * st.hidden}, T(1));
      st.bn_beta = Tensor<T>::zeros({cw * st.hidden});
      st.bn = BnStats<T>(cw * st.hidden);
      break;
    }
  }
  for (auto& [name, t] : st.named_params(""))
    t->set_requires_grad(true);
  return st;
}

template <typename T>
Tensor<T> b1_forward(const Tensor<T>& f, UniversalState<T>& st,
                     bool training) {
  if (f.shape().size() != 4)
    throw ShapeError("b1_forward: input " + shape_str(f.shape()));
  const auto n = f.extent(0), c = f.extent(1), h = f.extent(2),
             w = f.extent(3);
  if (c != st.channels)
    throw ShapeError("b1_forward: " + std::to_string(c) + " channels, state " +
                     std::to_string(st.channels));
  if (h % st.s != 0 || w % st.s != 0)
    throw ShapeError("b1_forward: " + shape_str(f.shape()) +
                     " not divisible into blocks of " + std::to_string(st.s));
  switch (st.kind) {
    case B1Kind::kFc1: {
      const std::int64_t blocks = (h / st.s) * (w / st.s);
      Tensor<T> rows = blocks_to_rows(f, st.s);
      Tensor<T> mapped =
          per_channel_linear(rows, st.weights[0], st.biases[0], n, c, blocks);
      return rows_to_blocks(mapped, st.s, n, c, h, w);
    }
    case B1Kind::kFc2: {
      const std::int64_t blocks = (h / st.s) * (w / st.s);
      Tensor<T> rows = blocks_to_rows(f, st.s);
      Tensor<T> hid = relu(
          per_channel_linear(rows, st.weights[0], st.biases[0], n, c, blocks));
      Tensor<T> mapped =
          per_channel_linear(hid, st.weights[1], st.biases[1], n, c, blocks);
      return rows_to_blocks(mapped, st.s, n, c, h, w);
    }
    case B1Kind::kConv: {
      if (st.shared) {
        Tensor<T> fr = f.reshape({n * c, 1, h, w});
        Tensor<T> y = conv2d(fr, st.weights[0], std::optional<Tensor<T>>{}, 1, 1, 1);
        y = batch_norm(y, st.bn_gamma, st.bn_beta, st.bn, training);
        y = relu(y);
        std::optional<Tensor<T>> bias(st.biases[0]);
        Tensor<T> fb = conv2d(y, st.weights[1], bias, 1, 1, 1);
        return fb.reshape({n, c, h, w});
      }
      Tensor<T> y = conv2d(f, st.weights[0], std::optional<Tensor<T>>{}, 1, 1, c);
      y = batch_norm(y, st.bn_gamma, st.bn_beta, st.bn, training);
      y = relu(y);
      std::optional<Tensor<T>> bias(st.biases[0]);
      return conv2d(y, st.weights[1], bias, 1, 1, c);
    }
  }
  throw ShapeError("b1_forward: bad kind");
}

template <typename T>
UniversalOut<T> universal_pool(const Tensor<T>& f, UniversalState<T>& st,
                               bool training) {
  Tensor<T> fc = crop_to_blocks(f, st.s);
  Tensor<T> fbar = b1_forward(fc, st, training);
  Tensor<T> pi = block_softmax(fbar, st.s);
  Tensor<T> o = block_weighted_sum(pi, fc, st.s);
  return {o, pi};
}

#define UNIPOOL_INST_POOL(T)                                                  \
  template Tensor<T> max_pool(const Tensor<T>&, std::int64_t);                \
  template Tensor<T> avg_pool(const Tensor<T>&, std::int64_t);                \
  template Tensor<T> stride_pool(const Tensor<T>&, std::int64_t,              \
                                 std::int64_t, std::int64_t);                 \
  template Tensor<T> mixed_pool(const Tensor<T>&, const Tensor<T>&,           \
                                std::int64_t);                                \
  template Tensor<T> gated_pool(const Tensor<T>&, const Tensor<T>&,           \
                                std::int64_t, bool);                          \
  template Tensor<T> block_softmax(const Tensor<T>&, std::int64_t);           \
  template Tensor<T> block_weighted_sum(const Tensor<T>&, const Tensor<T>&,   \
                                        std::int64_t);                        \
  template Tensor<T> blocks_to_rows(const Tensor<T>&, std::int64_t);          \
  template Tensor<T> rows_to_blocks(const Tensor<T>&, std::int64_t,           \
                                    std::int64_t, std::int64_t, std::int64_t, \
                                    std::int64_t);                            \
  template Tensor<T> per_channel_linear(const Tensor<T>&, const Tensor<T>&,   \
                                        const Tensor<T>&, std::int64_t,       \
                                        std::int64_t, std::int64_t);          \
  template struct UniversalState<T>;                                          \
  template UniversalState<T> make_universal<T>(B1Kind, std::int64_t,          \
                                               std::int64_t, bool, Rng&,      \
                                               std::int64_t);                 \
  template Tensor<T> b1_forward(const Tensor<T>&, UniversalState<T>&, bool);  \
  template struct UniversalOut<T>;                                            \
  template UniversalOut<T> universal_pool(const Tensor<T>&,                   \
                                          UniversalState<T>&, bool);

UNIPOOL_INST_POOL(float)
UNIPOOL_INST_POOL(double)
#undef UNIPOOL_INST_POOL

}  // namespace unipool
