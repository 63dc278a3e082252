#include "unipool/ops.hpp"

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

template <typename T>
bool recording(bool any_input_needs_grad) {
  return Tape<T>::current() != nullptr && any_input_needs_grad;
}

template <typename T>
void record(const char* op, std::function<void()> fn) {
  Tape<T>::current()->record(op, std::move(fn));
}

template <typename T>
void check_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!same_shape(a.shape(), b.shape()))
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same("add", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mut();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
  ensure_finite("add", out);
  if (recording<T>(a.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    record<T>("add", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.needs_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.needs_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_same("sub", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mut();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] - pb[i];
  ensure_finite("sub", out);
  if (recording<T>(a.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    record<T>("sub", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.needs_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.needs_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same("mul", a, b);
  Tensor<T> out(a.shape());
  auto o = out.mut();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
  ensure_finite("mul", out);
  if (recording<T>(a.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    record<T>("mul", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto pa = a.data();
      auto pb = b.data();
      if (a.needs_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
      }
      if (b.needs_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * px[i];
  ensure_finite("scale", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("scale", [x, out, c]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = px[i] + c;
  ensure_finite("add_scalar", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("add_scalar", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmul(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1)
    throw ShapeError("bmul: scalar operand has shape " + shape_str(s.shape()));
  const T sv = s.data()[0];
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = sv * px[i];
  ensure_finite("bmul", out);
  if (recording<T>(x.needs_grad() || s.needs_grad())) {
    out.mark_in_graph();
    record<T>("bmul", [x, s, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = x.data();
      const T sv = s.data()[0];
      if (x.needs_grad()) {
        auto gx = x.grad_mut();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
      }
      if (s.needs_grad()) {
        double acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i)
          acc += static_cast<double>(g[i]) * static_cast<double>(px[i]);
        s.grad_mut()[0] += static_cast<T>(acc);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = px[i] > T(0) ? px[i] : T(0);
  if (BranchTrace::current() != nullptr) {
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      word = (word << 1) | static_cast<std::uint64_t>(px[i] > T(0));
      if ((i & 63u) == 63u) {
        branch_feed(word);
        word = 0;
      }
    }
    branch_feed(word ^ (0xb5ull + o.size()));
  }
  ensure_finite("relu", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("relu", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = x.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (px[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T v = px[i];
    if (v >= T(0)) {
      o[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      o[i] = e / (T(1) + e);
    }
  }
  ensure_finite("sigmoid", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("sigmoid", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto po = out.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * po[i] * (T(1) - po[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> vexp(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto px = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::exp(px[i]);
  ensure_finite("exp", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("exp", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto po = out.data();
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * po[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.data()) acc += static_cast<double>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  ensure_finite("sum", out);
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("sum", [x, out]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto gx = x.grad_mut();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 ||
      a.extent(1) != b.extent(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto n = a.extent(0), k = a.extent(1), m = b.extent(1);
  Tensor<T> out({n, m});
  {
    ConstMatMap<T> A(a.data().data(), n, k), B(b.data().data(), k, m);
    MatMap<T> O(out.mut().data(), n, m);
    O.noalias() = A * B;
  }
  ensure_finite("matmul", out);
  if (recording<T>(a.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    record<T>("matmul", [a, b, out, n, k, m]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<T> G(out.grad().data(), n, m);
      if (a.needs_grad()) {
        ConstMatMap<T> B(b.data().data(), k, m);
        MatMap<T> GA(a.grad_mut().data(), n, k);
        GA.noalias() += G * B.transpose();
      }
      if (b.needs_grad()) {
        ConstMatMap<T> A(a.data().data(), n, k);
        MatMap<T> GB(b.grad_mut().data(), k, m);
        GB.noalias() += A.transpose() * G;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 ||
      b.shape().size() != 1 || x.extent(1) != w.extent(1) ||
      b.extent(0) != w.extent(0))
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", w " +
                     shape_str(w.shape()) + ", b " + shape_str(b.shape()));
  const auto n = x.extent(0), in = x.extent(1), outf = w.extent(0);
  Tensor<T> out({n, outf});
  {
    ConstMatMap<T> X(x.data().data(), n, in), W(w.data().data(), outf, in);
    MatMap<T> O(out.mut().data(), n, outf);
    O.noalias() = X * W.transpose();
    auto pb = b.data();
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < outf; ++j)
        O(i, j) += pb[static_cast<std::size_t>(j)];
  }
  ensure_finite("linear", out);
  if (recording<T>(x.needs_grad() || w.needs_grad() || b.needs_grad())) {
    out.mark_in_graph();
    record<T>("linear", [x, w, b, out, n, in, outf]() mutable {
      if (!out.has_grad()) return;
      ConstMatMap<T> G(out.grad().data(), n, outf);
      if (x.needs_grad()) {
        ConstMatMap<T> W(w.data().data(), outf, in);
        MatMap<T> GX(x.grad_mut().data(), n, in);
        GX.noalias() += G * W;
      }
      if (w.needs_grad()) {
        ConstMatMap<T> X(x.data().data(), n, in);
        MatMap<T> GW(w.grad_mut().data(), outf, in);
        GW.noalias() += G.transpose() * X;
      }
      if (b.needs_grad()) {
        auto gb = b.grad_mut();
        for (std::int64_t j = 0; j < outf; ++j) {
          double acc = 0;
          for (std::int64_t i = 0; i < n; ++i)
            acc += static_cast<double>(G(i, j));
          gb[static_cast<std::size_t>(j)] += static_cast<T>(acc);
        }
      }
    });
  }
  return out;
}

template <typename T>
BnStats<T>::BnStats(std::int64_t channels)
    : mean(Tensor<T>::zeros({channels})),
      var(Tensor<T>::full({channels}, T(1))) {}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BnStats<T>& stats, bool training,
                     T momentum, T eps) {
  if (x.shape().size() != 4)
    throw ShapeError("batch_norm: input " + shape_str(x.shape()));
  const auto n = x.extent(0), c = x.extent(1), h = x.extent(2),
             w = x.extent(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c} ||
      stats.mean.shape() != Shape{c} || stats.var.shape() != Shape{c})
    throw ShapeError("batch_norm: parameter shapes do not match channels " +
                     std::to_string(c));
  const std::int64_t plane = h * w;
  const std::int64_t m = n * plane;

  std::vector<T> mean_v(static_cast<std::size_t>(c)),
      inv_v(static_cast<std::size_t>(c));
  auto px = x.data();
  if (training) {
    auto rm = stats.mean.mut();
    auto rv = stats.var.mut();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0, s2 = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = px.data() + ((i * c + ch) * plane);
        for (std::int64_t j = 0; j < plane; ++j) {
          const double v = static_cast<double>(p[j]);
          s += v;
          s2 += v * v;
        }
      }
      const double mu = s / static_cast<double>(m);
      double var = s2 / static_cast<double>(m) - mu * mu;
      if (var < 0) var = 0;
      mean_v[static_cast<std::size_t>(ch)] = static_cast<T>(mu);
      inv_v[static_cast<std::size_t>(ch)] =
          static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      rm[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * rm[static_cast<std::size_t>(ch)] +
          momentum * static_cast<T>(mu);
      rv[static_cast<std::size_t>(ch)] =
          (T(1) - momentum) * rv[static_cast<std::size_t>(ch)] +
          momentum * static_cast<T>(var);
    }
  } else {
    auto rm = stats.mean.data();
    auto rv = stats.var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean_v[static_cast<std::size_t>(ch)] = rm[static_cast<std::size_t>(ch)];
      inv_v[static_cast<std::size_t>(ch)] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(rv[static_cast<std::size_t>(ch)]) +
                          static_cast<double>(eps)));
    }
  }

  Tensor<T> out(x.shape());
  auto o = out.mut();
  auto pg = gamma.data();
  auto pb = beta.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T mu = mean_v[static_cast<std::size_t>(ch)];
      const T inv = inv_v[static_cast<std::size_t>(ch)];
      const T ga = pg[static_cast<std::size_t>(ch)];
      const T be = pb[static_cast<std::size_t>(ch)];
      const T* p = px.data() + ((i * c + ch) * plane);
      T* po = o.data() + ((i * c + ch) * plane);
      for (std::int64_t j = 0; j < plane; ++j)
        po[j] = ga * ((p[j] - mu) * inv) + be;
    }
  }
  ensure_finite("batch_norm", out);

  if (recording<T>(x.needs_grad() || gamma.needs_grad() ||
                   beta.needs_grad())) {
    out.mark_in_graph();
    record<T>("batch_norm",
              [x, gamma, beta, out, mean_v, inv_v, training, n, c,
               plane]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto px = x.data();
      auto pg = gamma.data();
      const std::int64_t m = n * plane;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const T mu = mean_v[static_cast<std::size_t>(ch)];
        const T inv = inv_v[static_cast<std::size_t>(ch)];
        const T ga = pg[static_cast<std::size_t>(ch)];
        double sum_g = 0, sum_gx = 0;
        for (std::int64_t i = 0; i < n; ++i) {
          const T* pgrow = g.data() + ((i * c + ch) * plane);
          const T* pxrow = px.data() + ((i * c + ch) * plane);
          for (std::int64_t j = 0; j < plane; ++j) {
            const double gv = static_cast<double>(pgrow[j]);
            const double xh =
                static_cast<double>((pxrow[j] - mu) * inv);
            sum_g += gv;
            sum_gx += gv * xh;
          }
        }
        if (gamma.needs_grad())
          gamma.grad_mut()[static_cast<std::size_t>(ch)] +=
              static_cast<T>(sum_gx);
        if (beta.needs_grad())
          beta.grad_mut()[static_cast<std::size_t>(ch)] +=
              static_cast<T>(sum_g);
        if (x.needs_grad()) {
          auto gx = x.grad_mut();
          const double mean_g = sum_g / static_cast<double>(m);
          const double mean_gx = sum_gx / static_cast<double>(m);
          for (std::int64_t i = 0; i < n; ++i) {
            const T* pgrow = g.data() + ((i * c + ch) * plane);
            const T* pxrow = px.data() + ((i * c + ch) * plane);
            T* pox = gx.data() + ((i * c + ch) * plane);
            for (std::int64_t j = 0; j < plane; ++j) {
              const double xh =
                  static_cast<double>((pxrow[j] - mu) * inv);
              double dx;
              if (training) {
                dx = static_cast<double>(ga) * static_cast<double>(inv) *
                     (static_cast<double>(pgrow[j]) - mean_g - xh * mean_gx);
              } else {
                dx = static_cast<double>(ga) * static_cast<double>(inv) *
                     static_cast<double>(pgrow[j]);
              }
              pox[j] += static_cast<T>(dx);
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<std::int32_t>& labels) {
  if (logits.shape().size() != 2)
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()));
  const auto n = logits.extent(0), k = logits.extent(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (const auto l : labels)
    if (l < 0 || l >= k)
      throw DataError("cross_entropy: label " + std::to_string(l) +
                      " outside [0," + std::to_string(k) + ")");
  auto px = logits.data();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = px.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double se = 0;
    for (std::int64_t j = 0; j < k; ++j)
      se += std::exp(static_cast<double>(row[j] - mx));
    acc += std::log(se) -
           static_cast<double>(row[labels[static_cast<std::size_t>(i)]] - mx);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  ensure_finite("cross_entropy", out);
  if (recording<T>(logits.needs_grad())) {
    out.mark_in_graph();
    record<T>("cross_entropy", [logits, labels, out, n, k]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0];
      auto px = logits.data();
      auto gx = logits.grad_mut();
      for (std::int64_t i = 0; i < n; ++i) {
        const T* row = px.data() + i * k;
        T* grow = gx.data() + i * k;
        T mx = row[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double se = 0;
        for (std::int64_t j = 0; j < k; ++j)
          se += std::exp(static_cast<double>(row[j] - mx));
        for (std::int64_t j = 0; j < k; ++j) {
          const double soft =
              std::exp(static_cast<double>(row[j] - mx)) / se;
          const double ind =
              (j == labels[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
          grow[j] += static_cast<T>(static_cast<double>(g) * (soft - ind) /
                                    static_cast<double>(n));
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> crop2d(const Tensor<T>& x, std::int64_t h2, std::int64_t w2) {
  if (x.shape().size() != 4)
    throw ShapeError("crop2d: input " + shape_str(x.shape()));
  const auto n = x.extent(0), c = x.extent(1), h = x.extent(2),
             w = x.extent(3);
  if (h2 < 1 || w2 < 1 || h2 > h || w2 > w)
    throw ShapeError("crop2d: region " + std::to_string(h2) + "x" +
                     std::to_string(w2) + " from " + shape_str(x.shape()));
  if (h2 == h && w2 == w) return x;
  Tensor<T> out({n, c, h2, w2});
  auto o = out.mut();
  auto px = x.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t r = 0; r < h2; ++r) {
        const T* src = px.data() + (((i * c + ch) * h + r) * w);
        T* dst = o.data() + (((i * c + ch) * h2 + r) * w2);
        for (std::int64_t q = 0; q < w2; ++q) dst[q] = src[q];
      }
  if (recording<T>(x.needs_grad())) {
    out.mark_in_graph();
    record<T>("crop2d", [x, out, n, c, h, w, h2, w2]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_mut();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t r = 0; r < h2; ++r) {
            const T* src = g.data() + (((i * c + ch) * h2 + r) * w2);
            T* dst = gx.data() + (((i * c + ch) * h + r) * w);
            for (std::int64_t q = 0; q < w2; ++q) dst[q] += src[q];
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.shape().size() != 2)
    throw ShapeError("softmax_rows: logits " + shape_str(logits.shape()));
  const auto n = logits.extent(0), k = logits.extent(1);
  Tensor<T> out(logits.shape());
  auto o = out.mut();
  auto px = logits.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = px.data() + i * k;
    T* po = o.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double se = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      const double e = std::exp(static_cast<double>(row[j] - mx));
      po[j] = static_cast<T>(e);
      se += e;
    }
    for (std::int64_t j = 0; j < k; ++j)
      po[j] = static_cast<T>(static_cast<double>(po[j]) / se);
  }
  ensure_finite("softmax_rows", out);
  return out;
}

#define UNIPOOL_INST_OPS(T)                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> scale(const Tensor<T>&, T);                            \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                       \
  template Tensor<T> bmul(const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> relu(const Tensor<T>&);                                \
  template Tensor<T> sigmoid(const Tensor<T>&);                             \
  template Tensor<T> vexp(const Tensor<T>&);                                \
  template Tensor<T> sum(const Tensor<T>&);                                 \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,             \
                            const Tensor<T>&);                              \
  template struct BnStats<T>;                                               \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&,         \
                                const Tensor<T>&, BnStats<T>&, bool, T, T); \
  template Tensor<T> cross_entropy(const Tensor<T>&,                        \
                                   const std::vector<std::int32_t>&);       \
  template Tensor<T> crop2d(const Tensor<T>&, std::int64_t, std::int64_t);  \
  template Tensor<T> softmax_rows(const Tensor<T>&);

UNIPOOL_INST_OPS(float)
UNIPOOL_INST_OPS(double)
#undef UNIPOOL_INST_OPS

}  // namespace unipool
