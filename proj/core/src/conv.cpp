#include <Eigen/Core>

#include <string>
#include <vector>

#include "unipool/ops.hpp"

namespace unipool {
namespace {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvDims {
  std::int64_t n, c, h, w;
  std::int64_t f, cg, kh, kw;
  std::int64_t groups, fg;
  std::int64_t stride, pad;
  std::int64_t ho, wo;
};

// col[(cc*kh+r)*kw+q, y*wo+x] = x[n, g*cg+cc, y*s+r-p, x*s+q-p], 0 outside.
template <typename T>
void im2col(const T* px, const ConvDims& d, std::int64_t n, std::int64_t g,
            T* col) {
  const std::int64_t cols = d.ho * d.wo;
  for (std::int64_t cc = 0; cc < d.cg; ++cc) {
    const T* plane = px + ((n * d.c + g * d.cg + cc) * d.h * d.w);
    for (std::int64_t r = 0; r < d.kh; ++r) {
      for (std::int64_t q = 0; q < d.kw; ++q) {
        T* dst = col + (((cc * d.kh + r) * d.kw + q) * cols);
        for (std::int64_t y = 0; y < d.ho; ++y) {
          const std::int64_t sy = y * d.stride + r - d.pad;
          if (sy < 0 || sy >= d.h) {
            for (std::int64_t x = 0; x < d.wo; ++x) dst[y * d.wo + x] = T(0);
            continue;
          }
          for (std::int64_t x = 0; x < d.wo; ++x) {
            const std::int64_t sx = x * d.stride + q - d.pad;
            dst[y * d.wo + x] =
                (sx < 0 || sx >= d.w) ? T(0) : plane[sy * d.w + sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, std::int64_t n,
                std::int64_t g, T* gx) {
  const std::int64_t cols = d.ho * d.wo;
  for (std::int64_t cc = 0; cc < d.cg; ++cc) {
    T* plane = gx + ((n * d.c + g * d.cg + cc) * d.h * d.w);
    for (std::int64_t r = 0; r < d.kh; ++r) {
      for (std::int64_t q = 0; q < d.kw; ++q) {
        const T* src = col + (((cc * d.kh + r) * d.kw + q) * cols);
        for (std::int64_t y = 0; y < d.ho; ++y) {
          const std::int64_t sy = y * d.stride + r - d.pad;
          if (sy < 0 || sy >= d.h) continue;
          for (std::int64_t x = 0; x < d.wo; ++x) {
            const std::int64_t sx = x * d.stride + q - d.pad;
            if (sx < 0 || sx >= d.w) continue;
            plane[sy * d.w + sx] += src[y * d.wo + x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w,
                 const std::optional<Tensor<T>>& bias, std::int64_t stride,
                 std::int64_t pad, std::int64_t groups) {
  if (x.shape().size() != 4 || w.shape().size() != 4)
    throw ShapeError("conv2d: x " + shape_str(x.shape()) + ", w " +
                     shape_str(w.shape()));
  ConvDims d;
  d.n = x.extent(0);
  d.c = x.extent(1);
  d.h = x.extent(2);
  d.w = x.extent(3);
  d.f = w.extent(0);
  d.cg = w.extent(1);
  d.kh = w.extent(2);
  d.kw = w.extent(3);
  d.groups = groups;
  d.stride = stride;
  d.pad = pad;
  if (groups < 1 || d.c % groups != 0 || d.f % groups != 0 ||
      d.cg != d.c / groups)
    throw ShapeError("conv2d: " + std::to_string(d.c) + " channels, " +
                     std::to_string(d.f) + " filters of depth " +
                     std::to_string(d.cg) + ", groups " +
                     std::to_string(groups));
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: bad stride/pad");
  d.fg = d.f / groups;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.h + 2 * pad < d.kh || d.w + 2 * pad < d.kw || d.ho < 1 || d.wo < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(d.kh) + "x" +
                     std::to_string(d.kw) + " exceeds padded input " +
                     shape_str(x.shape()));
  if (bias && bias->shape() != Shape{d.f})
    throw ShapeError("conv2d: bias " + shape_str(bias->shape()) + " for " +
                     std::to_string(d.f) + " filters");

  const std::int64_t ckk = d.cg * d.kh * d.kw;
  const std::int64_t cols = d.ho * d.wo;
  Tensor<T> out({d.n, d.f, d.ho, d.wo});
  {
    std::vector<T> col(static_cast<std::size_t>(ckk * cols));
    auto px = x.data();
    auto pw = w.data();
    auto o = out.mut();
    for (std::int64_t i = 0; i < d.n; ++i) {
      for (std::int64_t g = 0; g < d.groups; ++g) {
        im2col(px.data(), d, i, g, col.data());
        ConstMatMap<T> W(pw.data() + g * d.fg * ckk, d.fg, ckk);
        ConstMatMap<T> C(col.data(), ckk, cols);
        MatMap<T> O(o.data() + ((i * d.f + g * d.fg) * cols), d.fg, cols);
        O.noalias() = W * C;
      }
    }
    if (bias) {
      auto pb = bias->data();
      for (std::int64_t i = 0; i < d.n; ++i)
        for (std::int64_t ff = 0; ff < d.f; ++ff) {
          T* plane = o.data() + ((i * d.f + ff) * cols);
          const T bv = pb[static_cast<std::size_t>(ff)];
          for (std::int64_t j = 0; j < cols; ++j) plane[j] += bv;
        }
    }
  }
  ensure_finite("conv2d", out);

  const bool need = x.needs_grad() || w.needs_grad() ||
                    (bias && bias->needs_grad());
  if (Tape<T>::current() != nullptr && need) {
    out.mark_in_graph();
    std::optional<Tensor<T>> b = bias;
    Tape<T>::current()->record("conv2d", [x, w, b, out, d, ckk,
                                          cols]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::vector<T> col(static_cast<std::size_t>(ckk * cols));
      auto px = x.data();
      auto pw = w.data();
      for (std::int64_t i = 0; i < d.n; ++i) {
        for (std::int64_t gr = 0; gr < d.groups; ++gr) {
          ConstMatMap<T> G(g.data() + ((i * d.f + gr * d.fg) * cols), d.fg,
                           cols);
          if (w.needs_grad()) {
            im2col(px.data(), d, i, gr, col.data());
            ConstMatMap<T> C(col.data(), ckk, cols);
            MatMap<T> GW(w.grad_mut().data() + gr * d.fg * ckk, d.fg, ckk);
            GW.noalias() += G * C.transpose();
          }
          if (x.needs_grad()) {
            ConstMatMap<T> W(pw.data() + gr * d.fg * ckk, d.fg, ckk);
            MatMap<T> GC(col.data(), ckk, cols);
            GC.noalias() = W.transpose() * G;
            col2im_add(col.data(), d, i, gr, x.grad_mut().data());
          }
        }
      }
      if (b && b->needs_grad()) {
        auto gb = b->grad_mut();
        for (std::int64_t ff = 0; ff < d.f; ++ff) {
          double acc = 0;
          for (std::int64_t i = 0; i < d.n; ++i) {
            const T* plane = g.data() + ((i * d.f + ff) * cols);
            for (std::int64_t j = 0; j < cols; ++j)
              acc += static_cast<double>(plane[j]);
          }
          gb[static_cast<std::size_t>(ff)] += static_cast<T>(acc);
        }
      }
    });
  }
  return out;
}

template Tensor<float> conv2d(const Tensor<float>&, const Tensor<float>&,
                              const std::optional<Tensor<float>>&,
                              std::int64_t, std::int64_t, std::int64_t);
template Tensor<double> conv2d(const Tensor<double>&, const Tensor<double>&,
                               const std::optional<Tensor<double>>&,
                               std::int64_t, std::int64_t, std::int64_t);

}  // namespace unipool
