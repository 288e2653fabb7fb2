#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pvqe/autodiff.hpp"
#include "pvqe/kernels.hpp"
#include "pvqe/tensor.hpp"

namespace pvqe {
namespace ops {

// Taped primitives. Forward math matches the streaming kernels frame for
// frame so the offline graph and the streaming engine agree bit for bit.

// Additive floor inside |.|^2 before the square root; keeps compressed-MSE
// gradients bounded at silent bins.
constexpr double kMagEps = 1e-12;

template <class T>
int add(Tape<T>& tp, int a, int b) {
  const auto& av = tp.val(a);
  const auto& bv = tp.val(b);
  if (!av.same_shape(bv)) throw InvalidInput("add: shape mismatch");
  Tensor<T> y = av;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] += bv.data[i];
  return tp.push(std::move(y), [a, b](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (size_t i = 0; i < gy.data.size(); ++i) {
      ga.data[i] += gy.data[i];
      gb.data[i] += gy.data[i];
    }
  });
}

template <class T>
int mul(Tape<T>& tp, int a, int b) {
  const auto& av = tp.val(a);
  const auto& bv = tp.val(b);
  if (!av.same_shape(bv)) throw InvalidInput("mul: shape mismatch");
  Tensor<T> y = av;
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] *= bv.data[i];
  return tp.push(std::move(y), [a, b](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& av = t.val(a);
    const auto& bv = t.val(b);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (size_t i = 0; i < gy.data.size(); ++i) {
      ga.data[i] += gy.data[i] * bv.data[i];
      gb.data[i] += gy.data[i] * av.data[i];
    }
  });
}

template <class T>
int sum(Tape<T>& tp, int x) {
  const auto& xv = tp.val(x);
  T acc = T(0);
  for (T v : xv.data) acc += v;
  return tp.push(Tensor<T>::scalar(acc), [x](Tape<T>& t, int self) {
    const T g = t.grad(self).data[0];
    auto& gx = t.grad(x);
    for (auto& v : gx.data) v += g;
  });
}

// [T, K] -> [K], arithmetic mean over rows.
template <class T>
int mean_rows(Tape<T>& tp, int x) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 2) throw InvalidInput("mean_rows: rank-2 tensor required");
  const int rows = xv.shape[0], cols = xv.shape[1];
  Tensor<T> y({cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) y(c) += xv(r, c);
  for (int c = 0; c < cols; ++c) y(c) /= T(rows);
  return tp.push(std::move(y), [x, rows, cols](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    const T inv = T(1) / T(rows);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) gx(r, c) += gy(c) * inv;
  });
}

// [D] -> [T, D]
template <class T>
int repeat_rows(Tape<T>& tp, int v, int rows) {
  const auto& vv = tp.val(v);
  if (vv.rank() != 1) throw InvalidInput("repeat_rows: rank-1 tensor required");
  const int d = vv.shape[0];
  Tensor<T> y({rows, d});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < d; ++c) y(r, c) = vv(c);
  return tp.push(std::move(y), [v, rows, d](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gv = t.grad(v);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < d; ++c) gv(c) += gy(r, c);
  });
}

// Affine map over the last axis. x: [T, I] or [I]; w: [O, I]; b: [O].
template <class T>
int linear(Tape<T>& tp, int x, int w, int b) {
  const auto& xv = tp.val(x);
  const auto& wv = tp.val(w);
  const auto& bv = tp.val(b);
  if (wv.rank() != 2) throw InvalidInput("linear: weight must be [O, I]");
  const int out_dim = wv.shape[0], in_dim = wv.shape[1];
  if (bv.rank() != 1 || bv.shape[0] != out_dim) throw InvalidInput("linear: bias shape mismatch");
  const bool vec = xv.rank() == 1;
  const int rows = vec ? 1 : xv.shape[0];
  if ((vec ? xv.shape[0] : xv.shape[1]) != in_dim)
    throw InvalidInput("linear: input inner dimension mismatch");
  Tensor<T> wt = transposed(wv);
  Tensor<T> y(vec ? std::vector<int>{out_dim} : std::vector<int>{rows, out_dim});
  for (int r = 0; r < rows; ++r)
    linear_t(wt.ptr(), bv.ptr(), xv.ptr() + size_t(r) * in_dim, in_dim, out_dim,
             y.ptr() + size_t(r) * out_dim);
  return tp.push(std::move(y), [x, w, b, rows, in_dim, out_dim](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.val(x);
    const auto& wv = t.val(w);
    auto& gx = t.grad(x);
    auto& gw = t.grad(w);
    auto& gb = t.grad(b);
    for (int r = 0; r < rows; ++r) {
      const T* gyr = gy.ptr() + size_t(r) * out_dim;
      const T* xr = xv.ptr() + size_t(r) * in_dim;
      T* gxr = gx.ptr() + size_t(r) * in_dim;
      for (int o = 0; o < out_dim; ++o) {
        const T g = gyr[o];
        if (g == T(0)) continue;
        const T* wrow = wv.ptr() + size_t(o) * in_dim;
        T* gwrow = gw.ptr() + size_t(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) {
          gxr[i] += g * wrow[i];
          gwrow[i] += g * xr[i];
        }
        gb(o) += g;
      }
    }
  });
}

template <class T>
int elu(Tape<T>& tp, int x) {
  const auto& xv = tp.val(x);
  Tensor<T> y = xv;
  elu_vec(xv.ptr(), int(xv.numel()), y.ptr());
  return tp.push(std::move(y), [x](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.val(x);
    const auto& yv = t.val(self);
    auto& gx = t.grad(x);
    for (size_t i = 0; i < gy.data.size(); ++i)
      gx.data[i] += gy.data[i] * (xv.data[i] > T(0) ? T(1) : yv.data[i] + T(1));
  });
}

// Normalize over the last axis (population variance), then scale/shift.
template <class T>
int layer_norm(Tape<T>& tp, int x, int gamma, int beta, T eps = T(1e-5)) {
  const auto& xv = tp.val(x);
  const auto& gv = tp.val(gamma);
  const auto& bv = tp.val(beta);
  const int d = xv.shape.back();
  if (gv.numel() != size_t(d) || bv.numel() != size_t(d))
    throw InvalidInput("layer_norm: gamma/beta length mismatch");
  const int rows = int(xv.numel()) / d;
  Tensor<T> y = xv;
  Tensor<T> stats({rows, 2});
  for (int r = 0; r < rows; ++r)
    layer_norm_vec(xv.ptr() + size_t(r) * d, d, gv.ptr(), bv.ptr(), eps, y.ptr() + size_t(r) * d,
                   &stats(r, 0), &stats(r, 1));
  const int id = tp.push(std::move(y), [x, gamma, beta, rows, d](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.val(x);
    const auto& gv = t.val(gamma);
    const auto& stats = t.saved(self, 0);
    auto& gx = t.grad(x);
    auto& gg = t.grad(gamma);
    auto& gb = t.grad(beta);
    std::vector<T> xhat(static_cast<size_t>(d)), gxh(static_cast<size_t>(d));
    for (int r = 0; r < rows; ++r) {
      const T mean = stats(r, 0), rstd = stats(r, 1);
      const T* xr = xv.ptr() + size_t(r) * d;
      const T* gyr = gy.ptr() + size_t(r) * d;
      T* gxr = gx.ptr() + size_t(r) * d;
      T s1 = T(0), s2 = T(0);
      for (int i = 0; i < d; ++i) {
        xhat[size_t(i)] = (xr[i] - mean) * rstd;
        gxh[size_t(i)] = gyr[i] * gv(i);
        gg(i) += gyr[i] * xhat[size_t(i)];
        gb(i) += gyr[i];
        s1 += gxh[size_t(i)];
        s2 += gxh[size_t(i)] * xhat[size_t(i)];
      }
      s1 /= T(d);
      s2 /= T(d);
      for (int i = 0; i < d; ++i)
        gxr[i] += rstd * (gxh[size_t(i)] - s1 - xhat[size_t(i)] * s2);
    }
  });
  tp.save(id, std::move(stats));
  return id;
}

// Exp-normalize over the last axis with max subtraction.
template <class T>
int softmax(Tape<T>& tp, int x) {
  const auto& xv = tp.val(x);
  const int d = xv.shape.back();
  const int rows = int(xv.numel()) / d;
  Tensor<T> y = xv;
  for (int r = 0; r < rows; ++r) softmax_vec(xv.ptr() + size_t(r) * d, d, y.ptr() + size_t(r) * d);
  return tp.push(std::move(y), [x, rows, d](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& yv = t.val(self);
    auto& gx = t.grad(x);
    for (int r = 0; r < rows; ++r) {
      const T* yr = yv.ptr() + size_t(r) * d;
      const T* gyr = gy.ptr() + size_t(r) * d;
      T* gxr = gx.ptr() + size_t(r) * d;
      T dot = T(0);
      for (int i = 0; i < d; ++i) dot += gyr[i] * yr[i];
      for (int i = 0; i < d; ++i) gxr[i] += yr[i] * (gyr[i] - dot);
    }
  });
}

// Causal 2-D convolution over a [C_in, T, F] sequence: temporal padding
// k_t - 1 entirely on the past side, symmetric frequency padding.
template <class T>
int conv2d_causal(Tape<T>& tp, int x, int w, int b, int stride_f) {
  const auto& xv = tp.val(x);
  const auto& wv = tp.val(w);
  const auto& bv = tp.val(b);
  if (xv.rank() != 3 || wv.rank() != 4) throw InvalidInput("conv2d_causal: bad ranks");
  const int c_in = xv.shape[0], tlen = xv.shape[1], f_in = xv.shape[2];
  const int c_out = wv.shape[0], k_t = wv.shape[2], k_f = wv.shape[3];
  if (wv.shape[1] != c_in) throw InvalidInput("conv2d_causal: channel mismatch");
  if (int(bv.numel()) != c_out) throw InvalidInput("conv2d_causal: bias mismatch");
  const int f_out = conv_out_freq(f_in, stride_f);
  Tensor<T> y({c_out, tlen, f_out});
  std::vector<T> zero_frame(size_t(c_in) * size_t(f_in), T(0));
  std::vector<const T*> frames(static_cast<size_t>(k_t));
  std::vector<T> frame_buf(size_t(k_t) * size_t(c_in) * size_t(f_in));
  std::vector<T> out_frame(size_t(c_out) * size_t(f_out));
  for (int t = 0; t < tlen; ++t) {
    // Gather the k_t-frame window ending at t; [C,T,F] layout is not
    // frame-contiguous, so copy rows.
    for (int kt = 0; kt < k_t; ++kt) {
      const int ts = t - (k_t - 1) + kt;
      T* dst = frame_buf.data() + size_t(kt) * c_in * f_in;
      if (ts < 0) {
        std::fill(dst, dst + size_t(c_in) * f_in, T(0));
      } else {
        for (int ci = 0; ci < c_in; ++ci)
          std::memcpy(dst + size_t(ci) * f_in, &xv(ci, ts, 0), size_t(f_in) * sizeof(T));
      }
      frames[size_t(kt)] = dst;
    }
    conv_frame<T>(wv.ptr(), bv.ptr(), frames, c_in, f_in, c_out, k_t, k_f, stride_f,
                  out_frame.data());
    for (int co = 0; co < c_out; ++co)
      std::memcpy(&y(co, t, 0), out_frame.data() + size_t(co) * f_out, size_t(f_out) * sizeof(T));
  }
  return tp.push(std::move(y),
                 [x, w, b, c_in, tlen, f_in, c_out, k_t, k_f, stride_f, f_out](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& xv = t.val(x);
    const auto& wv = t.val(w);
    auto& gx = t.grad(x);
    auto& gw = t.grad(w);
    auto& gb = t.grad(b);
    const int pad = k_f / 2;
    for (int tt = 0; tt < tlen; ++tt) {
      for (int co = 0; co < c_out; ++co) {
        const T* gyr = &gy(co, tt, 0);
        for (int fo = 0; fo < f_out; ++fo) gb(co) += gyr[fo];
        for (int ci = 0; ci < c_in; ++ci) {
          for (int kt = 0; kt < k_t; ++kt) {
            const int ts = tt - (k_t - 1) + kt;
            if (ts < 0) continue;
            const T* xr = &xv(ci, ts, 0);
            T* gxr = &gx(ci, ts, 0);
            for (int kf = 0; kf < k_f; ++kf) {
              const int off = kf - pad;
              int fo_lo = 0;
              if (off < 0) fo_lo = (-off + stride_f - 1) / stride_f;
              int fo_hi = (f_in - 1 - off) / stride_f;
              if (fo_hi > f_out - 1) fo_hi = f_out - 1;
              const T wv_s = wv(co, ci, kt, kf);
              T gacc = T(0);
              for (int fo = fo_lo; fo <= fo_hi; ++fo) {
                const int fi = fo * stride_f + off;
                gxr[fi] += wv_s * gyr[fo];
                gacc += gyr[fo] * xr[fi];
              }
              gw(co, ci, kt, kf) += gacc;
            }
          }
        }
      }
    }
  });
}

// [C*r, T, F] -> [C, T, F*r]
template <class T>
int pixel_shuffle_freq(Tape<T>& tp, int x, int r) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 3) throw InvalidInput("pixel_shuffle_freq: rank-3 tensor required");
  if (xv.shape[0] % r != 0) throw InvalidInput("pixel_shuffle_freq: channels not divisible by factor");
  const int c_out = xv.shape[0] / r, tlen = xv.shape[1], f_in = xv.shape[2];
  Tensor<T> y({c_out, tlen, f_in * r});
  for (int c = 0; c < c_out; ++c)
    for (int j = 0; j < r; ++j)
      for (int t = 0; t < tlen; ++t)
        for (int f = 0; f < f_in; ++f) y(c, t, f * r + j) = xv(c * r + j, t, f);
  return tp.push(std::move(y), [x, c_out, tlen, f_in, r](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    for (int c = 0; c < c_out; ++c)
      for (int j = 0; j < r; ++j)
        for (int tt = 0; tt < tlen; ++tt)
          for (int f = 0; f < f_in; ++f) gx(c * r + j, tt, f) += gy(c, tt, f * r + j);
  });
}

// Zero-pad the frequency axis (at the top) to f_new.
template <class T>
int pad_freq(Tape<T>& tp, int x, int f_new) {
  const auto& xv = tp.val(x);
  const int c = xv.shape[0], tlen = xv.shape[1], f = xv.shape[2];
  if (f_new < f) throw InvalidInput("pad_freq: target smaller than input");
  Tensor<T> y({c, tlen, f_new});
  for (int ci = 0; ci < c; ++ci)
    for (int t = 0; t < tlen; ++t)
      std::memcpy(&y(ci, t, 0), &xv(ci, t, 0), size_t(f) * sizeof(T));
  return tp.push(std::move(y), [x, c, tlen, f](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int tt = 0; tt < tlen; ++tt)
        for (int fi = 0; fi < f; ++fi) gx(ci, tt, fi) += gy(ci, tt, fi);
  });
}

// Keep the first f_new frequency bins.
template <class T>
int crop_freq(Tape<T>& tp, int x, int f_new) {
  const auto& xv = tp.val(x);
  const int c = xv.shape[0], tlen = xv.shape[1], f = xv.shape[2];
  if (f_new > f) throw InvalidInput("crop_freq: target larger than input");
  Tensor<T> y({c, tlen, f_new});
  for (int ci = 0; ci < c; ++ci)
    for (int t = 0; t < tlen; ++t)
      std::memcpy(&y(ci, t, 0), &xv(ci, t, 0), size_t(f_new) * sizeof(T));
  return tp.push(std::move(y), [x, c, tlen, f_new](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int tt = 0; tt < tlen; ++tt)
        for (int fi = 0; fi < f_new; ++fi) gx(ci, tt, fi) += gy(ci, tt, fi);
  });
}

// Concatenate along the channel axis: [C1,T,F] + [C2,T,F].
template <class T>
int concat_ch(Tape<T>& tp, int a, int b) {
  const auto& av = tp.val(a);
  const auto& bv = tp.val(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[1] != bv.shape[1] || av.shape[2] != bv.shape[2])
    throw InvalidInput("concat_ch: incompatible shapes");
  const int c1 = av.shape[0], c2 = bv.shape[0], tlen = av.shape[1], f = av.shape[2];
  Tensor<T> y({c1 + c2, tlen, f});
  std::memcpy(y.ptr(), av.ptr(), av.numel() * sizeof(T));
  std::memcpy(y.ptr() + av.numel(), bv.ptr(), bv.numel() * sizeof(T));
  return tp.push(std::move(y), [a, b, c1, c2, tlen, f](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    const size_t na = ga.numel();
    for (size_t i = 0; i < na; ++i) ga.data[i] += gy.data[i];
    for (size_t i = 0; i < gb.numel(); ++i) gb.data[i] += gy.data[na + i];
  });
}

// Concatenate along the last axis: [T,D1] + [T,D2].
template <class T>
int concat_cols(Tape<T>& tp, int a, int b) {
  const auto& av = tp.val(a);
  const auto& bv = tp.val(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[0] != bv.shape[0])
    throw InvalidInput("concat_cols: incompatible shapes");
  const int rows = av.shape[0], d1 = av.shape[1], d2 = bv.shape[1];
  Tensor<T> y({rows, d1 + d2});
  for (int r = 0; r < rows; ++r) {
    std::memcpy(&y(r, 0), &av(r, 0), size_t(d1) * sizeof(T));
    std::memcpy(&y(r, d1), &bv(r, 0), size_t(d2) * sizeof(T));
  }
  return tp.push(std::move(y), [a, b, rows, d1, d2](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& ga = t.grad(a);
    auto& gb = t.grad(b);
    for (int r = 0; r < rows; ++r) {
      for (int i = 0; i < d1; ++i) ga(r, i) += gy(r, i);
      for (int i = 0; i < d2; ++i) gb(r, i) += gy(r, d1 + i);
    }
  });
}

// [C, T, F] -> [T, C*F]: per-frame channel-major flatten.
template <class T>
int flatten_cf(Tape<T>& tp, int x) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 3) throw InvalidInput("flatten_cf: rank-3 tensor required");
  const int c = xv.shape[0], tlen = xv.shape[1], f = xv.shape[2];
  Tensor<T> y({tlen, c * f});
  for (int ci = 0; ci < c; ++ci)
    for (int t = 0; t < tlen; ++t)
      std::memcpy(&y(t, ci * f), &xv(ci, t, 0), size_t(f) * sizeof(T));
  return tp.push(std::move(y), [x, c, tlen, f](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int tt = 0; tt < tlen; ++tt)
        for (int fi = 0; fi < f; ++fi) gx(ci, tt, fi) += gy(tt, ci * f + fi);
  });
}

// [T, C*F] -> [C, T, F]
template <class T>
int unflatten_cf(Tape<T>& tp, int x, int c, int f) {
  const auto& xv = tp.val(x);
  if (xv.rank() != 2 || xv.shape[1] != c * f) throw InvalidInput("unflatten_cf: shape mismatch");
  const int tlen = xv.shape[0];
  Tensor<T> y({c, tlen, f});
  for (int ci = 0; ci < c; ++ci)
    for (int t = 0; t < tlen; ++t)
      std::memcpy(&y(ci, t, 0), &xv(t, ci * f), size_t(f) * sizeof(T));
  return tp.push(std::move(y), [x, c, tlen, f](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    auto& gx = t.grad(x);
    for (int ci = 0; ci < c; ++ci)
      for (int tt = 0; tt < tlen; ++tt)
        for (int fi = 0; fi < f; ++fi) gx(tt, ci * f + fi) += gy(ci, tt, fi);
  });
}

namespace detail {

// Shared GRU backward for one time step. Accumulates into the gradient
// buffers; `gh_in` is d(loss)/d(h_t) and `gh_prev_out` receives the carry
// into h_{t-1}.
template <class T>
void gru_step_backward(const T* gh_in, const T* x, const T* h_prev, const T* gates,
                       const Tensor<T>& wv, const Tensor<T>& uv, int in_dim, int hidden,
                       T* gx, T* gh_prev_out, Tensor<T>& gw, Tensor<T>& gu, Tensor<T>& gb,
                       Tensor<T>& gbhn) {
  const T* r = gates;
  const T* z = gates + hidden;
  const T* n = gates + 2 * hidden;
  const T* cn = gates + 3 * hidden;
  std::vector<T> ga(size_t(3) * hidden);   // d/d pre-activations (r, z, n)
  std::vector<T> gcn(static_cast<size_t>(hidden));      // d/d (U_n h + b_hn)
  for (int i = 0; i < hidden; ++i) {
    const T gh = gh_in[i];
    const T gz = gh * (h_prev[i] - n[i]);
    const T gn = gh * (T(1) - z[i]);
    const T gan = gn * (T(1) - n[i] * n[i]);
    const T gr = gan * cn[i];
    gcn[size_t(i)] = gan * r[i];
    ga[size_t(i)] = gr * r[i] * (T(1) - r[i]);
    ga[size_t(hidden + i)] = gz * z[i] * (T(1) - z[i]);
    ga[size_t(2 * hidden + i)] = gan;
    gh_prev_out[i] += gh * z[i];
  }
  // Input-side: gx += W^T ga; gW += ga x^T; gb += ga.
  for (int row = 0; row < 3 * hidden; ++row) {
    const T g = ga[size_t(row)];
    gb.data[size_t(row)] += g;
    if (g == T(0)) continue;
    const T* wrow = wv.ptr() + size_t(row) * in_dim;
    T* gwrow = gw.ptr() + size_t(row) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      gx[i] += g * wrow[i];
      gwrow[i] += g * x[i];
    }
  }
  // Recurrent side: rows r and z use ga, row n uses gcn.
  for (int row = 0; row < 3 * hidden; ++row) {
    const T g = row < 2 * hidden ? ga[size_t(row)] : gcn[size_t(row - 2 * hidden)];
    if (row >= 2 * hidden) gbhn.data[size_t(row - 2 * hidden)] += g;
    if (g == T(0)) continue;
    const T* urow = uv.ptr() + size_t(row) * hidden;
    T* guro = gu.ptr() + size_t(row) * hidden;
    for (int i = 0; i < hidden; ++i) {
      gh_prev_out[i] += g * urow[i];
      guro[i] += g * h_prev[i];
    }
  }
}

}  // namespace detail

// Single GRU step. x: [I], h: [H], w: [3H, I], u: [3H, H], b: [3H], bhn: [H].
template <class T>
int gru_step(Tape<T>& tp, int x, int h, int w, int u, int b, int bhn) {
  const auto& xv = tp.val(x);
  const auto& hv = tp.val(h);
  const auto& wv = tp.val(w);
  const auto& uv = tp.val(u);
  const auto& bv = tp.val(b);
  const auto& bhv = tp.val(bhn);
  const int in_dim = int(xv.numel());
  const int hidden = int(hv.numel());
  if (wv.rank() != 2 || wv.shape[0] != 3 * hidden || wv.shape[1] != in_dim ||
      uv.shape[0] != 3 * hidden || uv.shape[1] != hidden || int(bv.numel()) != 3 * hidden ||
      int(bhv.numel()) != hidden)
    throw InvalidInput("gru_step: parameter shapes inconsistent with input sizes");
  Tensor<T> wt = transposed(wv);
  Tensor<T> ut = transposed(uv);
  Tensor<T> hn({hidden});
  Tensor<T> gates({4 * hidden});
  gru_cell(wt.ptr(), ut.ptr(), bv.ptr(), bhv.ptr(), xv.ptr(), in_dim, hv.ptr(), hidden, hn.ptr(),
           gates.ptr());
  const int id = tp.push(std::move(hn), [x, h, w, u, b, bhn, in_dim, hidden](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& gates = t.saved(self, 0);
    detail::gru_step_backward(gy.ptr(), t.val(x).ptr(), t.val(h).ptr(), gates.ptr(), t.val(w),
                              t.val(u), in_dim, hidden, t.grad(x).ptr(), t.grad(h).ptr(),
                              t.grad(w), t.grad(u), t.grad(b), t.grad(bhn));
  });
  tp.save(id, std::move(gates));
  return id;
}

// Full GRU scan over a sequence, zero initial state. x: [T, I] -> [T, H].
// Backward is hand-rolled BPTT using the gates saved at each step.
template <class T>
int gru_seq(Tape<T>& tp, int x, int w, int u, int b, int bhn) {
  const auto& xv = tp.val(x);
  const auto& wv = tp.val(w);
  const auto& uv = tp.val(u);
  const auto& bv = tp.val(b);
  const auto& bhv = tp.val(bhn);
  if (xv.rank() != 2 || wv.rank() != 2) throw InvalidInput("gru_seq: bad ranks");
  const int tlen = xv.shape[0], in_dim = xv.shape[1];
  if (wv.shape[0] % 3 != 0) throw InvalidInput("gru_seq: weight rows not divisible by 3");
  const int hidden = wv.shape[0] / 3;
  if (wv.shape[1] != in_dim || uv.shape[0] != 3 * hidden || uv.shape[1] != hidden ||
      int(bv.numel()) != 3 * hidden || int(bhv.numel()) != hidden)
    throw InvalidInput("gru_seq: parameter shapes inconsistent");
  Tensor<T> wt = transposed(wv);
  Tensor<T> ut = transposed(uv);
  Tensor<T> hseq({tlen, hidden});
  Tensor<T> gates({tlen, 4 * hidden});
  std::vector<T> h(size_t(hidden), T(0));
  std::vector<T> scratch;
  for (int t = 0; t < tlen; ++t) {
    gru_cell(wt.ptr(), ut.ptr(), bv.ptr(), bhv.ptr(), xv.ptr() + size_t(t) * in_dim, in_dim,
             h.data(), hidden, &hseq(t, 0), &gates(t, 0), &scratch);
    std::memcpy(h.data(), &hseq(t, 0), size_t(hidden) * sizeof(T));
  }
  const int id = tp.push(std::move(hseq), [x, w, u, b, bhn, tlen, in_dim, hidden](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& gates = t.saved(self, 0);
    const auto& xv = t.val(x);
    const auto& hseq = t.val(self);
    auto& gx = t.grad(x);
    std::vector<T> gh(static_cast<size_t>(hidden)), gh_prev(size_t(hidden), T(0));
    std::vector<T> h0(size_t(hidden), T(0));
    for (int tt = tlen - 1; tt >= 0; --tt) {
      for (int i = 0; i < hidden; ++i) gh[size_t(i)] = gh_prev[size_t(i)] + gy(tt, i);
      std::fill(gh_prev.begin(), gh_prev.end(), T(0));
      const T* h_prev = tt > 0 ? &hseq(tt - 1, 0) : h0.data();
      detail::gru_step_backward(gh.data(), xv.ptr() + size_t(tt) * in_dim, h_prev, &gates(tt, 0),
                                t.val(w), t.val(u), in_dim, hidden,
                                gx.ptr() + size_t(tt) * in_dim, gh_prev.data(), t.grad(w),
                                t.grad(u), t.grad(b), t.grad(bhn));
    }
  });
  tp.save(id, std::move(gates));
  return id;
}

// Causal windowed cross-attention: for each frame t, softmax over the scores
// of the last `window` frames (fewer near the start) and average the values.
// q: [T, d], k: [T, d], v: [T, Dv] -> [T, Dv].
template <class T>
int windowed_attention(Tape<T>& tp, int q, int k, int v, int window) {
  const auto& qv = tp.val(q);
  const auto& kv = tp.val(k);
  const auto& vv = tp.val(v);
  if (qv.rank() != 2 || kv.rank() != 2 || vv.rank() != 2 || qv.shape != kv.shape ||
      vv.shape[0] != qv.shape[0])
    throw InvalidInput("windowed_attention: incompatible shapes");
  if (window < 1) throw InvalidInput("windowed_attention: window must be >= 1");
  const int tlen = qv.shape[0], d = qv.shape[1], dv = vv.shape[1];
  const T scale = T(1) / std::sqrt(T(d));
  Tensor<T> y({tlen, dv});
  Tensor<T> weights({tlen, window});  // ragged, column j is delay (count-1-j)
  std::vector<T> scores(static_cast<size_t>(window)), alpha(static_cast<size_t>(window));
  for (int t = 0; t < tlen; ++t) {
    const int t0 = std::max(0, t - window + 1);
    const int count = t - t0 + 1;
    for (int j = 0; j < count; ++j) {
      const T* qr = &qv(t, 0);
      const T* kr = &kv(t0 + j, 0);
      T s = T(0);
      for (int i = 0; i < d; ++i) s += qr[i] * kr[i];
      scores[size_t(j)] = s * scale;
    }
    softmax_vec(scores.data(), count, alpha.data());
    T* yr = &y(t, 0);
    std::fill(yr, yr + dv, T(0));
    for (int j = 0; j < count; ++j) {
      const T a = alpha[size_t(j)];
      weights(t, j) = a;
      const T* vr = &vv(t0 + j, 0);
      for (int i = 0; i < dv; ++i) yr[i] += a * vr[i];
    }
  }
  const int id = tp.push(std::move(y), [q, k, v, window, tlen, d, dv, scale](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& weights = t.saved(self, 0);
    const auto& qv = t.val(q);
    const auto& kv = t.val(k);
    const auto& vv = t.val(v);
    auto& gq = t.grad(q);
    auto& gk = t.grad(k);
    auto& gv = t.grad(v);
    std::vector<T> galpha(static_cast<size_t>(window)), gs(static_cast<size_t>(window));
    for (int tt = 0; tt < tlen; ++tt) {
      const int t0 = std::max(0, tt - window + 1);
      const int count = tt - t0 + 1;
      const T* gyr = &gy(tt, 0);
      T dot = T(0);
      for (int j = 0; j < count; ++j) {
        const T* vr = &vv(t0 + j, 0);
        T ga = T(0);
        for (int i = 0; i < dv; ++i) ga += gyr[i] * vr[i];
        galpha[size_t(j)] = ga;
        dot += ga * weights(tt, j);
        T* gvr = &gv(t0 + j, 0);
        const T a = weights(tt, j);
        for (int i = 0; i < dv; ++i) gvr[i] += a * gyr[i];
      }
      for (int j = 0; j < count; ++j) gs[size_t(j)] = weights(tt, j) * (galpha[size_t(j)] - dot);
      T* gqr = &gq(tt, 0);
      const T* qr = &qv(tt, 0);
      for (int j = 0; j < count; ++j) {
        const T g = gs[size_t(j)] * scale;
        const T* kr = &kv(t0 + j, 0);
        T* gkr = &gk(t0 + j, 0);
        for (int i = 0; i < d; ++i) {
          gqr[i] += g * kr[i];
          gkr[i] += g * qr[i];
        }
      }
    }
  });
  tp.save(id, std::move(weights));
  return id;
}

// Complex convolving mask over a sequence. m: [2*taps_t*taps_f, T, F]
// coefficients, x: [2, T, F] spectrum (re, im planes); causal in time,
// zero-padded at the frequency edges.
template <class T>
int apply_ccm(Tape<T>& tp, int m, int x, int taps_t, int taps_f) {
  const auto& mv = tp.val(m);
  const auto& xv = tp.val(x);
  if (mv.rank() != 3 || xv.rank() != 3 || xv.shape[0] != 2 ||
      mv.shape[0] != 2 * taps_t * taps_f || mv.shape[1] != xv.shape[1] ||
      mv.shape[2] != xv.shape[2])
    throw InvalidInput("apply_ccm: incompatible shapes");
  const int tlen = xv.shape[1], bins = xv.shape[2];
  const int pad = taps_f / 2;
  Tensor<T> y({2, tlen, bins});
  for (int t = 0; t < tlen; ++t) {
    for (int dt = 0; dt < taps_t; ++dt) {
      const int ts = t - dt;
      if (ts < 0) continue;
      const T* xre = &xv(0, ts, 0);
      const T* xim = &xv(1, ts, 0);
      for (int j = 0; j < taps_f; ++j) {
        const int df = j - pad;
        const T* mre = &mv(2 * (dt * taps_f + j), t, 0);
        const T* mim = &mv(2 * (dt * taps_f + j) + 1, t, 0);
        T* yre = &y(0, t, 0);
        T* yim = &y(1, t, 0);
        const int f_lo = std::max(0, -df);
        const int f_hi = std::min(bins, bins - df);
        for (int f = f_lo; f < f_hi; ++f) {
          const T xr = xre[f + df], xi = xim[f + df];
          yre[f] += mre[f] * xr - mim[f] * xi;
          yim[f] += mre[f] * xi + mim[f] * xr;
        }
      }
    }
  }
  return tp.push(std::move(y), [m, x, taps_t, taps_f, tlen, bins, pad](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& mv = t.val(m);
    const auto& xv = t.val(x);
    auto& gm = t.grad(m);
    auto& gx = t.grad(x);
    for (int tt = 0; tt < tlen; ++tt) {
      const T* gyre = &gy(0, tt, 0);
      const T* gyim = &gy(1, tt, 0);
      for (int dt = 0; dt < taps_t; ++dt) {
        const int ts = tt - dt;
        if (ts < 0) continue;
        const T* xre = &xv(0, ts, 0);
        const T* xim = &xv(1, ts, 0);
        T* gxre = &gx(0, ts, 0);
        T* gxim = &gx(1, ts, 0);
        for (int j = 0; j < taps_f; ++j) {
          const int df = j - pad;
          const T* mre = &mv(2 * (dt * taps_f + j), tt, 0);
          const T* mim = &mv(2 * (dt * taps_f + j) + 1, tt, 0);
          T* gmre = &gm(2 * (dt * taps_f + j), tt, 0);
          T* gmim = &gm(2 * (dt * taps_f + j) + 1, tt, 0);
          const int f_lo = std::max(0, -df);
          const int f_hi = std::min(bins, bins - df);
          for (int f = f_lo; f < f_hi; ++f) {
            const T xr = xre[f + df], xi = xim[f + df];
            const T gr = gyre[f], gi = gyim[f];
            gmre[f] += gr * xr + gi * xi;
            gmim[f] += -gr * xi + gi * xr;
            gxre[f + df] += gr * mre[f] + gi * mim[f];
            gxim[f + df] += -gr * mim[f] + gi * mre[f];
          }
        }
      }
    }
  });
}

// Complex compressed MSE between an estimated spectrogram node and a fixed
// target, both [2, T, F] uncompressed:
//   L = (1-beta) * mean((|S|^c - |E|^c)^2) + beta * mean(||S|^c e^{j th_S} - |E|^c e^{j th_E}|^2)
// Magnitudes are smoothed with a 1e-12 additive floor inside the square root
// so the gradient stays bounded at silent bins.
template <class T>
int compressed_mse(Tape<T>& tp, int est, const Tensor<T>& target, double c, double beta) {
  const auto& ev = tp.val(est);
  if (ev.rank() != 3 || ev.shape[0] != 2 || !ev.same_shape(target))
    throw InvalidInput("compressed_mse: estimate/target shape mismatch");
  const int tlen = ev.shape[1], bins = ev.shape[2];
  const double n_bins = double(tlen) * double(bins);
  // Precompute the compressed target once; it is shared by value and grad.
  Tensor<T> tcomp({3, tlen, bins});  // (re_c, im_c, mag_c)
  for (int t = 0; t < tlen; ++t)
    for (int f = 0; f < bins; ++f) {
      const double sr = double(target(0, t, f)), si = double(target(1, t, f));
      const double m = std::sqrt(sr * sr + si * si + kMagEps);
      const double mc = std::pow(m, c);
      const double s = mc / m;
      tcomp(0, t, f) = T(sr * s);
      tcomp(1, t, f) = T(si * s);
      tcomp(2, t, f) = T(mc);
    }
  double acc = 0.0;
  for (int t = 0; t < tlen; ++t)
    for (int f = 0; f < bins; ++f) {
      const double er = double(ev(0, t, f)), ei = double(ev(1, t, f));
      const double m = std::sqrt(er * er + ei * ei + kMagEps);
      const double mc = std::pow(m, c);
      const double s = mc / m;
      const double dre = er * s - double(tcomp(0, t, f));
      const double dim = ei * s - double(tcomp(1, t, f));
      const double dmag = mc - double(tcomp(2, t, f));
      acc += (1.0 - beta) * dmag * dmag + beta * (dre * dre + dim * dim);
    }
  const int id = tp.push(Tensor<T>::scalar(T(acc / n_bins)),
                         [est, c, beta, tlen, bins, n_bins](Tape<T>& t, int self) {
    const T g = t.grad(self).data[0];
    const auto& ev = t.val(est);
    const auto& tcomp = t.saved(self, 0);
    auto& ge = t.grad(est);
    const double scale = double(g) / n_bins;
    for (int tt = 0; tt < tlen; ++tt)
      for (int f = 0; f < bins; ++f) {
        const double er = double(ev(0, tt, f)), ei = double(ev(1, tt, f));
        const double m2 = er * er + ei * ei + kMagEps;
        const double m = std::sqrt(m2);
        const double mc = std::pow(m, c);
        const double s = mc / m;            // m^(c-1)
        const double ecr = er * s, eci = ei * s;
        const double dre = ecr - double(tcomp(0, tt, f));
        const double dim = eci - double(tcomp(1, tt, f));
        const double dmag = mc - double(tcomp(2, tt, f));
        // d|E|^c/dre = c m^(c-2) re, and dE_c/dre per the product rule.
        const double mcm2 = s / m;          // m^(c-2)
        const double da_dr = c * mcm2 * er;
        const double da_di = c * mcm2 * ei;
        const double common = (c - 1.0) * mcm2 / m;
        const double dr_re = s + er * er * common;
        const double di_re = ei * er * common;
        const double dr_im = er * ei * common;
        const double di_im = s + ei * ei * common;
        const double grad_re = 2.0 * (1.0 - beta) * dmag * da_dr +
                               2.0 * beta * (dre * dr_re + dim * di_re);
        const double grad_im = 2.0 * (1.0 - beta) * dmag * da_di +
                               2.0 * beta * (dre * dr_im + dim * di_im);
        ge(0, tt, f) += T(scale * grad_re);
        ge(1, tt, f) += T(scale * grad_im);
      }
  });
  tp.save(id, std::move(tcomp));
  return id;
}

}  // namespace ops
}  // namespace pvqe
