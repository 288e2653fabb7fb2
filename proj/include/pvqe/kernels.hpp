#pragma once

#include <cmath>
#include <cstring>
#include <span>
#include <vector>

#include "pvqe/tensor.hpp"

namespace pvqe {

// Per-frame math kernels shared by the streaming engine and the offline
// training graph. Inner loops accumulate into unit-stride output rows
// (axpy form), which vectorizes far better here than row dot products.

template <class T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <class T>
inline T elu_scalar(T x) {
  return x > T(0) ? x : std::exp(x) - T(1);
}

template <class T>
inline void elu_vec(const T* x, int n, T* y) {
  for (int i = 0; i < n; ++i) y[i] = elu_scalar(x[i]);
}

// y[o] += sum_i Wt[i][o] * x[i], Wt is the [I, O] transposed weight.
template <class T>
inline void matvec_t_acc(const T* wt, const T* x, int in_dim, int out_dim, T* y) {
  for (int i = 0; i < in_dim; ++i) {
    const T xi = x[i];
    const T* row = wt + size_t(i) * size_t(out_dim);
    for (int o = 0; o < out_dim; ++o) y[o] += row[o] * xi;
  }
}

// y = b + W x with W given transposed.
template <class T>
inline void linear_t(const T* wt, const T* b, const T* x, int in_dim, int out_dim, T* y) {
  if (b)
    std::memcpy(y, b, size_t(out_dim) * sizeof(T));
  else
    std::fill(y, y + out_dim, T(0));
  matvec_t_acc(wt, x, in_dim, out_dim, y);
}

// One time step of a causal 2-D convolution. `frames` holds k_t input frames
// oldest-first, each [c_in, f_in] row-major; output frame is [c_out, f_out]
// with f_out = ceil(f_in / stride_f) and symmetric frequency padding
// floor(k_f / 2).
template <class T>
inline void conv_frame(const T* w, const T* bias, std::span<const T* const> frames, int c_in,
                       int f_in, int c_out, int k_t, int k_f, int stride_f, T* out) {
  const int f_out = (f_in + stride_f - 1) / stride_f;
  const int pad = k_f / 2;
  for (int co = 0; co < c_out; ++co) {
    T* orow = out + size_t(co) * size_t(f_out);
    const T bv = bias ? bias[co] : T(0);
    std::fill(orow, orow + f_out, bv);
    for (int ci = 0; ci < c_in; ++ci) {
      for (int kt = 0; kt < k_t; ++kt) {
        const T* irow = frames[size_t(kt)] + size_t(ci) * size_t(f_in);
        const T* wrow = w + ((size_t(co) * c_in + ci) * k_t + kt) * size_t(k_f);
        for (int kf = 0; kf < k_f; ++kf) {
          const T wv = wrow[kf];
          const int off = kf - pad;
          // valid fo range: 0 <= fo*stride_f + off <= f_in - 1
          int fo_lo = 0;
          if (off < 0) fo_lo = (-off + stride_f - 1) / stride_f;
          int fo_hi = (f_in - 1 - off) / stride_f;  // inclusive
          if (fo_hi > f_out - 1) fo_hi = f_out - 1;
          const T* ip = irow + off;
          if (stride_f == 1) {
            for (int fo = fo_lo; fo <= fo_hi; ++fo) orow[fo] += wv * ip[fo];
          } else {
            for (int fo = fo_lo; fo <= fo_hi; ++fo) orow[fo] += wv * ip[size_t(fo) * stride_f];
          }
        }
      }
    }
  }
}

inline int conv_out_freq(int f_in, int stride_f) { return (f_in + stride_f - 1) / stride_f; }

// Normalize over the last axis (length d), then affine. Optionally returns
// mean and reciprocal std for backward passes.
template <class T>
inline void layer_norm_vec(const T* x, int d, const T* gamma, const T* beta, T eps, T* y,
                           T* save_mean = nullptr, T* save_rstd = nullptr) {
  T mean = T(0);
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= T(d);
  T var = T(0);
  for (int i = 0; i < d; ++i) {
    const T c = x[i] - mean;
    var += c * c;
  }
  var /= T(d);
  const T rstd = T(1) / std::sqrt(var + eps);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
  if (save_mean) *save_mean = mean;
  if (save_rstd) *save_rstd = rstd;
}

// GRU cell, gates packed (r, z, n) along the first axis:
//   r = sigma(W_r x + U_r h + b_r)
//   z = sigma(W_z x + U_z h + b_z)
//   n = tanh(W_n x + b_n + r .* (U_n h + b_hn))
//   h' = (1 - z) .* n + z .* h
// `wt` is [I, 3H], `ut` is [H, 3H]. If `gates_out` is given it receives
// (r, z, n, cn) with cn = U_n h + b_hn, 4H values, for BPTT.
template <class T>
inline void gru_cell(const T* wt, const T* ut, const T* b, const T* bhn, const T* x, int in_dim,
                     const T* h, int hidden, T* h_new, T* gates_out = nullptr,
                     std::vector<T>* scratch = nullptr) {
  const int g3 = 3 * hidden;
  std::vector<T> local;
  std::vector<T>& buf = scratch ? *scratch : local;
  buf.assign(size_t(2 * g3), T(0));
  T* gin = buf.data();       // W x + b
  T* rec = buf.data() + g3;  // U h (+ b_hn on the n rows)
  std::memcpy(gin, b, size_t(g3) * sizeof(T));
  matvec_t_acc(wt, x, in_dim, g3, gin);
  std::memcpy(rec + 2 * hidden, bhn, size_t(hidden) * sizeof(T));
  matvec_t_acc(ut, h, hidden, g3, rec);
  for (int i = 0; i < hidden; ++i) {
    const T r = sigmoid(gin[i] + rec[i]);
    const T z = sigmoid(gin[hidden + i] + rec[hidden + i]);
    const T cn = rec[2 * hidden + i];
    const T n = std::tanh(gin[2 * hidden + i] + r * cn);
    h_new[i] = (T(1) - z) * n + z * h[i];
    if (gates_out) {
      gates_out[i] = r;
      gates_out[hidden + i] = z;
      gates_out[2 * hidden + i] = n;
      gates_out[3 * hidden + i] = cn;
    }
  }
}

// out[c][f*r + j] = in[c*r + j][f]; pure permutation over the channel axis.
template <class T>
inline void pixel_shuffle_frame(const T* in, int c_out, int f_in, int r, T* out) {
  for (int c = 0; c < c_out; ++c)
    for (int j = 0; j < r; ++j) {
      const T* irow = in + (size_t(c) * r + j) * size_t(f_in);
      T* orow = out + size_t(c) * size_t(f_in) * size_t(r);
      for (int f = 0; f < f_in; ++f) orow[size_t(f) * r + j] = irow[f];
    }
}

template <class T>
inline void softmax_vec(const T* x, int n, T* y) {
  T mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) y[i] *= inv;
}

// Complex convolving mask for one frame. `coeffs` has 2*(taps_t*taps_f)
// channels per bin: tap (dt, df) occupies channels 2*(dt*taps_f + df+pad)
// (real) and +1 (imag). `spec_hist` holds taps_t frames of uncompressed
// input spectra, current first: spec_hist[dt] is frame t-dt as (re, im).
template <class T>
inline void ccm_frame(const T* coeffs, int bins, int taps_t, int taps_f,
                      std::span<const T* const> hist_re, std::span<const T* const> hist_im,
                      T* out_re, T* out_im) {
  const int pad = taps_f / 2;
  std::fill(out_re, out_re + bins, T(0));
  std::fill(out_im, out_im + bins, T(0));
  for (int dt = 0; dt < taps_t; ++dt) {
    const T* xre = hist_re[size_t(dt)];
    const T* xim = hist_im[size_t(dt)];
    for (int j = 0; j < taps_f; ++j) {
      const int df = j - pad;
      const int ch = 2 * (dt * taps_f + j);
      const T* mre = coeffs + size_t(ch) * size_t(bins);
      const T* mim = coeffs + size_t(ch + 1) * size_t(bins);
      const int f_lo = std::max(0, -df);
      const int f_hi = std::min(bins, bins - df);  // exclusive
      for (int f = f_lo; f < f_hi; ++f) {
        const T xr = xre[f + df], xi = xim[f + df];
        out_re[f] += mre[f] * xr - mim[f] * xi;
        out_im[f] += mre[f] * xi + mim[f] * xr;
      }
    }
  }
}

}  // namespace pvqe
