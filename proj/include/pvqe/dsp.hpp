#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include "pvqe/common.hpp"
#include "pvqe/tensor.hpp"

namespace pvqe {

// Streaming analysis/synthesis front-end: 20 ms sqrt-Hann frames at 50%
// overlap, 320-point DFT, power-law compression, and the log-mel features
// used by the filterbank embedding baseline.

struct FeatureConfig {
  int sample_rate = 16000;
  int win_len = 320;
  int hop = 160;
  int dft_len = 320;
  double compress_exp = 0.3;

  int bins() const { return dft_len / 2 + 1; }

  void validate() const {
    if (sample_rate != 16000) throw InvalidConfig("feature config: sample rate must be 16000 Hz");
    if (win_len < 2 || win_len % 2 != 0) throw InvalidConfig("feature config: win_len must be even and >= 2");
    if (win_len != dft_len) throw InvalidConfig("feature config: win_len must equal dft_len");
    if (hop != win_len / 2) throw InvalidConfig("feature config: hop must be win_len/2");
    if (!(compress_exp > 0.0 && compress_exp <= 1.0))
      throw InvalidConfig("feature config: compression exponent must be in (0, 1]");
  }
};

// One STFT frame, bins 0..dft_len/2.
template <class T>
struct ComplexSpectrum {
  std::vector<T> re, im;

  ComplexSpectrum() = default;
  explicit ComplexSpectrum(int bins) : re(size_t(bins), T(0)), im(size_t(bins), T(0)) {}
  int bins() const { return int(re.size()); }
};

template <class T>
std::vector<T> make_sqrt_hann(int n) {
  if (n < 2 || n % 2 != 0) throw InvalidConfig("sqrt-hann: frame length must be even and >= 2");
  std::vector<T> w(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    double h = 0.5 * (1.0 - std::cos(2.0 * kPi * double(k) / double(n)));  // periodic form
    w[size_t(k)] = T(std::sqrt(h));
  }
  return w;
}

// Mixed-radix DFT plan with a precomputed root table. Handles any length
// whose factors are small (320 = 2^6 * 5); prime factors fall back to a
// direct sum.
template <class T>
class Dft {
 public:
  using Cpx = std::complex<T>;

  explicit Dft(int n) : n_(n) {
    if (n < 1) throw InvalidConfig("dft: length must be positive");
    roots_.resize(size_t(n));
    for (int k = 0; k < n; ++k) {
      double a = -2.0 * kPi * double(k) / double(n);
      roots_[size_t(k)] = Cpx(T(std::cos(a)), T(std::sin(a)));
    }
    factors_ = factorize(n);
    scratch_.resize(size_t(n));
  }

  int length() const { return n_; }

  // Real input, bins 0..n/2 out.
  void forward(std::span<const T> time, ComplexSpectrum<T>& out) const {
    if (int(time.size()) != n_) throw InvalidInput("dft: input length mismatch");
    std::vector<Cpx> buf(static_cast<size_t>(n_));
    for (int i = 0; i < n_; ++i) buf[size_t(i)] = Cpx(time[size_t(i)], T(0));
    fft(buf.data(), false);
    const int half = n_ / 2 + 1;
    if (out.bins() != half) out = ComplexSpectrum<T>(half);
    for (int k = 0; k < half; ++k) {
      out.re[size_t(k)] = buf[size_t(k)].real();
      out.im[size_t(k)] = buf[size_t(k)].imag();
    }
  }

  // Hermitian bins 0..n/2 in, real time-domain signal out (includes 1/n).
  void inverse_real(const ComplexSpectrum<T>& spec, std::span<T> time) const {
    const int half = n_ / 2 + 1;
    if (spec.bins() != half) throw InvalidInput("dft: spectrum bin count mismatch");
    if (int(time.size()) != n_) throw InvalidInput("dft: output length mismatch");
    std::vector<Cpx> buf(static_cast<size_t>(n_));
    for (int k = 0; k < half; ++k) buf[size_t(k)] = Cpx(spec.re[size_t(k)], spec.im[size_t(k)]);
    for (int k = half; k < n_; ++k) buf[size_t(k)] = std::conj(buf[size_t(n_ - k)]);
    fft(buf.data(), true);
    const T scale = T(1) / T(n_);
    for (int i = 0; i < n_; ++i) time[size_t(i)] = buf[size_t(i)].real() * scale;
  }

 private:
  static std::vector<int> factorize(int n) {
    std::vector<int> f;
    for (int p = 2; p * p <= n;) {
      if (n % p == 0) {
        f.push_back(p);
        n /= p;
      } else {
        ++p;
      }
    }
    if (n > 1) f.push_back(n);
    return f;
  }

  // Recursive decimation-in-time over the factor list. `tw_stride` is the
  // table stride for the current sub-transform length.
  void rec(Cpx* data, Cpx* work, int n, int stride, int tw_stride, size_t level, bool inv) const {
    if (n == 1) return;
    const int p = level < factors_.size() ? factors_[level] : n;
    const int m = n / p;
    for (int q = 0; q < p; ++q)
      rec(data + q * stride, work, m, stride * p, tw_stride * p, level + 1, inv);
    // Combine p interleaved sub-transforms of length m.
    std::vector<Cpx> col(static_cast<size_t>(p));
    for (int k1 = 0; k1 < m; ++k1) {
      for (int q = 0; q < p; ++q) col[size_t(q)] = data[(k1 * p + q) * size_t(stride)];
      for (int q1 = 0; q1 < p; ++q1) {
        const int k = k1 + q1 * m;
        Cpx acc(0, 0);
        for (int q = 0; q < p; ++q) {
          int64_t idx = (int64_t(q) * k % n) * tw_stride;
          Cpx w = roots_[size_t(idx)];
          if (inv) w = std::conj(w);
          acc += col[size_t(q)] * w;
        }
        work[size_t(k)] = acc;
      }
      // Sub-results at this k1 are consumed; safe to stash per column.
    }
    for (int k = 0; k < n; ++k) data[size_t(k) * stride] = work[size_t(k)];
  }

  void fft(Cpx* data, bool inv) const {
    std::vector<Cpx> work(static_cast<size_t>(n_));
    rec(data, work.data(), n_, 1, 1, 0, inv);
  }

  int n_;
  std::vector<Cpx> roots_;
  std::vector<int> factors_;
  mutable std::vector<Cpx> scratch_;
};

// Windowed real DFT of one frame. Caller maintains the 50%-overlap sliding
// sample buffer.
template <class T>
ComplexSpectrum<T> stft_frame(std::span<const T> samples, std::span<const T> window, const Dft<T>& dft) {
  if (samples.size() != window.size() || int(samples.size()) != dft.length())
    throw InvalidInput("stft_frame: expected exactly win_len samples");
  std::vector<T> buf(samples.size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = samples[i] * window[i];
  ComplexSpectrum<T> out;
  dft.forward(buf, out);
  return out;
}

// Synthesis state: the yet-to-be-emitted tail of the previous frames.
template <class T>
struct OlaState {
  std::vector<T> tail;  // win_len - hop carried samples

  void reset(int win_len, int hop) { tail.assign(size_t(win_len - hop), T(0)); }
};

// Inverse DFT, synthesis window (= analysis window), overlap-add. Emits hop
// new samples per frame.
template <class T>
std::vector<T> istft_overlap_add(const ComplexSpectrum<T>& frame, std::span<const T> window,
                                 OlaState<T>& state, const Dft<T>& dft) {
  const int n = dft.length();
  const int hop = n / 2;
  const int carry = n - hop;
  if (int(window.size()) != n) throw InvalidInput("istft: window length mismatch");
  if (state.tail.size() != size_t(carry)) state.reset(n, hop);
  std::vector<T> y(static_cast<size_t>(n));
  dft.inverse_real(frame, y);
  for (int i = 0; i < n; ++i) y[size_t(i)] *= window[size_t(i)];
  std::vector<T> out(static_cast<size_t>(hop));
  for (int i = 0; i < hop; ++i) out[size_t(i)] = y[size_t(i)] + (i < carry ? state.tail[size_t(i)] : T(0));
  std::vector<T> tail(static_cast<size_t>(carry));
  for (int j = 0; j < carry; ++j) {
    T v = y[size_t(hop + j)];
    if (hop + j < carry) v += state.tail[size_t(hop + j)];
    tail[size_t(j)] = v;
  }
  state.tail = std::move(tail);
  return out;
}

namespace detail {

// |x|^p with phase preserved; 0 maps to 0.
template <class T>
ComplexSpectrum<T> magnitude_pow(const ComplexSpectrum<T>& x, double p) {
  ComplexSpectrum<T> out(x.bins());
  for (int k = 0; k < x.bins(); ++k) {
    const double re = double(x.re[size_t(k)]), im = double(x.im[size_t(k)]);
    const double m = std::sqrt(re * re + im * im);
    if (m > 0.0) {
      const double s = std::pow(m, p) / m;
      out.re[size_t(k)] = T(re * s);
      out.im[size_t(k)] = T(im * s);
    }
  }
  return out;
}

}  // namespace detail

// Per-bin |x|^c with phase preserved; 0 maps to 0.
template <class T>
ComplexSpectrum<T> compress(const ComplexSpectrum<T>& x, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw InvalidConfig("compress: exponent must be in (0, 1]");
  return detail::magnitude_pow(x, c);
}

// Exact inverse of compress on nonzero bins: |x|^(1/c).
template <class T>
ComplexSpectrum<T> decompress(const ComplexSpectrum<T>& x, double c) {
  if (!(c > 0.0 && c <= 1.0)) throw InvalidConfig("decompress: exponent must be in (0, 1]");
  return detail::magnitude_pow(x, 1.0 / c);
}

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace detail

// Triangular mel filterbank over the power spectrum, HTK mel scale.
template <class T>
class MelFilterbank {
 public:
  MelFilterbank(int n_bands, const FeatureConfig& cfg) : n_bands_(n_bands) {
    const int bins = cfg.bins();
    const double f_lo = 0.0, f_hi = double(cfg.sample_rate) / 2.0;
    const double m_lo = detail::hz_to_mel(f_lo), m_hi = detail::hz_to_mel(f_hi);
    std::vector<double> edges(size_t(n_bands) + 2);
    for (int i = 0; i < n_bands + 2; ++i)
      edges[size_t(i)] = detail::mel_to_hz(m_lo + (m_hi - m_lo) * double(i) / double(n_bands + 1));
    centers_.assign(size_t(n_bands), 0.0);
    for (int b = 0; b < n_bands; ++b) centers_[size_t(b)] = edges[size_t(b) + 1];
    weights_.assign(size_t(n_bands) * size_t(bins), T(0));
    const double bin_hz = double(cfg.sample_rate) / double(cfg.dft_len);
    for (int b = 0; b < n_bands; ++b) {
      const double lo = edges[size_t(b)], mid = edges[size_t(b) + 1], hi = edges[size_t(b) + 2];
      double support = 0.0;
      for (int k = 0; k < bins; ++k) {
        const double f = double(k) * bin_hz;
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        weights_[size_t(b) * size_t(bins) + size_t(k)] = T(w);
        support += w;
      }
      if (support == 0.0) {
        // Narrow low bands can fall between bins; give them the bin nearest
        // their center so every band carries energy.
        const int k = std::min(bins - 1, std::max(0, int(std::lround(mid / bin_hz))));
        weights_[size_t(b) * size_t(bins) + size_t(k)] = T(1);
      }
    }
  }

  int bands() const { return n_bands_; }
  double center_hz(int band) const { return centers_[size_t(band)]; }

  void apply_power(const ComplexSpectrum<T>& spec, T* out) const {
    const int bins = int(spec.re.size());
    for (int b = 0; b < n_bands_; ++b) {
      double acc = 0.0;
      const T* w = &weights_[size_t(b) * size_t(bins)];
      for (int k = 0; k < bins; ++k) {
        const double p = double(spec.re[size_t(k)]) * double(spec.re[size_t(k)]) +
                         double(spec.im[size_t(k)]) * double(spec.im[size_t(k)]);
        acc += double(w[k]) * p;
      }
      out[b] = T(acc);
    }
  }

 private:
  int n_bands_;
  std::vector<double> centers_;
  std::vector<T> weights_;
};

// 80-dim log-mel features per STFT frame, natural log with floor 1e-10.
template <class T>
Tensor<T> logmel_80(std::span<const T> audio, const FeatureConfig& cfg) {
  cfg.validate();
  if (int(audio.size()) < cfg.win_len) throw InvalidInput("logmel: audio shorter than one frame");
  const int n_bands = 80;
  const int frames = 1 + (int(audio.size()) - cfg.win_len) / cfg.hop;
  const Dft<T> dft(cfg.dft_len);
  const auto window = make_sqrt_hann<T>(cfg.win_len);
  const MelFilterbank<T> mel(n_bands, cfg);
  Tensor<T> out({frames, n_bands});
  std::vector<T> energies(static_cast<size_t>(n_bands));
  for (int t = 0; t < frames; ++t) {
    auto frame = audio.subspan(size_t(t) * size_t(cfg.hop), size_t(cfg.win_len));
    auto spec = stft_frame<T>(frame, window, dft);
    mel.apply_power(spec, energies.data());
    for (int b = 0; b < n_bands; ++b)
      out(t, b) = T(std::log(std::max(double(energies[size_t(b)]), 1e-10)));
  }
  return out;
}

}  // namespace pvqe
