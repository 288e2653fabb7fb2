#include <catch_amalgamated.hpp>

#include <complex>
#include <vector>

#include "pvqe/dsp.hpp"

using namespace pvqe;

namespace {

// Independent O(N^2) DFT oracle.
template <class T>
std::vector<std::complex<double>> naive_dft(const std::vector<T>& x) {
  const int n = int(x.size());
  std::vector<std::complex<double>> out(static_cast<size_t>(n));
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (int i = 0; i < n; ++i)
      acc += double(x[size_t(i)]) * std::polar(1.0, -2.0 * kPi * double(k) * double(i) / double(n));
    out[size_t(k)] = acc;
  }
  return out;
}

template <class T>
std::vector<T> random_signal(int n, uint64_t seed, double amp = 0.5) {
  Rng rng(seed);
  std::vector<T> x(static_cast<size_t>(n));
  for (auto& v : x) v = T(rng.uniform(-amp, amp));
  return x;
}

}  // namespace

TEST_CASE("sqrt-hann window endpoints and COLA", "[dsp]") {
  auto w = make_sqrt_hann<double>(320);
  CHECK(w[0] == 0.0);
  CHECK(w[160] == Catch::Approx(1.0).margin(1e-12));
  // Product window w^2 sums to one across 50% shifts.
  for (int k = 0; k < 160; ++k)
    CHECK(w[size_t(k)] * w[size_t(k)] + w[size_t(k + 160)] * w[size_t(k + 160)] ==
          Catch::Approx(1.0).margin(1e-12));
  CHECK_THROWS_AS(make_sqrt_hann<float>(321), InvalidConfig);
  CHECK_THROWS_AS(make_sqrt_hann<float>(0), InvalidConfig);
}

TEST_CASE("stft of silence is silent", "[dsp]") {
  const Dft<float> dft(320);
  const auto w = make_sqrt_hann<float>(320);
  std::vector<float> zeros(320, 0.f);
  auto spec = stft_frame<float>(zeros, w, dft);
  for (int k = 0; k < spec.bins(); ++k) {
    CHECK(spec.re[size_t(k)] == 0.f);
    CHECK(spec.im[size_t(k)] == 0.f);
  }
}

TEST_CASE("1 kHz sine peaks at bin 20", "[dsp]") {
  const Dft<float> dft(320);
  const auto w = make_sqrt_hann<float>(320);
  std::vector<float> x(320);
  for (int i = 0; i < 320; ++i) x[size_t(i)] = float(std::sin(2.0 * kPi * 1000.0 * i / 16000.0));
  auto spec = stft_frame<float>(x, w, dft);
  int argmax = 0;
  double best = -1.0;
  for (int k = 0; k < spec.bins(); ++k) {
    const double m = double(spec.re[size_t(k)]) * spec.re[size_t(k)] +
                     double(spec.im[size_t(k)]) * spec.im[size_t(k)];
    if (m > best) {
      best = m;
      argmax = k;
    }
  }
  CHECK(argmax == 20);  // 1000 * 320 / 16000

  // Same windowed frame against the naive DFT oracle.
  std::vector<float> windowed(320);
  for (int i = 0; i < 320; ++i) windowed[size_t(i)] = x[size_t(i)] * w[size_t(i)];
  auto oracle = naive_dft(windowed);
  int oracle_argmax = 0;
  best = -1.0;
  for (int k = 0; k <= 160; ++k)
    if (std::abs(oracle[size_t(k)]) > best) {
      best = std::abs(oracle[size_t(k)]);
      oracle_argmax = k;
    }
  CHECK(oracle_argmax == argmax);
}

TEST_CASE("stft matches the naive DFT oracle", "[dsp]") {
  const Dft<float> dft(320);
  const auto w = make_sqrt_hann<float>(320);
  auto x = random_signal<float>(320, 99);
  auto spec = stft_frame<float>(std::span<const float>(x), w, dft);
  std::vector<float> windowed(320);
  for (int i = 0; i < 320; ++i) windowed[size_t(i)] = x[size_t(i)] * w[size_t(i)];
  auto oracle = naive_dft(windowed);
  double ref = 0.0;
  for (int k = 0; k <= 160; ++k) ref = std::max(ref, std::abs(oracle[size_t(k)]));
  for (int k = 0; k <= 160; ++k) {
    CHECK(std::abs(double(spec.re[size_t(k)]) - oracle[size_t(k)].real()) < 1e-5 * ref);
    CHECK(std::abs(double(spec.im[size_t(k)]) - oracle[size_t(k)].imag()) < 1e-5 * ref);
  }
}

TEST_CASE("stft is linear", "[dsp]") {
  const Dft<float> dft(320);
  const auto w = make_sqrt_hann<float>(320);
  auto x = random_signal<float>(320, 1);
  auto y = random_signal<float>(320, 2);
  const float a = 1.7f, b = -0.35f;
  std::vector<float> z(320);
  for (int i = 0; i < 320; ++i) z[size_t(i)] = a * x[size_t(i)] + b * y[size_t(i)];
  auto sx = stft_frame<float>(std::span<const float>(x), w, dft);
  auto sy = stft_frame<float>(std::span<const float>(y), w, dft);
  auto sz = stft_frame<float>(std::span<const float>(z), w, dft);
  for (int k = 0; k <= 160; ++k) {
    CHECK(double(sz.re[size_t(k)]) ==
          Catch::Approx(double(a) * sx.re[size_t(k)] + double(b) * sy.re[size_t(k)]).margin(1e-4));
    CHECK(double(sz.im[size_t(k)]) ==
          Catch::Approx(double(a) * sx.im[size_t(k)] + double(b) * sy.im[size_t(k)]).margin(1e-4));
  }
  CHECK_THROWS_AS(stft_frame<float>(std::span<const float>(x.data(), 100), w, dft), InvalidInput);
}

TEST_CASE("analysis-synthesis round trip reconstructs within 1e-6", "[dsp]") {
  const int win = 320, hop = 160;
  const Dft<double> dft(win);
  const auto w = make_sqrt_hann<double>(win);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto x = random_signal<double>(hop * 40, seed);
    std::vector<double> window_buf(size_t(win), 0.0);
    OlaState<double> ola;
    ola.reset(win, hop);
    std::vector<double> out;
    for (int t = 0; t < 40; ++t) {
      std::memmove(window_buf.data(), window_buf.data() + hop, size_t(win - hop) * sizeof(double));
      std::memcpy(window_buf.data() + (win - hop), x.data() + size_t(t) * hop,
                  size_t(hop) * sizeof(double));
      auto spec = stft_frame<double>(window_buf, w, dft);
      auto y = istft_overlap_add(spec, std::span<const double>(w), ola, dft);
      out.insert(out.end(), y.begin(), y.end());
    }
    // One-frame latency: out[i] reproduces x[i - (win - hop)].
    const int lat = win - hop;
    for (size_t i = size_t(lat); i < out.size(); ++i)
      REQUIRE(std::abs(out[i] - x[i - size_t(lat)]) < 1e-6);
  }
}

TEST_CASE("float round trip reconstruction", "[dsp]") {
  const int win = 320, hop = 160;
  const Dft<float> dft(win);
  const auto w = make_sqrt_hann<float>(win);
  auto x = random_signal<float>(hop * 30, 7);
  std::vector<float> window_buf(size_t(win), 0.f);
  OlaState<float> ola;
  ola.reset(win, hop);
  std::vector<float> out;
  for (int t = 0; t < 30; ++t) {
    std::memmove(window_buf.data(), window_buf.data() + hop, size_t(win - hop) * sizeof(float));
    std::memcpy(window_buf.data() + (win - hop), x.data() + size_t(t) * hop,
                size_t(hop) * sizeof(float));
    auto spec = stft_frame<float>(window_buf, w, dft);
    auto y = istft_overlap_add(spec, std::span<const float>(w), ola, dft);
    out.insert(out.end(), y.begin(), y.end());
  }
  const int lat = win - hop;
  for (size_t i = size_t(lat); i < out.size(); ++i)
    REQUIRE(std::abs(double(out[i]) - double(x[i - size_t(lat)])) < 1e-5);
}

TEST_CASE("zero spectrum stream synthesizes silence", "[dsp]") {
  const Dft<float> dft(320);
  const auto w = make_sqrt_hann<float>(320);
  OlaState<float> ola;
  ola.reset(320, 160);
  ComplexSpectrum<float> zero(161);
  for (int t = 0; t < 5; ++t) {
    auto y = istft_overlap_add(zero, std::span<const float>(w), ola, dft);
    for (float v : y) CHECK(v == 0.f);
  }
}

TEST_CASE("impulse spectrum train matches a direct overlap-add oracle", "[dsp]") {
  const int win = 320, hop = 160, frames = 6, p = 200;
  const Dft<double> dft(win);
  const auto w = make_sqrt_hann<double>(win);
  // Spectrum of a unit impulse at sample p of the frame.
  ComplexSpectrum<double> spec(161);
  for (int k = 0; k <= 160; ++k) {
    spec.re[size_t(k)] = std::cos(-2.0 * kPi * k * p / double(win));
    spec.im[size_t(k)] = std::sin(-2.0 * kPi * k * p / double(win));
  }
  // Direct oracle: naive inverse DFT, window, accumulate.
  std::vector<double> idft(size_t(win), 0.0);
  for (int i = 0; i < win; ++i) {
    std::complex<double> acc(0, 0);
    for (int k = 0; k < win; ++k) {
      const int kk = k <= 160 ? k : win - k;
      std::complex<double> s(spec.re[size_t(kk)], k <= 160 ? spec.im[size_t(kk)] : -spec.im[size_t(kk)]);
      acc += s * std::polar(1.0, 2.0 * kPi * double(k) * double(i) / double(win));
    }
    idft[size_t(i)] = acc.real() / double(win);
  }
  std::vector<double> oracle(size_t(hop) * frames + win, 0.0);
  for (int m = 0; m < frames; ++m)
    for (int i = 0; i < win; ++i) oracle[size_t(m) * hop + size_t(i)] += idft[size_t(i)] * w[size_t(i)];

  OlaState<double> ola;
  ola.reset(win, hop);
  std::vector<double> out;
  for (int m = 0; m < frames; ++m) {
    auto y = istft_overlap_add(spec, std::span<const double>(w), ola, dft);
    out.insert(out.end(), y.begin(), y.end());
  }
  for (size_t i = 0; i < out.size(); ++i) REQUIRE(out[i] == Catch::Approx(oracle[i]).margin(1e-9));
}

TEST_CASE("power-law compression", "[dsp]") {
  ComplexSpectrum<float> x(3);
  x.re = {0.f, -9.6f, 2.f};
  x.im = {0.f, 12.8f, -1.f};  // bin 1 magnitude 16
  auto y = compress(x, 0.3);
  CHECK(y.re[0] == 0.f);
  CHECK(y.im[0] == 0.f);
  const double m1 = std::hypot(double(y.re[1]), double(y.im[1]));
  CHECK(m1 == Catch::Approx(std::pow(16.0, 0.3)).epsilon(1e-5));  // ~2.2974
  // Phase preserved.
  CHECK(std::atan2(double(y.im[1]), double(y.re[1])) ==
        Catch::Approx(std::atan2(12.8, -9.6)).margin(1e-6));
  auto id = compress(x, 1.0);
  for (int k = 0; k < 3; ++k) {
    CHECK(id.re[size_t(k)] == Catch::Approx(double(x.re[size_t(k)])).margin(1e-6));
    CHECK(id.im[size_t(k)] == Catch::Approx(double(x.im[size_t(k)])).margin(1e-6));
  }
  CHECK_THROWS_AS(compress(x, 0.0), InvalidConfig);
  CHECK_THROWS_AS(compress(x, 1.5), InvalidConfig);
}

TEST_CASE("compress/decompress are mutual inverses with exact phase", "[dsp]") {
  Rng rng(5);
  ComplexSpectrum<float> x(64);
  for (int k = 0; k < 64; ++k) {
    x.re[size_t(k)] = float(rng.uniform(-8, 8));
    x.im[size_t(k)] = float(rng.uniform(-8, 8));
  }
  auto y = decompress(compress(x, 0.3), 0.3);
  for (int k = 0; k < 64; ++k) {
    const double mx = std::hypot(double(x.re[size_t(k)]), double(x.im[size_t(k)]));
    CHECK(std::abs(double(y.re[size_t(k)]) - x.re[size_t(k)]) < 1e-5 * std::max(mx, 1e-3));
    CHECK(std::abs(double(y.im[size_t(k)]) - x.im[size_t(k)]) < 1e-5 * std::max(mx, 1e-3));
    const auto c = compress(x, 0.3);
    const double ph_in = std::atan2(double(x.im[size_t(k)]), double(x.re[size_t(k)]));
    const double ph_c = std::atan2(double(c.im[size_t(k)]), double(c.re[size_t(k)]));
    CHECK(std::abs(ph_in - ph_c) < 1e-6);
  }
  // Inverse of the worked example: magnitude 2.2974 back to 16.
  ComplexSpectrum<float> z(1);
  z.re = {float(std::pow(16.0, 0.3))};
  z.im = {0.f};
  auto back = decompress(z, 0.3);
  CHECK(back.re[0] == Catch::Approx(16.0).epsilon(1e-4));
}

TEST_CASE("log-mel features", "[dsp]") {
  FeatureConfig fc;
  SECTION("silence hits the floor") {
    std::vector<float> zeros(1600, 0.f);
    auto feats = logmel_80<float>(zeros, fc);
    for (float v : feats.data) CHECK(v == Catch::Approx(std::log(1e-10)).margin(1e-6));
  }
  SECTION("white noise is finite and above the floor") {
    auto x = random_signal<float>(3200, 11);
    auto feats = logmel_80<float>(std::span<const float>(x), fc);
    for (float v : feats.data) {
      CHECK(std::isfinite(v));
      CHECK(v > float(std::log(1e-10)));
    }
  }
  SECTION("1 kHz sine lands in the band nearest 1 kHz") {
    std::vector<float> x(16000);
    for (size_t i = 0; i < x.size(); ++i)
      x[i] = 0.5f * float(std::sin(2.0 * kPi * 1000.0 * double(i) / 16000.0));
    auto feats = logmel_80<float>(std::span<const float>(x), fc);
    std::vector<double> mean(80, 0.0);
    for (int t = 0; t < feats.shape[0]; ++t)
      for (int b = 0; b < 80; ++b) mean[size_t(b)] += double(feats(t, b));
    int argmax = 0;
    for (int b = 1; b < 80; ++b)
      if (mean[size_t(b)] > mean[size_t(argmax)]) argmax = b;
    // Oracle: recompute the HTK mel centers directly.
    auto hz2mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
    auto mel2hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
    const double m_hi = hz2mel(8000.0);
    int nearest = 0;
    double best = 1e9;
    for (int b = 0; b < 80; ++b) {
      const double center = mel2hz(m_hi * double(b + 1) / 81.0);
      if (std::abs(center - 1000.0) < best) {
        best = std::abs(center - 1000.0);
        nearest = b;
      }
    }
    CHECK(argmax == nearest);
  }
  SECTION("audio shorter than one frame is rejected") {
    std::vector<float> tiny(100, 0.1f);
    CHECK_THROWS_AS(logmel_80<float>(std::span<const float>(tiny), fc), InvalidInput);
  }
}

TEST_CASE("feature config invariants", "[dsp]") {
  FeatureConfig fc;
  CHECK(fc.bins() == 161);
  fc.validate();
  FeatureConfig bad = fc;
  bad.hop = 100;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
  bad = fc;
  bad.compress_exp = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidConfig);
}
