#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include <json.hpp>

#include "pvqe/common.hpp"

namespace pvqe {

// Desk-scale stand-in for speech corpora: deterministic harmonic voices with
// a spectral envelope and syllable-like amplitude bursts, mixed with
// interferers, noise and a simulated echo path.

struct SyntheticVoice {
  double f0 = 120.0;            // Hz
  double tilt_db_per_oct = -6;  // harmonic rolloff
  double formant1_hz = 700.0;
  double formant2_hz = 1800.0;
  double formant_gain_db = 12.0;
  double formant_bw_hz = 220.0;
  double am_rate_hz = 3.0;      // syllable rate
  uint64_t seed = 0;

  static SyntheticVoice random(Rng& rng, double f0_lo = 80.0, double f0_hi = 400.0) {
    SyntheticVoice v;
    v.f0 = rng.uniform(f0_lo, f0_hi);
    v.tilt_db_per_oct = rng.uniform(-9.0, -4.0);
    v.formant1_hz = rng.uniform(400.0, 900.0);
    v.formant2_hz = rng.uniform(1200.0, 2600.0);
    v.formant_gain_db = rng.uniform(6.0, 15.0);
    v.formant_bw_hz = rng.uniform(150.0, 300.0);
    v.am_rate_hz = rng.uniform(2.0, 4.5);
    v.seed = rng.next_u64();
    return v;
  }
};

namespace synth_detail {

inline double envelope_gain(const SyntheticVoice& v, double hz) {
  const double tilt = std::pow(10.0, v.tilt_db_per_oct * std::log2(hz / v.f0) / 20.0);
  auto peak = [&](double center) {
    const double d = (hz - center) / v.formant_bw_hz;
    return std::pow(10.0, v.formant_gain_db / 20.0) * std::exp(-0.5 * d * d);
  };
  return tilt * (1.0 + peak(v.formant1_hz) + peak(v.formant2_hz));
}

}  // namespace synth_detail

// One utterance: harmonic stack with the voice's envelope, syllable bursts
// with true silence between them, a little gated breath noise, peak 0.5.
// Bit-identical for identical (voice, duration, seed).
template <class T>
std::vector<T> synth_voice_utterance(const SyntheticVoice& voice, double duration_s,
                                     uint64_t utt_seed, int sample_rate = 16000) {
  if (!(duration_s > 0.0)) throw InvalidInput("utterance duration must be positive");
  const int n = int(duration_s * sample_rate);
  Rng rng(mix_seed(voice.seed, utt_seed, 0xa11d10));
  const double dt = 1.0 / double(sample_rate);
  const double f_max = 7600.0;
  const int harmonics = std::max(1, int(f_max / voice.f0));

  // Oscillator bank driven by phase rotation; renormalized periodically.
  std::vector<std::complex<double>> osc(static_cast<size_t>(harmonics)), rot(static_cast<size_t>(harmonics));
  std::vector<double> amp(static_cast<size_t>(harmonics));
  for (int k = 0; k < harmonics; ++k) {
    const double hz = voice.f0 * double(k + 1);
    const double ph = rng.uniform(0.0, 2.0 * kPi);
    osc[size_t(k)] = std::polar(1.0, ph);
    rot[size_t(k)] = std::polar(1.0, 2.0 * kPi * hz * dt);
    amp[size_t(k)] = synth_detail::envelope_gain(voice, hz);
  }
  const double am_phase = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> buf(static_cast<size_t>(n));
  double peak = 1e-12;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = 0; k < harmonics; ++k) {
      s += amp[size_t(k)] * osc[size_t(k)].imag();
      osc[size_t(k)] *= rot[size_t(k)];
    }
    // Syllable gate: positive half-cycles only, so bursts alternate with
    // genuine silence.
    const double g = std::sin(2.0 * kPi * voice.am_rate_hz * double(i) * dt + am_phase);
    const double env = g > 0.0 ? std::sqrt(g) : 0.0;
    const double breath = 0.01 * rng.normal();
    buf[size_t(i)] = env * (s + breath);
    peak = std::max(peak, std::abs(buf[size_t(i)]));
    if ((i & 4095) == 4095)
      for (auto& z : osc) z /= std::abs(z);
  }
  std::vector<T> out(static_cast<size_t>(n));
  const double norm = 0.5 / peak;
  for (int i = 0; i < n; ++i) out[size_t(i)] = T(buf[size_t(i)] * norm);
  return out;
}

struct DataConfig {
  double clip_min_s = 2.0;
  double clip_max_s = 4.0;
  double enroll_s = 2.0;
  double interferer_prob = 0.3;
  double sir_lo_db = 0.0, sir_hi_db = 20.0;
  double snr_lo_db = 0.0, snr_hi_db = 40.0;
  double echo_prob = 0.5;
  double echo_delay_lo_ms = 10.0, echo_delay_hi_ms = 500.0;
  double echo_ser_lo_db = 0.0, echo_ser_hi_db = 10.0;  // signal-to-echo ratio
  double enroll_noise_prob = 0.5;
  double target_absent_prob = 0.0;
  double f0_lo = 80.0, f0_hi = 400.0;
  double min_f0_ratio = 1.35;  // voice-pair separation

  nlohmann::json to_json() const {
    return nlohmann::json{{"clip_min_s", clip_min_s},
                          {"clip_max_s", clip_max_s},
                          {"enroll_s", enroll_s},
                          {"interferer_prob", interferer_prob},
                          {"sir_lo_db", sir_lo_db},
                          {"sir_hi_db", sir_hi_db},
                          {"snr_lo_db", snr_lo_db},
                          {"snr_hi_db", snr_hi_db},
                          {"echo_prob", echo_prob},
                          {"echo_delay_lo_ms", echo_delay_lo_ms},
                          {"echo_delay_hi_ms", echo_delay_hi_ms},
                          {"echo_ser_lo_db", echo_ser_lo_db},
                          {"echo_ser_hi_db", echo_ser_hi_db},
                          {"enroll_noise_prob", enroll_noise_prob},
                          {"target_absent_prob", target_absent_prob},
                          {"f0_lo", f0_lo},
                          {"f0_hi", f0_hi},
                          {"min_f0_ratio", min_f0_ratio}};
  }
  static DataConfig from_json(const nlohmann::json& j) {
    DataConfig c;
    c.clip_min_s = j.value("clip_min_s", c.clip_min_s);
    c.clip_max_s = j.value("clip_max_s", c.clip_max_s);
    c.enroll_s = j.value("enroll_s", c.enroll_s);
    c.interferer_prob = j.value("interferer_prob", c.interferer_prob);
    c.sir_lo_db = j.value("sir_lo_db", c.sir_lo_db);
    c.sir_hi_db = j.value("sir_hi_db", c.sir_hi_db);
    c.snr_lo_db = j.value("snr_lo_db", c.snr_lo_db);
    c.snr_hi_db = j.value("snr_hi_db", c.snr_hi_db);
    c.echo_prob = j.value("echo_prob", c.echo_prob);
    c.echo_delay_lo_ms = j.value("echo_delay_lo_ms", c.echo_delay_lo_ms);
    c.echo_delay_hi_ms = j.value("echo_delay_hi_ms", c.echo_delay_hi_ms);
    c.echo_ser_lo_db = j.value("echo_ser_lo_db", c.echo_ser_lo_db);
    c.echo_ser_hi_db = j.value("echo_ser_hi_db", c.echo_ser_hi_db);
    c.enroll_noise_prob = j.value("enroll_noise_prob", c.enroll_noise_prob);
    c.target_absent_prob = j.value("target_absent_prob", c.target_absent_prob);
    c.f0_lo = j.value("f0_lo", c.f0_lo);
    c.f0_hi = j.value("f0_hi", c.f0_hi);
    c.min_f0_ratio = j.value("min_f0_ratio", c.min_f0_ratio);
    return c;
  }
};

template <class T>
struct TrainingExample {
  std::vector<T> mic;      // target + interferer + noise + echo
  std::vector<T> farend;   // loudspeaker reference (zeros when no echo)
  std::vector<T> target;   // clean near-end reference, the loss target
  std::vector<T> enroll;   // different utterance of the target voice
  double sir_db = 0.0;     // valid iff has_interferer
  double snr_db = 0.0;
  double echo_gain = 0.0;
  double echo_delay_ms = 0.0;
  bool has_interferer = false;
  bool has_echo = false;
  bool target_present = true;
};

namespace synth_detail {

template <class T>
double energy(std::span<const T> x) {
  double e = 0.0;
  for (T v : x) e += double(v) * double(v);
  return e;
}

// White or pink noise, unit peak scale before mixing.
template <class T>
std::vector<T> make_noise(int n, Rng& rng) {
  std::vector<T> out(static_cast<size_t>(n));
  const bool pink = rng.bernoulli(0.5);
  if (!pink) {
    for (int i = 0; i < n; ++i) out[size_t(i)] = T(rng.normal());
    return out;
  }
  double b0 = 0, b1 = 0, b2 = 0;
  for (int i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[size_t(i)] = T((b0 + b1 + b2 + w * 0.1848) * 0.2);
  }
  return out;
}

// Add `src` to `dst`, scaled so that energy(dst_component)/energy(scaled src)
// is `ratio_db`. `ref_energy` is the numerator energy.
template <class T>
double mix_at_ratio(std::vector<T>& dst, std::span<const T> src, double ref_energy,
                    double ratio_db) {
  const double src_e = energy(src);
  if (src_e <= 0.0) return 0.0;
  const double want = ref_energy / std::pow(10.0, ratio_db / 10.0);
  const double gain = std::sqrt(want / src_e);
  for (size_t i = 0; i < dst.size() && i < src.size(); ++i) dst[i] += T(gain * double(src[i]));
  return gain;
}

}  // namespace synth_detail

// One training example from a pair of distinct voices. voice_a is the
// target/enrollment speaker.
template <class T>
TrainingExample<T> synth_mixture(const SyntheticVoice& voice_a, const SyntheticVoice& voice_b,
                                 const DataConfig& cfg, Rng& rng, int sample_rate = 16000) {
  using synth_detail::energy;
  using synth_detail::mix_at_ratio;
  TrainingExample<T> ex;
  const double dur = rng.uniform(cfg.clip_min_s, cfg.clip_max_s);
  const int n = int(dur * sample_rate);

  ex.target_present = !rng.bernoulli(cfg.target_absent_prob);
  const uint64_t utt_target = rng.next_u64();
  const uint64_t utt_enroll = rng.next_u64();
  if (ex.target_present)
    ex.target = synth_voice_utterance<T>(voice_a, dur, utt_target, sample_rate);
  else
    ex.target.assign(size_t(n), T(0));
  ex.mic = ex.target;

  double ref_e = energy(std::span<const T>(ex.target));
  if (ref_e <= 0.0) ref_e = 0.02 * double(n);  // silent target: nominal speech level

  ex.has_interferer = rng.bernoulli(cfg.interferer_prob);
  if (ex.has_interferer) {
    ex.sir_db = rng.uniform(cfg.sir_lo_db, cfg.sir_hi_db);
    auto interf = synth_voice_utterance<T>(voice_b, dur, rng.next_u64(), sample_rate);
    mix_at_ratio(ex.mic, std::span<const T>(interf), ref_e, ex.sir_db);
  }

  ex.has_echo = rng.bernoulli(cfg.echo_prob);
  ex.farend.assign(size_t(n), T(0));
  if (ex.has_echo) {
    SyntheticVoice far_voice = SyntheticVoice::random(rng, cfg.f0_lo, cfg.f0_hi);
    ex.farend = synth_voice_utterance<T>(far_voice, dur, rng.next_u64(), sample_rate);
    ex.echo_delay_ms = rng.uniform(cfg.echo_delay_lo_ms, cfg.echo_delay_hi_ms);
    const int delay = int(ex.echo_delay_ms * sample_rate / 1000.0);
    // Delay + one-pole lowpass echo path.
    std::vector<T> echo(size_t(n), T(0));
    double lp = 0.0;
    const double a = 0.6;
    for (int i = delay; i < n; ++i) {
      lp = a * lp + (1.0 - a) * double(ex.farend[size_t(i - delay)]);
      echo[size_t(i)] = T(lp);
    }
    const double ser = rng.uniform(cfg.echo_ser_lo_db, cfg.echo_ser_hi_db);
    ex.echo_gain = mix_at_ratio(ex.mic, std::span<const T>(echo), ref_e, ser);
  }

  ex.snr_db = rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db);
  auto noise = synth_detail::make_noise<T>(n, rng);
  mix_at_ratio(ex.mic, std::span<const T>(noise), ref_e, ex.snr_db);

  ex.enroll = synth_voice_utterance<T>(voice_a, cfg.enroll_s, utt_enroll, sample_rate);
  if (rng.bernoulli(cfg.enroll_noise_prob)) {
    auto en_noise = synth_detail::make_noise<T>(int(ex.enroll.size()), rng);
    mix_at_ratio(ex.enroll, std::span<const T>(en_noise),
                 energy(std::span<const T>(ex.enroll)),
                 rng.uniform(cfg.snr_lo_db, cfg.snr_hi_db));
  }
  return ex;
}

// Deterministic example stream: example `index` under a base seed, with a
// fresh voice pair per example so the embedding is the only cue to who the
// target is.
template <class T>
TrainingExample<T> make_example(const DataConfig& cfg, uint64_t seed, uint64_t index,
                                int sample_rate = 16000) {
  Rng rng(mix_seed(seed, index, 0x7ea1));
  SyntheticVoice a = SyntheticVoice::random(rng, cfg.f0_lo, cfg.f0_hi);
  SyntheticVoice b = SyntheticVoice::random(rng, cfg.f0_lo, cfg.f0_hi);
  for (int tries = 0; tries < 64; ++tries) {
    const double ratio = std::max(a.f0, b.f0) / std::min(a.f0, b.f0);
    if (ratio >= cfg.min_f0_ratio) break;
    b = SyntheticVoice::random(rng, cfg.f0_lo, cfg.f0_hi);
  }
  return synth_mixture<T>(a, b, cfg, rng, sample_rate);
}

}  // namespace pvqe
