#pragma once

#include <span>
#include <string>
#include <vector>

#include "pvqe/dsp.hpp"
#include "pvqe/stream.hpp"

namespace pvqe {

enum class Provenance : uint8_t { internal = 0, fbank = 1, zero = 2, external = 3 };

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::internal: return "internal";
    case Provenance::fbank: return "fbank";
    case Provenance::zero: return "zero";
    case Provenance::external: return "external";
  }
  return "?";
}

inline Provenance provenance_from_name(const std::string& s) {
  if (s == "internal") return Provenance::internal;
  if (s == "fbank") return Provenance::fbank;
  if (s == "zero") return Provenance::zero;
  if (s == "external") return Provenance::external;
  throw InvalidInput("unknown embedding mode: " + s);
}

template <class T>
struct SpeakerEmbedding {
  std::vector<T> v;
  Provenance provenance = Provenance::zero;

  int dim() const { return int(v.size()); }
};

// The paper's contribution: the enhancement model embeds its own enrollment
// audio. Runs the forward path over all enrollment frames on a private
// stream with a zero pinned embedding and silent far end, collecting the LN
// output after the last GRU layer, and averages over frames. Neither the
// model nor any caller-owned stream is touched.
//
// Frames are averaged as-is by default; energy gating (drop frames more
// than 40 dB below the clip peak) is available but off.
template <class T>
SpeakerEmbedding<T> extract_internal_embedding(const StreamEngine<T>& engine,
                                               std::span<const T> enroll_audio,
                                               bool energy_gate = false) {
  const ModelConfig& cfg = engine.config();
  if (cfg.embedding_dim != cfg.gru_hidden)
    throw InvalidConfig("internal embedding requires the fusion size to equal the GRU hidden size");
  const int hop = cfg.hop;
  const int frames = int(enroll_audio.size()) / hop;
  if (frames < 1) throw InvalidInput("enrollment audio shorter than one frame hop");

  std::vector<double> frame_energy;
  double peak_energy = 0.0;
  if (energy_gate) {
    frame_energy.resize(size_t(frames));
    for (int t = 0; t < frames; ++t) {
      double e = 0.0;
      for (int i = 0; i < hop; ++i) {
        const double s = double(enroll_audio[size_t(t) * hop + size_t(i)]);
        e += s * s;
      }
      frame_energy[size_t(t)] = e;
      peak_energy = std::max(peak_energy, e);
    }
  }

  StreamState<T> st = engine.make_state();  // zero pinned embedding
  FrameTrace<T> trace;
  std::vector<double> acc(size_t(cfg.gru_hidden), 0.0);
  int used = 0;
  for (int t = 0; t < frames; ++t) {
    auto mic = enroll_audio.subspan(size_t(t) * hop, size_t(hop));
    engine.process_frame(st, mic, {}, &trace, /*run_decoder=*/false);
    if (energy_gate && frame_energy[size_t(t)] < peak_energy * 1e-4) continue;  // 40 dB gate
    for (int i = 0; i < cfg.gru_hidden; ++i) acc[size_t(i)] += double(trace.internal_emb[size_t(i)]);
    ++used;
  }
  if (used == 0) throw InvalidInput("enrollment: every frame was gated out");
  SpeakerEmbedding<T> emb;
  emb.provenance = Provenance::internal;
  emb.v.resize(size_t(cfg.gru_hidden));
  for (int i = 0; i < cfg.gru_hidden; ++i) emb.v[size_t(i)] = T(acc[size_t(i)] / double(used));
  return emb;
}

// FBANK baseline: 80-dim log-mel features, temporal mean and population
// standard deviation concatenated to a 160-dim embedding.
template <class T>
SpeakerEmbedding<T> fbank_embedding(std::span<const T> enroll_audio, const FeatureConfig& cfg) {
  Tensor<T> feats = logmel_80(enroll_audio, cfg);
  const int frames = feats.shape[0], bands = feats.shape[1];
  if (frames < 2) throw InvalidInput("fbank embedding needs at least two frames");
  SpeakerEmbedding<T> emb;
  emb.provenance = Provenance::fbank;
  emb.v.assign(size_t(2 * bands), T(0));
  for (int b = 0; b < bands; ++b) {
    double mean = 0.0;
    for (int t = 0; t < frames; ++t) mean += double(feats(t, b));
    mean /= double(frames);
    double var = 0.0;
    for (int t = 0; t < frames; ++t) {
      const double c = double(feats(t, b)) - mean;
      var += c * c;
    }
    var /= double(frames);
    emb.v[size_t(b)] = T(mean);
    emb.v[size_t(bands + b)] = T(std::sqrt(var));
  }
  return emb;
}

// The "Empty" baseline.
template <class T>
SpeakerEmbedding<T> zero_embedding(int dim) {
  if (dim <= 0) throw InvalidInput("zero embedding: dim must be positive");
  SpeakerEmbedding<T> emb;
  emb.provenance = Provenance::zero;
  emb.v.assign(size_t(dim), T(0));
  return emb;
}

}  // namespace pvqe
