#pragma once

#include <chrono>
#include <cmath>
#include <span>

#include "pvqe/graph.hpp"
#include "pvqe/stream.hpp"

namespace pvqe {

// Runs the clip frame-by-frame through the streaming engine and in one shot
// through the offline graph with identical weights; returns the largest
// absolute sample difference. The two paths share arithmetic kernels but
// carry state independently (caches/rings vs direct indexing), so this
// catches streaming-state bugs.
template <class T>
double streaming_vs_offline(const Model<T>& model, const StreamEngine<T>& engine,
                            std::span<const T> mic, std::span<const T> far,
                            std::span<const T> embedding = {}) {
  StreamState<T> st = engine.make_state();
  if (!embedding.empty()) engine.pin_embedding(st, embedding);
  std::vector<T> stream_out = enhance_streaming(engine, st, mic, far);
  std::vector<T> offline_out = enhance_offline(model, mic, far, embedding);
  const size_t n = std::min(stream_out.size(), offline_out.size());
  double worst = 0.0;
  for (size_t i = 0; i < n; ++i)
    worst = std::max(worst, std::abs(double(stream_out[i]) - double(offline_out[i])));
  return worst;
}

struct RtfResult {
  double ms_per_frame = 0.0;
  double rtf = 0.0;  // ms_per_frame / hop duration
  int frames = 0;
};

// Wall-clock cost of process_frame in steady state: random input, warmup
// frames excluded, single-threaded.
template <class T>
RtfResult rtf_benchmark(const StreamEngine<T>& engine, int n_frames, int warmup = 100,
                        uint64_t seed = 42) {
  const int hop = engine.config().hop;
  Rng rng(seed);
  std::vector<T> mic(static_cast<size_t>(hop)), far(static_cast<size_t>(hop));
  StreamState<T> st = engine.make_state();
  auto fill = [&]() {
    for (int i = 0; i < hop; ++i) {
      mic[size_t(i)] = T(rng.uniform(-0.5, 0.5));
      far[size_t(i)] = T(rng.uniform(-0.5, 0.5));
    }
  };
  for (int t = 0; t < warmup; ++t) {
    fill();
    engine.process_frame(st, mic, far);
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (int t = 0; t < n_frames; ++t) {
    fill();
    engine.process_frame(st, mic, far);
  }
  const auto t1 = std::chrono::steady_clock::now();
  RtfResult r;
  r.frames = n_frames;
  r.ms_per_frame = std::chrono::duration<double, std::milli>(t1 - t0).count() / double(n_frames);
  const double hop_ms = 1000.0 * double(hop) / double(engine.config().sample_rate);
  r.rtf = r.ms_per_frame / hop_ms;
  return r;
}

}  // namespace pvqe
