#pragma once

#include <map>
#include <span>
#include <string>

#include "pvqe/model.hpp"
#include "pvqe/ops.hpp"

namespace pvqe {

// Offline whole-utterance forward pass on the autodiff tape. Frame-for-frame
// this reproduces the streaming engine (same kernels, same accumulation
// order); the two paths differ only in how state is carried, which is
// exactly what the streaming-equivalence harness checks.

// Raw and power-law-compressed spectrograms as [2, T, F] tensors with the
// same framing as the streaming engine: frame t covers samples
// ((t+1)*hop - win_len, (t+1)*hop], zero history before the stream start.
template <class T>
struct SpectrogramPair {
  Tensor<T> raw;
  Tensor<T> comp;
  int frames = 0;
};

template <class T>
SpectrogramPair<T> spectrograms(std::span<const T> audio, const FeatureConfig& cfg) {
  cfg.validate();
  const int hop = cfg.hop, win = cfg.win_len, bins = cfg.bins();
  const int frames = int(audio.size()) / hop;
  if (frames < 1) throw InvalidInput("spectrograms: audio shorter than one hop");
  SpectrogramPair<T> out;
  out.frames = frames;
  out.raw = Tensor<T>({2, frames, bins});
  out.comp = Tensor<T>({2, frames, bins});
  const Dft<T> dft(cfg.dft_len);
  const auto window = make_sqrt_hann<T>(cfg.win_len);
  std::vector<T> frame(static_cast<size_t>(win));
  for (int t = 0; t < frames; ++t) {
    const long long end = (long long)(t + 1) * hop;
    for (int i = 0; i < win; ++i) {
      const long long idx = end - win + i;
      frame[size_t(i)] = idx >= 0 ? audio[size_t(idx)] : T(0);
    }
    auto raw = stft_frame<T>(frame, window, dft);
    auto comp = compress(raw, cfg.compress_exp);
    for (int f = 0; f < bins; ++f) {
      out.raw(0, t, f) = raw.re[size_t(f)];
      out.raw(1, t, f) = raw.im[size_t(f)];
      out.comp(0, t, f) = comp.re[size_t(f)];
      out.comp(1, t, f) = comp.im[size_t(f)];
    }
  }
  return out;
}

// Overlap-add synthesis of a whole [2, T, F] spectrogram.
template <class T>
std::vector<T> istft_spectrogram(const Tensor<T>& spec, const FeatureConfig& cfg) {
  const int frames = spec.shape[1], bins = spec.shape[2];
  const Dft<T> dft(cfg.dft_len);
  const auto window = make_sqrt_hann<T>(cfg.win_len);
  OlaState<T> ola;
  ola.reset(cfg.win_len, cfg.hop);
  std::vector<T> out;
  out.reserve(size_t(frames) * size_t(cfg.hop));
  ComplexSpectrum<T> fr(bins);
  for (int t = 0; t < frames; ++t) {
    for (int f = 0; f < bins; ++f) {
      fr.re[size_t(f)] = spec(0, t, f);
      fr.im[size_t(f)] = spec(1, t, f);
    }
    auto y = istft_overlap_add(fr, std::span<const T>(window), ola, dft);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

template <class T>
std::map<std::string, int> param_leaves(Tape<T>& tp, const Model<T>& model) {
  std::map<std::string, int> ids;
  for (const auto& [name, tensor] : model.params) ids.emplace(name, tp.leaf(tensor));
  return ids;
}

template <class T>
struct GraphInputs {
  int mic_comp = -1;  // [2, T, F] compressed mic spectrogram
  int far_comp = -1;  // [2, T, F] compressed far-end spectrogram
  int mic_raw = -1;   // [2, T, F] uncompressed mic spectrogram (CCM input)
  int embedding = -1; // [K] speaker embedding node
};

template <class T>
struct GraphOutputs {
  int enhanced = -1;   // [2, T, F] uncompressed estimate
  int emb_seq = -1;    // [T, H] internal frame embeddings
  int prefusion = -1;  // [T, Df] flattened combined-encoder output
};

namespace graph_detail {

template <class T>
int res_block(Tape<T>& tp, const std::map<std::string, int>& p, const std::string& name, int x) {
  using namespace ops;
  int h = conv2d_causal(tp, x, p.at(name + ".c1.w"), p.at(name + ".c1.b"), 1);
  h = elu(tp, h);
  h = conv2d_causal(tp, h, p.at(name + ".c2.w"), p.at(name + ".c2.b"), 1);
  h = elu(tp, h);
  h = conv2d_causal(tp, h, p.at(name + ".c3.w"), p.at(name + ".c3.b"), 1);
  return add(tp, h, x);
}

template <class T>
int enc_block(Tape<T>& tp, const std::map<std::string, int>& p, const std::string& name, int x,
              int stride) {
  using namespace ops;
  int y = conv2d_causal(tp, x, p.at(name + ".conv.w"), p.at(name + ".conv.b"), stride);
  y = elu(tp, y);
  return res_block(tp, p, name + ".res", y);
}

}  // namespace graph_detail

// Build the full PVQE forward graph over a whole utterance. When
// `run_decoder` is false, stops after the temporal block (enrollment path).
template <class T>
GraphOutputs<T> forward_graph(Tape<T>& tp, const ModelConfig& cfg,
                              const std::map<std::string, int>& p, const GraphInputs<T>& in,
                              bool run_decoder = true) {
  using namespace ops;
  const ShapeSchedule s = shape_schedule(cfg);
  const int frames = tp.val(in.mic_comp).shape[1];

  auto branch = [&](const std::string& name, int x) {
    int y = graph_detail::enc_block(tp, p, name + ".b1", x, cfg.stride_f);
    return graph_detail::enc_block(tp, p, name + ".b2", y, cfg.stride_f);
  };
  const int mic_feat = branch("enc.mic", in.mic_comp);
  const int far_feat = branch("enc.far", in.far_comp);

  const int mic_flat = flatten_cf(tp, mic_feat);
  const int far_flat = flatten_cf(tp, far_feat);
  const int q = linear(tp, mic_flat, p.at("align.q.w"), p.at("align.q.b"));
  const int k = linear(tp, far_flat, p.at("align.k.w"), p.at("align.k.b"));
  const int attn = windowed_attention(tp, q, k, far_flat, cfg.align_history);
  const int aligned = unflatten_cf(tp, attn, cfg.far_filters[1], s.f_e2);

  const int comb_in = concat_ch(tp, mic_feat, aligned);
  const int comb1 = graph_detail::enc_block(tp, p, "enc.comb.b1", comb_in, cfg.stride_f);
  const int comb2 = graph_detail::enc_block(tp, p, "enc.comb.b2", comb1, cfg.stride_f);
  const int flat = flatten_cf(tp, comb2);

  // Speaker fusion: the embedding projection is frame-independent, computed
  // once and broadcast over time.
  int e = linear(tp, in.embedding, p.at("fuse.emb.w"), p.at("fuse.emb.b"));
  e = elu(tp, e);
  e = layer_norm(tp, e, p.at("fuse.emb_ln.g"), p.at("fuse.emb_ln.b"));
  const int e_rows = repeat_rows(tp, e, frames);
  int fused = concat_cols(tp, flat, e_rows);
  fused = linear(tp, fused, p.at("fuse.out.w"), p.at("fuse.out.b"));
  fused = elu(tp, fused);
  fused = layer_norm(tp, fused, p.at("fuse.out_ln.g"), p.at("fuse.out_ln.b"));

  int x = layer_norm(tp, fused, p.at("temporal.ln_in.g"), p.at("temporal.ln_in.b"));
  for (int l = 1; l <= cfg.gru_layers; ++l) {
    const std::string g = "temporal.gru" + std::to_string(l);
    x = gru_seq(tp, x, p.at(g + ".w"), p.at(g + ".u"), p.at(g + ".b"), p.at(g + ".bhn"));
  }
  const int emb_seq = layer_norm(tp, x, p.at("temporal.ln_out.g"), p.at("temporal.ln_out.b"));

  GraphOutputs<T> out;
  out.emb_seq = emb_seq;
  out.prefusion = flat;
  if (!run_decoder) return out;

  const int proj = linear(tp, emb_seq, p.at("temporal.proj.w"), p.at("temporal.proj.b"));
  int cur = unflatten_cf(tp, proj, cfg.comb_filters[1], s.f_c2);

  const std::array<int, 3> skips = {comb2, comb1, mic_feat};
  const std::array<int, 3> pad_to = {s.f_c2, s.f_dec[0], s.f_dec[1]};
  for (int i = 0; i < 4; ++i) {
    const std::string b = "dec.b" + std::to_string(i + 1);
    int blk_in = cur;
    if (i < 3) {
      int sk = skips[size_t(i)];
      if (tp.val(sk).shape[2] != pad_to[size_t(i)]) sk = pad_freq(tp, sk, pad_to[size_t(i)]);
      blk_in = concat_ch(tp, cur, sk);
    }
    int y = conv2d_causal(tp, blk_in, p.at(b + ".conv.w"), p.at(b + ".conv.b"), 1);
    y = pixel_shuffle_freq(tp, y, 2);
    y = elu(tp, y);
    if (i < 2) y = graph_detail::res_block(tp, p, b + ".res", y);
    cur = y;
  }
  cur = crop_freq(tp, cur, cfg.bins());

  const int coeffs = conv2d_causal(tp, cur, p.at("ccm.head.w"), p.at("ccm.head.b"), 1);
  out.enhanced = apply_ccm(tp, coeffs, in.mic_raw, cfg.ccm_taps_t, cfg.ccm_taps_f);
  return out;
}

// Whole-utterance enhancement through the offline graph (values only).
// Test oracle counterpart of the streaming engine.
template <class T>
std::vector<T> enhance_offline(const Model<T>& model, std::span<const T> mic,
                               std::span<const T> far, std::span<const T> embedding) {
  const FeatureConfig fc = model.config.features();
  auto mic_sp = spectrograms<T>(mic, fc);
  std::vector<T> far_sam(far.begin(), far.end());
  far_sam.resize(mic.size(), T(0));
  auto far_sp = spectrograms<T>(std::span<const T>(far_sam), fc);
  Tape<T> tp;
  auto leaves = param_leaves(tp, model);
  GraphInputs<T> in;
  in.mic_comp = tp.leaf(mic_sp.comp);
  in.far_comp = tp.leaf(far_sp.comp);
  in.mic_raw = tp.leaf(mic_sp.raw);
  Tensor<T> emb({model.config.embedding_dim});
  if (!embedding.empty()) {
    if (int(embedding.size()) != model.config.embedding_dim)
      throw InvalidConfig("enhance_offline: embedding length mismatch");
    std::copy(embedding.begin(), embedding.end(), emb.data.begin());
  }
  in.embedding = tp.leaf(emb);
  auto out = forward_graph(tp, model.config, leaves, in);
  return istft_spectrogram(tp.val(out.enhanced), fc);
}

}  // namespace pvqe
