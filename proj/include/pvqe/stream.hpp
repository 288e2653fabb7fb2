#pragma once

#include <array>
#include <cstring>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "pvqe/dsp.hpp"
#include "pvqe/kernels.hpp"
#include "pvqe/model.hpp"

namespace pvqe {

// All per-stream recurrent state. One state serves exactly one stream; the
// engine itself is immutable and shared.
template <class T>
struct StreamState {
  std::vector<T> mic_win, far_win;           // sliding sample windows (win_len)
  OlaState<T> ola;
  std::vector<T> prev_spec_re, prev_spec_im; // (taps_t - 1) past raw mic spectra
  std::vector<std::vector<T>> conv_cache;    // per cached conv site
  std::vector<T> ring_feat;                  // align_history x far_flat
  std::vector<T> ring_key;                   // align_history x align_dim
  int ring_count = 0;
  int ring_head = 0;                         // next write slot
  std::vector<std::vector<T>> gru_h;
  std::vector<T> embedding;                  // pinned speaker embedding
  uint64_t frames = 0;
  uint64_t config_hash = 0;
  bool ready = false;

  // Zero every cache, ring and hidden; the pinned embedding survives only
  // when asked for. Idempotent.
  void reset(bool keep_embedding) {
    auto zero = [](std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); };
    zero(mic_win);
    zero(far_win);
    zero(ola.tail);
    zero(prev_spec_re);
    zero(prev_spec_im);
    for (auto& c : conv_cache) zero(c);
    zero(ring_feat);
    zero(ring_key);
    ring_count = 0;
    ring_head = 0;
    for (auto& h : gru_h) zero(h);
    if (!keep_embedding) zero(embedding);
    frames = 0;
  }
};

// Optional per-frame instrumentation.
template <class T>
struct FrameTrace {
  std::vector<T> internal_emb;    // LN output after the last GRU layer
  std::vector<T> prefusion_flat;  // flattened combined-encoder output
  ComplexSpectrum<T> enhanced;    // CCM output (uncompressed)
};

// Frame-synchronous inference engine. Binds a model's parameters into
// forward-friendly layouts once; process_frame then runs the full Fig-1
// pipeline per 10 ms hop with no look-ahead.
template <class T>
class StreamEngine {
 public:
  explicit StreamEngine(const Model<T>& model)
      : cfg_(model.config), sched_(shape_schedule(cfg_)), dft_(cfg_.dft_len) {
    cfg_.validate();
    window_ = make_sqrt_hann<T>(cfg_.win_len);
    bind(model.params);
  }
  StreamEngine(const StreamEngine&) = delete;  // bound pointers reference params_
  StreamEngine& operator=(const StreamEngine&) = delete;

  const ModelConfig& config() const { return cfg_; }
  const ShapeSchedule& schedule() const { return sched_; }

  StreamState<T> make_state() const {
    StreamState<T> st;
    st.mic_win.assign(size_t(cfg_.win_len), T(0));
    st.far_win.assign(size_t(cfg_.win_len), T(0));
    st.ola.reset(cfg_.win_len, cfg_.hop);
    st.prev_spec_re.assign(size_t(cfg_.ccm_taps_t - 1) * size_t(cfg_.bins()), T(0));
    st.prev_spec_im.assign(size_t(cfg_.ccm_taps_t - 1) * size_t(cfg_.bins()), T(0));
    st.conv_cache.resize(cache_sizes_.size());
    for (size_t i = 0; i < cache_sizes_.size(); ++i)
      st.conv_cache[i].assign(cache_sizes_[i], T(0));
    st.ring_feat.assign(size_t(cfg_.align_history) * size_t(sched_.far_flat), T(0));
    st.ring_key.assign(size_t(cfg_.align_history) * size_t(cfg_.align_dim), T(0));
    st.gru_h.assign(size_t(cfg_.gru_layers), std::vector<T>(size_t(cfg_.gru_hidden), T(0)));
    st.embedding.assign(size_t(cfg_.embedding_dim), T(0));
    st.config_hash = cfg_.hash();
    st.ready = true;
    return st;
  }

  void pin_embedding(StreamState<T>& st, std::span<const T> emb) const {
    if (int(emb.size()) != cfg_.embedding_dim)
      throw InvalidConfig("embedding length " + std::to_string(emb.size()) +
                          " does not match the model fusion size " +
                          std::to_string(cfg_.embedding_dim));
    std::copy(emb.begin(), emb.end(), st.embedding.begin());
  }

  // Consume one hop of mic (and far-end) samples, emit one hop of enhanced
  // samples. A missing far end is treated as silence. When `run_decoder` is
  // false the pipeline stops after the temporal block (used for enrollment)
  // and the return value is empty.
  std::vector<T> process_frame(StreamState<T>& st, std::span<const T> mic,
                               std::span<const T> far, FrameTrace<T>* trace = nullptr,
                               bool run_decoder = true) const {
    if (!st.ready || st.config_hash != cfg_.hash())
      throw InvalidState("process_frame: stream state not initialized for this model");
    const int hop = cfg_.hop, win = cfg_.win_len, bins = cfg_.bins();
    if (int(mic.size()) != hop) throw InvalidInput("process_frame: expected one hop of mic samples");
    if (!far.empty() && int(far.size()) != hop)
      throw InvalidInput("process_frame: expected one hop of far-end samples");

    slide(st.mic_win, mic);
    if (far.empty()) {
      std::memmove(st.far_win.data(), st.far_win.data() + hop, size_t(win - hop) * sizeof(T));
      std::fill(st.far_win.end() - hop, st.far_win.end(), T(0));
    } else {
      slide(st.far_win, far);
    }

    ComplexSpectrum<T> mic_raw = stft_frame<T>(st.mic_win, window_, dft_);
    ComplexSpectrum<T> far_raw = stft_frame<T>(st.far_win, window_, dft_);
    ComplexSpectrum<T> mic_c = compress(mic_raw, cfg_.compress_exp);
    ComplexSpectrum<T> far_c = compress(far_raw, cfg_.compress_exp);

    // Branch encoders on the compressed spectra (2 channels: re, im).
    std::vector<T> mic_in(size_t(2) * bins), far_in(size_t(2) * bins);
    std::memcpy(mic_in.data(), mic_c.re.data(), size_t(bins) * sizeof(T));
    std::memcpy(mic_in.data() + bins, mic_c.im.data(), size_t(bins) * sizeof(T));
    std::memcpy(far_in.data(), far_c.re.data(), size_t(bins) * sizeof(T));
    std::memcpy(far_in.data() + bins, far_c.im.data(), size_t(bins) * sizeof(T));

    std::vector<T> mic_feat = branch_step(mic_enc_, st, mic_in);  // [mic2, f_e2]
    std::vector<T> far_feat = branch_step(far_enc_, st, far_in);  // [far2, f_e2]

    // Far-end ring push (features + key), then soft alignment.
    push_ring(st, far_feat);
    std::vector<T> aligned = align_step_ring(st, mic_feat);

    // Combined encoder over [mic_feat ; aligned].
    std::vector<T> comb_in(mic_feat.size() + aligned.size());
    std::memcpy(comb_in.data(), mic_feat.data(), mic_feat.size() * sizeof(T));
    std::memcpy(comb_in.data() + mic_feat.size(), aligned.data(), aligned.size() * sizeof(T));
    std::vector<T> comb1 = block_step(comb_enc_.b1, st, comb_in);
    std::vector<T> comb2 = block_step(comb_enc_.b2, st, comb1);

    if (trace) trace->prefusion_flat = comb2;

    // Speaker fusion on the flattened bottleneck.
    std::vector<T> fused = fuse_step(st.embedding, comb2);

    // Temporal block; the LN output after the last GRU layer is the
    // internal frame embedding.
    std::vector<T> x(static_cast<size_t>(sched_.flat_dim));
    layer_norm_vec(fused.data(), sched_.flat_dim, ln_in_.g->ptr(), ln_in_.b->ptr(), T(1e-5),
                   x.data());
    std::vector<T> cur = x;
    for (size_t l = 0; l < grus_.size(); ++l) {
      std::vector<T> hn(static_cast<size_t>(cfg_.gru_hidden));
      gru_cell(grus_[l].wt.ptr(), grus_[l].ut.ptr(), grus_[l].b->ptr(), grus_[l].bhn->ptr(),
               cur.data(), grus_[l].in_dim, st.gru_h[l].data(), cfg_.gru_hidden, hn.data());
      st.gru_h[l] = hn;
      cur = std::move(hn);
    }
    std::vector<T> emb_frame(static_cast<size_t>(cfg_.gru_hidden));
    layer_norm_vec(cur.data(), cfg_.gru_hidden, ln_out_.g->ptr(), ln_out_.b->ptr(), T(1e-5),
                   emb_frame.data());
    if (trace) trace->internal_emb = emb_frame;
    st.frames++;

    if (!run_decoder) return {};

    std::vector<T> temporal_out(static_cast<size_t>(sched_.flat_dim));
    linear_t(proj_wt_.ptr(), proj_b_->ptr(), emb_frame.data(), cfg_.gru_hidden, sched_.flat_dim,
             temporal_out.data());

    // Decoder with skips at matching resolutions.
    std::vector<T> d = decode_steps(st, temporal_out, comb2, comb1, mic_feat);

    // CCM head (1x1 conv) and mask application on the raw spectrum.
    std::vector<T> coeffs(size_t(sched_.ccm_channels) * size_t(bins));
    {
      const T* frames_arr[1] = {d.data()};
      conv_frame<T>(ccm_head_.w->ptr(), ccm_head_.b->ptr(), std::span<const T* const>(frames_arr, 1),
                    cfg_.dec_filters[3], bins, sched_.ccm_channels, 1, 1, 1, coeffs.data());
    }
    ComplexSpectrum<T> enhanced(bins);
    {
      std::vector<const T*> hre(static_cast<size_t>(cfg_.ccm_taps_t)), him(static_cast<size_t>(cfg_.ccm_taps_t));
      hre[0] = mic_raw.re.data();
      him[0] = mic_raw.im.data();
      for (int dt = 1; dt < cfg_.ccm_taps_t; ++dt) {
        hre[size_t(dt)] = st.prev_spec_re.data() + size_t(dt - 1) * bins;
        him[size_t(dt)] = st.prev_spec_im.data() + size_t(dt - 1) * bins;
      }
      ccm_frame<T>(coeffs.data(), bins, cfg_.ccm_taps_t, cfg_.ccm_taps_f, hre, him,
                   enhanced.re.data(), enhanced.im.data());
    }
    // Shift raw-spectrum history (newest first).
    if (cfg_.ccm_taps_t > 1) {
      std::memmove(st.prev_spec_re.data() + bins, st.prev_spec_re.data(),
                   size_t(cfg_.ccm_taps_t - 2) * size_t(bins) * sizeof(T));
      std::memmove(st.prev_spec_im.data() + bins, st.prev_spec_im.data(),
                   size_t(cfg_.ccm_taps_t - 2) * size_t(bins) * sizeof(T));
      std::memcpy(st.prev_spec_re.data(), mic_raw.re.data(), size_t(bins) * sizeof(T));
      std::memcpy(st.prev_spec_im.data(), mic_raw.im.data(), size_t(bins) * sizeof(T));
    }
    if (trace) trace->enhanced = enhanced;
    return istft_overlap_add(enhanced, std::span<const T>(window_), st.ola, dft_);
  }

 private:
  struct BConv {
    const Tensor<T>* w = nullptr;
    const Tensor<T>* b = nullptr;
    int ci = 0, co = 0, f_in = 0, f_out = 0, k_t = 0, k_f = 0, stride = 1;
    int site = -1;  // conv cache index, -1 when k_t == 1
  };
  struct BRes {
    BConv c1, c2, c3;
  };
  struct BBlock {
    BConv conv;
    BRes res;
    bool has_res = true;
  };
  struct BBranch {
    BBlock b1, b2;
  };
  struct BLinear {
    Tensor<T> wt;
    const Tensor<T>* b = nullptr;
    int in_dim = 0, out_dim = 0;
  };
  struct BLn {
    const Tensor<T>* g = nullptr;
    const Tensor<T>* b = nullptr;
  };
  struct BGru {
    Tensor<T> wt, ut;
    const Tensor<T>* b = nullptr;
    const Tensor<T>* bhn = nullptr;
    int in_dim = 0;
  };
  struct BDecBlock {
    BConv conv;
    BRes res;
    bool has_res = false;
    int skip_ch = 0;      // channels concatenated before the conv
    int skip_pad_to = 0;  // frequency the skip is padded to
  };

  void slide(std::vector<T>& wbuf, std::span<const T> fresh) const {
    const int hop = cfg_.hop, win = cfg_.win_len;
    std::memmove(wbuf.data(), wbuf.data() + hop, size_t(win - hop) * sizeof(T));
    std::memcpy(wbuf.data() + (win - hop), fresh.data(), size_t(hop) * sizeof(T));
  }

  int new_site(int ci, int f_in, int k_t) {
    if (k_t <= 1) return -1;
    cache_sizes_.push_back(size_t(k_t - 1) * size_t(ci) * size_t(f_in));
    return int(cache_sizes_.size()) - 1;
  }

  BConv bind_conv(const ParamStore<T>& ps, const std::string& name, int f_in, int stride,
                  bool cached = true) {
    BConv c;
    c.w = &param(ps, name + ".w");
    c.b = &param(ps, name + ".b");
    c.co = c.w->shape[0];
    c.ci = c.w->shape[1];
    c.k_t = c.w->shape[2];
    c.k_f = c.w->shape[3];
    c.stride = stride;
    c.f_in = f_in;
    c.f_out = conv_out_freq(f_in, stride);
    c.site = cached ? new_site(c.ci, f_in, c.k_t) : -1;
    return c;
  }

  BRes bind_res(const ParamStore<T>& ps, const std::string& name, int f) {
    BRes r;
    r.c1 = bind_conv(ps, name + ".c1", f, 1);
    r.c2 = bind_conv(ps, name + ".c2", f, 1);
    r.c3 = bind_conv(ps, name + ".c3", f, 1);
    return r;
  }

  BLinear bind_linear(const ParamStore<T>& ps, const std::string& name) {
    BLinear l;
    const Tensor<T>& w = param(ps, name + ".w");
    l.wt = transposed(w);
    l.b = &param(ps, name + ".b");
    l.out_dim = w.shape[0];
    l.in_dim = w.shape[1];
    return l;
  }

  void bind(const ParamStore<T>& params_in) {
    params_ = params_in;  // own a copy; bound pointers reference it
    const ParamStore<T>& ps = params_;
    auto bind_branch = [&](const std::string& name) {
      BBranch br;
      br.b1.conv = bind_conv(ps, name + ".b1.conv", sched_.f0, cfg_.stride_f);
      br.b1.res = bind_res(ps, name + ".b1.res", sched_.f_e1);
      br.b2.conv = bind_conv(ps, name + ".b2.conv", sched_.f_e1, cfg_.stride_f);
      br.b2.res = bind_res(ps, name + ".b2.res", sched_.f_e2);
      return br;
    };
    mic_enc_ = bind_branch("enc.mic");
    far_enc_ = bind_branch("enc.far");
    comb_enc_.b1.conv = bind_conv(ps, "enc.comb.b1.conv", sched_.f_e2, cfg_.stride_f);
    comb_enc_.b1.res = bind_res(ps, "enc.comb.b1.res", sched_.f_c1);
    comb_enc_.b2.conv = bind_conv(ps, "enc.comb.b2.conv", sched_.f_c1, cfg_.stride_f);
    comb_enc_.b2.res = bind_res(ps, "enc.comb.b2.res", sched_.f_c2);

    align_q_ = bind_linear(ps, "align.q");
    align_k_ = bind_linear(ps, "align.k");
    fuse_emb_ = bind_linear(ps, "fuse.emb");
    fuse_emb_ln_ = {&param(ps, "fuse.emb_ln.g"), &param(ps, "fuse.emb_ln.b")};
    fuse_out_ = bind_linear(ps, "fuse.out");
    fuse_out_ln_ = {&param(ps, "fuse.out_ln.g"), &param(ps, "fuse.out_ln.b")};
    ln_in_ = {&param(ps, "temporal.ln_in.g"), &param(ps, "temporal.ln_in.b")};
    ln_out_ = {&param(ps, "temporal.ln_out.g"), &param(ps, "temporal.ln_out.b")};
    grus_.clear();
    for (int l = 1; l <= cfg_.gru_layers; ++l) {
      const std::string g = "temporal.gru" + std::to_string(l);
      BGru bg;
      bg.wt = transposed(param(ps, g + ".w"));
      bg.ut = transposed(param(ps, g + ".u"));
      bg.b = &param(ps, g + ".b");
      bg.bhn = &param(ps, g + ".bhn");
      bg.in_dim = l == 1 ? sched_.flat_dim : cfg_.gru_hidden;
      grus_.push_back(std::move(bg));
    }
    {
      const Tensor<T>& w = param(ps, "temporal.proj.w");
      proj_wt_ = transposed(w);
      proj_b_ = &param(ps, "temporal.proj.b");
    }
    const std::array<int, 4> f_dec_in = {sched_.f_c2, sched_.f_dec[0], sched_.f_dec[1],
                                         sched_.f_dec[2]};
    for (int i = 0; i < 4; ++i) {
      BDecBlock blk;
      blk.conv = bind_conv(ps, "dec.b" + std::to_string(i + 1) + ".conv", f_dec_in[size_t(i)],
                           1);
      blk.has_res = i < 2;
      if (blk.has_res)
        blk.res = bind_res(ps, "dec.b" + std::to_string(i + 1) + ".res", sched_.f_dec[size_t(i)]);
      dec_[size_t(i)] = std::move(blk);
    }
    dec_[0].skip_ch = cfg_.comb_filters[1];
    dec_[0].skip_pad_to = sched_.f_c2;
    dec_[1].skip_ch = cfg_.comb_filters[0];
    dec_[1].skip_pad_to = sched_.f_dec[0];
    dec_[2].skip_ch = cfg_.mic_filters[1];
    dec_[2].skip_pad_to = sched_.f_dec[1];
    ccm_head_.w = &param(ps, "ccm.head.w");
    ccm_head_.b = &param(ps, "ccm.head.b");
  }

  // Run one causal conv step, maintaining the site's (k_t - 1)-frame cache.
  std::vector<T> conv_step(const BConv& c, StreamState<T>& st, const T* in) const {
    std::vector<T> out(size_t(c.co) * size_t(c.f_out));
    std::array<const T*, 8> frames{};
    const size_t fsz = size_t(c.ci) * size_t(c.f_in);
    if (c.k_t > 1) {
      auto& cache = st.conv_cache[size_t(c.site)];
      for (int kt = 0; kt < c.k_t - 1; ++kt) frames[size_t(kt)] = cache.data() + size_t(kt) * fsz;
      frames[size_t(c.k_t - 1)] = in;
      conv_frame<T>(c.w->ptr(), c.b->ptr(), std::span<const T* const>(frames.data(), size_t(c.k_t)),
                    c.ci, c.f_in, c.co, c.k_t, c.k_f, c.stride, out.data());
      if (c.k_t > 2)
        std::memmove(cache.data(), cache.data() + fsz, (size_t(c.k_t) - 2) * fsz * sizeof(T));
      std::memcpy(cache.data() + (size_t(c.k_t) - 2) * fsz, in, fsz * sizeof(T));
    } else {
      frames[0] = in;
      conv_frame<T>(c.w->ptr(), c.b->ptr(), std::span<const T* const>(frames.data(), 1), c.ci,
                    c.f_in, c.co, c.k_t, c.k_f, c.stride, out.data());
    }
    return out;
  }

  // Inverted residual: 1x1 -> ELU -> k_t x k_f causal -> ELU -> 1x1, identity
  // shortcut.
  std::vector<T> res_step(const BRes& r, StreamState<T>& st, const std::vector<T>& in) const {
    std::vector<T> h1 = conv_step(r.c1, st, in.data());
    elu_vec(h1.data(), int(h1.size()), h1.data());
    std::vector<T> h2 = conv_step(r.c2, st, h1.data());
    elu_vec(h2.data(), int(h2.size()), h2.data());
    std::vector<T> h3 = conv_step(r.c3, st, h2.data());
    for (size_t i = 0; i < h3.size(); ++i) h3[i] += in[i];
    return h3;
  }

  std::vector<T> block_step(const BBlock& blk, StreamState<T>& st, const std::vector<T>& in) const {
    std::vector<T> y = conv_step(blk.conv, st, in.data());
    elu_vec(y.data(), int(y.size()), y.data());
    return res_step(blk.res, st, y);
  }

  std::vector<T> branch_step(const BBranch& br, StreamState<T>& st, const std::vector<T>& in) const {
    std::vector<T> y = block_step(br.b1, st, in);
    return block_step(br.b2, st, y);
  }

  void push_ring(StreamState<T>& st, const std::vector<T>& far_feat) const {
    const int H = cfg_.align_history;
    const int d = cfg_.align_dim;
    const size_t fsz = size_t(sched_.far_flat);
    std::memcpy(st.ring_feat.data() + size_t(st.ring_head) * fsz, far_feat.data(),
                fsz * sizeof(T));
    linear_t(align_k_.wt.ptr(), align_k_.b->ptr(), far_feat.data(), align_k_.in_dim, d,
             st.ring_key.data() + size_t(st.ring_head) * size_t(d));
    st.ring_head = (st.ring_head + 1) % H;
    if (st.ring_count < H) st.ring_count++;
  }

  // Scaled dot-product attention over the valid history, softmax over the
  // delays present so far; returns the weighted far-end feature frame.
  std::vector<T> align_step_ring(StreamState<T>& st, const std::vector<T>& mic_feat) const {
    const int H = cfg_.align_history;
    const int d = cfg_.align_dim;
    const int count = st.ring_count;
    if (count < 1) throw InvalidState("align: empty far-end history");
    std::vector<T> q(static_cast<size_t>(d));
    linear_t(align_q_.wt.ptr(), align_q_.b->ptr(), mic_feat.data(), align_q_.in_dim, d, q.data());
    const T scale = T(1) / std::sqrt(T(d));
    std::vector<T> scores(static_cast<size_t>(count)), alpha(static_cast<size_t>(count));
    const int oldest = (st.ring_head - count + 2 * H) % H;
    for (int j = 0; j < count; ++j) {
      const T* kr = st.ring_key.data() + size_t((oldest + j) % H) * size_t(d);
      T s = T(0);
      for (int i = 0; i < d; ++i) s += q[size_t(i)] * kr[i];
      scores[size_t(j)] = s * scale;
    }
    softmax_vec(scores.data(), count, alpha.data());
    std::vector<T> out(size_t(sched_.far_flat), T(0));
    for (int j = 0; j < count; ++j) {
      const T a = alpha[size_t(j)];
      const T* fr = st.ring_feat.data() + size_t((oldest + j) % H) * size_t(sched_.far_flat);
      for (int i = 0; i < sched_.far_flat; ++i) out[size_t(i)] += a * fr[i];
    }
    return out;
  }

  // e' = LN(ELU(W_e emb)); out = LN(ELU(W_o [flat ; e'])).
  std::vector<T> fuse_step(const std::vector<T>& emb, const std::vector<T>& flat) const {
    const int fd = cfg_.fusion_dim, df = sched_.flat_dim;
    std::vector<T> e(static_cast<size_t>(fd));
    linear_t(fuse_emb_.wt.ptr(), fuse_emb_.b->ptr(), emb.data(), cfg_.embedding_dim, fd, e.data());
    elu_vec(e.data(), fd, e.data());
    std::vector<T> en(static_cast<size_t>(fd));
    layer_norm_vec(e.data(), fd, fuse_emb_ln_.g->ptr(), fuse_emb_ln_.b->ptr(), T(1e-5), en.data());
    std::vector<T> cat(static_cast<size_t>(df + fd));
    std::memcpy(cat.data(), flat.data(), size_t(df) * sizeof(T));
    std::memcpy(cat.data() + df, en.data(), size_t(fd) * sizeof(T));
    std::vector<T> o(static_cast<size_t>(df));
    linear_t(fuse_out_.wt.ptr(), fuse_out_.b->ptr(), cat.data(), df + fd, df, o.data());
    elu_vec(o.data(), df, o.data());
    std::vector<T> on(static_cast<size_t>(df));
    layer_norm_vec(o.data(), df, fuse_out_ln_.g->ptr(), fuse_out_ln_.b->ptr(), T(1e-5), on.data());
    return on;
  }

  std::vector<T> decode_steps(StreamState<T>& st, const std::vector<T>& temporal_out,
                              const std::vector<T>& comb2, const std::vector<T>& comb1,
                              const std::vector<T>& mic_feat) const {
    const std::array<const std::vector<T>*, 3> skips = {&comb2, &comb1, &mic_feat};
    const std::array<int, 3> skip_f = {sched_.f_c2, sched_.f_c1, sched_.f_e2};
    std::vector<T> cur = temporal_out;
    int cur_ch = cfg_.comb_filters[1];
    int cur_f = sched_.f_c2;
    for (int i = 0; i < 4; ++i) {
      const BDecBlock& blk = dec_[size_t(i)];
      std::vector<T> in;
      if (i < 3) {
        // Concatenate the skip, zero-padded at the top of the band.
        const int pad_to = blk.skip_pad_to;
        in.assign(size_t(cur_ch + blk.skip_ch) * size_t(pad_to), T(0));
        std::memcpy(in.data(), cur.data(), size_t(cur_ch) * size_t(cur_f) * sizeof(T));
        const std::vector<T>& sk = *skips[size_t(i)];
        for (int c = 0; c < blk.skip_ch; ++c)
          std::memcpy(in.data() + (size_t(cur_ch) + size_t(c)) * size_t(pad_to),
                      sk.data() + size_t(c) * size_t(skip_f[size_t(i)]),
                      size_t(skip_f[size_t(i)]) * sizeof(T));
      } else {
        in = cur;
      }
      std::vector<T> y = conv_step(blk.conv, st, in.data());
      const int co = blk.conv.co / 2;
      std::vector<T> up(size_t(co) * size_t(blk.conv.f_out) * 2);
      pixel_shuffle_frame(y.data(), co, blk.conv.f_out, 2, up.data());
      elu_vec(up.data(), int(up.size()), up.data());
      if (blk.has_res) up = res_step(blk.res, st, up);
      cur = std::move(up);
      cur_ch = co;
      cur_f = blk.conv.f_out * 2;
    }
    // Crop the upsampled band back to the input bins.
    const int bins = cfg_.bins();
    std::vector<T> out(size_t(cur_ch) * size_t(bins));
    for (int c = 0; c < cur_ch; ++c)
      std::memcpy(out.data() + size_t(c) * size_t(bins), cur.data() + size_t(c) * size_t(cur_f),
                  size_t(bins) * sizeof(T));
    return out;
  }

  ModelConfig cfg_;
  ShapeSchedule sched_;
  Dft<T> dft_;
  std::vector<T> window_;
  ParamStore<T> params_;
  std::vector<size_t> cache_sizes_;

  BBranch mic_enc_, far_enc_, comb_enc_;
  BLinear align_q_, align_k_, fuse_emb_, fuse_out_;
  BLn fuse_emb_ln_, fuse_out_ln_, ln_in_, ln_out_;
  std::vector<BGru> grus_;
  Tensor<T> proj_wt_;
  const Tensor<T>* proj_b_ = nullptr;
  std::array<BDecBlock, 4> dec_;
  struct {
    const Tensor<T>* w = nullptr;
    const Tensor<T>* b = nullptr;
  } ccm_head_;
};

// Convenience: run a whole clip through a fresh or caller-provided state.
template <class T>
std::vector<T> enhance_streaming(const StreamEngine<T>& eng, StreamState<T>& st,
                                 std::span<const T> mic, std::span<const T> far) {
  const int hop = eng.config().hop;
  const int frames = int(mic.size()) / hop;
  std::vector<T> out;
  out.reserve(size_t(frames) * size_t(hop));
  for (int t = 0; t < frames; ++t) {
    auto mic_hop = mic.subspan(size_t(t) * hop, size_t(hop));
    std::span<const T> far_hop;
    if (size_t(t + 1) * size_t(hop) <= far.size())
      far_hop = far.subspan(size_t(t) * hop, size_t(hop));
    auto y = eng.process_frame(st, mic_hop, far_hop);
    out.insert(out.end(), y.begin(), y.end());
  }
  return out;
}

}  // namespace pvqe
