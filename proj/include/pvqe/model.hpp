#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvqe/common.hpp"
#include "pvqe/dsp.hpp"
#include "pvqe/tensor.hpp"

namespace pvqe {

// PVQE-S network description. Frequency is downsampled by stride_f in every
// encoder block and restored by sub-pixel upsampling in every decoder block;
// the defaults give the schedule 161 -> 81 -> 41 -> 21 -> 11 and back up
// 22 -> 44 -> 88 -> 176, cropped to 161.
struct ModelConfig {
  int sample_rate = 16000;
  int win_len = 320;
  int hop = 160;
  int dft_len = 320;
  double compress_exp = 0.3;

  std::array<int, 2> far_filters{8, 24};
  std::array<int, 2> mic_filters{16, 40};
  std::array<int, 2> comb_filters{56, 24};
  int kernel_t = 2;
  int kernel_f = 3;
  int stride_f = 2;

  int align_history = 100;  // frames of far-end history = 1 s at 10 ms hop
  int align_dim = 16;

  int gru_hidden = 256;
  int gru_layers = 2;
  int fusion_dim = 240;
  int embedding_dim = 256;

  std::array<int, 4> dec_filters{40, 32, 32, 27};
  double res_expansion = 0.7;

  int ccm_taps_t = 2;
  int ccm_taps_f = 3;

  int bins() const { return dft_len / 2 + 1; }

  FeatureConfig features() const {
    FeatureConfig fc;
    fc.sample_rate = sample_rate;
    fc.win_len = win_len;
    fc.hop = hop;
    fc.dft_len = dft_len;
    fc.compress_exp = compress_exp;
    return fc;
  }

  void validate() const {
    features().validate();
    if (bins() < 2) throw InvalidConfig("model config: zero or degenerate bin count");
    for (int v : far_filters) if (v < 1) throw InvalidConfig("model config: far-end filter count must be positive");
    for (int v : mic_filters) if (v < 1) throw InvalidConfig("model config: mic filter count must be positive");
    for (int v : comb_filters) if (v < 1) throw InvalidConfig("model config: combined filter count must be positive");
    for (int v : dec_filters) if (v < 1) throw InvalidConfig("model config: decoder filter count must be positive");
    if (kernel_t < 1) throw InvalidConfig("model config: temporal kernel must be >= 1");
    if (kernel_f < 1 || kernel_f % 2 == 0) throw InvalidConfig("model config: frequency kernel must be odd");
    if (stride_f < 1) throw InvalidConfig("model config: stride must be >= 1");
    if (align_history < 1) throw InvalidConfig("model config: alignment history must be >= 1");
    if (align_dim < 1) throw InvalidConfig("model config: alignment dim must be >= 1");
    if (gru_hidden < 1 || gru_layers < 1) throw InvalidConfig("model config: GRU sizes must be positive");
    if (fusion_dim < 1 || embedding_dim < 1) throw InvalidConfig("model config: fusion sizes must be positive");
    if (!(res_expansion > 0.0)) throw InvalidConfig("model config: residual expansion must be positive");
    if (ccm_taps_t < 1 || ccm_taps_f < 1 || ccm_taps_f % 2 == 0)
      throw InvalidConfig("model config: CCM taps must be >= 1 with odd frequency taps");
  }

  // PVQE-S (the paper's small configuration).
  static ModelConfig small() { return ModelConfig{}; }

  // Desk-scale trainer configuration: channel counts halved, GRU 128.
  static ModelConfig desk() {
    ModelConfig c;
    c.far_filters = {4, 12};
    c.mic_filters = {8, 20};
    c.comb_filters = {28, 12};
    c.dec_filters = {20, 16, 16, 14};
    c.gru_hidden = 128;
    c.fusion_dim = 120;
    c.embedding_dim = 128;
    return c;
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"sample_rate", sample_rate},
                          {"win_len", win_len},
                          {"hop", hop},
                          {"dft_len", dft_len},
                          {"compress_exp", compress_exp},
                          {"far_filters", far_filters},
                          {"mic_filters", mic_filters},
                          {"comb_filters", comb_filters},
                          {"kernel_t", kernel_t},
                          {"kernel_f", kernel_f},
                          {"stride_f", stride_f},
                          {"align_history", align_history},
                          {"align_dim", align_dim},
                          {"gru_hidden", gru_hidden},
                          {"gru_layers", gru_layers},
                          {"fusion_dim", fusion_dim},
                          {"embedding_dim", embedding_dim},
                          {"dec_filters", dec_filters},
                          {"res_expansion", res_expansion},
                          {"ccm_taps_t", ccm_taps_t},
                          {"ccm_taps_f", ccm_taps_f}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.win_len = j.value("win_len", c.win_len);
    c.hop = j.value("hop", c.hop);
    c.dft_len = j.value("dft_len", c.dft_len);
    c.compress_exp = j.value("compress_exp", c.compress_exp);
    if (j.contains("far_filters")) c.far_filters = j.at("far_filters").get<std::array<int, 2>>();
    if (j.contains("mic_filters")) c.mic_filters = j.at("mic_filters").get<std::array<int, 2>>();
    if (j.contains("comb_filters")) c.comb_filters = j.at("comb_filters").get<std::array<int, 2>>();
    c.kernel_t = j.value("kernel_t", c.kernel_t);
    c.kernel_f = j.value("kernel_f", c.kernel_f);
    c.stride_f = j.value("stride_f", c.stride_f);
    c.align_history = j.value("align_history", c.align_history);
    c.align_dim = j.value("align_dim", c.align_dim);
    c.gru_hidden = j.value("gru_hidden", c.gru_hidden);
    c.gru_layers = j.value("gru_layers", c.gru_layers);
    c.fusion_dim = j.value("fusion_dim", c.fusion_dim);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    if (j.contains("dec_filters")) c.dec_filters = j.at("dec_filters").get<std::array<int, 4>>();
    c.res_expansion = j.value("res_expansion", c.res_expansion);
    c.ccm_taps_t = j.value("ccm_taps_t", c.ccm_taps_t);
    c.ccm_taps_f = j.value("ccm_taps_f", c.ccm_taps_f);
    return c;
  }

  uint64_t hash() const {
    const std::string s = to_json().dump();
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return h;
  }

  bool operator==(const ModelConfig& o) const { return to_json() == o.to_json(); }
};

// Frequency/channel schedule derived from the config; every engine stage
// asserts against it.
struct ShapeSchedule {
  int f0 = 0;          // input bins
  int f_e1 = 0, f_e2 = 0;    // branch encoder outputs
  int f_c1 = 0, f_c2 = 0;    // combined encoder outputs
  int flat_dim = 0;          // combined output flattened (Df)
  int mic_flat = 0, far_flat = 0;
  std::array<int, 4> f_dec{};   // decoder outputs after each shuffle
  std::array<int, 4> dec_in_ch{};
  int ccm_channels = 0;
};

inline int res_hidden(int channels, double expansion) {
  return std::max(1, int(std::lround(expansion * double(channels))));
}

inline ShapeSchedule shape_schedule(const ModelConfig& cfg) {
  cfg.validate();
  ShapeSchedule s;
  auto up = [](int f) { return f * 2; };
  auto down = [&cfg](int f) { return (f + cfg.stride_f - 1) / cfg.stride_f; };
  s.f0 = cfg.bins();
  s.f_e1 = down(s.f0);
  s.f_e2 = down(s.f_e1);
  s.f_c1 = down(s.f_e2);
  s.f_c2 = down(s.f_c1);
  s.flat_dim = cfg.comb_filters[1] * s.f_c2;
  s.mic_flat = cfg.mic_filters[1] * s.f_e2;
  s.far_flat = cfg.far_filters[1] * s.f_e2;
  s.f_dec[0] = up(s.f_c2);
  s.f_dec[1] = up(s.f_dec[0]);
  s.f_dec[2] = up(s.f_dec[1]);
  s.f_dec[3] = up(s.f_dec[2]);
  if (s.f_dec[3] < s.f0)
    throw InvalidConfig("model config: decoder output narrower than the input bins");
  // Skips: combined block 2 into decoder block 1, combined block 1 into
  // block 2, mic branch block 2 into block 3, none into block 4.
  s.dec_in_ch[0] = cfg.comb_filters[1] + cfg.comb_filters[1];
  s.dec_in_ch[1] = cfg.dec_filters[0] + cfg.comb_filters[0];
  s.dec_in_ch[2] = cfg.dec_filters[1] + cfg.mic_filters[1];
  s.dec_in_ch[3] = cfg.dec_filters[2];
  s.ccm_channels = 2 * cfg.ccm_taps_t * cfg.ccm_taps_f;
  return s;
}

// One entry of the parameter schema; the schema is the single source of
// truth for names, shapes and initializer scales.
struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  int fan_in = 0;    // 0 selects layer-norm init (gamma=1 / beta=0)
  bool ln_gamma = false;
};

inline std::vector<ParamSpec> param_schema(const ModelConfig& cfg) {
  const ShapeSchedule s = shape_schedule(cfg);
  std::vector<ParamSpec> specs;
  const int kt = cfg.kernel_t, kf = cfg.kernel_f;

  auto conv = [&](const std::string& name, int co, int ci, int kkt, int kkf) {
    specs.push_back({name + ".w", {co, ci, kkt, kkf}, ci * kkt * kkf, false});
    specs.push_back({name + ".b", {co}, ci * kkt * kkf, false});
  };
  auto lin = [&](const std::string& name, int o, int i) {
    specs.push_back({name + ".w", {o, i}, i, false});
    specs.push_back({name + ".b", {o}, i, false});
  };
  auto ln = [&](const std::string& name, int d) {
    specs.push_back({name + ".g", {d}, 0, true});
    specs.push_back({name + ".b", {d}, 0, false});
  };
  auto res_block = [&](const std::string& name, int c) {
    const int h = res_hidden(c, cfg.res_expansion);
    conv(name + ".c1", h, c, 1, 1);
    conv(name + ".c2", h, h, kt, kf);
    conv(name + ".c3", c, h, 1, 1);
  };
  auto enc_branch = [&](const std::string& name, const std::array<int, 2>& filters, int c_in) {
    conv(name + ".b1.conv", filters[0], c_in, kt, kf);
    res_block(name + ".b1.res", filters[0]);
    conv(name + ".b2.conv", filters[1], filters[0], kt, kf);
    res_block(name + ".b2.res", filters[1]);
  };

  enc_branch("enc.mic", cfg.mic_filters, 2);
  enc_branch("enc.far", cfg.far_filters, 2);
  enc_branch("enc.comb", cfg.comb_filters, cfg.mic_filters[1] + cfg.far_filters[1]);

  lin("align.q", cfg.align_dim, s.mic_flat);
  lin("align.k", cfg.align_dim, s.far_flat);

  lin("fuse.emb", cfg.fusion_dim, cfg.embedding_dim);
  ln("fuse.emb_ln", cfg.fusion_dim);
  lin("fuse.out", s.flat_dim, s.flat_dim + cfg.fusion_dim);
  ln("fuse.out_ln", s.flat_dim);

  ln("temporal.ln_in", s.flat_dim);
  for (int l = 1; l <= cfg.gru_layers; ++l) {
    const int in_dim = l == 1 ? s.flat_dim : cfg.gru_hidden;
    const std::string g = "temporal.gru" + std::to_string(l);
    specs.push_back({g + ".w", {3 * cfg.gru_hidden, in_dim}, in_dim, false});
    specs.push_back({g + ".u", {3 * cfg.gru_hidden, cfg.gru_hidden}, cfg.gru_hidden, false});
    specs.push_back({g + ".b", {3 * cfg.gru_hidden}, in_dim, false});
    specs.push_back({g + ".bhn", {cfg.gru_hidden}, cfg.gru_hidden, false});
  }
  ln("temporal.ln_out", cfg.gru_hidden);
  lin("temporal.proj", s.flat_dim, cfg.gru_hidden);

  for (int i = 0; i < 4; ++i) {
    const std::string b = "dec.b" + std::to_string(i + 1);
    conv(b + ".conv", cfg.dec_filters[size_t(i)] * 2, s.dec_in_ch[size_t(i)], kt, kf);
    if (i < 2) res_block(b + ".res", cfg.dec_filters[size_t(i)]);
  }
  conv("ccm.head", s.ccm_channels, cfg.dec_filters[3], 1, 1);
  return specs;
}

template <class T>
struct Model {
  ModelConfig config;
  ParamStore<T> params;

  size_t parameter_count() const { return param_count(params); }
};

// Allocate and initialize every parameter: uniform(-a, a) with
// a = sqrt(1/fan_in), layer-norm gamma = 1 and beta = 0. Deterministic per
// (config, seed).
template <class T>
Model<T> build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model<T> model;
  model.config = cfg;
  Rng rng(mix_seed(seed, 0xb01dface));
  for (const auto& spec : param_schema(cfg)) {
    Tensor<T> t(spec.shape);
    if (spec.fan_in > 0) {
      const double a = std::sqrt(1.0 / double(spec.fan_in));
      for (auto& v : t.data) v = T(rng.uniform(-a, a));
    } else if (spec.ln_gamma) {
      t.fill(T(1));
    }
    model.params.emplace(spec.name, std::move(t));
  }
  return model;
}

// Per-section parameter counts for the `params` report.
template <class T>
std::vector<std::pair<std::string, size_t>> param_breakdown(const Model<T>& model) {
  std::vector<std::pair<std::string, size_t>> out;
  auto section = [](const std::string& name) {
    auto p1 = name.find('.');
    auto p2 = name.find('.', p1 + 1);
    if (name.rfind("enc.", 0) == 0 || name.rfind("dec.", 0) == 0)
      return name.substr(0, p2);
    return name.substr(0, p1);
  };
  for (const auto& [name, tensor] : model.params) {
    const std::string sec = section(name);
    if (out.empty() || out.back().first != sec) out.emplace_back(sec, 0);
    out.back().second += tensor.numel();
  }
  return out;
}

}  // namespace pvqe
