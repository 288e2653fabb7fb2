#pragma once

#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvqe/adam.hpp"
#include "pvqe/enrollment.hpp"
#include "pvqe/graph.hpp"
#include "pvqe/loss.hpp"
#include "pvqe/metrics.hpp"
#include "pvqe/stream.hpp"
#include "pvqe/synth.hpp"
#include "pvqe/weights_io.hpp"

namespace pvqe {

struct TrainerConfig {
  double lr = 6e-5;
  double weight_decay = 1e-7;
  int batch = 4;
  int iterations = 5000;
  uint64_t seed = 1;
  int bptt_frames = 100;   // clips longer than this are cropped for the loss pass
  std::string embedding_mode = "internal";  // internal | fbank | zero
  bool enroll_backprop = false;  // default: embedding is a constant per step
  double loss_beta = 0.7;
  int checkpoint_every = 2000;
  int eval_every = 500;
  int eval_clips = 4;
  int threads = 2;

  void validate() const {
    if (!(lr > 0.0)) throw InvalidConfig("trainer: lr must be positive");
    if (batch < 1) throw InvalidConfig("trainer: batch must be >= 1");
    if (iterations < 1) throw InvalidConfig("trainer: iterations must be >= 1");
    if (bptt_frames < 2) throw InvalidConfig("trainer: bptt_frames must be >= 2");
    provenance_from_name(embedding_mode);
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lr", lr},
                          {"weight_decay", weight_decay},
                          {"batch", batch},
                          {"iterations", iterations},
                          {"seed", seed},
                          {"bptt_frames", bptt_frames},
                          {"embedding_mode", embedding_mode},
                          {"enroll_backprop", enroll_backprop},
                          {"loss_beta", loss_beta},
                          {"checkpoint_every", checkpoint_every},
                          {"eval_every", eval_every},
                          {"eval_clips", eval_clips},
                          {"threads", threads}};
  }
  static TrainerConfig from_json(const nlohmann::json& j) {
    TrainerConfig c;
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch = j.value("batch", c.batch);
    c.iterations = j.value("iterations", c.iterations);
    c.seed = j.value("seed", c.seed);
    c.bptt_frames = j.value("bptt_frames", c.bptt_frames);
    c.embedding_mode = j.value("embedding_mode", c.embedding_mode);
    c.enroll_backprop = j.value("enroll_backprop", c.enroll_backprop);
    c.loss_beta = j.value("loss_beta", c.loss_beta);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_clips = j.value("eval_clips", c.eval_clips);
    c.threads = j.value("threads", c.threads);
    return c;
  }
};

template <class T>
struct TrainResult {
  Model<T> model;
  std::vector<double> losses;           // one entry per iteration
  std::vector<std::pair<int, double>> eval_sisdr;  // (iteration, mean held-out SI-SDR)
};

namespace train_detail {

// Deterministic crop so long clips fit the BPTT budget; enrollment audio is
// never cropped.
template <class T>
void crop_clip(TrainingExample<T>& ex, int max_samples, Rng& rng) {
  const int n = int(ex.mic.size());
  if (n <= max_samples) return;
  const int off = rng.uniform_int(0, n - max_samples);
  auto cut = [&](std::vector<T>& v) {
    std::vector<T> out(v.begin() + off, v.begin() + off + max_samples);
    v = std::move(out);
  };
  cut(ex.mic);
  cut(ex.farend);
  cut(ex.target);
}

template <class T>
SpeakerEmbedding<T> embedding_for(const std::string& mode, const StreamEngine<T>* engine,
                                  const TrainingExample<T>& ex, const ModelConfig& cfg) {
  const Provenance p = provenance_from_name(mode);
  switch (p) {
    case Provenance::internal:
      return extract_internal_embedding(*engine, std::span<const T>(ex.enroll));
    case Provenance::fbank:
      return fbank_embedding(std::span<const T>(ex.enroll), cfg.features());
    case Provenance::zero:
      return zero_embedding<T>(cfg.embedding_dim);
    case Provenance::external:
      throw InvalidConfig("training with external embeddings needs embedding files");
  }
  throw InvalidConfig("bad embedding mode");
}

template <class T>
struct ItemResult {
  double loss = 0.0;
  ParamStore<T> grads;
};

// Forward + backward for one batch item on its own tape.
template <class T>
ItemResult<T> train_item(const Model<T>& model, const TrainingExample<T>& ex,
                         const SpeakerEmbedding<T>& emb, const TrainerConfig& tc) {
  const FeatureConfig fc = model.config.features();
  auto mic_sp = spectrograms<T>(std::span<const T>(ex.mic), fc);
  auto far_sp = spectrograms<T>(std::span<const T>(ex.farend), fc);
  auto tgt_sp = spectrograms<T>(std::span<const T>(ex.target), fc);

  Tape<T> tp;
  auto leaves = param_leaves(tp, model);
  GraphInputs<T> in;
  in.mic_comp = tp.leaf(mic_sp.comp);
  in.far_comp = tp.leaf(far_sp.comp);
  in.mic_raw = tp.leaf(mic_sp.raw);

  if (tc.enroll_backprop && emb.provenance == Provenance::internal) {
    // Differentiable enrollment: run the forward path over the enrollment
    // clip with a zero pinned embedding and average the frame embeddings.
    auto en_sp = spectrograms<T>(std::span<const T>(ex.enroll), fc);
    Tensor<T> zeros_far({2, en_sp.frames, model.config.bins()});
    GraphInputs<T> ein;
    ein.mic_comp = tp.leaf(en_sp.comp);
    ein.far_comp = tp.leaf(zeros_far);
    ein.mic_raw = tp.leaf(en_sp.raw);
    ein.embedding = tp.leaf(Tensor<T>({model.config.embedding_dim}));
    auto eout = forward_graph(tp, model.config, leaves, ein, /*run_decoder=*/false);
    in.embedding = ops::mean_rows(tp, eout.emb_seq);
  } else {
    Tensor<T> e({int(emb.v.size())});
    std::copy(emb.v.begin(), emb.v.end(), e.data.begin());
    in.embedding = tp.leaf(e);
  }

  auto out = forward_graph(tp, model.config, leaves, in);
  const int loss_id =
      ops::compressed_mse(tp, out.enhanced, tgt_sp.raw, model.config.compress_exp, tc.loss_beta);
  ItemResult<T> res;
  res.loss = double(tp.val(loss_id).data[0]);
  tp.backward(loss_id);
  for (const auto& [name, id] : leaves) {
    if (tp.has_grad(id))
      res.grads.emplace(name, tp.grad(id));
    else
      res.grads.emplace(name, Tensor<T>::zeros(tp.val(id).shape));
  }
  return res;
}

}  // namespace train_detail

// Quick held-out check: mean SI-SDR of the enhanced target over a few fixed
// examples (latency-compensated).
template <class T>
double holdout_sisdr(const Model<T>& model, const TrainerConfig& tc, const DataConfig& dc,
                     int clips) {
  StreamEngine<T> engine(model);
  const int lat = model.config.win_len - model.config.hop;
  double acc = 0.0;
  int used = 0;
  for (int i = 0; i < clips; ++i) {
    auto ex = make_example<T>(dc, mix_seed(tc.seed, 0xE7A1), uint64_t(i));
    auto emb = train_detail::embedding_for<T>(tc.embedding_mode, &engine, ex, model.config);
    StreamState<T> st = engine.make_state();
    engine.pin_embedding(st, std::span<const T>(emb.v));
    auto out = enhance_streaming(engine, st, std::span<const T>(ex.mic),
                                 std::span<const T>(ex.farend));
    const size_t n = out.size();
    if (n <= size_t(lat)) continue;
    std::span<const T> est(out.data() + lat, n - size_t(lat));
    std::span<const T> ref(ex.target.data(), n - size_t(lat));
    try {
      acc += si_sdr(ref, est);
      ++used;
    } catch (const UndefinedMetric&) {
    }
  }
  return used ? acc / used : 0.0;
}

// Desk-scale training loop. Per iteration: sample a batch, derive each
// enrollment embedding with the current model, forward the clips, compressed
// MSE against the target spectrogram, backward, Adam. Deterministic given
// (seed, configs): data is generated per (seed, global index) and gradients
// are reduced in item order regardless of thread scheduling.
template <class T>
TrainResult<T> train(const ModelConfig& model_cfg, const TrainerConfig& tc, const DataConfig& dc,
                     const std::string& out_dir = "") {
  model_cfg.validate();
  tc.validate();
  if (tc.embedding_mode == "internal" && model_cfg.embedding_dim != model_cfg.gru_hidden)
    throw InvalidConfig("internal embedding training requires embedding_dim == gru_hidden");
  if (tc.embedding_mode == "fbank" && model_cfg.embedding_dim != 160)
    throw InvalidConfig("fbank embedding training requires embedding_dim == 160");

  namespace fs = std::filesystem;
  const bool persist = !out_dir.empty();
  std::ofstream loss_csv, eval_csv;
  if (persist) {
    fs::create_directories(out_dir);
    loss_csv.open(out_dir + "/loss.csv");
    loss_csv << "iteration,loss,lr\n";
    eval_csv.open(out_dir + "/eval.csv");
    eval_csv << "iteration,mean_sisdr_db\n";
  }

  TrainResult<T> result;
  result.model = build_model<T>(model_cfg, tc.seed);
  AdamState<T> adam = AdamState<T>::like(result.model.params);
  AdamConfig ac;
  ac.lr = tc.lr;
  ac.weight_decay = tc.weight_decay;

  const int crop_samples = tc.bptt_frames * model_cfg.hop;
  const bool need_engine = tc.embedding_mode == "internal";

  for (int iter = 0; iter < tc.iterations; ++iter) {
    std::unique_ptr<StreamEngine<T>> engine;
    if (need_engine) engine = std::make_unique<StreamEngine<T>>(result.model);

    auto run_item = [&](int item) -> train_detail::ItemResult<T> {
      const uint64_t index = uint64_t(iter) * uint64_t(tc.batch) + uint64_t(item);
      auto ex = make_example<T>(dc, tc.seed, index);
      Rng crop_rng(mix_seed(tc.seed, index, 0xc209));
      train_detail::crop_clip(ex, crop_samples, crop_rng);
      auto emb = train_detail::embedding_for<T>(tc.embedding_mode, engine.get(), ex, model_cfg);
      return train_detail::train_item(result.model, ex, emb, tc);
    };

    std::vector<train_detail::ItemResult<T>> items(static_cast<size_t>(tc.batch));
    if (tc.threads > 1 && tc.batch > 1) {
      std::vector<std::future<train_detail::ItemResult<T>>> futs;
      futs.reserve(size_t(tc.batch));
      for (int i = 0; i < tc.batch; ++i)
        futs.push_back(std::async(std::launch::async, run_item, i));
      for (int i = 0; i < tc.batch; ++i) items[size_t(i)] = futs[size_t(i)].get();
    } else {
      for (int i = 0; i < tc.batch; ++i) items[size_t(i)] = run_item(i);
    }

    // Reduce in item order, mean over the batch.
    ParamStore<T> grads = std::move(items[0].grads);
    double loss = items[0].loss;
    for (int i = 1; i < tc.batch; ++i) {
      loss += items[size_t(i)].loss;
      for (auto& [name, g] : grads) {
        const Tensor<T>& gi = items[size_t(i)].grads.at(name);
        for (size_t k = 0; k < g.data.size(); ++k) g.data[k] += gi.data[k];
      }
    }
    loss /= double(tc.batch);
    const T inv = T(1.0 / double(tc.batch));
    for (auto& [name, g] : grads)
      for (auto& v : g.data) v *= inv;

    if (!std::isfinite(loss))
      throw TrainingDiverged("loss is not finite at iteration " + std::to_string(iter));
    adam_step(result.model.params, grads, adam, ac);
    result.losses.push_back(loss);
    if (persist) loss_csv << iter << ',' << loss << ',' << ac.lr << '\n';

    const bool last = iter + 1 == tc.iterations;
    if (tc.eval_every > 0 && ((iter + 1) % tc.eval_every == 0 || last)) {
      const double sisdr = holdout_sisdr(result.model, tc, dc, tc.eval_clips);
      result.eval_sisdr.emplace_back(iter + 1, sisdr);
      if (persist) {
        eval_csv << (iter + 1) << ',' << sisdr << '\n';
        eval_csv.flush();
        loss_csv.flush();
      }
    }
    if (persist && tc.checkpoint_every > 0 && ((iter + 1) % tc.checkpoint_every == 0 || last)) {
      save_weights(result.model,
                   out_dir + "/ckpt_" + std::to_string(iter + 1) + ".pvqe");
    }
  }
  if (persist) save_weights(result.model, out_dir + "/final.pvqe");
  return result;
}

}  // namespace pvqe
