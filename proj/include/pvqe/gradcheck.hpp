#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pvqe/graph.hpp"
#include "pvqe/ops.hpp"

namespace pvqe {

// Finite-difference verification battery for every differentiable primitive
// and for the whole model on a tiny configuration. Used by the `gradcheck`
// CLI command and the acceptance suite.

struct CheckItem {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass() const { return max_rel_err < tolerance; }
};

namespace gradcheck_detail {

template <class T>
Tensor<T> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = T(rng.uniform(lo, hi));
  return t;
}

// Random sign, magnitude bounded away from zero. Keeps every gradient
// coordinate well-conditioned so the per-coordinate relative error is not
// noise-dominated in 32-bit checks.
template <class T>
Tensor<T> rand_signed(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = T(rng.uniform(lo, hi) * (rng.bernoulli(0.5) ? 1.0 : -1.0));
  return t;
}

// f = sum(output .* R) with fixed random weights R, giving a scalar whose
// gradient magnitudes stay O(1).
template <class T>
int weighted_sum(Tape<T>& tp, int out, const Tensor<T>& r) {
  const int rid = tp.leaf(r);
  return ops::sum(tp, ops::mul(tp, out, rid));
}

// Multi-input finite-difference check: every input gets its own leaf; the
// gradient of each is compared against central differences over (optionally
// subsampled) coordinates.
template <class T>
double fd_multi(const std::vector<Tensor<T>>& inputs,
                const std::function<int(Tape<T>&, const std::vector<int>&)>& build, T eps,
                int max_coords_per_input = 0, uint64_t coord_seed = 17) {
  Tape<T> tape;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const auto& x : inputs) ids.push_back(tape.leaf(x));
  const int out = build(tape, ids);
  tape.backward(out);

  auto eval = [&](const std::vector<Tensor<T>>& xs) {
    Tape<T> t2;
    std::vector<int> id2;
    id2.reserve(xs.size());
    for (const auto& x : xs) id2.push_back(t2.leaf(x));
    return double(t2.val(build(t2, id2)).data[0]);
  };

  Rng rng(coord_seed);
  double worst = 0.0;
  std::vector<Tensor<T>> xs = inputs;
  for (size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<T> analytic =
        tape.has_grad(ids[k]) ? tape.grad(ids[k]) : Tensor<T>::zeros(inputs[k].shape);
    std::vector<int> coords;
    const int n = int(inputs[k].numel());
    if (max_coords_per_input > 0 && n > max_coords_per_input) {
      for (int i = 0; i < max_coords_per_input; ++i) coords.push_back(rng.uniform_int(0, n - 1));
    } else {
      coords.resize(size_t(n));
      for (int i = 0; i < n; ++i) coords[size_t(i)] = i;
    }
    for (int i : coords) {
      const T keep = xs[k].data[size_t(i)];
      xs[k].data[size_t(i)] = keep + eps;
      const double fp = eval(xs);
      xs[k].data[size_t(i)] = keep - eps;
      const double fm = eval(xs);
      xs[k].data[size_t(i)] = keep;
      const double num = (fp - fm) / (2.0 * double(eps));
      const double ana = double(analytic.data[size_t(i)]);
      const double rel = std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.win_len = 14;
  c.hop = 7;
  c.dft_len = 14;  // 8 bins
  c.far_filters = {2, 3};
  c.mic_filters = {2, 4};
  c.comb_filters = {4, 3};
  c.align_history = 3;
  c.align_dim = 4;
  c.gru_hidden = 8;
  c.fusion_dim = 6;
  c.embedding_dim = 8;
  c.dec_filters = {3, 3, 3, 3};
  return c;
}

}  // namespace gradcheck_detail

// Primitive-by-primitive checks. `tol` is the acceptance threshold for the
// worst relative error; `eps` the central-difference step.
template <class T>
std::vector<CheckItem> gradient_check_primitives(double tol, T eps, uint64_t seed = 7) {
  using namespace gradcheck_detail;
  using namespace ops;
  Rng rng(seed);
  std::vector<CheckItem> out;
  auto item = [&](const std::string& name, double err) {
    out.push_back({name, err, tol});
  };

  {
    auto x = rand_signed<T>({3, 5}, rng, 0.5, 1.0);
    auto w = rand_signed<T>({4, 5}, rng, 0.25, 0.5);
    auto b = rand_signed<T>({4}, rng, 0.25, 0.5);
    auto r = rand_signed<T>({3, 4}, rng, 0.75, 1.25);
    item("linear", fd_multi<T>({x, w, b}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, linear(tp, id[0], id[1], id[2]), r);
    }, eps));
  }
  {
    auto x = rand_signed<T>({4, 6}, rng, 0.5, 1.0);  // clear of the ELU kink
    auto r = rand_signed<T>({4, 6}, rng, 0.75, 1.25);
    item("elu", fd_multi<T>({x}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, elu(tp, id[0]), r);
    }, eps));
  }
  {
    auto x = rand_signed<T>({3, 7}, rng, 0.5, 1.0);
    auto g = rand_signed<T>({7}, rng, 0.75, 1.25);
    auto b = rand_signed<T>({7}, rng, 0.25, 0.5);
    auto r = rand_signed<T>({3, 7}, rng, 0.75, 1.25);
    item("layer_norm", fd_multi<T>({x, g, b}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, layer_norm(tp, id[0], id[1], id[2]), r);
    }, eps));
  }
  {
    auto x = rand_signed<T>({3, 6}, rng, 0.5, 1.0);
    auto r = rand_signed<T>({3, 6}, rng, 0.75, 1.25);
    item("softmax", fd_multi<T>({x}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, softmax(tp, id[0]), r);
    }, eps));
  }
  for (int stride : {1, 2}) {
    auto x = rand_signed<T>({2, 4, 7}, rng, 0.5, 1.0);
    auto w = rand_signed<T>({3, 2, 2, 3}, rng, 0.25, 0.5);
    auto b = rand_signed<T>({3}, rng, 0.25, 0.5);
    auto r = rand_signed<T>({3, 4, conv_out_freq(7, stride)}, rng, 0.75, 1.25);
    item("conv2d_causal/s" + std::to_string(stride),
         fd_multi<T>({x, w, b}, [&](Tape<T>& tp, const std::vector<int>& id) {
           return weighted_sum(tp, conv2d_causal(tp, id[0], id[1], id[2], stride), r);
         }, eps));
  }
  {
    auto x = rand_signed<T>({4, 3, 5}, rng, 0.5, 1.0);
    auto r = rand_signed<T>({2, 3, 10}, rng, 0.75, 1.25);
    item("pixel_shuffle_freq", fd_multi<T>({x}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, pixel_shuffle_freq(tp, id[0], 2), r);
    }, eps));
  }
  {
    const int I = 5, H = 4;
    auto x = rand_signed<T>({I}, rng, 0.5, 1.0);
    auto h = rand_signed<T>({H}, rng, 0.5, 1.0);
    auto w = rand_signed<T>({3 * H, I}, rng, 0.25, 0.5);
    auto u = rand_signed<T>({3 * H, H}, rng, 0.25, 0.5);
    auto b = rand_signed<T>({3 * H}, rng, 0.25, 0.5);
    auto bhn = rand_signed<T>({H}, rng, 0.25, 0.5);
    auto r = rand_signed<T>({H}, rng, 0.75, 1.25);
    item("gru_step", fd_multi<T>({x, h, w, u, b, bhn}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, gru_step(tp, id[0], id[1], id[2], id[3], id[4], id[5]), r);
    }, eps));
  }
  {
    const int I = 4, H = 3, L = 5;
    auto x = rand_signed<T>({L, I}, rng, 0.5, 1.0);
    auto w = rand_signed<T>({3 * H, I}, rng, 0.25, 0.5);
    auto u = rand_signed<T>({3 * H, H}, rng, 0.25, 0.5);
    auto b = rand_signed<T>({3 * H}, rng, 0.25, 0.5);
    auto bhn = rand_signed<T>({H}, rng, 0.25, 0.5);
    auto r = rand_signed<T>({L, H}, rng, 0.75, 1.25);
    item("gru_seq", fd_multi<T>({x, w, u, b, bhn}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, gru_seq(tp, id[0], id[1], id[2], id[3], id[4]), r);
    }, eps));
  }
  {
    const int L = 6, d = 3, dv = 4;
    auto q = rand_signed<T>({L, d}, rng, 0.5, 1.0);
    auto k = rand_signed<T>({L, d}, rng, 0.5, 1.0);
    auto v = rand_signed<T>({L, dv}, rng, 0.5, 1.0);
    auto r = rand_signed<T>({L, dv}, rng, 0.75, 1.25);
    item("windowed_attention", fd_multi<T>({q, k, v}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, windowed_attention(tp, id[0], id[1], id[2], 4), r);
    }, eps));
  }
  {
    auto m = rand_signed<T>({12, 3, 5}, rng, 0.5, 1.0);
    auto x = rand_signed<T>({2, 3, 5}, rng, 0.5, 1.0);
    auto r = rand_signed<T>({2, 3, 5}, rng, 0.75, 1.25);
    item("apply_ccm", fd_multi<T>({m, x}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, apply_ccm(tp, id[0], id[1], 2, 3), r);
    }, eps));
  }
  {
    // Keep magnitudes comfortably away from zero where |.|^c is steep.
    auto est = rand_signed<T>({2, 4, 6}, rng, 0.5, 1.0);
    auto tgt = rand_signed<T>({2, 4, 6}, rng, 0.5, 1.0);
    item("compressed_mse", fd_multi<T>({est}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return compressed_mse(tp, id[0], tgt, 0.3, 0.7);
    }, eps));
  }
  {
    auto x = rand_signed<T>({5, 3}, rng, 0.5, 1.0);
    auto r = rand_signed<T>({3}, rng, 0.75, 1.25);
    item("mean_rows", fd_multi<T>({x}, [&](Tape<T>& tp, const std::vector<int>& id) {
      return weighted_sum(tp, mean_rows(tp, id[0]), r);
    }, eps));
  }
  return out;
}

// Whole-model gradient check on a tiny configuration (8 bins, 4 frames):
// loss gradients w.r.t. every parameter and both input spectrograms, on a
// deterministic subsample of coordinates.
template <class T>
CheckItem gradient_check_full_model(double tol, T eps, int coords_per_tensor = 6,
                                    uint64_t seed = 11) {
  using namespace gradcheck_detail;
  const ModelConfig cfg = tiny_config();
  Model<T> model = build_model<T>(cfg, seed);
  Rng rng(mix_seed(seed, 0xf00d));
  const int frames = 4, bins = cfg.bins();
  Tensor<T> target({2, frames, bins});
  for (auto& v : target.data) v = T(rng.uniform(0.3, 1.0) * (rng.bernoulli(0.5) ? 1 : -1));

  std::vector<std::string> names;
  std::vector<Tensor<T>> inputs;
  for (const auto& [name, tensor] : model.params) {
    names.push_back(name);
    inputs.push_back(tensor);
  }
  auto spec_input = [&](double lo, double hi) {
    Tensor<T> t({2, frames, bins});
    for (auto& v : t.data) v = T(rng.uniform(lo, hi) * (rng.bernoulli(0.5) ? 1 : -1));
    return t;
  };
  inputs.push_back(spec_input(0.2, 1.0));  // mic compressed
  inputs.push_back(spec_input(0.2, 1.0));  // far compressed
  inputs.push_back(spec_input(0.3, 1.0));  // mic raw
  inputs.push_back(rand_tensor<T>({cfg.embedding_dim}, rng));

  auto build = [&](Tape<T>& tp, const std::vector<int>& ids) {
    std::map<std::string, int> p;
    for (size_t i = 0; i < names.size(); ++i) p.emplace(names[i], ids[i]);
    GraphInputs<T> in;
    in.mic_comp = ids[names.size()];
    in.far_comp = ids[names.size() + 1];
    in.mic_raw = ids[names.size() + 2];
    in.embedding = ids[names.size() + 3];
    auto out = forward_graph(tp, cfg, p, in);
    return ops::compressed_mse(tp, out.enhanced, target, cfg.compress_exp, 0.7);
  };
  CheckItem item;
  item.name = "full_model(8 bins, 4 frames)";
  item.tolerance = tol;
  item.max_rel_err = fd_multi<T>(inputs, build, eps, coords_per_tensor, mix_seed(seed, 0xc0de));
  return item;
}

}  // namespace pvqe
