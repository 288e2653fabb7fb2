#pragma once

#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "pvqe/tensor.hpp"

namespace pvqe {

// Reverse-mode tape. Nodes are created in execution order; backward() walks
// them in reverse, so any graph built through the op helpers is already
// topologically sorted. Gradients accumulate by sum across uses.
template <class T>
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;  // (tape, node id)

  int leaf(Tensor<T> v) { return push(std::move(v), nullptr); }

  int push(Tensor<T> v, BackFn back) {
    nodes_.push_back(Node{std::move(v), std::move(back), {}});
    return int(nodes_.size()) - 1;
  }

  const Tensor<T>& val(int id) const { return nodes_[size_t(id)].value; }

  // Lazily allocated gradient buffer, zeros on first touch.
  Tensor<T>& grad(int id) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[size_t(id)];
    if (g.data.empty()) g = Tensor<T>::zeros(nodes_[size_t(id)].value.shape);
    return g;
  }
  bool has_grad(int id) const {
    return !grads_.empty() && !grads_[size_t(id)].data.empty();
  }

  void save(int id, Tensor<T> aux) { nodes_[size_t(id)].aux.push_back(std::move(aux)); }
  const Tensor<T>& saved(int id, int k) const { return nodes_[size_t(id)].aux[size_t(k)]; }

  size_t size() const { return nodes_.size(); }

  // Seed d(loss)/d(loss) = 1 and propagate back through every recorded op.
  void backward(int loss_id) {
    if (nodes_[size_t(loss_id)].value.numel() != 1)
      throw InvalidInput("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor<T>{});
    grad(loss_id).data[0] = T(1);
    for (int id = loss_id; id >= 0; --id) {
      auto& node = nodes_[size_t(id)];
      if (!node.back) continue;
      if (!has_grad(id)) continue;  // nothing flowed into this node
      node.back(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    BackFn back;
    std::vector<Tensor<T>> aux;
  };
  // Deques keep val()/grad() references stable across later pushes.
  std::deque<Node> nodes_;
  std::deque<Tensor<T>> grads_;
};

// Compare backward() against central finite differences for a scalar-valued
// graph over one input tensor. `build` must construct the graph from the
// input leaf and return the scalar output node. Returns the worst relative
// error with denominator max(|analytic|, |numeric|, 1e-8).
template <class T>
struct GradCheckResult {
  double max_rel_err = 0.0;
  int worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
};

template <class T>
GradCheckResult<T> finite_diff_check(const std::function<int(Tape<T>&, int)>& build,
                                     const Tensor<T>& x0, T eps,
                                     const std::vector<int>* coords = nullptr) {
  Tape<T> tape;
  const int x_id = tape.leaf(x0);
  const int out = build(tape, x_id);
  tape.backward(out);
  Tensor<T> analytic = tape.has_grad(x_id) ? tape.grad(x_id) : Tensor<T>::zeros(x0.shape);

  auto eval = [&](const Tensor<T>& x) -> double {
    Tape<T> t2;
    const int id = t2.leaf(x);
    const int o = build(t2, id);
    return double(t2.val(o).data[0]);
  };

  GradCheckResult<T> res;
  std::vector<int> all;
  if (!coords) {
    all.resize(x0.numel());
    for (size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  }
  const std::vector<int>& idx = coords ? *coords : all;
  Tensor<T> x = x0;
  for (int i : idx) {
    const T keep = x.data[size_t(i)];
    x.data[size_t(i)] = keep + eps;
    const double fp = eval(x);
    x.data[size_t(i)] = keep - eps;
    const double fm = eval(x);
    x.data[size_t(i)] = keep;
    const double num = (fp - fm) / (2.0 * double(eps));
    const double ana = double(analytic.data[size_t(i)]);
    const double denom = std::max({std::abs(num), std::abs(ana), 1e-8});
    const double rel = std::abs(num - ana) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_index = i;
      res.analytic = ana;
      res.numeric = num;
    }
  }
  return res;
}

}  // namespace pvqe
