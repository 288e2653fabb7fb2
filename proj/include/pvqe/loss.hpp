#pragma once

#include <cmath>

#include "pvqe/ops.hpp"
#include "pvqe/tensor.hpp"

namespace pvqe {

struct LossConfig {
  double c = 0.3;    // compression exponent
  double beta = 0.7; // weight of the phase-aware complex term

  void validate() const {
    if (!(c > 0.0 && c <= 1.0)) throw InvalidConfig("loss: exponent must be in (0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidConfig("loss: beta must be in [0, 1]");
  }
};

// Complex compressed MSE on [2, T, F] spectrograms:
//   L = (1-beta) * mean_{t,f} (|S|^c - |E|^c)^2
//     + beta     * mean_{t,f} | S|S|^{c-1} - E|E|^{c-1} |^2
// Zero-magnitude bins compress to exactly zero (phase of zero is zero).
// This is the reference implementation; the taped twin in ops:: adds a tiny
// magnitude floor so training gradients stay bounded.
template <class T>
double compressed_mse_loss(const Tensor<T>& target, const Tensor<T>& est, const LossConfig& cfg) {
  cfg.validate();
  if (!target.same_shape(est) || target.rank() != 3 || target.shape[0] != 2)
    throw InvalidInput("compressed_mse_loss: [2, T, F] spectrograms with equal shapes required");
  const int tlen = target.shape[1], bins = target.shape[2];
  auto comp = [&](double re, double im, double& cre, double& cim, double& cmag) {
    const double m = std::sqrt(re * re + im * im);
    if (m > 0.0) {
      cmag = std::pow(m, cfg.c);
      cre = re * (cmag / m);
      cim = im * (cmag / m);
    } else {
      cmag = cre = cim = 0.0;
    }
  };
  double acc = 0.0;
  for (int t = 0; t < tlen; ++t)
    for (int f = 0; f < bins; ++f) {
      double sr, si, sm, er, ei, em;
      comp(double(target(0, t, f)), double(target(1, t, f)), sr, si, sm);
      comp(double(est(0, t, f)), double(est(1, t, f)), er, ei, em);
      const double dmag = sm - em;
      const double dre = sr - er, dim = si - ei;
      acc += (1.0 - cfg.beta) * dmag * dmag + cfg.beta * (dre * dre + dim * dim);
    }
  return acc / (double(tlen) * double(bins));
}

}  // namespace pvqe
