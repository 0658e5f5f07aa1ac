#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ape/autodiff.hpp"

namespace ape {

// Central-difference check of the reverse-mode gradient. `f` builds a scalar
// loss from `x` on the given graph; it is evaluated 2*numel extra times on
// non-recording graphs. Returns the worst relative error, with denominator
// max(|analytic|, |numeric|, 1e-8). Meaningful at double precision only.
inline double grad_check(
    const std::function<Tensor<double>(Graph<double>&, Tensor<double>&)>& f, Tensor<double>& x,
    double h = 1e-5) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  x.zero_grad();
  Graph<double> g;
  Tensor<double> loss = f(g, x);
  if (!std::isfinite(loss.item())) throw Error("grad_check: non-finite function value");
  g.backward(loss);
  std::vector<double> analytic(x.grad(), x.grad() + x.numel());

  double worst = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double keep = x.at(i);
    x.at(i) = keep + h;
    Graph<double> gp(false);
    const double fp = f(gp, x).item();
    x.at(i) = keep - h;
    Graph<double> gm(false);
    const double fm = f(gm, x).item();
    x.at(i) = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw Error("grad_check: non-finite function value during perturbation");
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[static_cast<std::size_t>(i)]),
                                   std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[static_cast<std::size_t>(i)] - numeric) / denom);
  }
  return worst;
}

// Same check over several leaves at once (e.g. a whole parameter set): the
// loss is rebuilt per perturbed coordinate; gradients are taken from one
// analytic backward pass.
inline double grad_check_many(const std::function<Tensor<double>(Graph<double>&)>& f,
                              const std::vector<Tensor<double>*>& leaves, double h = 1e-5) {
  for (auto* t : leaves) {
    if (!t->requires_grad()) t->set_requires_grad(true);
    t->zero_grad();
  }
  Graph<double> g;
  Tensor<double> loss = f(g);
  if (!std::isfinite(loss.item())) throw Error("grad_check: non-finite function value");
  g.backward(loss);

  double worst = 0.0;
  for (auto* t : leaves) {
    for (std::int64_t i = 0; i < t->numel(); ++i) {
      const double analytic = t->grad()[i];
      const double keep = t->at(i);
      t->at(i) = keep + h;
      Graph<double> gp(false);
      const double fp = f(gp).item();
      t->at(i) = keep - h;
      Graph<double> gm(false);
      const double fm = f(gm).item();
      t->at(i) = keep;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw Error("grad_check: non-finite function value during perturbation");
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace ape
