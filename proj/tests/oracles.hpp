#pragma once

// Independent reference implementations the tests compare against: a central
// finite-difference gradient probe and per-pixel brute-force metrics written
// with set logic instead of confusion counts.

#include <cmath>
#include <functional>

#include "tamperseg/common.hpp"
#include "tamperseg/image.hpp"
#include "tamperseg/nn.hpp"

namespace oracles {

using tamperseg::Mask;
using tamperseg::ParamList;

// Analytic grads must already be accumulated in p->grad. loss_fn re-runs the
// forward pass from scratch. The denominator floor scales with the loss value
// because the central difference carries roundoff noise of order eps*|L|/step;
// gradients below that scale are unmeasurable, not wrong.
inline double fd_max_rel_err(const ParamList<double>& params,
                             const std::function<double()>& loss_fn,
                             double step = 1e-5) {
  const double floor = std::max(1e-6, 1e-4 * std::abs(loss_fn()));
  double worst = 0.0;
  for (tamperseg::Param<double>* p : params) {
    if (!p->trainable) continue;
    for (int i = 0; i < p->value.rows(); ++i)
      for (int j = 0; j < p->value.cols(); ++j) {
        const double saved = p->value(i, j);
        p->value(i, j) = saved + step;
        double lp = loss_fn();
        p->value(i, j) = saved - step;
        double lm = loss_fn();
        p->value(i, j) = saved;
        double fd = (lp - lm) / (2.0 * step);
        double a = p->grad(i, j);
        double rel = std::abs(a - fd) / std::max(floor, std::abs(a) + std::abs(fd));
        if (rel > worst) worst = rel;
      }
  }
  return worst;
}

inline double oracle_miou(const Mask& pred, const Mask& gt) {
  long long ie = 0, ue = 0, ia = 0, ua = 0;
  for (size_t k = 0; k < pred.data.size(); ++k) {
    bool p = pred.data[k] != 0, g = gt.data[k] != 0;
    if (p && g) ++ie;
    if (p || g) ++ue;
    if (!p && !g) ++ia;
    if (!p || !g) ++ua;
  }
  double iou_e = ue == 0 ? 1.0 : double(ie) / double(ue);
  double iou_a = ua == 0 ? 1.0 : double(ia) / double(ua);
  return 0.5 * (iou_e + iou_a);
}

// 2PR/(P+R) collapses to 2tp/(|pred|+|gt|), with the empty-empty case as 1
inline double oracle_f1(const Mask& pred, const Mask& gt) {
  long long tp = 0, np = 0, ng = 0;
  for (size_t k = 0; k < pred.data.size(); ++k) {
    bool p = pred.data[k] != 0, g = gt.data[k] != 0;
    if (p) ++np;
    if (g) ++ng;
    if (p && g) ++tp;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * double(tp) / double(np + ng);
}

inline Mask random_mask(int h, int w, tamperseg::Rng& rng, double density = 0.3) {
  Mask m(h, w);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

}  // namespace oracles
