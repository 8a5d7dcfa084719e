#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tamperseg/common.hpp"
#include "tamperseg/image.hpp"
#include "tamperseg/nn.hpp"

namespace tamperseg {

struct LossWeights {
  double lambda_bce = 2.0;
  double lambda_dice = 0.5;
  double lambda_c = 1.0;
  double lambda_m = 1.0;
};

struct LossBreakdown {
  double l_c = 0.0;
  double l_bce = 0.0;
  double l_dice = 0.0;
  double l_m = 0.0;
  double total = 0.0;
};

// weighted recombination; the invariants l_m = λ_bce·l_bce + λ_dice·l_dice and
// total = λ_c·l_c + λ_m·l_m hold exactly
inline LossBreakdown total_loss(double l_c, double l_bce, double l_dice,
                                const LossWeights& w) {
  for (double v : {l_c, l_bce, l_dice})
    if (!std::isfinite(v)) throw numeric_error("total_loss: non-finite component");
  LossBreakdown b;
  b.l_c = l_c;
  b.l_bce = l_bce;
  b.l_dice = l_dice;
  b.l_m = w.lambda_bce * l_bce + w.lambda_dice * l_dice;
  b.total = w.lambda_c * l_c + w.lambda_m * b.l_m;
  if (!std::isfinite(b.total)) throw numeric_error("total_loss: non-finite total");
  return b;
}

namespace detail {
template <typename T>
void check_mask_shape(const Mat<T>& logits, const Mask& gt, const char* who) {
  if (int(logits.rows()) != gt.height || int(logits.cols()) != gt.width)
    throw std::invalid_argument(std::string(who) + ": logits " +
                                std::to_string(logits.rows()) + "x" +
                                std::to_string(logits.cols()) + " vs mask " +
                                std::to_string(gt.height) + "x" +
                                std::to_string(gt.width));
}
}  // namespace detail

// mean pixel-wise binary cross-entropy in the stable logit form
//   l(z,g) = max(z,0) - z·g + log(1+exp(-|z|))
template <typename T>
T bce_mask(const Mat<T>& logits, const Mask& gt, Mat<T>* dlogits = nullptr) {
  detail::check_mask_shape(logits, gt, "bce_mask");
  const int H = gt.height, W = gt.width;
  const T inv_n = T(1) / T(H * W);
  T sum = T(0);
  if (dlogits) dlogits->resize(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T z = logits(y, x);
      T g = T(gt.at(y, x));
      sum += std::max(z, T(0)) - z * g + std::log1p(std::exp(-std::abs(z)));
      if (dlogits) {
        T sig = T(1) / (T(1) + std::exp(-z));
        (*dlogits)(y, x) = (sig - g) * inv_n;
      }
    }
  return sum * inv_n;
}

// soft dice on probabilities: 1 - (2·Σp·g + eps)/(Σp + Σg + eps)
template <typename T>
T dice_mask(const Mat<T>& logits, const Mask& gt, double eps = 1.0,
            Mat<T>* dlogits = nullptr) {
  detail::check_mask_shape(logits, gt, "dice_mask");
  const int H = gt.height, W = gt.width;
  Mat<T> p(H, W);
  T inter = T(0), psum = T(0), gsum = T(0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T pr = T(1) / (T(1) + std::exp(-logits(y, x)));
      p(y, x) = pr;
      psum += pr;
      T g = T(gt.at(y, x));
      gsum += g;
      inter += pr * g;
    }
  T num = T(2) * inter + T(eps);
  T den = psum + gsum + T(eps);
  if (dlogits) {
    dlogits->resize(H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        T g = T(gt.at(y, x));
        // d/dp of -(num/den), then chain through the sigmoid
        T dldp = -(T(2) * g * den - num) / (den * den);
        (*dlogits)(y, x) = dldp * p(y, x) * (T(1) - p(y, x));
      }
  }
  return T(1) - num / den;
}

// mean next-token negative log-softmax over the masked positions
template <typename T>
T instruction_ce(const Mat<T>& logits, const std::vector<int>& targets,
                 const std::vector<int>& positions, Mat<T>* dlogits = nullptr) {
  if (positions.empty())
    throw std::invalid_argument("instruction_ce: empty loss mask");
  if (int(targets.size()) != int(logits.rows()))
    throw std::invalid_argument("instruction_ce: targets/logits length mismatch");
  const int V = int(logits.cols());
  const T inv_n = T(1) / T(positions.size());
  if (dlogits) *dlogits = Mat<T>::Zero(logits.rows(), V);
  T sum = T(0);
  for (int pos : positions) {
    if (pos < 0 || pos >= int(logits.rows()))
      throw std::invalid_argument("instruction_ce: position out of range");
    int tgt = targets[size_t(pos)];
    if (tgt < 0 || tgt >= V)
      throw std::invalid_argument("instruction_ce: target id out of range");
    T mx = logits.row(pos).maxCoeff();
    T lse = T(0);
    for (int j = 0; j < V; ++j) lse += std::exp(logits(pos, j) - mx);
    lse = std::log(lse) + mx;
    sum += lse - logits(pos, tgt);
    if (dlogits) {
      for (int j = 0; j < V; ++j)
        (*dlogits)(pos, j) = std::exp(logits(pos, j) - lse) * inv_n;
      (*dlogits)(pos, tgt) -= inv_n;
    }
  }
  return sum * inv_n;
}

}  // namespace tamperseg
