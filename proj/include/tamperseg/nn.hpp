#pragma once

// Manual-backprop layer zoo. Every layer caches what its backward pass needs;
// forward then backward must be called pairwise per sample, with gradients
// accumulating into Param::grad until the optimizer consumes them.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tamperseg/common.hpp"

namespace tamperseg {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Param {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  void init_zero(int rows, int cols) {
    value = Mat<T>::Zero(rows, cols);
    grad = Mat<T>::Zero(rows, cols);
  }
  void init_normal(int rows, int cols, Rng& rng, double stddev) {
    value.resize(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) value(i, j) = T(rng.normal() * stddev);
    grad = Mat<T>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  size_t count() const { return size_t(value.rows()) * size_t(value.cols()); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

// y = x·Wᵀ + b, rows are tokens
template <typename T>
struct Linear {
  Param<T> W;  // out × in
  Param<T> b;  // 1 × out
  Mat<T> x_;   // cached input

  void init(const std::string& name, int in, int out, Rng& rng, double stddev) {
    W.name = name + ".W";
    W.init_normal(out, in, rng, stddev);
    b.name = name + ".b";
    b.init_zero(1, out);
  }

  Mat<T> forward(const Mat<T>& x) {
    if (x.cols() != W.value.cols())
      throw std::invalid_argument(W.name + ": input dim " + std::to_string(x.cols()) +
                                  " != " + std::to_string(W.value.cols()));
    x_ = x;
    Mat<T> y = x * W.value.transpose();
    y.rowwise() += b.value.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    W.grad.noalias() += dy.transpose() * x_;
    b.grad.row(0) += dy.colwise().sum();
    return dy * W.value;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

// Low-rank adapter around a (typically frozen) Linear:
//   y = x·Wᵀ + b + (alpha/rank)·(x·Aᵀ)·Bᵀ
// A is Gaussian, B starts at zero, so a fresh wrap is an exact identity.
template <typename T>
struct LoraLinear {
  Linear<T> base;
  Param<T> A;  // rank × in
  Param<T> B;  // out × rank
  int rank = 0;
  T scale = T(0);
  Mat<T> xa_;  // cached x·Aᵀ

  void init(const std::string& name, int in, int out, Rng& rng, double stddev) {
    base.init(name, in, out, rng, stddev);
  }

  void attach_adapter(int r, double alpha, Rng& rng, double init_std = 0.02) {
    int in = int(base.W.value.cols());
    int out = int(base.W.value.rows());
    if (r < 1 || r > std::min(in, out))
      throw std::invalid_argument(base.W.name + ": adapter rank " + std::to_string(r) +
                                  " outside [1, min(in,out)]");
    rank = r;
    scale = T(alpha / r);
    std::string stem = base.W.name.substr(0, base.W.name.size() - 2);
    A.name = stem + ".lora_a";
    A.init_normal(r, in, rng, init_std);
    B.name = stem + ".lora_b";
    B.init_zero(out, r);
  }

  Mat<T> forward(const Mat<T>& x) {
    Mat<T> y = base.forward(x);
    if (rank > 0) {
      xa_ = x * A.value.transpose();
      y.noalias() += scale * (xa_ * B.value.transpose());
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> dx = base.backward(dy);
    if (rank > 0) {
      B.grad.noalias() += scale * (dy.transpose() * xa_);
      Mat<T> dxa = scale * (dy * B.value);
      A.grad.noalias() += dxa.transpose() * base.x_;
      dx.noalias() += dxa * A.value;
    }
    return dx;
  }

  // base weight with the adapter folded in
  Mat<T> merged_weight() const {
    Mat<T> w = base.W.value;
    if (rank > 0) w.noalias() += scale * (B.value * A.value);
    return w;
  }

  void collect(ParamList<T>& out) {
    base.collect(out);
    if (rank > 0) {
      out.push_back(&A);
      out.push_back(&B);
    }
  }
};

template <typename T>
struct LayerNorm {
  Param<T> gamma, beta;
  Mat<T> xhat_;
  std::vector<T> rstd_;
  static constexpr double kEps = 1e-5;

  void init(const std::string& name, int dim) {
    gamma.name = name + ".gamma";
    gamma.value = Mat<T>::Ones(1, dim);
    gamma.grad = Mat<T>::Zero(1, dim);
    beta.name = name + ".beta";
    beta.init_zero(1, dim);
  }

  Mat<T> forward(const Mat<T>& x) {
    const int n = int(x.rows()), d = int(x.cols());
    xhat_.resize(n, d);
    rstd_.assign(size_t(n), T(0));
    Mat<T> y(n, d);
    for (int i = 0; i < n; ++i) {
      T mu = x.row(i).mean();
      T var = T(0);
      for (int j = 0; j < d; ++j) var += (x(i, j) - mu) * (x(i, j) - mu);
      var /= T(d);
      T rstd = T(1) / std::sqrt(var + T(kEps));
      rstd_[size_t(i)] = rstd;
      for (int j = 0; j < d; ++j) {
        xhat_(i, j) = (x(i, j) - mu) * rstd;
        y(i, j) = xhat_(i, j) * gamma.value(0, j) + beta.value(0, j);
      }
    }
    return y;
  }

  Mat<T> backward(const Mat<T>& dy) {
    const int n = int(dy.rows()), d = int(dy.cols());
    Mat<T> dx(n, d);
    for (int i = 0; i < n; ++i) {
      T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
      for (int j = 0; j < d; ++j) {
        T dxh = dy(i, j) * gamma.value(0, j);
        sum_dxhat += dxh;
        sum_dxhat_xhat += dxh * xhat_(i, j);
        gamma.grad(0, j) += dy(i, j) * xhat_(i, j);
        beta.grad(0, j) += dy(i, j);
      }
      for (int j = 0; j < d; ++j) {
        T dxh = dy(i, j) * gamma.value(0, j);
        dx(i, j) = (dxh - sum_dxhat / T(d) - xhat_(i, j) * sum_dxhat_xhat / T(d)) *
                   rstd_[size_t(i)];
      }
    }
    return dx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

// tanh-approximation gelu, same curve at float and double
template <typename T>
struct Gelu {
  Mat<T> x_;
  static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  static constexpr double kA = 0.044715;

  Mat<T> forward(const Mat<T>& x) {
    x_ = x;
    return x.unaryExpr([](T v) {
      T u = T(kC) * (v + T(kA) * v * v * v);
      return T(0.5) * v * (T(1) + std::tanh(u));
    });
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> dx = x_.unaryExpr([](T v) {
      T u = T(kC) * (v + T(kA) * v * v * v);
      T t = std::tanh(u);
      T du = T(kC) * (T(1) + T(3) * T(kA) * v * v);
      return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
    });
    return dx.cwiseProduct(dy);
  }
};

template <typename T>
struct Embedding {
  Param<T> table;  // vocab × dim
  std::vector<int> ids_;

  void init(const std::string& name, int vocab, int dim, Rng& rng, double stddev) {
    table.name = name;
    table.init_normal(vocab, dim, rng, stddev);
  }

  Mat<T> forward(const std::vector<int>& ids) {
    ids_ = ids;
    Mat<T> y(int(ids.size()), int(table.value.cols()));
    for (size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0 || ids[i] >= table.value.rows())
        throw std::invalid_argument(table.name + ": id " + std::to_string(ids[i]) +
                                    " outside vocabulary");
      y.row(int(i)) = table.value.row(ids[i]);
    }
    return y;
  }

  void backward(const Mat<T>& dy) {
    for (size_t i = 0; i < ids_.size(); ++i)
      table.grad.row(ids_[size_t(i)]) += dy.row(int(i));
  }

  void collect(ParamList<T>& out) { out.push_back(&table); }
};

// Additive attention bias: 0 where position i may attend to j, -inf otherwise.
// Visual tokens see each other bidirectionally; text positions are causal and
// see the whole visual block.
template <typename T>
Mat<T> attention_bias(int n_vis, int seq) {
  Mat<T> m(seq, seq);
  const T neg = T(-1e30);
  for (int i = 0; i < seq; ++i)
    for (int j = 0; j < seq; ++j) {
      bool ok = (i < n_vis) ? (j < n_vis) : (j <= i);
      m(i, j) = ok ? T(0) : neg;
    }
  return m;
}

template <typename T>
struct MultiHeadAttention {
  int n_heads = 0, d_model = 0, d_head = 0;
  LoraLinear<T> q, k, v, o;  // adapters attach to q and v only
  Mat<T> Q_, K_, V_;
  std::vector<Mat<T>> probs_;  // per head

  void init(const std::string& name, int d, int heads, Rng& rng, double stddev) {
    if (d % heads != 0)
      throw config_error(name + ": d_model not divisible by n_heads");
    d_model = d;
    n_heads = heads;
    d_head = d / heads;
    q.init(name + ".q", d, d, rng, stddev);
    k.init(name + ".k", d, d, rng, stddev);
    v.init(name + ".v", d, d, rng, stddev);
    o.init(name + ".o", d, d, rng, stddev);
  }

  Mat<T> forward(const Mat<T>& x, const Mat<T>& bias) {
    const int s = int(x.rows());
    Q_ = q.forward(x);
    K_ = k.forward(x);
    V_ = v.forward(x);
    probs_.assign(size_t(n_heads), Mat<T>());
    Mat<T> ctx(s, d_model);
    const T inv_sqrt = T(1.0 / std::sqrt(double(d_head)));
    for (int h = 0; h < n_heads; ++h) {
      auto Qh = Q_.middleCols(h * d_head, d_head);
      auto Kh = K_.middleCols(h * d_head, d_head);
      auto Vh = V_.middleCols(h * d_head, d_head);
      Mat<T> scores = (Qh * Kh.transpose()) * inv_sqrt + bias;
      Mat<T>& p = probs_[size_t(h)];
      p.resize(s, s);
      for (int i = 0; i < s; ++i) {
        T mx = scores.row(i).maxCoeff();
        T sum = T(0);
        for (int j = 0; j < s; ++j) {
          T e = std::exp(scores(i, j) - mx);
          p(i, j) = e;
          sum += e;
        }
        p.row(i) /= sum;
      }
      ctx.middleCols(h * d_head, d_head) = p * Vh;
    }
    return o.forward(ctx);
  }

  Mat<T> backward(const Mat<T>& dy) {
    const int s = int(dy.rows());
    Mat<T> dctx = o.backward(dy);
    Mat<T> dQ = Mat<T>::Zero(s, d_model), dK = dQ, dV = dQ;
    const T inv_sqrt = T(1.0 / std::sqrt(double(d_head)));
    for (int h = 0; h < n_heads; ++h) {
      auto Qh = Q_.middleCols(h * d_head, d_head);
      auto Kh = K_.middleCols(h * d_head, d_head);
      auto Vh = V_.middleCols(h * d_head, d_head);
      const Mat<T>& p = probs_[size_t(h)];
      Mat<T> dctx_h = dctx.middleCols(h * d_head, d_head);
      Mat<T> dp = dctx_h * Vh.transpose();
      dV.middleCols(h * d_head, d_head) = p.transpose() * dctx_h;
      // softmax backward row-wise: ds = p ∘ (dp - rowsum(dp ∘ p))
      Mat<T> ds(s, s);
      for (int i = 0; i < s; ++i) {
        T dot = p.row(i).dot(dp.row(i));
        for (int j = 0; j < s; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot);
      }
      ds *= inv_sqrt;
      dQ.middleCols(h * d_head, d_head) = ds * Kh;
      dK.middleCols(h * d_head, d_head) = ds.transpose() * Qh;
    }
    Mat<T> dx = q.backward(dQ);
    dx += k.backward(dK);
    dx += v.backward(dV);
    return dx;
  }

  void collect(ParamList<T>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

// pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x))
template <typename T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Linear<T> fc1, fc2;
  Gelu<T> act;

  void init(const std::string& name, int d, int heads, int ffn_mult, Rng& rng,
            double stddev) {
    ln1.init(name + ".ln1", d);
    attn.init(name + ".attn", d, heads, rng, stddev);
    ln2.init(name + ".ln2", d);
    fc1.init(name + ".mlp.fc1", d, d * ffn_mult, rng, stddev);
    fc2.init(name + ".mlp.fc2", d * ffn_mult, d, rng, stddev);
  }

  Mat<T> forward(const Mat<T>& x, const Mat<T>& bias) {
    Mat<T> h = x + attn.forward(ln1.forward(x), bias);
    return h + fc2.forward(act.forward(fc1.forward(ln2.forward(h))));
  }

  Mat<T> backward(const Mat<T>& dy) {
    Mat<T> dh = dy + ln2.backward(fc1.backward(act.backward(fc2.backward(dy))));
    return dh + ln1.backward(attn.backward(dh));
  }

  void collect(ParamList<T>& out) {
    ln1.collect(out);
    attn.collect(out);
    ln2.collect(out);
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Decoupled-weight-decay Adam. State is keyed by parameter name so it can
// survive a checkpoint round trip.
template <typename T>
class AdamW {
 public:
  double lr = 3e-5;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  void step(const ParamList<T>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (Param<T>* p : params) {
      if (!p->trainable) continue;
      State& st = state_[p->name];
      if (st.m.size() == 0) {
        st.m = Mat<T>::Zero(p->value.rows(), p->value.cols());
        st.v = st.m;
      }
      for (int i = 0; i < p->value.rows(); ++i)
        for (int j = 0; j < p->value.cols(); ++j) {
          T g = p->grad(i, j);
          st.m(i, j) = T(beta1) * st.m(i, j) + T(1.0 - beta1) * g;
          st.v(i, j) = T(beta2) * st.v(i, j) + T(1.0 - beta2) * g * g;
          T mhat = st.m(i, j) / T(bc1);
          T vhat = st.v(i, j) / T(bc2);
          p->value(i, j) -= T(lr) * (mhat / (std::sqrt(vhat) + T(eps)) +
                                     T(weight_decay) * p->value(i, j));
        }
    }
  }

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }

  // exposed for checkpointing
  std::map<std::string, std::pair<Mat<T>, Mat<T>>> export_state() const {
    std::map<std::string, std::pair<Mat<T>, Mat<T>>> out;
    for (const auto& [name, st] : state_) out[name] = {st.m, st.v};
    return out;
  }
  void import_state(const std::map<std::string, std::pair<Mat<T>, Mat<T>>>& in,
                    int64_t t) {
    state_.clear();
    for (const auto& [name, mv] : in) state_[name] = {mv.first, mv.second};
    t_ = t;
  }

 private:
  struct State {
    Mat<T> m, v;
  };
  std::map<std::string, State> state_;
  int64_t t_ = 0;
};

template <typename T>
inline void zero_grads(const ParamList<T>& params) {
  for (Param<T>* p : params) p->zero_grad();
}

template <typename T>
inline void scale_grads(const ParamList<T>& params, T s) {
  for (Param<T>* p : params) p->grad *= s;
}

template <typename T>
inline size_t count_params(const ParamList<T>& params) {
  size_t n = 0;
  for (const Param<T>* p : params) n += p->count();
  return n;
}

}  // namespace tamperseg
