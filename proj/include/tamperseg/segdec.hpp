#pragma once

// Segmentation branch: a frozen patch encoder producing a coarse feature grid
// and a query-conditioned cross-attention decoder emitting full-resolution
// logits (bilinear upsampling from the cell grid).

#include <string>
#include <vector>

#include "tamperseg/image.hpp"
#include "tamperseg/nn.hpp"

namespace tamperseg {

struct SegConfig {
  int patch = 8;
  int d_feat = 64;
  int query_dim = 32;
  int max_grid = 32;
  int64_t seed = 0;  // decoder init; the encoder is constant across runs
  double init_std = 0.02;
  // frozen-encoder weight scale, as a gain over 1/sqrt(fan_in). At small std
  // the random features stay in the linear range of the activation and carry
  // no more than a linear probe; a gain of a few puts the first layer into the
  // nonlinear regime, which is what a pretrained encoder would provide.
  double enc_gain = 4.0;
};

template <typename T>
struct FeatureGrid {
  Mat<T> cells;  // (gh*gw) x d_feat
  int gh = 0, gw = 0;
  int patch = 8;  // for recovering the pixel resolution
};

// frozen encoder: per-patch flatten -> linear -> gelu -> linear
template <typename T>
struct SegEncoder {
  int patch = 8, d_feat = 64;
  Linear<T> fc1, fc2;
  Gelu<T> act;

  void init(const SegConfig& cfg) {
    patch = cfg.patch;
    d_feat = cfg.d_feat;
    Rng pretrain{derive_seed(0xfeed5eedULL, 7)};
    int in1 = patch * patch * 3;
    fc1.init("segenc.fc1", in1, d_feat, pretrain, cfg.enc_gain / std::sqrt(double(in1)));
    fc2.init("segenc.fc2", d_feat, d_feat, pretrain, cfg.enc_gain / std::sqrt(double(d_feat)));
  }

  FeatureGrid<T> forward(const ImageF& img) {
    if (img.height % patch || img.width % patch || img.channels != 3)
      throw std::invalid_argument("seg encoder: image dims must be a multiple of " +
                                  std::to_string(patch) + " with 3 channels");
    int gh = img.height / patch, gw = img.width / patch;
    Mat<T> x(gh * gw, patch * patch * 3);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) {
        int row = py * gw + px, k = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int c = 0; c < 3; ++c)
              x(row, k++) = T(img.at(py * patch + dy, px * patch + dx, c));
      }
    FeatureGrid<T> g;
    g.cells = fc2.forward(act.forward(fc1.forward(x)));
    g.gh = gh;
    g.gw = gw;
    g.patch = patch;
    return g;
  }

  void collect(ParamList<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

// single-head cross attention; Q_in attends to KV_in
template <typename T>
struct CrossAttn {
  Linear<T> wq, wk, wv, wo;
  Mat<T> q_, k_, v_, p_, ctx_;

  void init(const std::string& name, int d, Rng& rng, double stddev) {
    wq.init(name + ".q", d, d, rng, stddev);
    wk.init(name + ".k", d, d, rng, stddev);
    wv.init(name + ".v", d, d, rng, stddev);
    wo.init(name + ".o", d, d, rng, stddev);
  }

  Mat<T> forward(const Mat<T>& Q_in, const Mat<T>& KV_in) {
    const int d = int(wq.W.value.rows());
    q_ = wq.forward(Q_in);
    k_ = wk.forward(KV_in);
    v_ = wv.forward(KV_in);
    Mat<T> scores = (q_ * k_.transpose()) * T(1.0 / std::sqrt(double(d)));
    p_.resize(scores.rows(), scores.cols());
    for (int i = 0; i < scores.rows(); ++i) {
      T mx = scores.row(i).maxCoeff();
      T sum = T(0);
      for (int j = 0; j < scores.cols(); ++j) {
        p_(i, j) = std::exp(scores(i, j) - mx);
        sum += p_(i, j);
      }
      p_.row(i) /= sum;
    }
    ctx_ = p_ * v_;
    return wo.forward(ctx_);
  }

  // returns (dQ_in, dKV_in)
  std::pair<Mat<T>, Mat<T>> backward(const Mat<T>& dout) {
    const int d = int(wq.W.value.rows());
    Mat<T> dctx = wo.backward(dout);
    Mat<T> dp = dctx * v_.transpose();
    Mat<T> dv = p_.transpose() * dctx;
    Mat<T> ds(p_.rows(), p_.cols());
    for (int i = 0; i < p_.rows(); ++i) {
      T dot = p_.row(i).dot(dp.row(i));
      for (int j = 0; j < p_.cols(); ++j) ds(i, j) = p_(i, j) * (dp(i, j) - dot);
    }
    ds *= T(1.0 / std::sqrt(double(d)));
    Mat<T> dq = ds * k_;
    Mat<T> dk = ds.transpose() * q_;
    Mat<T> dQ_in = wq.backward(dq);
    Mat<T> dKV_in = wk.backward(dk) + wv.backward(dv);
    return {dQ_in, dKV_in};
  }

  void collect(ParamList<T>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

// One decoder round: the query reads the cells through cross attention, then
// every cell absorbs a linear image of the updated query and runs through a
// shared per-cell MLP. With a single query token, attention back onto it would
// collapse to a constant softmax, so the broadcast linear is the same function
// without dead projections. The cell MLP is what lets individual cells build
// nonlinear features of the frozen encoder output; without it the cell stream
// stays affine end to end and the logit head reduces to a linear probe.
template <typename T>
struct DecoderBlock {
  CrossAttn<T> q2c;
  Linear<T> inject;
  LayerNorm<T> ln_q1, ln_q2, ln_c, ln_c2;
  Linear<T> fc1, fc2;    // query stream
  Linear<T> cfc1, cfc2;  // cell stream, shared across cells
  Gelu<T> act, cact;

  void init(const std::string& name, int d, Rng& rng, double stddev) {
    q2c.init(name + ".q2c", d, rng, stddev);
    inject.init(name + ".inject", d, d, rng, stddev);
    ln_q1.init(name + ".ln_q1", d);
    ln_q2.init(name + ".ln_q2", d);
    ln_c.init(name + ".ln_c", d);
    ln_c2.init(name + ".ln_c2", d);
    fc1.init(name + ".mlp.fc1", d, 2 * d, rng, stddev);
    fc2.init(name + ".mlp.fc2", 2 * d, d, rng, stddev);
    cfc1.init(name + ".cmlp.fc1", d, 2 * d, rng, stddev);
    cfc2.init(name + ".cmlp.fc2", 2 * d, d, rng, stddev);
  }

  // updates (q, C) in place
  void forward(Mat<T>& q, Mat<T>& C) {
    q = ln_q1.forward(q + q2c.forward(q, C));
    q = ln_q2.forward(q + fc2.forward(act.forward(fc1.forward(q))));
    Mat<T> inj = inject.forward(q);  // 1 x d
    Mat<T> cres = C;
    cres.rowwise() += inj.row(0);
    C = ln_c.forward(cres);
    C = ln_c2.forward(C + cfc2.forward(cact.forward(cfc1.forward(C))));
  }

  void backward(Mat<T>& dq, Mat<T>& dC) {
    Mat<T> dres_c2 = ln_c2.backward(dC);
    dC = dres_c2 + cfc1.backward(cact.backward(cfc2.backward(dres_c2)));
    Mat<T> dres_c = ln_c.backward(dC);
    dC = dres_c;
    Mat<T> dinj(1, dres_c.cols());
    dinj.row(0) = dres_c.colwise().sum();
    dq += inject.backward(dinj);

    Mat<T> dres2 = ln_q2.backward(dq);
    Mat<T> dq1 = dres2 + fc1.backward(act.backward(fc2.backward(dres2)));
    Mat<T> dres1 = ln_q1.backward(dq1);
    auto [dq0, dC_attn] = q2c.backward(dres1);
    dq = dres1 + dq0;
    dC += dC_attn;
  }

  void collect(ParamList<T>& out) {
    q2c.collect(out);
    ln_q1.collect(out);
    fc1.collect(out);
    fc2.collect(out);
    ln_q2.collect(out);
    inject.collect(out);
    ln_c.collect(out);
    cfc1.collect(out);
    cfc2.collect(out);
    ln_c2.collect(out);
  }
};

// bilinear upsampling with half-pixel centers
template <typename T>
Mat<T> upsample_bilinear(const Mat<T>& src, int H, int W) {
  const int h = int(src.rows()), w = int(src.cols());
  Mat<T> out(H, W);
  for (int y = 0; y < H; ++y) {
    double sy = (y + 0.5) * double(h) / double(H) - 0.5;
    double cy = std::clamp(sy, 0.0, double(h - 1));
    int y0 = int(std::floor(cy)), y1 = std::min(y0 + 1, h - 1);
    double fy = cy - y0;
    for (int x = 0; x < W; ++x) {
      double sx = (x + 0.5) * double(w) / double(W) - 0.5;
      double cx = std::clamp(sx, 0.0, double(w - 1));
      int x0 = int(std::floor(cx)), x1 = std::min(x0 + 1, w - 1);
      double fx = cx - x0;
      out(y, x) = T((1 - fy) * ((1 - fx) * double(src(y0, x0)) + fx * double(src(y0, x1))) +
                    fy * ((1 - fx) * double(src(y1, x0)) + fx * double(src(y1, x1))));
    }
  }
  return out;
}

template <typename T>
Mat<T> upsample_bilinear_backward(const Mat<T>& dout, int h, int w) {
  const int H = int(dout.rows()), W = int(dout.cols());
  Mat<T> dsrc = Mat<T>::Zero(h, w);
  for (int y = 0; y < H; ++y) {
    double sy = (y + 0.5) * double(h) / double(H) - 0.5;
    double cy = std::clamp(sy, 0.0, double(h - 1));
    int y0 = int(std::floor(cy)), y1 = std::min(y0 + 1, h - 1);
    double fy = cy - y0;
    for (int x = 0; x < W; ++x) {
      double sx = (x + 0.5) * double(w) / double(W) - 0.5;
      double cx = std::clamp(sx, 0.0, double(w - 1));
      int x0 = int(std::floor(cx)), x1 = std::min(x0 + 1, w - 1);
      double fx = cx - x0;
      T g = dout(y, x);
      dsrc(y0, x0) += T((1 - fy) * (1 - fx)) * g;
      dsrc(y0, x1) += T((1 - fy) * fx) * g;
      dsrc(y1, x0) += T(fy * (1 - fx)) * g;
      dsrc(y1, x1) += T(fy * fx) * g;
    }
  }
  return dsrc;
}

template <typename T>
class MaskDecoder {
 public:
  SegConfig cfg;
  Linear<T> lift;  // query_dim -> d_feat
  Param<T> cell_row_pos, cell_col_pos;
  std::vector<DecoderBlock<T>> dec;
  Linear<T> out_proj;  // d_feat -> d_feat, applied to the final query
  Param<T> out_bias;

  // caches for backward
  Mat<T> C_final_, t_final_;
  int gh_ = 0, gw_ = 0, H_ = 0, W_ = 0;

  void init(const SegConfig& config) {
    cfg = config;
    Rng rng{derive_seed(uint64_t(cfg.seed), 4)};
    lift.init("maskdec.lift", cfg.query_dim, cfg.d_feat, rng, cfg.init_std);
    // an untrained converter emits a near-constant query; a random bias keeps
    // the single-row stream away from the zero-variance regime where the
    // first norm is badly conditioned
    for (int j = 0; j < cfg.d_feat; ++j)
      lift.b.value(0, j) = T(rng.normal() * 0.1);
    cell_row_pos.name = "maskdec.cell_row_pos";
    cell_row_pos.init_normal(cfg.max_grid, cfg.d_feat, rng, cfg.init_std);
    cell_col_pos.name = "maskdec.cell_col_pos";
    cell_col_pos.init_normal(cfg.max_grid, cfg.d_feat, rng, cfg.init_std);
    dec.resize(2);
    dec[0].init("maskdec.b0", cfg.d_feat, rng, cfg.init_std);
    dec[1].init("maskdec.b1", cfg.d_feat, rng, cfg.init_std);
    out_proj.init("maskdec.out_proj", cfg.d_feat, cfg.d_feat, rng, cfg.init_std);
    out_bias.name = "maskdec.out_bias";
    out_bias.init_zero(1, 1);
  }

  // query: 1 x query_dim; result: (gh*patch) x (gw*patch) logits
  Mat<T> decode(const FeatureGrid<T>& grid, const Mat<T>& query) {
    if (grid.gh > cfg.max_grid || grid.gw > cfg.max_grid)
      throw std::invalid_argument("mask decoder: grid exceeds positional table");
    gh_ = grid.gh;
    gw_ = grid.gw;
    H_ = grid.gh * grid.patch;
    W_ = grid.gw * grid.patch;

    Mat<T> C = grid.cells;
    for (int cy = 0; cy < gh_; ++cy)
      for (int cx = 0; cx < gw_; ++cx)
        C.row(cy * gw_ + cx) += cell_row_pos.value.row(cy) + cell_col_pos.value.row(cx);

    Mat<T> q = lift.forward(query);
    for (auto& b : dec) b.forward(q, C);

    C_final_ = C;
    t_final_ = out_proj.forward(q);  // 1 x d_feat
    Mat<T> cell_logits(gh_, gw_);
    for (int cy = 0; cy < gh_; ++cy)
      for (int cx = 0; cx < gw_; ++cx)
        cell_logits(cy, cx) =
            C.row(cy * gw_ + cx).dot(t_final_.row(0)) + out_bias.value(0, 0);
    return upsample_bilinear(cell_logits, H_, W_);
  }

  // gradient w.r.t. the query (1 x query_dim); grid is an input from the
  // frozen encoder, so its gradient is dropped
  Mat<T> backward(const Mat<T>& dlogits) {
    Mat<T> dcell = upsample_bilinear_backward(dlogits, gh_, gw_);
    Mat<T> dC(gh_ * gw_, cfg.d_feat);
    Mat<T> dt = Mat<T>::Zero(1, cfg.d_feat);
    T db = T(0);
    for (int cy = 0; cy < gh_; ++cy)
      for (int cx = 0; cx < gw_; ++cx) {
        T g = dcell(cy, cx);
        dC.row(cy * gw_ + cx) = g * t_final_.row(0);
        dt.row(0) += g * C_final_.row(cy * gw_ + cx);
        db += g;
      }
    out_bias.grad(0, 0) += db;
    Mat<T> dq = out_proj.backward(dt);
    for (auto it = dec.rbegin(); it != dec.rend(); ++it) it->backward(dq, dC);
    for (int cy = 0; cy < gh_; ++cy)
      for (int cx = 0; cx < gw_; ++cx) {
        cell_row_pos.grad.row(cy) += dC.row(cy * gw_ + cx);
        cell_col_pos.grad.row(cx) += dC.row(cy * gw_ + cx);
      }
    return lift.backward(dq);
  }

  void collect(ParamList<T>& out) {
    lift.collect(out);
    out.push_back(&cell_row_pos);
    out.push_back(&cell_col_pos);
    for (auto& b : dec) b.collect(out);
    out_proj.collect(out);
    out.push_back(&out_bias);
  }
};

// sigmoid(logit) >= threshold; inclusive so all-zero logits at 0.5 give ones
template <typename T>
Mask binarize(const Mat<T>& logits, double threshold = 0.5) {
  if (threshold <= 0.0 || threshold >= 1.0)
    throw std::invalid_argument("binarize: threshold must lie in (0,1)");
  Mask m(int(logits.rows()), int(logits.cols()));
  for (int y = 0; y < logits.rows(); ++y)
    for (int x = 0; x < logits.cols(); ++x) {
      double s = 1.0 / (1.0 + std::exp(-double(logits(y, x))));
      m.at(y, x) = s >= threshold ? 1 : 0;
    }
  return m;
}

}  // namespace tamperseg
