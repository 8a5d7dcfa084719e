#pragma once

// Tiny decoder-only multimodal transformer: visual patch tokens followed by
// text, visual block bidirectional, text causal. Exposes the hidden state at
// the segmentation-token position and the MLP that turns it into the
// low-dimensional reasoning query.

#include <string>
#include <vector>

#include "tamperseg/image.hpp"
#include "tamperseg/nn.hpp"
#include "tamperseg/text.hpp"

namespace tamperseg {

struct ReasonerConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int max_seq = 160;
  int patch = 8;
  int query_dim = 32;
  int max_grid = 32;  // positional tables cover up to max_grid x max_grid patches
  int vocab = 64;
  int64_t seed = 0;
  // 1/sqrt(d_model) for d_model 64 is 0.125; trained transformer weights sit
  // near that scale, and a much smaller std leaves the frozen body mixing so
  // weakly that hidden states barely depend on the visual tokens.
  double init_std = 0.08;
  // visual projection gain over 1/sqrt(fan_in): patch tokens land at roughly
  // unit scale, comparable to what a pretrained image tower would emit
  double vis_gain = 2.0;
};

struct LoraConfig {
  int rank = 8;
  double alpha = 32.0;
  double init_std = 0.02;
};

template <typename T>
struct HiddenStates {
  Mat<T> hidden;  // seq x d_model, after the final norm
  Mat<T> logits;  // text_len x vocab
  int n_vis = 0;
  int text_len = 0;
};

template <typename T>
struct GenerateResult {
  TokenSequence response;       // generated ids (response segment), EOS included
  HiddenStates<T> states;       // from the final forward pass
  int prompt_len = 0;
};

// The LLM-side vision encoder stand-in: non-overlapping patch flattening, a
// linear projection and learned 2-D (row+column) positional encodings. Its
// weights are initialized from a constant seed and frozen, playing the role
// of a pretrained encoder shared by every run.
template <typename T>
struct VisualEmbedder {
  int patch = 8, d_model = 64, max_grid = 32;
  Linear<T> proj;
  Param<T> row_pos, col_pos;
  int gh_ = 0, gw_ = 0;  // grid of the last forward

  void init(const ReasonerConfig& cfg, Rng& rng) {
    patch = cfg.patch;
    d_model = cfg.d_model;
    max_grid = cfg.max_grid;
    int in1 = patch * patch * 3;
    proj.init("llmvis.proj", in1, d_model, rng, cfg.vis_gain / std::sqrt(double(in1)));
    row_pos.name = "llmvis.row_pos";
    row_pos.init_normal(max_grid, d_model, rng, cfg.init_std);
    col_pos.name = "llmvis.col_pos";
    col_pos.init_normal(max_grid, d_model, rng, cfg.init_std);
  }

  Mat<T> patches(const ImageF& img) const {
    if (img.height % patch || img.width % patch || img.channels != 3)
      throw std::invalid_argument("visual embedder: image dims must be a multiple of " +
                                  std::to_string(patch) + " with 3 channels");
    int gh = img.height / patch, gw = img.width / patch;
    if (gh > max_grid || gw > max_grid)
      throw std::invalid_argument("visual embedder: image larger than positional table");
    Mat<T> x(gh * gw, patch * patch * 3);
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px) {
        int row = py * gw + px, k = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx)
            for (int c = 0; c < 3; ++c)
              x(row, k++) = T(img.at(py * patch + dy, px * patch + dx, c));
      }
    return x;
  }

  Mat<T> forward(const ImageF& img) {
    int gh = img.height / patch, gw = img.width / patch;
    Mat<T> tokens = proj.forward(patches(img));
    gh_ = gh;
    gw_ = gw;
    for (int py = 0; py < gh; ++py)
      for (int px = 0; px < gw; ++px)
        tokens.row(py * gw + px) += row_pos.value.row(py) + col_pos.value.row(px);
    return tokens;
  }

  void backward(const Mat<T>& dtokens) {
    for (int py = 0; py < gh_; ++py)
      for (int px = 0; px < gw_; ++px) {
        row_pos.grad.row(py) += dtokens.row(py * gw_ + px);
        col_pos.grad.row(px) += dtokens.row(py * gw_ + px);
      }
    proj.backward(dtokens);  // gradient stops at the image
  }

  void collect(ParamList<T>& out) {
    proj.collect(out);
    out.push_back(&row_pos);
    out.push_back(&col_pos);
  }
};

// two-layer MLP from the seg hidden state to the reasoning query s
template <typename T>
struct QueryProjector {
  Linear<T> fc1, fc2;
  Gelu<T> act;

  void init(const ReasonerConfig& cfg, Rng& rng) {
    fc1.init("converter.fc1", cfg.d_model, cfg.d_model, rng, cfg.init_std);
    fc2.init("converter.fc2", cfg.d_model, cfg.query_dim, rng, cfg.init_std);
  }

  Mat<T> forward(const Mat<T>& h) { return fc2.forward(act.forward(fc1.forward(h))); }
  Mat<T> backward(const Mat<T>& dq) {
    return fc1.backward(act.backward(fc2.backward(dq)));
  }
  void collect(ParamList<T>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

template <typename T>
class Reasoner {
 public:
  ReasonerConfig cfg;
  VisualEmbedder<T> vis;
  Embedding<T> tok_emb;
  Param<T> text_pos;
  std::vector<TransformerBlock<T>> blocks;
  LayerNorm<T> ln_f;
  Linear<T> lm_head;
  QueryProjector<T> converter;

  // The vision stand-in draws from a constant stream (shared "pretrained"
  // weights); everything else from the run seed.
  void init(const ReasonerConfig& config) {
    cfg = config;
    Rng pretrain{derive_seed(0xfeed5eedULL, 1)};
    vis.init(cfg, pretrain);

    Rng rng{derive_seed(uint64_t(cfg.seed), 2)};
    tok_emb.init("reasoner.tok_emb", cfg.vocab, cfg.d_model, rng, cfg.init_std);
    text_pos.name = "reasoner.text_pos";
    text_pos.init_normal(cfg.max_seq, cfg.d_model, rng, cfg.init_std);
    blocks.resize(size_t(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i)
      blocks[size_t(i)].init("reasoner.block" + std::to_string(i), cfg.d_model,
                             cfg.n_heads, cfg.ffn_mult, rng, cfg.init_std);
    ln_f.init("reasoner.ln_f", cfg.d_model);
    lm_head.init("reasoner.lm_head", cfg.d_model, cfg.vocab, rng, cfg.init_std);
    converter.init(cfg, rng);
  }

  void attach_lora(const LoraConfig& lora) {
    Rng rng{derive_seed(uint64_t(cfg.seed), 3)};
    for (auto& b : blocks) {
      b.attn.q.attach_adapter(lora.rank, lora.alpha, rng, lora.init_std);
      b.attn.v.attach_adapter(lora.rank, lora.alpha, rng, lora.init_std);
    }
  }

  Mat<T> encode_image_for_llm(const ImageF& img) { return vis.forward(img); }

  // text_in starts with BOS; teacher forcing appends the response tokens
  HiddenStates<T> forward(const Mat<T>& visual, const std::vector<int>& text_in) {
    const int n_vis = int(visual.rows());
    const int text_len = int(text_in.size());
    const int s = n_vis + text_len;
    if (s > cfg.max_seq)
      throw capacity_error("sequence of " + std::to_string(s) +
                           " exceeds max_seq " + std::to_string(cfg.max_seq));

    Mat<T> x(s, cfg.d_model);
    x.topRows(n_vis) = visual;
    Mat<T> te = tok_emb.forward(text_in);
    for (int i = 0; i < text_len; ++i)
      x.row(n_vis + i) = te.row(i) + text_pos.value.row(i);

    Mat<T> bias = attention_bias<T>(n_vis, s);
    for (auto& b : blocks) x = b.forward(x, bias);

    HiddenStates<T> out;
    out.hidden = ln_f.forward(x);
    out.logits = lm_head.forward(out.hidden.bottomRows(text_len));
    out.n_vis = n_vis;
    out.text_len = text_len;
    return out;
  }

  // dlogits: text_len x vocab; dhidden: seq x d_model extra gradient flowing
  // into the post-norm hidden states (the seg-query path). Returns gradient
  // w.r.t. the visual tokens after routing text gradients into the embeddings.
  Mat<T> backward(const HiddenStates<T>& hs, const Mat<T>& dlogits,
                  const Mat<T>& dhidden) {
    Mat<T> dh = dhidden;
    dh.bottomRows(hs.text_len) += lm_head.backward(dlogits);
    Mat<T> dx = ln_f.backward(dh);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) dx = it->backward(dx);
    tok_emb.backward(dx.bottomRows(hs.text_len));
    text_pos.grad.topRows(hs.text_len) += dx.bottomRows(hs.text_len);
    return dx.topRows(hs.n_vis);
  }

  GenerateResult<T> generate(const Mat<T>& visual, const TokenSequence& prompt,
                             int max_new) {
    if (max_new < 4)
      throw std::invalid_argument("generate: max_new must be at least 4");
    std::vector<int> text = {kBos};
    text.insert(text.end(), prompt.ids.begin(), prompt.ids.end());
    GenerateResult<T> out;
    out.prompt_len = int(prompt.ids.size());
    while (int(out.response.size()) < max_new) {
      out.states = forward(visual, text);
      int last = out.states.text_len - 1;
      int next = 0;
      T best = out.states.logits(last, 0);
      for (int j = 1; j < cfg.vocab; ++j)
        if (out.states.logits(last, j) > best) {
          best = out.states.logits(last, j);
          next = j;
        }
      out.response.push(next, Segment::kResponse);
      text.push_back(next);
      if (next == kEos) break;
    }
    // hidden states must cover the full generated sequence
    out.states = forward(visual, text);
    return out;
  }

  // row of the seg token in the full sequence given its index in the response
  int seg_row(int n_vis, int prompt_len, int seg_idx_in_response) const {
    return n_vis + 1 + prompt_len + seg_idx_in_response;
  }

  Mat<T> project_query(const Mat<T>& h_seg) {
    if (h_seg.cols() != cfg.d_model || h_seg.rows() != 1)
      throw std::invalid_argument("project_query: expected a 1x" +
                                  std::to_string(cfg.d_model) + " hidden state");
    return converter.forward(h_seg);
  }

  void collect(ParamList<T>& out) {
    vis.collect(out);
    tok_emb.collect(out);
    out.push_back(&text_pos);
    for (auto& b : blocks) b.collect(out);
    ln_f.collect(out);
    lm_head.collect(out);
    converter.collect(out);
  }
};

// last-layer hidden state at a given sequence row
template <typename T>
Mat<T> extract_seg_embedding(const HiddenStates<T>& hs, int row) {
  if (row < 0 || row >= int(hs.hidden.rows()))
    throw std::invalid_argument("extract_seg_embedding: row " + std::to_string(row) +
                                " outside sequence of " +
                                std::to_string(hs.hidden.rows()));
  return hs.hidden.row(row);
}

}  // namespace tamperseg
