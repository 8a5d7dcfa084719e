#pragma once

// Full model assembly: reasoner + converter + frozen seg encoder + mask
// decoder, with the four ablation wirings (A: learnable query only,
// B: pooled visual tokens through the MLP, C: reasoner without language
// supervision, D: everything).

#include <string>
#include <vector>

#include "tamperseg/dataset.hpp"
#include "tamperseg/lora.hpp"
#include "tamperseg/reasoner.hpp"
#include "tamperseg/segdec.hpp"
#include "tamperseg/text.hpp"

namespace tamperseg {

enum class Setting { kA, kB, kC, kD };

struct AblationSetting {
  char id;
  bool uses_llm_image_embedding;
  bool uses_prompt;
  bool predicts_instruction;
};

inline AblationSetting setting_info(Setting s) {
  switch (s) {
    case Setting::kA: return {'A', false, false, false};
    case Setting::kB: return {'B', true, false, false};
    case Setting::kC: return {'C', true, true, false};
    default: return {'D', true, true, true};
  }
}

inline Setting setting_from_name(const std::string& s) {
  if (s == "A") return Setting::kA;
  if (s == "B") return Setting::kB;
  if (s == "C") return Setting::kC;
  if (s == "D") return Setting::kD;
  throw config_error("unknown ablation setting: " + s);
}

inline std::string setting_name(Setting s) {
  return std::string(1, setting_info(s).id);
}

struct PipelineConfig {
  ReasonerConfig reasoner;
  SegConfig seg;
  LoraConfig lora;
  bool use_lora = true;
  Setting setting = Setting::kD;
  int prompt_id = 1;  // 0 = sample one of the four per training example
};

// everything a training step needs to push gradients back
template <typename T>
struct PipelineForward {
  HiddenStates<T> states;
  Mat<T> pooled;       // setting B: 1 x d_model mean of visual tokens
  Mat<T> h_seg;        // 1 x d_model input of the converter (B/C/D)
  Mat<T> query;        // 1 x query_dim
  Mat<T> mask_logits;  // H x W
  std::vector<int> text_in;       // BOS + prompt + response
  std::vector<int> targets;       // next-token targets, len == text_in
  std::vector<int> ce_positions;  // response + EOS predictions
  int prompt_len = 0;
  int seg_row = -1;  // absolute row in the sequence, -1 when no reasoner ran
  bool seg_fallback = false;
};

template <typename T>
class Pipeline {
 public:
  PipelineConfig cfg;
  Reasoner<T> reasoner;
  SegEncoder<T> segenc;
  MaskDecoder<T> maskdec;
  Param<T> query_a;  // setting A's learnable query vector

  void init(const PipelineConfig& config) {
    cfg = config;
    reasoner.init(cfg.reasoner);
    if (cfg.use_lora) reasoner.attach_lora(cfg.lora);
    segenc.init(cfg.seg);
    maskdec.init(cfg.seg);
    query_a.name = "query_a";
    Rng rng{derive_seed(uint64_t(cfg.reasoner.seed), 5)};
    query_a.init_normal(1, cfg.seg.query_dim, rng, cfg.reasoner.init_std);
  }

  ParamList<T> params() {
    ParamList<T> out;
    reasoner.collect(out);
    segenc.collect(out);
    maskdec.collect(out);
    out.push_back(&query_a);
    return out;
  }

  // the paper's trainability topology; tok_emb and lm_head follow the mask
  // decoder into the fully-trainable set so new response tokens can be learned
  FreezePolicy default_policy() {
    FreezePolicy p;
    ParamList<T> all = params();
    for (Param<T>* prm : all) {
      const std::string& n = prm->name;
      bool is_lora = n.find(".lora_") != std::string::npos;
      bool lang_used = cfg.setting == Setting::kC || cfg.setting == Setting::kD;
      bool vis_used = cfg.setting != Setting::kA;
      if (is_lora)
        (lang_used ? p.lora_adapted : p.frozen).insert(n);
      else if (n.rfind("llmvis.", 0) == 0 || n.rfind("segenc.", 0) == 0 ||
               n.rfind("reasoner.text_pos", 0) == 0)
        p.frozen.insert(n);
      else if (n.rfind("reasoner.", 0) == 0) {
        bool head = n.rfind("reasoner.tok_emb", 0) == 0 ||
                    n.rfind("reasoner.lm_head", 0) == 0;
        (head && lang_used ? p.fully_trainable : p.frozen).insert(n);
      } else if (n.rfind("maskdec.", 0) == 0)
        p.fully_trainable.insert(n);
      else if (n.rfind("converter.", 0) == 0)
        (vis_used ? p.from_scratch : p.frozen).insert(n);
      else if (n == "query_a")
        (cfg.setting == Setting::kA ? p.from_scratch : p.frozen).insert(n);
      else
        throw config_error("parameter escapes the freeze policy: " + n);
    }
    return p;
  }

  // ----- teacher-forced training path -------------------------------------

  PipelineForward<T> train_forward(const EditedSample& sample,
                                   const Vocabulary& vocab, int prompt_id) {
    PipelineForward<T> fw;
    FeatureGrid<T> grid = segenc.forward(sample.image);

    if (cfg.setting == Setting::kA) {
      fw.query = query_a.value;
    } else if (cfg.setting == Setting::kB) {
      Mat<T> visual = reasoner.encode_image_for_llm(sample.image);
      fw.pooled = visual.colwise().mean();
      fw.h_seg = fw.pooled;
      fw.query = reasoner.project_query(fw.h_seg);
    } else {
      Mat<T> visual = reasoner.encode_image_for_llm(sample.image);
      TokenSequence prompt =
          encode(render_prompt(prompt_id), vocab, Segment::kPrompt);
      std::string response_text = cfg.setting == Setting::kC
                                      ? "[SEG]"
                                      : render_response(sample.instruction);
      TokenSequence response = encode(response_text, vocab);

      const int P = int(prompt.ids.size());
      const int R = int(response.ids.size());
      fw.prompt_len = P;
      fw.text_in.push_back(kBos);
      fw.text_in.insert(fw.text_in.end(), prompt.ids.begin(), prompt.ids.end());
      fw.text_in.insert(fw.text_in.end(), response.ids.begin(), response.ids.end());
      fw.targets = prompt.ids;
      fw.targets.insert(fw.targets.end(), response.ids.begin(), response.ids.end());
      fw.targets.push_back(kEos);
      for (int i = P; i <= P + R; ++i) fw.ce_positions.push_back(i);

      fw.states = reasoner.forward(visual, fw.text_in);

      int seg_idx = -1;
      for (int i = 0; i < R; ++i)
        if (response.ids[size_t(i)] == kSeg) {
          seg_idx = i;
          break;
        }
      if (seg_idx < 0) throw seg_missing_error("teacher-forced response lacks [SEG]");
      fw.seg_row = reasoner.seg_row(fw.states.n_vis, P, seg_idx);
      fw.h_seg = extract_seg_embedding(fw.states, fw.seg_row);
      fw.query = reasoner.project_query(fw.h_seg);
    }

    fw.mask_logits = maskdec.decode(grid, fw.query);
    return fw;
  }

  // dmask: d total / d mask logits; dlogits: d total / d text logits (empty
  // when the language loss is off)
  void train_backward(const PipelineForward<T>& fw, const Mat<T>& dmask,
                      const Mat<T>& dlogits) {
    Mat<T> dquery = maskdec.backward(dmask);

    if (cfg.setting == Setting::kA) {
      query_a.grad += dquery;
      return;
    }
    Mat<T> dh_seg = reasoner.converter.backward(dquery);
    if (cfg.setting == Setting::kB) {
      int n_vis = reasoner.vis.gh_ * reasoner.vis.gw_;
      Mat<T> dvis(n_vis, cfg.reasoner.d_model);
      for (int i = 0; i < n_vis; ++i) dvis.row(i) = dh_seg.row(0) / T(n_vis);
      reasoner.vis.backward(dvis);
      return;
    }
    Mat<T> dhidden = Mat<T>::Zero(fw.states.hidden.rows(), fw.states.hidden.cols());
    dhidden.row(fw.seg_row) = dh_seg.row(0);
    Mat<T> dl = dlogits.size() == 0
                    ? Mat<T>(Mat<T>::Zero(fw.states.text_len, cfg.reasoner.vocab))
                    : dlogits;
    Mat<T> dvisual = reasoner.backward(fw.states, dl, dhidden);
    reasoner.vis.backward(dvisual);
  }

  // ----- inference path ----------------------------------------------------

  struct EvalResult {
    Mask mask;
    Mat<T> mask_logits;
    std::string instruction;
    bool seg_fallback = false;
    TokenSequence response;
  };

  EvalResult evaluate_sample(const EditedSample& sample, const Vocabulary& vocab,
                             int prompt_id, int max_new = 24,
                             double threshold = 0.5) {
    EvalResult out;
    FeatureGrid<T> grid = segenc.forward(sample.image);
    Mat<T> query;

    if (cfg.setting == Setting::kA) {
      query = query_a.value;
    } else if (cfg.setting == Setting::kB) {
      Mat<T> visual = reasoner.encode_image_for_llm(sample.image);
      Mat<T> pooled = visual.colwise().mean();
      query = reasoner.project_query(pooled);
    } else {
      Mat<T> visual = reasoner.encode_image_for_llm(sample.image);
      TokenSequence prompt =
          encode(render_prompt(prompt_id), vocab, Segment::kPrompt);
      GenerateResult<T> gen = reasoner.generate(visual, prompt, max_new);
      out.response = gen.response;
      int seg_idx = -1;
      for (size_t i = 0; i < gen.response.ids.size(); ++i)
        if (gen.response.ids[i] == kSeg) {
          seg_idx = int(i);
          break;
        }
      int row;
      if (seg_idx >= 0) {
        row = reasoner.seg_row(gen.states.n_vis, gen.prompt_len, seg_idx);
        try {
          ParsedResponse parsed = parse_response(gen.response, vocab);
          out.instruction = parsed.instruction;
        } catch (const seg_missing_error&) {
          out.instruction.clear();
        }
      } else {
        row = int(gen.states.hidden.rows()) - 1;  // fallback: final position
        out.seg_fallback = true;
      }
      Mat<T> h_seg = extract_seg_embedding(gen.states, row);
      query = reasoner.project_query(h_seg);
    }

    out.mask_logits = maskdec.decode(grid, query);
    out.mask = binarize(out.mask_logits, threshold);
    return out;
  }
};

}  // namespace tamperseg
