#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "tamperseg/losses.hpp"
#include "tamperseg/pipeline.hpp"

using namespace tamperseg;

namespace {

EditedSample make_sample(int64_t seed, int size, Family fam = Family::kA) {
  SceneSpec scene = generate_scene(seed, size, size);
  EditSpec edit = sample_edit(scene, fam, seed + 1);
  return apply_edit(scene, edit, seed + 2, CorpusConfig{});
}

Vocabulary vocab_for(const std::vector<EditedSample>& samples) {
  CorpusManifest m;
  for (const auto& s : samples) {
    SampleRecord r;
    r.id = s.id;
    r.instruction = s.instruction;
    m.splits["train"].push_back(r);
  }
  return build_vocab(m);
}

PipelineConfig small_cfg(Setting setting, int64_t seed, int vocab_size) {
  PipelineConfig cfg;
  cfg.setting = setting;
  cfg.reasoner.d_model = 16;
  cfg.reasoner.n_layers = 1;
  cfg.reasoner.n_heads = 2;
  cfg.reasoner.ffn_mult = 2;
  cfg.reasoner.max_seq = 64;
  cfg.reasoner.query_dim = 8;
  cfg.reasoner.max_grid = 8;
  cfg.reasoner.vocab = vocab_size;
  cfg.reasoner.seed = seed;
  cfg.seg.d_feat = 16;
  cfg.seg.query_dim = 8;
  cfg.seg.max_grid = 8;
  cfg.seg.seed = seed;
  cfg.lora.rank = 4;
  return cfg;
}

}  // namespace

TEST_CASE("freeze policy tracks the ablation wiring") {
  EditedSample s = make_sample(100, 32);
  Vocabulary vocab = vocab_for({s});

  auto names_of = [](const FreezePolicy& p) {
    return std::vector<const std::set<std::string>*>{
        &p.frozen, &p.lora_adapted, &p.fully_trainable, &p.from_scratch};
  };

  SUBCASE("setting D trains adapters, heads, decoder and converter") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kD, 1, vocab.size()));
    FreezePolicy p = m.default_policy();
    ParamList<double> train = apply_freeze_policy(m.params(), p);
    CHECK(p.lora_adapted.count("reasoner.block0.attn.q.lora_a") == 1);
    CHECK(p.lora_adapted.count("reasoner.block0.attn.v.lora_b") == 1);
    CHECK(p.fully_trainable.count("reasoner.tok_emb") == 1);
    CHECK(p.fully_trainable.count("reasoner.lm_head.W") == 1);
    CHECK(p.fully_trainable.count("maskdec.out_proj.W") == 1);
    CHECK(p.from_scratch.count("converter.fc1.W") == 1);
    CHECK(p.frozen.count("llmvis.proj.W") == 1);
    CHECK(p.frozen.count("segenc.fc1.W") == 1);
    CHECK(p.frozen.count("reasoner.text_pos") == 1);
    CHECK(p.frozen.count("reasoner.block0.attn.q.W") == 1);
    CHECK(p.frozen.count("reasoner.ln_f.gamma") == 1);
    CHECK(p.frozen.count("query_a") == 1);
    size_t covered = 0;
    for (const auto* set : names_of(p)) covered += set->size();
    CHECK(covered == m.params().size());
    CHECK(train.size() == covered - p.frozen.size());
  }

  SUBCASE("setting A trains only the decoder and its query vector") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kA, 1, vocab.size()));
    FreezePolicy p = m.default_policy();
    apply_freeze_policy(m.params(), p);
    CHECK(p.from_scratch.count("query_a") == 1);
    CHECK(p.frozen.count("converter.fc1.W") == 1);
    CHECK(p.frozen.count("reasoner.tok_emb") == 1);
    CHECK(p.frozen.count("reasoner.block0.attn.q.lora_a") == 1);
    CHECK(p.fully_trainable.count("maskdec.lift.W") == 1);
  }

  SUBCASE("setting B wakes the converter but not the language head") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kB, 1, vocab.size()));
    FreezePolicy p = m.default_policy();
    apply_freeze_policy(m.params(), p);
    CHECK(p.from_scratch.count("converter.fc1.W") == 1);
    CHECK(p.frozen.count("reasoner.tok_emb") == 1);
    CHECK(p.frozen.count("reasoner.block0.attn.q.lora_a") == 1);
    CHECK(p.frozen.count("query_a") == 1);
  }

  SUBCASE("setting C adapts attention without instruction supervision") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kC, 1, vocab.size()));
    FreezePolicy p = m.default_policy();
    apply_freeze_policy(m.params(), p);
    CHECK(p.lora_adapted.count("reasoner.block0.attn.v.lora_a") == 1);
    CHECK(p.fully_trainable.count("reasoner.tok_emb") == 1);
    CHECK(p.from_scratch.count("converter.fc2.W") == 1);
    CHECK(p.frozen.count("query_a") == 1);
  }
}

TEST_CASE("train_forward wires each ablation as specified") {
  EditedSample s = make_sample(101, 32);
  Vocabulary vocab = vocab_for({s});

  SUBCASE("A: a shared learnable query, no reasoner involvement") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kA, 2, vocab.size()));
    PipelineForward<double> fw = m.train_forward(s, vocab, 1);
    CHECK((fw.query - m.query_a.value).cwiseAbs().maxCoeff() == 0.0);
    CHECK(fw.seg_row == -1);
    CHECK(fw.text_in.empty());
    CHECK(fw.mask_logits.rows() == 32);
    CHECK(fw.mask_logits.cols() == 32);
  }

  SUBCASE("B: mean-pooled visual tokens through the converter") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kB, 2, vocab.size()));
    PipelineForward<double> fw = m.train_forward(s, vocab, 1);
    Mat<double> visual = m.reasoner.encode_image_for_llm(s.image);
    Mat<double> pooled = visual.colwise().mean();
    CHECK((fw.pooled - pooled).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((fw.query - m.reasoner.project_query(pooled)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(fw.seg_row == -1);
  }

  SUBCASE("C: teacher-forced bare seg response, one CE position pair") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kC, 2, vocab.size()));
    PipelineForward<double> fw = m.train_forward(s, vocab, 1);
    int P = fw.prompt_len;
    CHECK(P > 0);
    CHECK(int(fw.text_in.size()) == 1 + P + 1);  // BOS + prompt + [SEG]
    CHECK(fw.text_in.back() == kSeg);
    CHECK(fw.targets.size() == fw.text_in.size());
    CHECK(fw.targets.back() == kEos);
    CHECK(fw.ce_positions == std::vector<int>{P, P + 1});
    CHECK(fw.seg_row == 16 + 1 + P);  // 4x4 visual tokens at 32px, patch 8
  }

  SUBCASE("D: full response with the instruction spelled out") {
    Pipeline<double> m;
    m.init(small_cfg(Setting::kD, 2, vocab.size()));
    PipelineForward<double> fw = m.train_forward(s, vocab, 1);
    int P = fw.prompt_len;
    int R = int(fw.text_in.size()) - 1 - P;
    CHECK(R > 2);  // template words around [SEG] plus the instruction
    CHECK(int(fw.ce_positions.size()) == R + 1);
    CHECK(fw.ce_positions.front() == P);
    CHECK(fw.ce_positions.back() == P + R);
    // the seg row really is the [SEG] hidden state
    int local = fw.seg_row - 16 - 1;
    CHECK(fw.text_in[size_t(1 + local)] == kSeg);
    CHECK((fw.h_seg - fw.states.hidden.row(fw.seg_row)).cwiseAbs().maxCoeff() == 0.0);
    // states cover the whole teacher-forced sequence
    CHECK(fw.states.text_len == int(fw.text_in.size()));
    CHECK(fw.states.logits.rows() == int(fw.text_in.size()));
  }
}

TEST_CASE("gradients reach exactly the branch that produced the query") {
  EditedSample s = make_sample(102, 32);
  Vocabulary vocab = vocab_for({s});

  Pipeline<double> a;
  a.init(small_cfg(Setting::kA, 3, vocab.size()));
  zero_grads(a.params());
  PipelineForward<double> fa = a.train_forward(s, vocab, 1);
  Mat<double> dmask;
  bce_mask(fa.mask_logits, s.mask, &dmask);
  a.train_backward(fa, dmask, Mat<double>());
  CHECK(a.query_a.grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.reasoner.converter.fc1.W.grad.cwiseAbs().maxCoeff() == 0.0);

  Pipeline<double> b;
  b.init(small_cfg(Setting::kB, 3, vocab.size()));
  zero_grads(b.params());
  PipelineForward<double> fb = b.train_forward(s, vocab, 1);
  bce_mask(fb.mask_logits, s.mask, &dmask);
  b.train_backward(fb, dmask, Mat<double>());
  CHECK(b.query_a.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(b.reasoner.converter.fc1.W.grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(b.reasoner.tok_emb.table.grad.cwiseAbs().maxCoeff() == 0.0);

  Pipeline<double> d;
  d.init(small_cfg(Setting::kD, 3, vocab.size()));
  zero_grads(d.params());
  PipelineForward<double> fd = d.train_forward(s, vocab, 1);
  bce_mask(fd.mask_logits, s.mask, &dmask);
  Mat<double> dce;
  instruction_ce(fd.states.logits, fd.targets, fd.ce_positions, &dce);
  d.train_backward(fd, dmask, dce);
  CHECK(d.reasoner.tok_emb.table.grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(d.reasoner.lm_head.W.grad.cwiseAbs().maxCoeff() > 0.0);
  // with B zero-initialized, the adapter gradient enters through B first
  CHECK(d.reasoner.blocks[0].attn.q.B.grad.cwiseAbs().maxCoeff() > 0.0);
  CHECK(d.query_a.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full combined-loss gradient survives a finite-difference audit") {
  EditedSample s = make_sample(103, 32, Family::kB);
  Vocabulary vocab = vocab_for({s});
  PipelineConfig cfg = small_cfg(Setting::kD, 4, vocab.size());
  cfg.reasoner.d_model = 8;
  cfg.reasoner.n_heads = 2;
  cfg.reasoner.query_dim = 4;
  cfg.seg.d_feat = 8;
  cfg.seg.query_dim = 4;
  cfg.lora.rank = 2;

  Pipeline<double> m;
  m.init(cfg);
  ParamList<double> all = m.params();
  ParamList<double> trainable = apply_freeze_policy(all, m.default_policy());
  LossWeights w;

  auto loss = [&]() -> double {
    PipelineForward<double> fw = m.train_forward(s, vocab, 1);
    double lb = bce_mask(fw.mask_logits, s.mask);
    double ld = dice_mask(fw.mask_logits, s.mask);
    double lc = instruction_ce(fw.states.logits, fw.targets, fw.ce_positions);
    return total_loss(lc, lb, ld, w).total;
  };

  zero_grads(all);
  PipelineForward<double> fw = m.train_forward(s, vocab, 1);
  Mat<double> dbce, ddice, dce;
  bce_mask(fw.mask_logits, s.mask, &dbce);
  dice_mask(fw.mask_logits, s.mask, 1.0, &ddice);
  instruction_ce(fw.states.logits, fw.targets, fw.ce_positions, &dce);
  Mat<double> dmask = w.lambda_m * (w.lambda_bce * dbce + w.lambda_dice * ddice);
  Mat<double> dlogits = w.lambda_c * dce;
  m.train_backward(fw, dmask, dlogits);

  CHECK(oracles::fd_max_rel_err(trainable, loss) < 1e-4);
}

TEST_CASE("zero-initialized adapters leave the pipeline function unchanged") {
  EditedSample s = make_sample(104, 32);
  Vocabulary vocab = vocab_for({s});
  PipelineConfig with = small_cfg(Setting::kD, 5, vocab.size());
  PipelineConfig without = with;
  without.use_lora = false;

  Pipeline<double> a, b;
  a.init(with);
  b.init(without);
  PipelineForward<double> fa = a.train_forward(s, vocab, 1);
  PipelineForward<double> fb = b.train_forward(s, vocab, 1);
  CHECK((fa.mask_logits - fb.mask_logits).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((fa.states.logits - fb.states.logits).cwiseAbs().maxCoeff() < 1e-12);

  auto ea = a.evaluate_sample(s, vocab, 1);
  auto eb = b.evaluate_sample(s, vocab, 1);
  CHECK((ea.mask_logits - eb.mask_logits).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(ea.response.ids == eb.response.ids);
}

TEST_CASE("evaluate_sample is deterministic and shape-correct per setting") {
  EditedSample s = make_sample(105, 32);
  Vocabulary vocab = vocab_for({s});
  for (Setting st : {Setting::kA, Setting::kB, Setting::kC, Setting::kD}) {
    CAPTURE(setting_name(st));
    Pipeline<double> m;
    m.init(small_cfg(st, 6, vocab.size()));
    auto e1 = m.evaluate_sample(s, vocab, 1);
    auto e2 = m.evaluate_sample(s, vocab, 1);
    CHECK(e1.mask.height == 32);
    CHECK(e1.mask.width == 32);
    CHECK(e1.mask_logits.allFinite());
    CHECK((e1.mask_logits - e2.mask_logits).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e1.mask.data == e2.mask.data);
    bool uses_text = st == Setting::kC || st == Setting::kD;
    if (!uses_text) {
      CHECK(e1.response.size() == 0);
      CHECK_FALSE(e1.seg_fallback);
    } else {
      CHECK(e1.response.size() >= 1);
      CHECK(e1.response.ids == e2.response.ids);
    }
  }
}

TEST_CASE("ablation setting metadata matches the id table") {
  CHECK(setting_from_name("A") == Setting::kA);
  CHECK(setting_from_name("D") == Setting::kD);
  CHECK_THROWS_AS(setting_from_name("E"), config_error);
  CHECK(setting_name(Setting::kC) == "C");
  AblationSetting a = setting_info(Setting::kA);
  CHECK_FALSE(a.uses_llm_image_embedding);
  CHECK_FALSE(a.uses_prompt);
  CHECK_FALSE(a.predicts_instruction);
  AblationSetting b = setting_info(Setting::kB);
  CHECK(b.uses_llm_image_embedding);
  CHECK_FALSE(b.uses_prompt);
  AblationSetting c = setting_info(Setting::kC);
  CHECK(c.uses_prompt);
  CHECK_FALSE(c.predicts_instruction);
  AblationSetting d = setting_info(Setting::kD);
  CHECK(d.predicts_instruction);
}
