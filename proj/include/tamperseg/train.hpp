#pragma once

// Training loop: corpus -> teacher-forced forward -> combined loss ->
// AdamW on the trainable view only. Every stochastic choice is a pure
// function of (seed, step), so runs are reproducible and resumable.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tamperseg/dataset.hpp"
#include "tamperseg/losses.hpp"
#include "tamperseg/metrics.hpp"
#include "tamperseg/pipeline.hpp"

namespace tamperseg {

enum class Precision { kSingle, kDouble };

std::string precision_name(Precision p);
Precision precision_from_name(const std::string& s);

struct TrainConfig {
  double learning_rate = 3e-5;
  double weight_decay = 0.0;
  int batch_size = 4;
  int max_steps = 200;
  int64_t seed = 1;
  int eval_every = 0;  // 0: no periodic eval
  Precision precision = Precision::kSingle;
  LossWeights weights;
  PipelineConfig pipeline;
};

nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config_file(const std::string& path);

struct StepRecord {
  int step = 0;
  LossBreakdown loss;
};

struct EvalOutputs {
  MetricsReport report;
  double instruction_token_accuracy = 0.0;
  double seg_missing_rate = 0.0;
  int n_samples = 0;
  std::string split;
};

nlohmann::json eval_to_json(const EvalOutputs& ev);

// fraction of aligned positions that match; length mismatches count as errors
double token_accuracy(const std::vector<int>& truth, const std::vector<int>& pred);

struct CheckpointInfo {
  TrainConfig config;
  int step = 0;
  uint64_t corpus_hash = 0;
  uint64_t vocab_hash = 0;
  std::string scalar;
};

CheckpointInfo peek_checkpoint(const std::string& path);

namespace detail {
constexpr char kCkptMagic[9] = "TSGCKPT1";

template <typename T>
const char* scalar_name() {
  return sizeof(T) == 8 ? "double" : "float";
}

template <typename T>
void write_mat(std::ostream& os, const Mat<T>& m) {
  os.write(reinterpret_cast<const char*>(m.data()),
           std::streamsize(sizeof(T) * size_t(m.size())));
}

template <typename T>
void read_mat(std::istream& is, Mat<T>& m) {
  is.read(reinterpret_cast<char*>(m.data()),
          std::streamsize(sizeof(T) * size_t(m.size())));
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     Pipeline<T>& model, const AdamW<T>& opt, int step,
                     uint64_t corpus_hash, uint64_t vocab_hash) {
  ParamList<T> params = model.params();
  nlohmann::json header;
  header["scalar"] = detail::scalar_name<T>();
  header["step"] = step;
  header["corpus_hash"] = hex64(corpus_hash);
  header["vocab_hash"] = hex64(vocab_hash);
  header["config"] = config_to_json(cfg);
  nlohmann::json plist = nlohmann::json::array();
  for (Param<T>* p : params)
    plist.push_back({{"name", p->name},
                     {"rows", p->value.rows()},
                     {"cols", p->value.cols()}});
  header["params"] = plist;
  auto state = opt.export_state();
  nlohmann::json olist = nlohmann::json::array();
  for (const auto& [name, mv] : state)
    olist.push_back({{"name", name},
                     {"rows", mv.first.rows()},
                     {"cols", mv.first.cols()}});
  header["opt"] = {{"t", opt.steps()}, {"entries", olist}};

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot write checkpoint " + path);
  std::string hs = header.dump();
  uint64_t hlen = hs.size();
  os.write(detail::kCkptMagic, 8);
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(hs.data(), std::streamsize(hs.size()));
  for (Param<T>* p : params) detail::write_mat(os, p->value);
  for (const auto& [name, mv] : state) {
    detail::write_mat(os, mv.first);
    detail::write_mat(os, mv.second);
  }
  if (!os) throw io_error("short write on checkpoint " + path);
}

// model must already be initialized from the checkpoint's config
template <typename T>
CheckpointInfo load_checkpoint(const std::string& path, Pipeline<T>& model,
                               AdamW<T>* opt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint " + path);
  char magic[8];
  uint64_t hlen = 0;
  is.read(magic, 8);
  if (std::string(magic, 8) != std::string(detail::kCkptMagic, 8))
    throw io_error("not a checkpoint file: " + path);
  is.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  is.read(hs.data(), std::streamsize(hlen));
  nlohmann::json header = nlohmann::json::parse(hs);

  CheckpointInfo info;
  info.config = config_from_json(header.at("config"));
  info.step = header.at("step").get<int>();
  info.corpus_hash = std::stoull(header.at("corpus_hash").get<std::string>(), nullptr, 16);
  info.vocab_hash = std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  info.scalar = header.at("scalar").get<std::string>();
  if (info.scalar != detail::scalar_name<T>())
    throw config_error("checkpoint precision " + info.scalar +
                       " does not match the requested instantiation");

  ParamList<T> params = model.params();
  std::map<std::string, Param<T>*> by_name;
  for (Param<T>* p : params) by_name[p->name] = p;
  for (const auto& e : header.at("params")) {
    auto it = by_name.find(e.at("name").get<std::string>());
    if (it == by_name.end())
      throw config_error("checkpoint parameter unknown to the model: " +
                         e.at("name").get<std::string>());
    Param<T>* p = it->second;
    if (p->value.rows() != e.at("rows").get<long>() ||
        p->value.cols() != e.at("cols").get<long>())
      throw config_error("checkpoint shape mismatch for " + p->name);
    detail::read_mat(is, p->value);
  }
  if (opt) {
    std::map<std::string, std::pair<Mat<T>, Mat<T>>> state;
    for (const auto& e : header.at("opt").at("entries")) {
      std::string name = e.at("name").get<std::string>();
      long r = e.at("rows").get<long>(), c = e.at("cols").get<long>();
      Mat<T> m(r, c), v(r, c);
      detail::read_mat(is, m);
      detail::read_mat(is, v);
      state[name] = {std::move(m), std::move(v)};
    }
    opt->import_state(state, header.at("opt").at("t").get<int64_t>());
  }
  if (!is) throw io_error("short read on checkpoint " + path);
  return info;
}

template <typename T>
class Trainer {
 public:
  TrainConfig cfg;
  Pipeline<T> model;
  AdamW<T> opt;
  ParamList<T> all_params;
  ParamList<T> trainable;
  Vocabulary vocab;
  CorpusManifest manifest;
  std::string data_dir;
  std::vector<EditedSample> train_set;
  uint64_t corpus_hash_ = 0;

  void init(const TrainConfig& config, const std::string& corpus_dir) {
    cfg = config;
    data_dir = corpus_dir;
    manifest = load_manifest(corpus_dir);
    corpus_hash_ = manifest_hash(manifest);
    vocab = build_vocab(manifest);
    cfg.pipeline.reasoner.vocab = vocab.size();
    model.init(cfg.pipeline);
    all_params = model.params();
    trainable = apply_freeze_policy(all_params, model.default_policy());
    opt.lr = cfg.learning_rate;
    opt.weight_decay = cfg.weight_decay;
    if (!manifest.splits.count("train"))
      throw missing_sample_error("corpus has no train split");
    train_set = load_split(corpus_dir, manifest, "train");
  }

  int prompt_for(int step, int index) const {
    if (cfg.pipeline.prompt_id != 0) return cfg.pipeline.prompt_id;
    uint64_t draw = derive_seed(uint64_t(cfg.seed),
                                0x9000 + uint64_t(step) * 131 + uint64_t(index));
    return 1 + int(draw % 4);
  }

  LossBreakdown train_step(const std::vector<const EditedSample*>& batch, int step) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    zero_grads(all_params);
    const double B = double(batch.size());
    const LossWeights& w = cfg.weights;
    LossBreakdown avg;
    bool lang = cfg.pipeline.setting == Setting::kC ||
                cfg.pipeline.setting == Setting::kD;

    for (size_t i = 0; i < batch.size(); ++i) {
      const EditedSample& s = *batch[i];
      PipelineForward<T> fw =
          model.train_forward(s, vocab, prompt_for(step, int(i)));

      Mat<T> dbce, ddice, dce;
      double l_bce = double(bce_mask(fw.mask_logits, s.mask, &dbce));
      double l_dice = double(dice_mask(fw.mask_logits, s.mask, 1.0, &ddice));
      double l_c = 0.0;
      bool ce_grad = lang && w.lambda_c != 0.0;
      if (lang)
        l_c = double(instruction_ce(fw.states.logits, fw.targets, fw.ce_positions,
                                    ce_grad ? &dce : nullptr));

      LossBreakdown b = total_loss(l_c, l_bce, l_dice, w);
      avg.l_c += b.l_c / B;
      avg.l_bce += b.l_bce / B;
      avg.l_dice += b.l_dice / B;
      avg.l_m += b.l_m / B;
      avg.total += b.total / B;

      Mat<T> dmask = T(w.lambda_m * w.lambda_bce / B) * dbce +
                     T(w.lambda_m * w.lambda_dice / B) * ddice;
      Mat<T> dlogits;
      if (ce_grad) dlogits = T(w.lambda_c / B) * dce;
      model.train_backward(fw, dmask, dlogits);
    }
    if (!std::isfinite(avg.total))
      throw numeric_error("train_step: non-finite loss at step " +
                          std::to_string(step));
    opt.step(trainable);
    return avg;
  }

  std::vector<int> batch_order(int epoch) const {
    std::vector<int> perm(train_set.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
    Rng rng{derive_seed(derive_seed(uint64_t(cfg.seed), 0xBA7C), uint64_t(epoch))};
    for (size_t i = perm.size(); i > 1; --i)
      std::swap(perm[i - 1], perm[size_t(rng.uniform_int(0, int64_t(i) - 1))]);
    return perm;
  }

  // runs [start_step, max_steps); appends step records and JSONL lines
  std::vector<StepRecord> fit(const std::string& out_dir, int start_step = 0) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::ofstream log(out_dir + "/train_log.jsonl",
                      start_step == 0 ? std::ios::trunc : std::ios::app);
    if (!log) throw io_error("cannot write training log in " + out_dir);

    const int n = int(train_set.size());
    const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    std::vector<StepRecord> records;
    std::vector<int> perm;
    int perm_epoch = -1;

    for (int step = start_step; step < cfg.max_steps; ++step) {
      int epoch = step / steps_per_epoch;
      int pos = (step % steps_per_epoch) * cfg.batch_size;
      if (epoch != perm_epoch) {
        perm = batch_order(epoch);
        perm_epoch = epoch;
      }
      std::vector<const EditedSample*> batch;
      for (int k = pos; k < std::min(pos + cfg.batch_size, n); ++k)
        batch.push_back(&train_set[size_t(perm[size_t(k)])]);

      LossBreakdown loss;
      try {
        loss = train_step(batch, step);
      } catch (const numeric_error&) {
        dump_diagnostics(out_dir, step, batch);
        throw;
      }
      records.push_back({step, loss});
      nlohmann::json line = {{"step", step},     {"l_c", loss.l_c},
                             {"l_bce", loss.l_bce}, {"l_dice", loss.l_dice},
                             {"l_m", loss.l_m},  {"total", loss.total}};
      log << line.dump() << "\n";

      if (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 &&
          step + 1 < cfg.max_steps) {
        save_checkpoint(out_dir + "/checkpoint_step" + std::to_string(step + 1) +
                            ".bin",
                        cfg, model, opt, step + 1, corpus_hash_, vocab.hash());
        if (manifest.splits.count("seen-test")) {
          EvalOutputs ev = evaluate("seen-test");
          std::ofstream ej(out_dir + "/eval_step" + std::to_string(step + 1) +
                           ".json");
          ej << eval_to_json(ev).dump(2) << "\n";
        }
      }
    }
    save_checkpoint(out_dir + "/checkpoint.bin", cfg, model, opt, cfg.max_steps,
                    corpus_hash_, vocab.hash());
    return records;
  }

  EvalOutputs evaluate(const std::string& split) {
    std::vector<EditedSample> samples = load_split(data_dir, manifest, split);
    return evaluate_samples(samples, split);
  }

  EvalOutputs evaluate_samples(const std::vector<EditedSample>& samples,
                               const std::string& split) {
    EvalOutputs out;
    out.split = split;
    out.n_samples = int(samples.size());
    int pid = cfg.pipeline.prompt_id == 0 ? 1 : cfg.pipeline.prompt_id;
    bool predicts = setting_info(cfg.pipeline.setting).predicts_instruction;
    std::map<std::string, Mask> preds, gts;
    int fallbacks = 0;
    double acc = 0.0;
    for (const EditedSample& s : samples) {
      auto ev = model.evaluate_sample(s, vocab, pid);
      preds[s.id] = ev.mask;
      gts[s.id] = s.mask;
      if (ev.seg_fallback) ++fallbacks;
      if (predicts)
        acc += token_accuracy(encode(s.instruction, vocab).ids,
                              encode(ev.instruction, vocab).ids);
    }
    out.report = evaluate_split(preds, gts);
    if (!samples.empty()) {
      out.seg_missing_rate = double(fallbacks) / double(samples.size());
      out.instruction_token_accuracy = predicts ? acc / double(samples.size()) : 0.0;
    }
    return out;
  }

 private:
  void dump_diagnostics(const std::string& out_dir, int step,
                        const std::vector<const EditedSample*>& batch) {
    nlohmann::json j;
    j["step"] = step;
    j["reason"] = "non-finite loss";
    nlohmann::json ids = nlohmann::json::array();
    for (const auto* s : batch) ids.push_back(s->id);
    j["batch"] = ids;
    std::ofstream os(out_dir + "/diagnostics.json");
    os << j.dump(2) << "\n";
  }
};

// precision-dispatching front ends used by the CLI and the experiment harness
struct FitResult {
  std::string checkpoint_path;
  std::vector<StepRecord> trace;
};

FitResult run_fit(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, const std::string& resume = "");
EvalOutputs run_eval(const std::string& ckpt_path, const std::string& data_dir,
                     const std::string& split, const std::string& out_json = "");

}  // namespace tamperseg
