#include "tamperseg/train.hpp"

#include <stdexcept>

namespace tamperseg {

std::string precision_name(Precision p) {
  return p == Precision::kDouble ? "double" : "single";
}

Precision precision_from_name(const std::string& s) {
  if (s == "single") return Precision::kSingle;
  if (s == "double") return Precision::kDouble;
  throw config_error("unknown precision: " + s);
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
  const PipelineConfig& p = cfg.pipeline;
  return {
      {"learning_rate", cfg.learning_rate},
      {"weight_decay", cfg.weight_decay},
      {"batch_size", cfg.batch_size},
      {"max_steps", cfg.max_steps},
      {"seed", cfg.seed},
      {"eval_every", cfg.eval_every},
      {"precision", precision_name(cfg.precision)},
      {"weights",
       {{"lambda_bce", cfg.weights.lambda_bce},
        {"lambda_dice", cfg.weights.lambda_dice},
        {"lambda_c", cfg.weights.lambda_c},
        {"lambda_m", cfg.weights.lambda_m}}},
      {"pipeline",
       {{"setting", setting_name(p.setting)},
        {"prompt_id", p.prompt_id},
        {"use_lora", p.use_lora},
        {"lora",
         {{"rank", p.lora.rank},
          {"alpha", p.lora.alpha},
          {"init_std", p.lora.init_std}}},
        {"reasoner",
         {{"d_model", p.reasoner.d_model},
          {"n_layers", p.reasoner.n_layers},
          {"n_heads", p.reasoner.n_heads},
          {"ffn_mult", p.reasoner.ffn_mult},
          {"max_seq", p.reasoner.max_seq},
          {"patch", p.reasoner.patch},
          {"query_dim", p.reasoner.query_dim},
          {"max_grid", p.reasoner.max_grid},
          {"vocab", p.reasoner.vocab},
          {"seed", p.reasoner.seed},
          {"init_std", p.reasoner.init_std},
          {"vis_gain", p.reasoner.vis_gain}}},
        {"seg",
         {{"patch", p.seg.patch},
          {"d_feat", p.seg.d_feat},
          {"query_dim", p.seg.query_dim},
          {"max_grid", p.seg.max_grid},
          {"seed", p.seg.seed},
          {"init_std", p.seg.init_std},
          {"enc_gain", p.seg.enc_gain}}}}},
  };
}

namespace {
template <typename V>
void maybe(const nlohmann::json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}
}  // namespace

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  maybe(j, "learning_rate", cfg.learning_rate);
  maybe(j, "weight_decay", cfg.weight_decay);
  maybe(j, "batch_size", cfg.batch_size);
  maybe(j, "max_steps", cfg.max_steps);
  maybe(j, "seed", cfg.seed);
  maybe(j, "eval_every", cfg.eval_every);
  if (j.contains("precision"))
    cfg.precision = precision_from_name(j.at("precision").get<std::string>());
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    maybe(w, "lambda_bce", cfg.weights.lambda_bce);
    maybe(w, "lambda_dice", cfg.weights.lambda_dice);
    maybe(w, "lambda_c", cfg.weights.lambda_c);
    maybe(w, "lambda_m", cfg.weights.lambda_m);
  }
  if (j.contains("pipeline")) {
    const auto& p = j.at("pipeline");
    if (p.contains("setting"))
      cfg.pipeline.setting = setting_from_name(p.at("setting").get<std::string>());
    maybe(p, "prompt_id", cfg.pipeline.prompt_id);
    maybe(p, "use_lora", cfg.pipeline.use_lora);
    if (p.contains("lora")) {
      const auto& l = p.at("lora");
      maybe(l, "rank", cfg.pipeline.lora.rank);
      maybe(l, "alpha", cfg.pipeline.lora.alpha);
      maybe(l, "init_std", cfg.pipeline.lora.init_std);
    }
    if (p.contains("reasoner")) {
      const auto& r = p.at("reasoner");
      ReasonerConfig& rc = cfg.pipeline.reasoner;
      maybe(r, "d_model", rc.d_model);
      maybe(r, "n_layers", rc.n_layers);
      maybe(r, "n_heads", rc.n_heads);
      maybe(r, "ffn_mult", rc.ffn_mult);
      maybe(r, "max_seq", rc.max_seq);
      maybe(r, "patch", rc.patch);
      maybe(r, "query_dim", rc.query_dim);
      maybe(r, "max_grid", rc.max_grid);
      maybe(r, "vocab", rc.vocab);
      maybe(r, "seed", rc.seed);
      maybe(r, "init_std", rc.init_std);
      maybe(r, "vis_gain", rc.vis_gain);
    }
    if (p.contains("seg")) {
      const auto& s = p.at("seg");
      SegConfig& sc = cfg.pipeline.seg;
      maybe(s, "patch", sc.patch);
      maybe(s, "d_feat", sc.d_feat);
      maybe(s, "query_dim", sc.query_dim);
      maybe(s, "max_grid", sc.max_grid);
      maybe(s, "seed", sc.seed);
      maybe(s, "init_std", sc.init_std);
      maybe(s, "enc_gain", sc.enc_gain);
    }
  }
  return cfg;
}

TrainConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot read config " + path);
  nlohmann::json j;
  is >> j;
  return config_from_json(j);
}

nlohmann::json eval_to_json(const EvalOutputs& ev) {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : ev.report.records)
    recs.push_back({{"id", r.id},
                    {"iou_edited", r.iou_edited},
                    {"iou_authentic", r.iou_authentic},
                    {"miou", r.miou},
                    {"precision", r.precision},
                    {"recall", r.recall},
                    {"f1", r.f1}});
  return {{"split", ev.split},
          {"n_samples", ev.n_samples},
          {"reduction", ev.report.reduction},
          {"miou", ev.report.miou},
          {"f1", ev.report.f1},
          {"iou_edited", ev.report.iou_edited},
          {"iou_authentic", ev.report.iou_authentic},
          {"precision", ev.report.precision},
          {"recall", ev.report.recall},
          {"instruction_token_accuracy", ev.instruction_token_accuracy},
          {"seg_missing_rate", ev.seg_missing_rate},
          {"records", recs}};
}

double token_accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.empty() && pred.empty()) return 1.0;
  size_t n = std::max(truth.size(), pred.size());
  size_t match = 0;
  for (size_t i = 0; i < std::min(truth.size(), pred.size()); ++i)
    if (truth[i] == pred[i]) ++match;
  return double(match) / double(n);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
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
  if (!is) throw io_error("truncated checkpoint header in " + path);
  nlohmann::json header = nlohmann::json::parse(hs);
  CheckpointInfo info;
  info.config = config_from_json(header.at("config"));
  info.step = header.at("step").get<int>();
  info.corpus_hash =
      std::stoull(header.at("corpus_hash").get<std::string>(), nullptr, 16);
  info.vocab_hash =
      std::stoull(header.at("vocab_hash").get<std::string>(), nullptr, 16);
  info.scalar = header.at("scalar").get<std::string>();
  return info;
}

namespace {

template <typename T>
FitResult fit_impl(const TrainConfig& cfg, const std::string& data_dir,
                   const std::string& out_dir, const std::string& resume) {
  Trainer<T> tr;
  int start_step = 0;
  if (!resume.empty()) {
    CheckpointInfo info = peek_checkpoint(resume);
    tr.init(info.config, data_dir);
    load_checkpoint(resume, tr.model, &tr.opt);
    start_step = info.step;
    tr.cfg.max_steps = cfg.max_steps;  // allow extending a run
  } else {
    tr.init(cfg, data_dir);
  }
  FitResult out;
  out.trace = tr.fit(out_dir, start_step);
  out.checkpoint_path = out_dir + "/checkpoint.bin";
  return out;
}

template <typename T>
EvalOutputs eval_impl(const CheckpointInfo& info, const std::string& ckpt_path,
                      const std::string& data_dir, const std::string& split) {
  Trainer<T> tr;
  tr.init(info.config, data_dir);
  load_checkpoint(ckpt_path, tr.model, static_cast<AdamW<T>*>(nullptr));
  if (tr.vocab.hash() != info.vocab_hash)
    throw config_error("vocabulary of " + data_dir +
                       " does not match the checkpoint");
  return tr.evaluate(split);
}

}  // namespace

FitResult run_fit(const TrainConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir, const std::string& resume) {
  if (cfg.precision == Precision::kDouble)
    return fit_impl<double>(cfg, data_dir, out_dir, resume);
  return fit_impl<float>(cfg, data_dir, out_dir, resume);
}

EvalOutputs run_eval(const std::string& ckpt_path, const std::string& data_dir,
                     const std::string& split, const std::string& out_json) {
  CheckpointInfo info = peek_checkpoint(ckpt_path);
  EvalOutputs ev = info.scalar == "double"
                       ? eval_impl<double>(info, ckpt_path, data_dir, split)
                       : eval_impl<float>(info, ckpt_path, data_dir, split);
  if (!out_json.empty()) {
    std::ofstream os(out_json);
    if (!os) throw io_error("cannot write " + out_json);
    os << eval_to_json(ev).dump(2) << "\n";
  }
  return ev;
}

}  // namespace tamperseg
