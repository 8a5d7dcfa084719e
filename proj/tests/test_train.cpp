#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "tamperseg/train.hpp"

using namespace tamperseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("tamperseg_" + tag + "_" +
                                        std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string tiny_corpus(const TempDir& dir) {
  CorpusConfig cc;
  cc.out_dir = dir.str() + "/corpus";
  cc.train_n = 8;
  cc.seen_n = 4;
  cc.unseen_n = 4;
  cc.size = 32;
  cc.seed = 11;
  build_corpus(cc);
  return cc.out_dir;
}

TrainConfig tiny_train_cfg() {
  TrainConfig cfg;
  cfg.learning_rate = 5e-3;
  cfg.batch_size = 4;
  cfg.max_steps = 6;
  cfg.seed = 21;
  cfg.precision = Precision::kDouble;
  cfg.pipeline.setting = Setting::kD;
  cfg.pipeline.reasoner.d_model = 16;
  cfg.pipeline.reasoner.n_layers = 1;
  cfg.pipeline.reasoner.n_heads = 2;
  cfg.pipeline.reasoner.ffn_mult = 2;
  cfg.pipeline.reasoner.max_seq = 64;
  cfg.pipeline.reasoner.query_dim = 8;
  cfg.pipeline.reasoner.max_grid = 8;
  cfg.pipeline.reasoner.seed = 31;
  cfg.pipeline.seg.d_feat = 16;
  cfg.pipeline.seg.query_dim = 8;
  cfg.pipeline.seg.max_grid = 8;
  cfg.pipeline.seg.seed = 31;
  cfg.pipeline.lora.rank = 4;
  return cfg;
}

std::vector<char> slurp(const std::string& p) {
  std::ifstream is(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

TEST_CASE("config serialization round-trips every field") {
  TrainConfig cfg = tiny_train_cfg();
  cfg.weight_decay = 0.01;
  cfg.eval_every = 5;
  cfg.weights.lambda_dice = 0.75;
  cfg.pipeline.prompt_id = 0;
  cfg.pipeline.use_lora = false;
  nlohmann::json j = config_to_json(cfg);
  TrainConfig back = config_from_json(j);
  CHECK(back.learning_rate == cfg.learning_rate);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.max_steps == cfg.max_steps);
  CHECK(back.seed == cfg.seed);
  CHECK(back.eval_every == cfg.eval_every);
  CHECK(back.precision == cfg.precision);
  CHECK(back.weights.lambda_dice == cfg.weights.lambda_dice);
  CHECK(back.weights.lambda_bce == 2.0);
  CHECK(back.pipeline.setting == Setting::kD);
  CHECK(back.pipeline.prompt_id == 0);
  CHECK(back.pipeline.use_lora == false);
  CHECK(back.pipeline.reasoner.d_model == 16);
  CHECK(back.pipeline.lora.rank == 4);
  CHECK(back.pipeline.seg.d_feat == 16);

  // partial configs fall back to defaults rather than throwing
  TrainConfig sparse = config_from_json(nlohmann::json{{"learning_rate", 1e-2}});
  CHECK(sparse.learning_rate == 1e-2);
  CHECK(sparse.batch_size == 4);
  CHECK(sparse.weights.lambda_bce == 2.0);

  TempDir tmp("cfgfile");
  std::string path = tmp.str() + "/cfg.json";
  {
    std::ofstream os(path);
    os << j.dump(2);
  }
  TrainConfig filed = load_config_file(path);
  CHECK(filed.max_steps == cfg.max_steps);
  CHECK_THROWS_AS(load_config_file(tmp.str() + "/nope.json"), io_error);
}

TEST_CASE("token accuracy counts aligned prefix matches") {
  CHECK(token_accuracy({}, {}) == doctest::Approx(1.0));
  CHECK(token_accuracy({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(token_accuracy({1, 2, 3}, {1, 9, 3}) == doctest::Approx(2.0 / 3.0));
  CHECK(token_accuracy({1, 2}, {1, 2, 3}) == doctest::Approx(2.0 / 3.0));
  CHECK(token_accuracy({1, 2, 3}, {}) == doctest::Approx(0.0));
}

TEST_CASE("trainer wiring: vocabulary, splits, and the trainable view") {
  TempDir tmp("init");
  std::string data = tiny_corpus(tmp);
  Trainer<double> tr;
  tr.init(tiny_train_cfg(), data);
  CHECK(tr.train_set.size() == 8);
  CHECK(tr.vocab.size() > int(kNumSpecials));
  CHECK(tr.cfg.pipeline.reasoner.vocab == tr.vocab.size());
  CHECK(!tr.trainable.empty());
  CHECK(tr.trainable.size() < tr.all_params.size());
  for (Param<double>* p : tr.trainable) CHECK(p->trainable);

  // a fixed prompt id is used verbatim; the random mode draws 1..4 per example
  CHECK(tr.prompt_for(3, 1) == 1);
  TrainConfig rc = tiny_train_cfg();
  rc.pipeline.prompt_id = 0;
  Trainer<double> rnd;
  rnd.init(rc, data);
  bool varied = false;
  int first = rnd.prompt_for(0, 0);
  for (int s = 0; s < 8 && !varied; ++s)
    for (int i = 0; i < 4; ++i) {
      int p = rnd.prompt_for(s, i);
      CHECK(p >= 1);
      CHECK(p <= 4);
      if (p != first) varied = true;
    }
  CHECK(varied);
  CHECK(rnd.prompt_for(5, 2) == rnd.prompt_for(5, 2));
}

TEST_CASE("a zero learning rate leaves every parameter bit-identical") {
  TempDir tmp("zerolr");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.learning_rate = 0.0;
  cfg.max_steps = 2;
  Trainer<double> tr;
  tr.init(cfg, data);
  std::vector<Mat<double>> before;
  for (Param<double>* p : tr.all_params) before.push_back(p->value);
  tr.fit(tmp.str() + "/run");
  for (size_t i = 0; i < tr.all_params.size(); ++i)
    CHECK((tr.all_params[i]->value - before[i]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("frozen parameters stay fixed while every trainable one moves") {
  TempDir tmp("freeze");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.max_steps = 12;
  Trainer<double> tr;
  tr.init(cfg, data);
  std::vector<Mat<double>> before;
  for (Param<double>* p : tr.all_params) before.push_back(p->value);
  tr.fit(tmp.str() + "/run");
  for (size_t i = 0; i < tr.all_params.size(); ++i) {
    const Param<double>* p = tr.all_params[i];
    double delta = (p->value - before[i]).cwiseAbs().maxCoeff();
    CAPTURE(p->name);
    if (p->trainable)
      CHECK(delta > 0.0);
    else
      CHECK(delta == 0.0);
  }
}

TEST_CASE("loss decreases under training on a small corpus") {
  TempDir tmp("descent");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.max_steps = 40;
  cfg.learning_rate = 1e-2;
  Trainer<double> tr;
  tr.init(cfg, data);
  std::vector<StepRecord> rec = tr.fit(tmp.str() + "/run");
  REQUIRE(rec.size() == 40);
  double head = 0, tail = 0;
  for (int i = 0; i < 5; ++i) head += rec[size_t(i)].loss.total;
  for (int i = 35; i < 40; ++i) tail += rec[size_t(i)].loss.total;
  CHECK(tail < head);
  // the log file mirrors the records line by line
  std::ifstream log(tmp.str() + "/run/train_log.jsonl");
  int lines = 0;
  std::string line;
  while (std::getline(log, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<int>() == lines);
    CHECK(j.at("total").get<double>() ==
          doctest::Approx(rec[size_t(lines)].loss.total));
    ++lines;
  }
  CHECK(lines == 40);
}

TEST_CASE("two fits from the same seed are byte-identical") {
  TempDir tmp("repro");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  Trainer<double> a, b;
  a.init(cfg, data);
  b.init(cfg, data);
  std::vector<StepRecord> ra = a.fit(tmp.str() + "/a");
  std::vector<StepRecord> rb = b.fit(tmp.str() + "/b");
  REQUIRE(ra.size() == rb.size());
  for (size_t i = 0; i < ra.size(); ++i)
    CHECK(ra[i].loss.total == rb[i].loss.total);
  CHECK(slurp(tmp.str() + "/a/checkpoint.bin") ==
        slurp(tmp.str() + "/b/checkpoint.bin"));

  EvalOutputs ea = a.evaluate("seen-test");
  EvalOutputs eb = b.evaluate("seen-test");
  CHECK(ea.report.miou == eb.report.miou);
  CHECK(ea.report.f1 == eb.report.f1);
  CHECK(ea.instruction_token_accuracy == eb.instruction_token_accuracy);
  CHECK(ea.n_samples == 4);
  CHECK(ea.report.miou >= 0.0);
  CHECK(ea.report.miou <= 1.0);
}

TEST_CASE("checkpoints restore the exact model and optimizer") {
  TempDir tmp("ckpt");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  Trainer<double> tr;
  tr.init(cfg, data);
  tr.fit(tmp.str() + "/run");
  std::string ckpt = tmp.str() + "/run/checkpoint.bin";

  CheckpointInfo peeked = peek_checkpoint(ckpt);
  CHECK(peeked.step == cfg.max_steps);
  CHECK(peeked.scalar == "double");
  CHECK(peeked.vocab_hash == tr.vocab.hash());
  CHECK(peeked.config.pipeline.reasoner.vocab == tr.vocab.size());

  Trainer<double> back;
  back.init(peeked.config, data);
  CheckpointInfo info = load_checkpoint(ckpt, back.model, &back.opt);
  CHECK(info.step == cfg.max_steps);
  for (size_t i = 0; i < tr.all_params.size(); ++i)
    CHECK((back.all_params[i]->value - tr.all_params[i]->value)
              .cwiseAbs()
              .maxCoeff() == 0.0);
  CHECK(back.opt.steps() == tr.opt.steps());

  EvalOutputs e1 = tr.evaluate("seen-test");
  EvalOutputs e2 = back.evaluate("seen-test");
  CHECK(e1.report.miou == e2.report.miou);

  // precision mismatch is refused
  Trainer<float> wrong;
  TrainConfig fcfg = peeked.config;
  fcfg.precision = Precision::kSingle;
  wrong.init(fcfg, data);
  CHECK_THROWS_AS(load_checkpoint(ckpt, wrong.model, &wrong.opt), config_error);
  CHECK_THROWS_AS(peek_checkpoint(tmp.str() + "/missing.bin"), io_error);
}

TEST_CASE("resuming mid-run reproduces the uninterrupted trajectory") {
  TempDir tmp("resume");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.max_steps = 8;

  FitResult full = run_fit(cfg, data, tmp.str() + "/full");

  TrainConfig half = cfg;
  half.max_steps = 4;
  FitResult part = run_fit(half, data, tmp.str() + "/part");
  FitResult rest = run_fit(cfg, data, tmp.str() + "/rest",
                           tmp.str() + "/part/checkpoint.bin");

  CHECK(full.trace.size() == 8);
  CHECK(part.trace.size() == 4);
  CHECK(rest.trace.size() == 4);  // steps 4..7
  for (size_t i = 0; i < 4; ++i) {
    CHECK(part.trace[i].loss.total == full.trace[i].loss.total);
    CHECK(rest.trace[i].loss.total == full.trace[i + 4].loss.total);
    CHECK(rest.trace[i].step == int(i) + 4);
  }
  CHECK(slurp(full.checkpoint_path) == slurp(rest.checkpoint_path));
}

TEST_CASE("periodic evaluation writes checkpoints and reports") {
  TempDir tmp("peri");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.max_steps = 6;
  cfg.eval_every = 3;
  Trainer<double> tr;
  tr.init(cfg, data);
  tr.fit(tmp.str() + "/run");
  CHECK(fs::exists(tmp.str() + "/run/checkpoint_step3.bin"));
  CHECK(fs::exists(tmp.str() + "/run/eval_step3.json"));
  CHECK(fs::exists(tmp.str() + "/run/checkpoint.bin"));
  std::ifstream is(tmp.str() + "/run/eval_step3.json");
  nlohmann::json ev = nlohmann::json::parse(is);
  CHECK(ev.at("split") == "seen-test");
  CHECK(ev.at("n_samples").get<int>() == 4);
  CHECK(ev.at("miou").is_number());
}

TEST_CASE("run_eval reloads a checkpoint and scores a split") {
  TempDir tmp("runeval");
  std::string data = tiny_corpus(tmp);
  TrainConfig cfg = tiny_train_cfg();
  cfg.max_steps = 3;
  FitResult fitres = run_fit(cfg, data, tmp.str() + "/run");

  std::string out_json = tmp.str() + "/eval.json";
  EvalOutputs ev = run_eval(fitres.checkpoint_path, data, "seen-test", out_json);
  CHECK(ev.split == "seen-test");
  CHECK(ev.n_samples == 4);
  CHECK(fs::exists(out_json));

  Trainer<double> tr;
  tr.init(cfg, data);
  load_checkpoint(fitres.checkpoint_path, tr.model, &tr.opt);
  EvalOutputs direct = tr.evaluate("seen-test");
  CHECK(direct.report.miou == ev.report.miou);

  CHECK_THROWS_AS(run_eval(fitres.checkpoint_path, data, "no-such-split"),
                  missing_sample_error);
}

TEST_CASE("trainer refuses a corpus without a train split") {
  TempDir tmp("nosplit");
  std::string data = tiny_corpus(tmp);
  CorpusManifest m = load_manifest(data);
  m.splits.erase("train");
  std::string crippled = tmp.str() + "/crippled";
  fs::create_directories(crippled);
  fs::copy(data, crippled, fs::copy_options::recursive);
  save_manifest(crippled, m);
  Trainer<double> tr;
  CHECK_THROWS_AS(tr.init(tiny_train_cfg(), crippled), missing_sample_error);
}
