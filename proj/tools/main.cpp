// Command-line front end: corpus generation, training, evaluation, and the
// three experiment harnesses, all driven by a JSON config that mirrors
// TrainConfig field names exactly.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tamperseg/experiments.hpp"
#include "tamperseg/train.hpp"

namespace fs = std::filesystem;
using namespace tamperseg;

namespace {

std::string eval_markdown(const EvalOutputs& ev) {
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(4);
  md << "# Evaluation: " << ev.split << "\n\n";
  md << "- samples: " << ev.n_samples << "\n";
  md << "- mIoU: " << ev.report.miou << " (edited " << ev.report.iou_edited
     << ", authentic " << ev.report.iou_authentic << ")\n";
  md << "- F1: " << ev.report.f1 << " (precision " << ev.report.precision
     << ", recall " << ev.report.recall << ")\n";
  md << "- instruction token accuracy: " << ev.instruction_token_accuracy
     << "\n";
  md << "- seg-missing rate: " << ev.seg_missing_rate << "\n";
  return md.str();
}

std::vector<Setting> parse_settings(const std::string& csv) {
  std::vector<Setting> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(setting_from_name(tok));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forged-region localization pipeline"};
  app.require_subcommand(1);

  // ---- gen-data ----
  CorpusConfig cc;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  gen->add_option("--out", cc.out_dir, "output directory")->required();
  gen->add_option("--train-n", cc.train_n, "training samples");
  gen->add_option("--seen-n", cc.seen_n, "seen-family test samples");
  gen->add_option("--unseen-n", cc.unseen_n, "unseen-family test samples");
  gen->add_option("--size", cc.size, "image side length");
  gen->add_option("--seed", cc.seed, "corpus seed");
  gen->add_option("--checker-amp", cc.checker_amp,
                  "seen-family fingerprint amplitude (levels)");
  gen->add_option("--noise-sigma", cc.noise_sigma,
                  "unseen-family noise strength");
  gen->add_option("--feather-alpha", cc.feather_alpha,
                  "unseen-family boundary blend");
  gen->add_flag("--clutter,!--no-clutter", cc.with_clutter,
                "stamp decoy fingerprints on unedited objects");
  gen->add_option("--halo", cc.halo_px,
                  "edit fingerprint spill width onto background (px)");
  gen->add_option("--decoys", cc.decoys_n,
                  "max objects stamped with off-operation patterns");
  gen->add_option("--checker-ring", cc.checker_ring,
                  "0: fingerprint whole regions; k: border band of width k");

  // ---- train ----
  std::string cfg_path, data_dir, out_dir, resume;
  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", cfg_path, "JSON config file")->required();
  train->add_option("--data", data_dir, "corpus directory")->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  // ---- eval ----
  std::string ckpt, split = "seen-test", eval_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "corpus directory")->required();
  ev->add_option("--split", split, "split name");
  ev->add_option("--out-dir", eval_out,
                 "report directory (default: checkpoint's directory)");

  // ---- ablate ----
  int n_seeds = 3;
  std::string settings_csv = "A,B,C,D";
  auto* ab = app.add_subcommand("ablate", "component ablation over settings");
  ab->add_option("--config", cfg_path, "JSON config file")->required();
  ab->add_option("--data", data_dir, "corpus directory")->required();
  ab->add_option("--out", out_dir, "experiment directory")->required();
  ab->add_option("--seeds", n_seeds, "number of paired seeds");
  ab->add_option("--settings", settings_csv, "comma list from A,B,C,D");

  // ---- prompt-sweep ----
  auto* ps = app.add_subcommand("prompt-sweep",
                                "one model per prompt condition");
  ps->add_option("--config", cfg_path, "JSON config file")->required();
  ps->add_option("--data", data_dir, "corpus directory")->required();
  ps->add_option("--out", out_dir, "experiment directory")->required();

  // ---- generalize ----
  auto* gn = app.add_subcommand("generalize",
                                "seen vs unseen edit-family comparison");
  gn->add_option("--config", cfg_path, "JSON config file")->required();
  gn->add_option("--data", data_dir, "corpus directory")->required();
  gn->add_option("--out", out_dir, "experiment directory")->required();

  // ---- report ----
  std::string runs_dir, format = "md";
  auto* rp = app.add_subcommand("report",
                                "rebuild a report from run checkpoints");
  rp->add_option("--runs", runs_dir, "experiment directory")->required();
  rp->add_option("--format", format, "md or json")
      ->check(CLI::IsMember({"md", "json"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      CorpusManifest m = build_corpus(cc);
      std::cout << "corpus written to " << cc.out_dir << " (hash "
                << hex64(manifest_hash(m)) << ")\n";
      for (const auto& [name, ids] : m.splits)
        std::cout << "  " << name << ": " << ids.size() << " samples\n";
    } else if (train->parsed()) {
      TrainConfig cfg = load_config_file(cfg_path);
      FitResult fit = run_fit(cfg, data_dir, out_dir, resume);
      std::cout << "trained " << fit.trace.size() << " steps; checkpoint "
                << fit.checkpoint_path << "\n";
      if (!fit.trace.empty())
        std::cout << "final loss " << fit.trace.back().loss.total << "\n";
    } else if (ev->parsed()) {
      if (eval_out.empty()) eval_out = fs::path(ckpt).parent_path().string();
      if (eval_out.empty()) eval_out = ".";
      EvalOutputs out =
          run_eval(ckpt, data_dir, split, eval_out + "/report.json");
      std::ofstream md(eval_out + "/report.md");
      md << eval_markdown(out);
      std::cout << eval_markdown(out);
    } else if (ab->parsed()) {
      TrainConfig cfg = load_config_file(cfg_path);
      ExperimentReport rep = run_ablation(parse_settings(settings_csv), cfg,
                                          n_seeds, data_dir, out_dir);
      std::cout << rep.to_markdown();
    } else if (ps->parsed()) {
      TrainConfig cfg = load_config_file(cfg_path);
      ExperimentReport rep = run_prompt_sweep(cfg, data_dir, out_dir);
      std::cout << rep.to_markdown();
    } else if (gn->parsed()) {
      TrainConfig cfg = load_config_file(cfg_path);
      ExperimentReport rep = run_generalization(cfg, data_dir, out_dir);
      std::cout << rep.to_markdown();
    } else if (rp->parsed()) {
      ExperimentReport rep = rebuild_report(runs_dir);
      if (format == "json")
        std::cout << rep.to_json().dump(2) << "\n";
      else
        std::cout << rep.to_markdown();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
