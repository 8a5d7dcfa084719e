#pragma once

// Experiment harness: the component ablation (settings A-D), the prompt
// sweep, and the seen-vs-unseen generalization comparison. Every report cell
// maps to a run directory holding config + checkpoint + eval log, and the
// whole report can be rebuilt from those artifacts alone.

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tamperseg/train.hpp"

namespace tamperseg {

// one trained-and-evaluated model; eval is on the split named in the row
struct ExperimentCell {
  std::string run_dir;     // relative to the experiment root
  std::string checkpoint;  // relative to the experiment root
  std::string split;
  int64_t seed = 0;
  EvalOutputs eval;
};

struct ExperimentRow {
  std::string label;
  std::string note;
  std::vector<ExperimentCell> cells;  // one per seed (or per split)
  double mean_miou() const;
  double mean_f1() const;
  double mean_token_accuracy() const;
};

// published full-scale numbers quoted for context; never produced by this code
struct ReferenceRow {
  std::string label;
  std::string text;
};

struct ExperimentReport {
  std::string kind;  // "ablation" | "prompt-sweep" | "generalization"
  std::string title;
  std::vector<int64_t> seeds;
  double runtime_seconds = 0.0;
  std::vector<ExperimentRow> rows;
  std::map<std::string, double> scalars;  // derived quantities, e.g. gaps
  std::vector<std::string> notes;
  std::vector<ReferenceRow> references;

  const ExperimentRow& row(const std::string& label) const;
  nlohmann::json to_json() const;
  std::string to_markdown() const;
};

// Trains every setting over n_seeds shared (paired) seeds and reports
// per-setting means on the held-out seen-test split. Setting C runs with the
// language-loss weight forced to zero per its definition.
ExperimentReport run_ablation(const std::vector<Setting>& settings,
                              const TrainConfig& base, int n_seeds,
                              const std::string& data_dir,
                              const std::string& out_dir);

// Trains one full-setting model per prompt condition: fixed prompts 1-4 plus
// the random-choice mode (a prompt sampled per training example).
ExperimentReport run_prompt_sweep(const TrainConfig& base,
                                  const std::string& data_dir,
                                  const std::string& out_dir);

// Trains one full-setting model and evaluates it on both the seen-test and
// unseen-test splits, reporting the cross-family gap.
ExperimentReport run_generalization(const TrainConfig& base,
                                    const std::string& data_dir,
                                    const std::string& out_dir);

// Re-evaluates every checkpoint recorded in out_dir/experiment.json and
// rebuilds the report without retraining.
ExperimentReport rebuild_report(const std::string& out_dir);

// writes report.json and report.md plus the rebuild manifest experiment.json
void write_report(const ExperimentReport& rep, const std::string& out_dir);

}  // namespace tamperseg
