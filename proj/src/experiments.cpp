#include "tamperseg/experiments.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tamperseg {

namespace fs = std::filesystem;

namespace {

double cell_mean(const std::vector<ExperimentCell>& cells,
                 double (*pick)(const ExperimentCell&)) {
  if (cells.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : cells) s += pick(c);
  return s / double(cells.size());
}

// seed placement shared by every experiment: the run seed drives data order,
// the reasoner init, and (offset so the two towers never share a stream) the
// seg-branch init. Paired rows use the same seed list so they start from the
// same weights wherever their architectures overlap.
TrainConfig config_for_seed(TrainConfig base, int64_t seed) {
  base.seed = seed;
  base.pipeline.reasoner.seed = seed;
  base.pipeline.seg.seed = seed + 1;
  return base;
}

ExperimentCell train_and_eval(const TrainConfig& cfg, const std::string& data_dir,
                              const std::string& root, const std::string& rel_dir,
                              const std::string& split) {
  FitResult fit = run_fit(cfg, data_dir, root + "/" + rel_dir);
  ExperimentCell cell;
  cell.run_dir = rel_dir;
  cell.checkpoint = rel_dir + "/checkpoint.bin";
  cell.split = split;
  cell.seed = cfg.seed;
  cell.eval = run_eval(fit.checkpoint_path, data_dir, split,
                       root + "/" + rel_dir + "/report.json");
  return cell;
}

std::string setting_note(Setting s) {
  switch (s) {
    case Setting::kA:
      return "single learnable query vector; no reasoner";
    case Setting::kB:
      return "mean-pooled visual tokens through the query MLP; no prompt, no "
             "language loss";
    case Setting::kC:
      return "full reasoner with prompt; language-loss weight forced to 0, "
             "response reduced to [SEG]";
    default:
      return "full system: prompt, [SEG]-state query, instruction prediction";
  }
}

// derived scalars, notes, and full-scale reference rows per experiment kind;
// shared between the fresh runs and rebuild_report so both render identically
void finalize_report(ExperimentReport& rep) {
  rep.scalars.clear();
  rep.notes.clear();
  rep.references.clear();
  if (rep.kind == "ablation") {
    rep.title = "Component ablation: query construction and language supervision";
    const ExperimentRow* a = nullptr;
    const ExperimentRow* d = nullptr;
    for (const auto& r : rep.rows) {
      if (r.label == "A") a = &r;
      if (r.label == "D") d = &r;
    }
    if (a && d)
      rep.scalars["mean_miou_D_minus_A"] = d->mean_miou() - a->mean_miou();
    rep.notes.push_back(
        "Cells are means over " + std::to_string(rep.seeds.size()) +
        " shared seeds, so rows are paired comparisons (same init and data "
        "order per seed). The full-scale study does not state whether its "
        "rows shared seeds; pairing is this harness's choice.");
    rep.notes.push_back(
        "Instruction token accuracy is only defined for setting D, the one "
        "setting that predicts the edit instruction.");
    rep.references.push_back(
        {"full-scale reference (not reproduced)",
         "mIoU/F1 for the same four settings at full scale, on a real edited-"
         "image benchmark (MagicBrush): A 5.96/9.83, B 14.94/21.98, "
         "C 22.23/31.55, D 23.77/33.19. Quoted for context only; this "
         "harness reproduces the direction, not the numbers."});
  } else if (rep.kind == "prompt-sweep") {
    rep.title = "Prompt sensitivity: fixed prompts 1-4 and random choice";
    rep.notes.push_back(
        "The random-choice row samples one of the four prompts per training "
        "example; its evaluation uses prompt 1 so eval inputs stay fixed.");
    rep.references.push_back(
        {"full-scale reference (not reproduced)",
         "mIoU/F1 at full scale: prompt 1 23.77/33.19, prompt 2 20.20/28.69, "
         "prompt 3 19.90/28.35, prompt 4 19.27/27.46, random choice "
         "19.32/31.54. Context only."});
  } else if (rep.kind == "generalization") {
    rep.title = "Generalization: in-family (seen) vs out-of-family (unseen) edits";
    const ExperimentRow* seen = nullptr;
    const ExperimentRow* unseen = nullptr;
    for (const auto& r : rep.rows) {
      if (r.label == "seen-test") seen = &r;
      if (r.label == "unseen-test") unseen = &r;
    }
    if (seen && unseen)
      rep.scalars["seen_minus_unseen_miou"] =
          seen->mean_miou() - unseen->mean_miou();
    rep.notes.push_back(
        "One full-setting model; train and seen-test share the checker-"
        "fingerprint edit family, unseen-test uses the noise-and-feather "
        "family the model never saw.");
    rep.references.push_back(
        {"full-scale reference (not reproduced)",
         "At full scale, a forensic baseline fine-tuned in-family scored "
         "30.47 mIoU in-family but fell to 3.67 out-of-family, while the "
         "instruction-reasoning system held 23.77 in-family and 22.55 "
         "out-of-family. Context only."});
  }
}

}  // namespace

double ExperimentRow::mean_miou() const {
  return cell_mean(cells, [](const ExperimentCell& c) { return c.eval.report.miou; });
}

double ExperimentRow::mean_f1() const {
  return cell_mean(cells, [](const ExperimentCell& c) { return c.eval.report.f1; });
}

double ExperimentRow::mean_token_accuracy() const {
  return cell_mean(cells, [](const ExperimentCell& c) {
    return c.eval.instruction_token_accuracy;
  });
}

const ExperimentRow& ExperimentReport::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw config_error("report has no row labeled " + label);
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json j;
  j["kind"] = kind;
  j["title"] = title;
  j["seeds"] = seeds;
  j["runtime_seconds"] = runtime_seconds;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json jr;
    jr["label"] = r.label;
    jr["note"] = r.note;
    jr["mean_miou"] = r.mean_miou();
    jr["mean_f1"] = r.mean_f1();
    jr["mean_token_accuracy"] = r.mean_token_accuracy();
    jr["cells"] = nlohmann::json::array();
    for (const auto& c : r.cells) {
      nlohmann::json jc;
      jc["run_dir"] = c.run_dir;
      jc["checkpoint"] = c.checkpoint;
      jc["split"] = c.split;
      jc["seed"] = c.seed;
      jc["eval"] = eval_to_json(c.eval);
      jr["cells"].push_back(jc);
    }
    j["rows"].push_back(jr);
  }
  j["scalars"] = scalars;
  j["notes"] = notes;
  j["references"] = nlohmann::json::array();
  for (const auto& ref : references)
    j["references"].push_back({{"label", ref.label}, {"text", ref.text}});
  return j;
}

std::string ExperimentReport::to_markdown() const {
  std::ostringstream md;
  md.setf(std::ios::fixed);
  md.precision(4);
  md << "# " << title << "\n\n";
  md << "Seeds:";
  for (int64_t s : seeds) md << " " << s;
  md << ". Runtime: " << runtime_seconds << " s.\n\n";
  md << "| row | split | mIoU | F1 | token acc | seg-miss | runs |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string split = r.cells.empty() ? "-" : r.cells.front().split;
    double miss = cell_mean(r.cells, [](const ExperimentCell& c) {
      return c.eval.seg_missing_rate;
    });
    md << "| " << r.label << " | " << split << " | " << r.mean_miou() << " | "
       << r.mean_f1() << " | " << r.mean_token_accuracy() << " | " << miss
       << " | " << r.cells.size() << " |\n";
  }
  md << "\n";
  if (!scalars.empty()) {
    md << "## Derived\n\n";
    for (const auto& [k, v] : scalars) md << "- " << k << " = " << v << "\n";
    md << "\n";
  }
  if (!rows.empty()) {
    md << "## Rows\n\n";
    for (const auto& r : rows) {
      md << "- **" << r.label << "**: " << r.note << "\n";
      for (const auto& c : r.cells)
        md << "  - seed " << c.seed << ", " << c.split << ": mIoU "
           << c.eval.report.miou << ", F1 " << c.eval.report.f1
           << ", checkpoint `" << c.checkpoint << "`\n";
    }
    md << "\n";
  }
  if (!notes.empty()) {
    md << "## Notes\n\n";
    for (const auto& n : notes) md << "- " << n << "\n";
    md << "\n";
  }
  if (!references.empty()) {
    md << "## " << references.front().label << "\n\n";
    for (const auto& ref : references) md << "- " << ref.text << "\n";
  }
  return md.str();
}

void write_report(const ExperimentReport& rep, const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    std::ofstream js(out_dir + "/report.json");
    if (!js) throw io_error("cannot write report.json in " + out_dir);
    js << rep.to_json().dump(2) << "\n";
  }
  {
    std::ofstream md(out_dir + "/report.md");
    if (!md) throw io_error("cannot write report.md in " + out_dir);
    md << rep.to_markdown();
  }
}

namespace {

// rebuild manifest: everything needed to re-evaluate from checkpoints alone
void write_manifest(const ExperimentReport& rep, const std::string& data_dir,
                    const std::string& out_dir) {
  nlohmann::json j;
  j["kind"] = rep.kind;
  j["seeds"] = rep.seeds;
  j["data_dir"] = data_dir;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json jr;
    jr["label"] = r.label;
    jr["note"] = r.note;
    jr["cells"] = nlohmann::json::array();
    for (const auto& c : r.cells)
      jr["cells"].push_back({{"run_dir", c.run_dir},
                             {"checkpoint", c.checkpoint},
                             {"split", c.split},
                             {"seed", c.seed}});
    j["rows"].push_back(jr);
  }
  std::ofstream os(out_dir + "/experiment.json");
  if (!os) throw io_error("cannot write experiment.json in " + out_dir);
  os << j.dump(2) << "\n";
}

}  // namespace

ExperimentReport run_ablation(const std::vector<Setting>& settings,
                              const TrainConfig& base, int n_seeds,
                              const std::string& data_dir,
                              const std::string& out_dir) {
  if (settings.empty())
    throw config_error("run_ablation: settings list is empty");
  if (n_seeds < 1) throw config_error("run_ablation: n_seeds must be >= 1");
  auto t0 = std::chrono::steady_clock::now();

  ExperimentReport rep;
  rep.kind = "ablation";
  for (int i = 0; i < n_seeds; ++i) rep.seeds.push_back(base.seed + i);

  for (Setting s : settings) {
    ExperimentRow row;
    row.label = setting_name(s);
    row.note = setting_note(s);
    for (int64_t seed : rep.seeds) {
      TrainConfig cfg = config_for_seed(base, seed);
      cfg.pipeline.setting = s;
      if (s == Setting::kC) cfg.weights.lambda_c = 0.0;
      std::string rel = "setting" + row.label + "_seed" + std::to_string(seed);
      row.cells.push_back(
          train_and_eval(cfg, data_dir, out_dir, rel, "seen-test"));
    }
    rep.rows.push_back(std::move(row));
  }

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finalize_report(rep);
  write_manifest(rep, data_dir, out_dir);
  write_report(rep, out_dir);
  return rep;
}

ExperimentReport run_prompt_sweep(const TrainConfig& base,
                                  const std::string& data_dir,
                                  const std::string& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = "prompt-sweep";
  rep.seeds.push_back(base.seed);

  for (int pid = 1; pid <= num_prompts() + 1; ++pid) {
    int prompt_id = pid <= num_prompts() ? pid : 0;  // 0 = random per example
    ExperimentRow row;
    if (prompt_id != 0) {
      row.label = "prompt " + std::to_string(prompt_id);
      row.note = "\"" + render_prompt(prompt_id) + "\"";
    } else {
      row.label = "random per example";
      row.note = "one of the four prompts sampled per training example; "
                 "evaluated with prompt 1";
    }
    TrainConfig cfg = config_for_seed(base, base.seed);
    cfg.pipeline.setting = Setting::kD;
    cfg.pipeline.prompt_id = prompt_id;
    std::string rel = "prompt" + std::to_string(prompt_id) + "_seed" +
                      std::to_string(cfg.seed);
    row.cells.push_back(train_and_eval(cfg, data_dir, out_dir, rel, "seen-test"));
    rep.rows.push_back(std::move(row));
  }

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finalize_report(rep);
  write_manifest(rep, data_dir, out_dir);
  write_report(rep, out_dir);
  return rep;
}

ExperimentReport run_generalization(const TrainConfig& base,
                                    const std::string& data_dir,
                                    const std::string& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = "generalization";
  rep.seeds.push_back(base.seed);

  TrainConfig cfg = config_for_seed(base, base.seed);
  cfg.pipeline.setting = Setting::kD;
  std::string rel = "settingD_seed" + std::to_string(cfg.seed);
  FitResult fit = run_fit(cfg, data_dir, out_dir + "/" + rel);

  for (const std::string& split : {std::string("seen-test"),
                                   std::string("unseen-test")}) {
    ExperimentRow row;
    row.label = split;
    row.note = split == "seen-test" ? "same edit family as training"
                                    : "edit family never seen in training";
    ExperimentCell cell;
    cell.run_dir = rel;
    cell.checkpoint = rel + "/checkpoint.bin";
    cell.split = split;
    cell.seed = cfg.seed;
    cell.eval = run_eval(fit.checkpoint_path, data_dir, split,
                         out_dir + "/" + rel + "/report_" + split + ".json");
    row.cells.push_back(std::move(cell));
    rep.rows.push_back(std::move(row));
  }

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finalize_report(rep);
  write_manifest(rep, data_dir, out_dir);
  write_report(rep, out_dir);
  return rep;
}

ExperimentReport rebuild_report(const std::string& out_dir) {
  std::ifstream is(out_dir + "/experiment.json");
  if (!is) throw io_error("no experiment.json in " + out_dir);
  nlohmann::json j = nlohmann::json::parse(is);

  auto t0 = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.kind = j.at("kind").get<std::string>();
  rep.seeds = j.at("seeds").get<std::vector<int64_t>>();
  std::string data_dir = j.at("data_dir").get<std::string>();

  for (const auto& jr : j.at("rows")) {
    ExperimentRow row;
    row.label = jr.at("label").get<std::string>();
    row.note = jr.at("note").get<std::string>();
    for (const auto& jc : jr.at("cells")) {
      ExperimentCell cell;
      cell.run_dir = jc.at("run_dir").get<std::string>();
      cell.checkpoint = jc.at("checkpoint").get<std::string>();
      cell.split = jc.at("split").get<std::string>();
      cell.seed = jc.at("seed").get<int64_t>();
      cell.eval = run_eval(out_dir + "/" + cell.checkpoint, data_dir, cell.split);
      row.cells.push_back(std::move(cell));
    }
    rep.rows.push_back(std::move(row));
  }

  rep.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  finalize_report(rep);
  write_report(rep, out_dir);
  return rep;
}

}  // namespace tamperseg
