// tdos: toy OOD-segmentation pipeline driver.
//
// Subcommands: mine, gen-data, train, eval, ablate, report.
// Exit codes: 0 success, 2 usage error, 3 data/config error, 4 numerical
// failure (divergence).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tdos/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tdos;

namespace {

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir = "out";
};

void add_common(CLI::App* cmd, CommonOpts& c) {
  cmd->add_option("--config", c.config_file, "key=value config file");
  cmd->add_option("--set", c.sets, "config override key=value (repeatable)");
  cmd->add_option("--out", c.out_dir, "output directory");
}

// Resolution order: defaults, TDOS_SEED fallback, --config file, --set.
RunConfig resolve_config(const CommonOpts& c) {
  RunConfig cfg;
  if (const char* env = std::getenv("TDOS_SEED")) cfg.set("seed", env);
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const auto& kv : c.sets) cfg.set_pair(kv);
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  write_text_file(dir + "/config.txt", cfg.echo());
}

std::string corpus_path(const RunConfig& cfg) {
  return cfg.get("paths.corpus");
}

int cmd_mine(const CommonOpts& c) {
  RunConfig cfg = resolve_config(c);
  echo_config(cfg, c.out_dir);
  MineResult r = run_mine(cfg, corpus_path(cfg));
  nlohmann::json j = mined_set_json(r.ood, r.prompts);
  j["config_hash"] = cfg.hash();
  write_text_file(c.out_dir + "/mined.json", j.dump(2) + "\n");
  std::cout << "mined " << r.ood.size() << " labels into "
            << r.prompts.size() << " groups\n";
  for (int g = 0; g < r.prompts.size(); ++g) {
    std::cout << "group " << g << " (" << r.prompts.groups[g].labels.size()
              << "): ";
    for (std::size_t i = 0; i < r.prompts.groups[g].labels.size(); ++i)
      std::cout << (i ? " " : "") << r.prompts.groups[g].labels[i];
    std::cout << "\n";
  }
  return 0;
}

int cmd_gen_data(const CommonOpts& c, const std::string& split) {
  RunConfig cfg = resolve_config(c);
  echo_config(cfg, c.out_dir);
  Dataset ds = make_split(cfg, split == "train");
  const std::string path = c.out_dir + "/" + split + ".tdsc";
  save_dataset(ds, path);
  std::cout << "wrote " << ds.scenes.size() << " scenes to " << path
            << " (hash " << dataset_hash(ds) << ")\n";
  return 0;
}

int cmd_train(const CommonOpts& c, const std::string& data_path) {
  RunConfig cfg = resolve_config(c);
  echo_config(cfg, c.out_dir);
  MineResult mine = run_mine(cfg, corpus_path(cfg));
  Dataset train_ds =
      data_path.empty() ? make_split(cfg, true) : load_dataset(data_path);
  if (!data_path.empty() && train_ds.config_hash != cfg.hash())
    std::cerr << "warning: dataset config hash differs from run config\n";
  Model model(model_config(cfg), mix_seed(cfg.get_u64("seed") ^ 0x40de1));
  TrainResult tr = run_train(cfg, model, mine, train_ds, c.out_dir);
  Checkpoint ck = make_checkpoint(cfg, model, mine, tr.rng_state);
  save_checkpoint(ck, c.out_dir + "/checkpoint.tdos");
  write_text_file(c.out_dir + "/losses.csv", loss_csv(tr.curve, cfg.hash()));
  std::cout << "trained " << tr.curve.size() << " iterations";
  if (!tr.curve.empty())
    std::cout << ", final loss " << fmt_num(tr.curve.back().total);
  std::cout << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& c, const std::string& ckpt_path,
             const std::string& data_path, const std::string& score_from,
             bool force) {
  RunConfig cfg = resolve_config(c);
  echo_config(cfg, c.out_dir);
  MineResult mine = run_mine(cfg, corpus_path(cfg));
  Model model(model_config(cfg), mix_seed(cfg.get_u64("seed") ^ 0x40de1));
  Dataset eval_ds =
      data_path.empty() ? make_split(cfg, false) : load_dataset(data_path);
  if (!data_path.empty() && !force && eval_ds.config_hash != cfg.hash())
    throw FormatError("dataset config hash " +
                      std::to_string(eval_ds.config_hash) +
                      " does not match run config hash " +
                      std::to_string(cfg.hash()) + " (use --force to ignore)");
  if (!ckpt_path.empty()) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    // positional table must exist before arrays can be restored
    model.frozen_global(eval_ds.scenes.at(0));
    restore_checkpoint(ck, cfg, model, mine, force);
  }
  EvalReport rep = run_eval(cfg, model, mine, eval_ds,
                            data_path.empty() ? "toy-eval" : data_path,
                            score_from == "gt");
  write_report_files(rep, c.out_dir);
  std::cout << report_csv(rep);
  return 0;
}

int cmd_ablate(const CommonOpts& c, const std::string& axis) {
  RunConfig cfg = resolve_config(c);
  echo_config(cfg, c.out_dir);
  std::vector<AblationRow> rows = run_ablation(cfg, axis, corpus_path(cfg));
  write_text_file(c.out_dir + "/ablate_" + axis + ".csv",
                  ablation_csv(rows, cfg.hash()));
  nlohmann::json j;
  j["config_hash"] = cfg.hash();
  j["axis"] = axis;
  for (const auto& r : rows)
    j["rows"].push_back({{"name", r.name},
                         {"auprc", r.auprc_med},
                         {"fpr95", r.fpr95_med},
                         {"mean_f1", r.f1_med},
                         {"auprc_per_seed", r.auprc_per_seed},
                         {"f1_per_seed", r.f1_per_seed}});
  write_text_file(c.out_dir + "/ablate_" + axis + ".json", j.dump(2) + "\n");
  std::cout << ablation_csv(rows, cfg.hash());
  return 0;
}

int cmd_report(const std::string& in_dir) {
  std::ifstream f(in_dir + "/report.json");
  if (!f) throw FormatError("report: cannot open " + in_dir + "/report.json");
  nlohmann::json j = nlohmann::json::parse(f);
  std::cout << "dataset,AuPRC↑,FPR95↓,AuIoU↑,IoU↑,meanF1↑\n";
  std::cout << j["dataset"].get<std::string>() << ","
            << fmt_num(j["pixel"]["auprc"].get<double>()) << ","
            << fmt_num(j["pixel"]["fpr95"].get<double>()) << ","
            << fmt_num(j["object"]["auiou"].get<double>()) << ","
            << fmt_num(j["object"]["iou"].get<double>()) << ","
            << fmt_num(j["object"]["mean_f1"].get<double>()) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy text-driven OOD segmentation pipeline"};
  app.require_subcommand(1);

  CommonOpts c_mine, c_gen, c_train, c_eval, c_ablate;
  std::string gen_split = "train";
  std::string train_data, eval_data, eval_ckpt, score_from, ablate_axis;
  std::string report_in = "out";
  bool eval_force = false;

  auto* mine = app.add_subcommand("mine", "mine OOD labels and build prompts");
  add_common(mine, c_mine);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, c_gen);
  gen->add_option("--split", gen_split, "train or eval")
      ->check(CLI::IsMember({"train", "eval"}));

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, c_train);
  train->add_option("--data", train_data, "training dataset (.tdsc)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, c_eval);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file (.tdos)");
  eval->add_option("--data", eval_data, "evaluation dataset (.tdsc)");
  eval->add_option("--score-from", score_from,
                   "score source override (gt = ground-truth indicator)")
      ->check(CLI::IsMember({"gt"}));
  eval->add_flag("--force", eval_force, "skip config hash checks");

  auto* ablate = app.add_subcommand("ablate", "run an ablation axis");
  add_common(ablate, c_ablate);
  ablate
      ->add_option("--axis", ablate_axis,
                   "components | saa-layers | lambda | queries")
      ->required()
      ->check(CLI::IsMember({"components", "saa-layers", "lambda", "queries"}));

  auto* report = app.add_subcommand("report", "print a saved report table");
  report->add_option("--in", report_in, "directory containing report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (mine->parsed()) return cmd_mine(c_mine);
    if (gen->parsed()) return cmd_gen_data(c_gen, gen_split);
    if (train->parsed()) return cmd_train(c_train, train_data);
    if (eval->parsed())
      return cmd_eval(c_eval, eval_ckpt, eval_data, score_from, eval_force);
    if (ablate->parsed()) return cmd_ablate(c_ablate, ablate_axis);
    if (report->parsed()) return cmd_report(report_in);
  } catch (const DivergenceError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
