// Command-line driver. All file arguments are resolved against --out.
// Exit codes: 0 success, 1 invalid input, 2 training divergence.

#include "CLI11.hpp"  // CLI11, vendored

#include <iostream>

#include "ccl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

fs::path under(const fs::path& out, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : out / path;
}

std::uint64_t pick_seed(const ccl::ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed) {
  return seed ? *seed : cfg.seeds.front();
}

ccl::DatasetSplit load_or_fail(const fs::path& out) {
  const fs::path path = ccl::dataset_path(out);
  if (!fs::exists(path)) throw ccl::ValidationError("no dataset at " + path.string() + "; run `generate` first");
  return ccl::load_dataset(path);
}

ccl::ModelParams load_model(const fs::path& path) { return ccl::load_checkpoint(path).params; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-consistency learning for semi-supervised video paragraph grounding"};
  app.require_subcommand(1);

  std::string out_dir = ".";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string teacher_path, labels_path, ckpt_path, ckpt2_path, sample_id, grid_path, eval_split = "test";

  const auto add_out = [&](CLI::App* sub) { sub->add_option("--out", out_dir, "Output root directory")->required(); };
  const auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required();
  };
  const auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", seed, "Run seed (default: first config seed)"); };

  auto* generate = app.add_subcommand("generate", "Generate the synthetic dataset");
  add_config(generate);
  add_out(generate);

  auto* stage1 = app.add_subcommand("train-stage1", "Train the stage-1 student and teacher");
  add_config(stage1);
  add_out(stage1);
  add_seed(stage1);

  auto* pseudo = app.add_subcommand("pseudo-label", "Score and bucket pseudo labels from a teacher");
  add_config(pseudo);
  add_out(pseudo);
  add_seed(pseudo);
  pseudo->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();

  auto* retrain = app.add_subcommand("retrain", "Retrain from scratch on ground truth plus pseudo labels");
  add_config(retrain);
  add_out(retrain);
  add_seed(retrain);
  retrain->add_option("--labels", labels_path, "Pseudo-label file (JSON Lines)")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the dataset");
  add_out(eval);
  eval->add_option("--ckpt", ckpt_path, "Model checkpoint")->required();
  eval->add_option("--split", eval_split, "Split to evaluate: test or train")->check(CLI::IsMember({"test", "train"}));

  auto* run = app.add_subcommand("run", "Full pipeline over all seeds; writes report.json");
  add_config(run);
  add_out(run);

  auto* dump = app.add_subcommand("dump", "Print ground truth and predictions for one sample");
  add_out(dump);
  dump->add_option("--ckpt", ckpt_path, "Stage-1 checkpoint")->required();
  dump->add_option("--ckpt2", ckpt2_path, "Stage-2 checkpoint");
  dump->add_option("--sample", sample_id, "Sample id")->required();

  auto* ablate = app.add_subcommand("ablate", "Run every arm of an ablation grid");
  add_out(ablate);
  ablate->add_option("--grid", grid_path, "Ablation grid (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const fs::path out(out_dir);
  try {
    if (*generate) {
      const auto cfg = ccl::load_experiment_config(config_path);
      fs::create_directories(out);
      const auto split = ccl::run_stage("generate", [&] { return ccl::generate_dataset(cfg.data); });
      ccl::save_dataset(split, ccl::dataset_path(out));
      std::cout << "wrote " << ccl::dataset_path(out).string() << " (" << split.train_labeled.size() << " labeled, "
                << split.train_unlabeled.size() << " unlabeled, " << split.test.size() << " test)\n";
    } else if (*stage1) {
      const auto cfg = ccl::load_experiment_config(config_path);
      const auto split = load_or_fail(out);
      const std::uint64_t s = pick_seed(cfg, seed);
      const fs::path dir = ccl::seed_dir(out, s);
      fs::create_directories(dir);
      const auto res = ccl::run_stage("stage1", [&] {
        return ccl::train_stage1(split, cfg.model, cfg.stage1_for(s),
                                 [&](long step, const ccl::ModelParams& st, const ccl::TeacherState& t) {
                                   if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
                                     const std::string tag = "stage1_step" + std::to_string(step + 1);
                                     ccl::save_model(st, dir / (tag + "_student.ckpt.json"));
                                     ccl::save_model(t.params, dir / (tag + "_teacher.ckpt.json"));
                                   }
                                 });
      });
      ccl::save_model(res.student, dir / "stage1_student.ckpt.json");
      ccl::save_model(res.teacher.params, dir / "stage1_teacher.ckpt.json");
      ccl::write_log(res.log, dir / "stage1_log.jsonl");
      std::cout << "wrote " << (dir / "stage1_teacher.ckpt.json").string() << '\n';
    } else if (*pseudo) {
      const auto cfg = ccl::load_experiment_config(config_path);
      const auto split = load_or_fail(out);
      const std::uint64_t s = pick_seed(cfg, seed);
      const auto teacher = load_model(under(out, teacher_path));
      const auto labels = ccl::run_stage("pseudo-label", [&] {
        return ccl::generate_pseudo_labels(teacher, split, cfg.stage2_for(s));
      });
      const fs::path dir = ccl::seed_dir(out, s);
      fs::create_directories(dir);
      ccl::save_pseudo_labels(labels, dir / "pseudo_labels.jsonl");
      const auto c = ccl::count_buckets(labels);
      std::cout << "wrote " << (dir / "pseudo_labels.jsonl").string() << " (high " << c.high << ", mid " << c.mid
                << ", low " << c.low << ")\n";
    } else if (*retrain) {
      const auto cfg = ccl::load_experiment_config(config_path);
      const auto split = load_or_fail(out);
      const std::uint64_t s = pick_seed(cfg, seed);
      const auto s2 = cfg.stage2_for(s);
      const auto labels = ccl::load_pseudo_labels(under(out, labels_path), s2.thresholds);
      const auto res = ccl::run_stage("stage2", [&] { return ccl::retrain(split, labels, cfg.model, s2); });
      const fs::path dir = ccl::seed_dir(out, s);
      fs::create_directories(dir);
      ccl::save_model(res.model, dir / "stage2.ckpt.json");
      ccl::write_log(res.log, dir / "stage2_log.jsonl");
      std::cout << "wrote " << (dir / "stage2.ckpt.json").string() << '\n';
    } else if (*eval) {
      const auto split = load_or_fail(out);
      const auto model = load_model(under(out, ckpt_path));
      const auto& samples = eval_split == "test" ? split.test : split.train_labeled;
      const auto ev = ccl::run_stage("evaluate", [&] { return ccl::evaluate(model, samples); });
      std::cout << nlohmann::json(ev.metrics).dump(2) << '\n';
    } else if (*run) {
      const auto cfg = ccl::load_experiment_config(config_path);
      const auto report = ccl::run_experiment(cfg, out, &std::cerr);
      std::cout << report.at("models").dump(2) << '\n';
    } else if (*dump) {
      const auto split = load_or_fail(out);
      const auto m1 = load_model(under(out, ckpt_path));
      std::optional<ccl::ModelParams> m2;
      if (!ckpt2_path.empty()) m2 = load_model(under(out, ckpt2_path));
      std::cout << ccl::dump_predictions(m1, m2 ? &*m2 : nullptr, split, sample_id);
    } else if (*ablate) {
      const auto grid = ccl::load_ablation_grid(grid_path);
      const auto summary = ccl::run_ablation(grid, out, &std::cerr);
      std::cout << summary.dump(2) << '\n';
    }
  } catch (const ccl::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
