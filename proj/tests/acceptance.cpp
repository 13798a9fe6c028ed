// Acceptance run: one PASS/FAIL line per criterion.
// Usage: ccl_acceptance <config.json> <work-dir>
// The CLI binary for the determinism check is taken from $CCL_CLI.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "ccl/experiment.hpp"
#include "fd_oracle.hpp"

namespace fs = std::filesystem;
using ccl::IntervalSet;
using ccl::Matrix;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// Collects failed sub-checks of one criterion.
struct Checks {
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    if (!(std::abs(got - want) <= tol)) {
      std::ostringstream os;
      os << std::setprecision(17) << what << ": got " << got << ", want " << want;
      failures.push_back(os.str());
    }
  }
  void exact(double got, double want, const std::string& what) { near(got, want, 0.0, what); }
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome from_checks(const Checks& c, const std::string& ok_detail) {
  if (c.failures.empty()) return {true, ok_detail};
  std::string d;
  for (const auto& f : c.failures) d += (d.empty() ? "" : "; ") + f;
  return {false, d};
}

int g_failed = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++g_failed;
  std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << name << " (" << std::fixed
            << std::setprecision(1) << seconds_since(t0) << " s): " << o.detail << std::endl;
}

std::string fmt(double x, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << x;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome analytic_math() {
  constexpr double tol = 1e-9;
  const auto t0 = Clock::now();
  Checks c;

  c.near(ccl::iou({0.2, 0.6}, {0.2, 0.6}), 1.0, tol, "iou identity");
  c.near(ccl::iou({0.0, 0.2}, {0.8, 1.0}), 0.0, tol, "iou disjoint");
  c.near(ccl::iou({0.2, 0.6}, {0.4, 0.8}), 0.2 / 0.6, tol, "iou overlap");

  c.near(ccl::giou({0.1, 0.4}, {0.3, 0.7}), 0.1 / 0.6, tol, "giou overlap");
  c.near(ccl::giou({0.0, 0.2}, {0.8, 1.0}), 0.0 - 0.6 / 1.0, tol, "giou disjoint");
  c.near(ccl::giou({0.3, 0.9}, {0.3, 0.9}), 1.0, tol, "giou identity");

  const IntervalSet same{{0.1, 0.5}, {0.6, 0.9}};
  c.near(ccl::location_loss(same, same), 0.0, tol, "location_loss identical");
  const IntervalSet far_pred{{0.0, 0.2}}, far_gt{{0.8, 1.0}};
  c.near(ccl::location_loss(far_pred, far_gt), (0.8 + 0.8) + (1.0 - (-0.6)), tol, "location_loss disjoint");
  const IntervalSet ov_pred{{0.1, 0.4}}, ov_gt{{0.3, 0.7}};
  c.near(ccl::location_loss(ov_pred, ov_gt), (0.2 + 0.3) + (1.0 - 1.0 / 6.0), tol, "location_loss overlap");

  const std::vector<double> r1{0.6, 0.4, 0.55}, r2{1.0, 1.0}, r3{0.0, 0.0};
  c.near(ccl::recall_at(r1, 0.5), 2.0 / 3.0, tol, "recall_at mixed");
  c.near(ccl::recall_at(r2, 0.7), 1.0, tol, "recall_at perfect");
  c.near(ccl::recall_at(r3, 0.3), 0.0, tol, "recall_at zero");
  const std::vector<double> m1{1.0}, m2{0.0, 1.0};
  c.near(ccl::mean_iou(m1), 1.0, tol, "mean_iou single");
  c.near(ccl::mean_iou(m2), 0.5, tol, "mean_iou pair");

  ccl::ModelParams teacher, student;
  teacher.tensors["w"] = Matrix::Constant(1, 1, 2.0);
  student.tensors["w"] = Matrix::Constant(1, 1, 1.0);
  c.near(ccl::ema_update({teacher, 0.999, 0}, student).params.at("w")(0, 0), 1.999, tol, "ema_update");
  c.near(ccl::ema_update({student, 0.999, 0}, student).params.at("w")(0, 0), 1.0, tol, "ema_update fixed point");
  c.near(ccl::ema_update({teacher, 0.0, 0}, student).params.at("w")(0, 0), 1.0, tol, "ema_update gamma 0");

  Matrix v(4, 2);
  v << 1, 1, 3, 3, 5, 5, 7, 7;
  const Matrix mid = ccl::moment_pool(v, {{0.25, 0.75}}, 4);
  c.near(mid(0, 0), 4.0, tol, "moment_pool [0.25,0.75] col 0");
  c.near(mid(0, 1), 4.0, tol, "moment_pool [0.25,0.75] col 1");
  const Matrix all = ccl::moment_pool(v, {{0.0, 1.0}}, 4);
  c.near(all(0, 0), (1.0 + 3 + 5 + 7) / 4, tol, "moment_pool [0,1]");
  const Matrix point = ccl::moment_pool(v, {{0.5, 0.5}}, 4);
  c.near(point(0, 0), 3.0, tol, "moment_pool zero width, lower index");

  // The loss guards log(attn + 1e-9); expected values are that formula
  // evaluated by hand for each attention pattern.
  const int T = 8;
  const IntervalSet gt2{{0.25, 0.5}};  // clip centers 0.3125 and 0.4375
  Matrix t2 = Matrix::Zero(1, T);
  t2(0, 2) = t2(0, 3) = 0.5;
  c.near(ccl::attention_loss(std::vector<Matrix>(3, t2), gt2, T), -std::log(0.5 + 1e-9), tol,
         "attention_loss attn == target");
  const IntervalSet gt1{{0.3, 0.32}};  // only clip 2 (center 0.3125)
  Matrix t1 = Matrix::Zero(1, T);
  t1(0, 2) = 1.0;
  c.near(ccl::attention_loss(std::vector<Matrix>(2, t1), gt1, T), -std::log(1.0 + 1e-9), tol,
         "attention_loss one-hot");
  c.near(ccl::attention_loss(std::vector<Matrix>(3, Matrix::Constant(1, T, 1.0 / T)), gt2, T),
         -std::log(1.0 / 8.0 + 1e-9), tol, "attention_loss uniform attention");

  Matrix a(1, 3), b(1, 3);
  a << 0.3, -1.2, 2.0;
  b << -0.7, 0.1, 0.4;
  c.exact(ccl::contrastive_consistency_loss(a, b, 0.01), 0.0, "contrastive K=1");
  const double e = std::exp(1.0);
  c.near(ccl::contrastive_consistency_loss(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 1.0),
         2.0 * -std::log(e / (e + 1.0)), tol, "contrastive K=2");
  c.near(ccl::contrastive_consistency_loss(Matrix::Identity(3, 4), Matrix::Identity(3, 4), 0.01), 0.0, tol,
         "contrastive orthonormal small tau");

  const double secs = seconds_since(t0);
  c.expect(secs < 5.0, "runtime " + fmt(secs, 2) + " s exceeds 5 s");
  return from_checks(c, "all examples within 1e-9 in " + fmt(secs, 3) + " s");
}

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  ccl::ModelConfig mc;
  mc.video_dim = 6;
  mc.query_dim = 5;
  mc.D = 16;
  mc.heads = 2;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.ffn_dim = 32;
  mc.max_sentences = 2;

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.0);
  ccl::ModelParams params = ccl::init_params(mc, 17);
  Matrix video(8, 6), query(2, 5);
  for (Eigen::Index i = 0; i < video.size(); ++i) video(i) = n(rng);
  for (Eigen::Index i = 0; i < query.size(); ++i) query(i) = n(rng);
  // Break the symmetric initial values of norm gains and biases.
  for (auto& [name, m] : params.tensors) {
    if (name.find(".bias") != std::string::npos || name.find(".gain") != std::string::npos) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m(i) += 0.1 * n(rng);
    }
  }

  ccl::LossSpec loc, att, con;
  loc.loc_weight = 1.0;
  loc.targets = IntervalSet{{0.1, 0.3}, {0.5, 0.8}};
  att.att_weight = 1.0;
  att.targets = loc.targets;
  con.con_weight = 1.0;
  con.tau = 0.01;
  con.pool_intervals = IntervalSet{{0.05, 0.4}, {0.45, 0.9}};

  Checks c;
  std::string detail;
  std::size_t entries = 0;
  for (const auto& [name, spec] : {std::pair{"L_loc", loc}, std::pair{"L_att", att}, std::pair{"L_con", con}}) {
    const auto analytic = ccl::compute_gradients(params, video, query, spec);
    auto f = [&] { return ccl::evaluate_loss(params, video, query, spec).total; };
    const auto worst = ccl::testing::worst_mismatch(params.tensors, analytic.grads, f, 1e-5);
    c.expect(worst.rel_error <= 1e-3, std::string(name) + " worst " + worst.name + "[" +
                                          std::to_string(worst.index) + "] rel error " + fmt(worst.rel_error, 6));
    detail += std::string(detail.empty() ? "" : ", ") + name + " max rel error " + fmt(worst.rel_error, 7);
  }
  for (const auto& [_, m] : params.tensors) entries += static_cast<std::size_t>(m.size());
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, "runtime " + fmt(secs, 1) + " s exceeds 2 min");
  return from_checks(c, detail + " over " + std::to_string(entries) + " parameters");
}

/// Stub grounding model whose output depends only on the paragraph length.
struct ByCount {
  std::map<int, IntervalSet> table;
  IntervalSet operator()(const Matrix&, const Matrix& q) const { return table.at(static_cast<int>(q.rows())); }
};

Outcome consistency_oracle() {
  Checks c;
  const Matrix video = Matrix::Zero(4, 2);
  ccl::Rng rng(11);

  // N=2: the kept sentence's interval [0,0.25] against [0,0.5] has IoU 0.5.
  const ByCount two{{{2, {{0.0, 0.5}, {0.0, 0.5}}}, {1, {{0.0, 0.25}}}}};
  const double c2 = ccl::context_consistency(two, video, Matrix::Zero(2, 3), two.table.at(2), 1, rng);
  c.exact(c2, 0.5, "N=2 example");

  // N=3: k=1 gives IoU 0.8; k=2 gives IoUs 0.6 and 1.0, mean 0.8.
  const ByCount three{{{3, {{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}}}, {2, {{0.0, 0.6}, {0.0, 1.0}}}, {1, {{0.0, 0.8}}}}};
  const double c3 = ccl::context_consistency(three, video, Matrix::Zero(3, 3), three.table.at(3), 1, rng);
  c.exact(c3, 0.8, "N=3 example");

  const auto blind = [](const Matrix&, const Matrix& q) {
    IntervalSet out;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double s = 0.3 / (1.0 + std::abs(q(i, 0)));
      out.push_back({s, s + 0.4});
    }
    return out;
  };
  std::mt19937_64 gen(5);
  std::normal_distribution<double> n(0.0, 1.0);
  int blind_cases = 0;
  for (int sentences = 1; sentences <= 6; ++sentences) {
    Matrix q(sentences, 3);
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = n(gen);
    for (int r : {1, 3}) {
      c.exact(ccl::context_consistency(blind, video, q, blind(video, q), r, rng), 1.0,
              "context-blind N=" + std::to_string(sentences) + " R=" + std::to_string(r));
      ++blind_cases;
    }
  }
  return from_checks(c, "hand examples reproduce C = 0.5 and C = 0.8 exactly; context-blind C = 1 in " +
                            std::to_string(blind_cases) + " cases");
}

Outcome stop_gradient() {
  Checks c;
  ccl::SyntheticConfig dc;
  dc.num_samples = 24;
  dc.num_test = 4;
  dc.T = 8;
  dc.video_dim = 6;
  dc.query_dim = 5;
  dc.concept_dim = 4;
  dc.min_sentences = 2;
  dc.max_sentences = 3;
  dc.seed = 3;
  ccl::ModelConfig mc;
  mc.video_dim = 6;
  mc.query_dim = 5;
  mc.D = 16;
  mc.heads = 4;
  mc.enc_layers = 1;
  mc.dec_layers = 1;
  mc.ffn_dim = 24;
  mc.max_sentences = 4;
  ccl::Stage1Config cfg;
  cfg.lr = 1e-3;

  const auto split = ccl::generate_dataset(dc);
  const ccl::ModelParams student = ccl::init_params(mc, 5);
  const ccl::TeacherState teacher = ccl::make_teacher(ccl::init_params(mc, 6), cfg.gamma);
  ccl::TeacherState perturbed = teacher;
  for (auto& [_, m] : perturbed.params.tensors) m.array() += 0.05;

  std::vector<std::size_t> li(split.train_labeled.size()), ui(split.train_unlabeled.size());
  std::iota(li.begin(), li.end(), std::size_t{0});
  std::iota(ui.begin(), ui.end(), std::size_t{0});
  const auto batch_a = ccl::make_stage1_batch(teacher, split.train_labeled, li, split.train_unlabeled, ui, cfg, 0);
  auto batch_b = ccl::make_stage1_batch(perturbed, split.train_labeled, li, split.train_unlabeled, ui, cfg, 0);

  const auto obj_a = ccl::stage1_objective(student, batch_a, cfg);
  const auto obj_b = ccl::stage1_objective(student, batch_b, cfg);
  c.expect(obj_a.losses.loss_con != obj_b.losses.loss_con, "perturbing the teacher left the loss unchanged");

  for (std::size_t i = 0; i < batch_b.unlabeled.size(); ++i) {
    batch_b.unlabeled[i].teacher_intervals = batch_a.unlabeled[i].teacher_intervals;
  }
  const auto held = ccl::stage1_objective(student, batch_b, cfg);
  c.expect(held.grads == obj_a.grads, "student gradients differ with teacher outputs held fixed");

  for (const auto& [name, _] : obj_a.grads) {
    c.expect(student.tensors.count(name) == 1, "gradient for non-student tensor " + name);
  }
  ccl::ModelParams s = student;
  ccl::TeacherState t = teacher;
  ccl::AdamState opt;
  ccl::stage1_step(s, t, opt, batch_a, cfg, 0);
  c.expect(t.params == ccl::ema_update(teacher, s).params, "teacher moved other than by ema_update");

  ccl::ModelParams th, st;
  th.tensors["w"] = Matrix::Constant(1, 1, 2.0);
  st.tensors["w"] = Matrix::Constant(1, 1, 1.0);
  const double ema = ccl::ema_update({th, 0.999, 0}, st).params.at("w")(0, 0);
  c.exact(ema, 1.999, "ema hand check");

  return from_checks(c, "loss_con " + fmt(obj_a.losses.loss_con, 6) + " vs perturbed " +
                            fmt(obj_b.losses.loss_con, 6) + ", gradients identical with outputs held, ema gives 1.999");
}

double mean_miou(const nlohmann::json& report, const char* model) {
  return report.at("models").at(model).at("mean").at("mIoU").get<double>();
}

std::string per_seed_miou(const nlohmann::json& report, const char* model) {
  std::string s;
  for (const auto& e : report.at("models").at(model).at("per_seed")) {
    s += (s.empty() ? "" : " ") + fmt(e.at("metrics").at("mIoU").get<double>());
  }
  return "[" + s + "]";
}

Outcome semi_supervised_benefit(const ccl::ExperimentConfig& cfg, const nlohmann::json& report) {
  Checks c;
  c.expect(cfg.ablation.mt && cfg.ablation.aug && cfg.ablation.cr, "config does not enable MT+Aug+CR");
  c.expect(cfg.seeds.size() == 3, "expected 3 seeds");
  c.expect(cfg.baseline_for(cfg.seeds.front()).steps == cfg.stage1_for(cfg.seeds.front()).steps,
           "baseline and stage 1 step counts differ");
  const double base = mean_miou(report, "baseline"), s1 = mean_miou(report, "stage1");
  c.expect(s1 > base, "stage-1 mIoU " + fmt(s1) + " is not above baseline " + fmt(base));
  return from_checks(c, "stage-1 " + report.at("stage1_model").get<std::string>() + " mIoU " + fmt(s1) + " " +
                            per_seed_miou(report, "stage1") + " vs baseline " + fmt(base) + " " +
                            per_seed_miou(report, "baseline") + ", delta " + fmt(s1 - base));
}

Outcome pseudo_label_benefit(const nlohmann::json& report) {
  Checks c;
  const double s1 = mean_miou(report, "stage1"), s2 = mean_miou(report, "stage2");
  c.expect(s2 >= s1 - 0.005, "stage-2 mIoU " + fmt(s2) + " below stage-1 " + fmt(s1) + " - 0.005");
  std::string buckets;
  for (const auto& b : report.at("pseudo_label_buckets")) {
    const auto& n = b.at("counts");
    buckets += (buckets.empty() ? "" : " ") + std::string("seed ") + std::to_string(b.at("seed").get<int>()) + " " +
               std::to_string(n.at("high").get<int>()) + "/" + std::to_string(n.at("mid").get<int>()) + "/" +
               std::to_string(n.at("low").get<int>());
  }
  return from_checks(c, "stage-2 mIoU " + fmt(s2) + " " + per_seed_miou(report, "stage2") + " vs stage-1 " + fmt(s1) +
                            ", delta " + fmt(s2 - s1) + " (high/mid/low: " + buckets + ")");
}

Outcome determinism(const ccl::ExperimentConfig& base, const fs::path& work) {
  const char* cli = std::getenv("CCL_CLI");
  if (cli == nullptr || !fs::exists(cli)) return {false, "CCL_CLI does not name the CLI binary"};

  ccl::ExperimentConfig cfg = base;
  cfg.data.num_samples = 400;
  cfg.data.num_test = 100;
  cfg.stage1.steps = 200;
  cfg.stage2.steps = 200;
  cfg.seeds = {1, 2};
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  ccl::write_json(cfg, dir / "config.json");

  std::vector<std::string> reports;
  for (const char* run : {"a", "b"}) {
    const fs::path out = dir / run;
    const std::string cmd = std::string("\"") + cli + "\" run --config \"" + (dir / "config.json").string() +
                            "\" --out \"" + out.string() + "\" > \"" + (dir / (std::string(run) + ".log")).string() +
                            "\" 2>&1";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) return {false, "cli run " + std::string(run) + " exited with status " + std::to_string(rc)};
    reports.push_back(slurp(out / "report.json"));
  }
  Checks c;
  c.expect(!reports[0].empty(), "empty report");
  c.expect(reports[0] == reports[1], "report.json differs between invocations");
  return from_checks(c, "two `run` invocations (2 seeds, 200 steps) wrote identical report.json (" +
                            std::to_string(reports[0].size()) + " bytes)");
}

Outcome round_trips(const ccl::ExperimentConfig& cfg, const fs::path& run_dir) {
  Checks c;
  const ccl::DatasetSplit generated = ccl::generate_dataset(cfg.data);
  const ccl::DatasetSplit saved = ccl::load_dataset(ccl::dataset_path(run_dir));
  c.expect(saved == generated, "dataset written by the run does not reload to the generated values");
  const fs::path copy = run_dir / "roundtrip_dataset.jsonl";
  ccl::save_dataset(saved, copy);
  c.expect(ccl::load_dataset(copy) == saved, "dataset save/load is not the identity");

  const std::uint64_t seed = cfg.seeds.front();
  const fs::path seed_dir = ccl::seed_dir(run_dir, seed);
  const ccl::ModelParams baseline = ccl::load_checkpoint(seed_dir / "baseline.ckpt.json").params;
  ccl::Checkpoint ckpt{baseline, ccl::AdamState{baseline.tensors, baseline.tensors, 42}, 0x9e3779b97f4a7c15ULL};
  for (auto& [_, m] : ckpt.opt_state->v) m = m.cwiseAbs2();
  ccl::save_checkpoint(ckpt, run_dir / "roundtrip.ckpt.json");
  const ccl::Checkpoint back = ccl::load_checkpoint(run_dir / "roundtrip.ckpt.json");
  c.expect(back.params == ckpt.params, "checkpoint parameters changed on reload");
  c.expect(back.opt_state && back.opt_state->step == 42 && back.opt_state->m == ckpt.opt_state->m &&
               back.opt_state->v == ckpt.opt_state->v,
           "optimizer state changed on reload");
  c.expect(back.rng_state == ckpt.rng_state, "rng state changed on reload");

  // Every pseudo label excluded: the retrain must be the labeled-only baseline.
  std::vector<ccl::PseudoLabel> labels = ccl::load_pseudo_labels(seed_dir / "pseudo_labels.jsonl");
  for (auto& l : labels) {
    l.consistency = 0.0;
    l.bucket = ccl::Bucket::low;
  }
  const ccl::SupervisedConfig b = cfg.baseline_for(seed);
  ccl::Stage2Config s2 = cfg.stage2_for(seed);
  s2.lambda3 = cfg.stage1.lambda1;
  s2.steps = b.steps;
  s2.batch = b.batch;
  s2.lr = b.lr;
  s2.seed = b.seed;
  const auto retrained = ccl::retrain(saved, labels, cfg.model, s2);
  c.expect(retrained.model == baseline, "all-excluded retrain differs from baseline.ckpt.json");
  return from_checks(c, std::to_string(saved.size()) + " samples and " + std::to_string(baseline.tensors.size()) +
                            " tensors reload exactly; all-excluded retrain (" + std::to_string(labels.size()) +
                            " labels dropped) equals baseline bit for bit");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: ccl_acceptance <config.json> <work-dir>\n";
    return 1;
  }
  const fs::path config_path = argv[1];
  const fs::path work = argv[2];
  fs::create_directories(work);

  report(1, "analytic math suite", analytic_math);
  report(2, "gradient oracle", gradient_oracle);
  report(3, "context consistency oracle", consistency_oracle);
  report(4, "stop-gradient contract", stop_gradient);

  ccl::ExperimentConfig cfg;
  nlohmann::json run_report;
  const fs::path run_dir = work / "default";
  std::string run_error;
  const auto t0 = Clock::now();
  try {
    cfg = ccl::load_experiment_config(config_path);
    fs::remove_all(run_dir);
    run_report = ccl::run_experiment(cfg, run_dir, &std::cerr);
    std::cout << "full run over " << cfg.seeds.size() << " seeds took " << fmt(seconds_since(t0), 0) << " s"
              << std::endl;
  } catch (const std::exception& e) {
    run_error = e.what();
  }
  const auto needs_run = [&](auto&& f) {
    return [&, f]() -> Outcome {
      if (!run_error.empty()) return {false, "full run failed: " + run_error};
      return f();
    };
  };

  report(5, "semi-supervised benefit", needs_run([&] { return semi_supervised_benefit(cfg, run_report); }));
  report(6, "pseudo-labeling non-degradation", needs_run([&] { return pseudo_label_benefit(run_report); }));
  report(7, "determinism", needs_run([&] { return determinism(cfg, work); }));
  report(8, "round-trip fidelity", needs_run([&] { return round_trips(cfg, run_dir); }));

  std::cout << (g_failed == 0 ? "ALL PASS" : std::to_string(g_failed) + " FAILED") << std::endl;
  return g_failed == 0 ? 0 : 1;
}
