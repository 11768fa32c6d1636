#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "dagvi/harness.hpp"
#include "dagvi/io.hpp"

using namespace dagvi;
using namespace dagvi::harness;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("dagvi_harness_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

vi::TrainConfig quick_config(std::uint64_t seed) {
  vi::TrainConfig cfg;
  cfg.seed = seed;
  cfg.max_epochs = 60;
  cfg.batch_size = 128;
  return cfg;
}

}  // namespace

TEST_CASE("gen/train/eval round trip produces all artifacts and metrics") {
  fs::path root = temp_dir("roundtrip");
  sem::GenSpec spec;
  spec.d = 4;
  spec.expected_edges = 4.0;
  spec.n = 300;
  spec.n_test = 50;
  spec.seed = 7;
  fs::path data = run_gen(spec, root / "data");
  CHECK(fs::exists(data / "X_train.csv"));
  CHECK(fs::exists(data / "meta.json"));

  TrainOutcome outcome = run_train(data, root / "run", quick_config(1), vi::PriorSpec{});
  CHECK(fs::exists(root / "run" / "params.json"));
  CHECK(fs::exists(root / "run" / "trajectory.csv"));
  CHECK(fs::exists(root / "run" / "config.json"));
  CHECK(fs::exists(root / "run" / "manifest.json"));
  CHECK(outcome.stop_epoch <= 60);

  EvalOptions opts;
  opts.samples = 50;
  opts.seed = 3;
  auto report = run_eval(root / "run", data, opts);
  REQUIRE(report.auc_roc.has_value());
  REQUIRE(report.auc_pr.has_value());
  REQUIRE(report.mse.has_value());
  CHECK(*report.auc_roc >= 0.0);
  CHECK(*report.auc_roc <= 1.0);
  CHECK(*report.mse >= 0.0);
  save_metrics(root / "run" / "metrics.json", report);
  CHECK(fs::exists(root / "run" / "metrics.json"));
  fs::remove_all(root);
}

TEST_CASE("re-running a run reproduces metrics.json bit-exactly") {
  fs::path root = temp_dir("determinism");
  sem::GenSpec spec;
  spec.d = 4;
  spec.expected_edges = 4.0;
  spec.n = 200;
  spec.n_test = 40;
  spec.seed = 11;
  fs::path data = run_gen(spec, root / "data");

  auto run_once = [&](const fs::path& dir) {
    run_train(data, dir, quick_config(5), vi::PriorSpec{});
    EvalOptions opts;
    opts.samples = 40;
    opts.seed = 5;
    auto report = run_eval(dir, data, opts);
    save_metrics(dir / "metrics.json", report);
    return io::read_text(dir / "metrics.json");
  };
  std::string a = run_once(root / "run_a");
  std::string b = run_once(root / "run_b");
  CHECK(a == b);
  fs::remove_all(root);
}

TEST_CASE("params round-trip preserves every value bit-exactly") {
  Rng rng(13);
  vi::VariationalParams vp = vi::VariationalParams::init(5, false, rng);
  vi::FunctionalModels models = vi::FunctionalModels::init(5, vi::MechanismKind::Mlp, 7, rng);
  for (auto& p : models.store)
    for (auto& v : p.value) v = rng.normal();

  fs::path root = temp_dir("params");
  save_params(root / "params.json", vp, models);
  auto [vp2, models2] = load_params(root / "params.json");
  CHECK(vp2.phi.value == vp.phi.value);
  CHECK(vp2.mu.value == vp.mu.value);
  CHECK(vp2.log_scale.value == vp.log_scale.value);
  CHECK(models2.kind == models.kind);
  CHECK(models2.hidden == models.hidden);
  REQUIRE(models2.store.size() == models.store.size());
  for (std::size_t i = 0; i < models.store.size(); ++i) {
    CHECK(models2.store[i].value == models.store[i].value);
    CHECK(models2.store[i].shape == models.store[i].shape);
  }
  fs::remove_all(root);
}

TEST_CASE("train config file, defaults and overrides") {
  fs::path root = temp_dir("config");
  vi::TrainConfig cfg;
  cfg.lr = 0.05;
  cfg.topo_temp = 0.7;
  cfg.mechanism = vi::MechanismKind::Mlp;
  cfg.hidden = 16;
  vi::PriorSpec prior;
  prior.edge_prob = 0.02;
  save_train_config(root / "config.json", cfg, prior);
  auto [cfg2, prior2] = load_train_config(root / "config.json");
  CHECK(cfg2.lr == 0.05);
  CHECK(cfg2.topo_temp == 0.7);
  CHECK(cfg2.mechanism == vi::MechanismKind::Mlp);
  CHECK(cfg2.hidden == 16);
  CHECK(prior2.edge_prob == 0.02);
  CHECK(cfg2.batch_size == vi::TrainConfig{}.batch_size);  // untouched default
  fs::remove_all(root);
}

TEST_CASE("trajectory file has the documented columns") {
  std::vector<vi::EpochStats> traj(3);
  traj[0] = {1, -1.5, 10.0, 2.0, 3.0, std::nullopt};
  traj[1] = {2, -1.2, 9.0, 1.9, 2.9, std::nullopt};
  traj[2] = {3, -1.1, 8.5, 1.8, 2.8, -1.4};
  fs::path root = temp_dir("traj");
  save_trajectory(root / "trajectory.csv", traj);
  std::string text = io::read_text(root / "trajectory.csv");
  CHECK(text.find("epoch,train_elbo,val_elbo,recon,kl_edges,kl_scores") == 0);
  CHECK(text.find("\n3,") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("suite table covers the documented ids") {
  for (const char* id :
       {"linear-er-d10", "linear-sf-d10", "linear-er-d50", "linear-sf-d50",
        "nonlinear-er-d10", "nonlinear-sf-d10", "nonlinear-er-d50", "nonlinear-sf-d50",
        "linear-d100", "nonlinear-d100", "sachs"}) {
    REQUIRE(find_suite(id) != nullptr);
  }
  CHECK(find_suite("nope") == nullptr);
  CHECK(find_suite("linear-d100")->train.time_budget_seconds == 3600.0);
  CHECK(find_suite("sachs")->is_sachs);
  CHECK(find_suite("nonlinear-er-d10")->train.mechanism == vi::MechanismKind::Mlp);
}

TEST_CASE("unknown suite is rejected; sachs without data is rejected") {
  fs::path root = temp_dir("suites");
  SuiteOptions opts;
  CHECK_THROWS_AS(run_suite("bogus", root, opts), std::invalid_argument);
  CHECK_THROWS_WITH_AS(run_suite("sachs", root, opts), doctest::Contains("--sachs-data"),
                       std::runtime_error);
  fs::remove_all(root);
}

TEST_CASE("bench writes the documented CSV and summary") {
  fs::path root = temp_dir("bench");
  BenchOptions opts;
  opts.dims = {16, 32};
  opts.reps = 5;
  opts.samplers = {"proposed", "topk"};
  auto result = run_bench(opts, root / "bench.csv");
  std::string csv = io::read_text(root / "bench.csv");
  CHECK(csv.find("sampler,d,rep,seconds") == 0);
  CHECK(result.rows.size() == 2 * 2 * 5);
  std::string summary = bench_summary_text(result);
  CHECK(summary.find("log-log slopes") != std::string::npos);
  CHECK(summary.find("greedy row-argmax") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("eval on a dataset without ground truth omits the AUC fields") {
  fs::path root = temp_dir("notruth");
  sem::GenSpec spec;
  spec.d = 3;
  spec.expected_edges = 2.0;
  spec.n = 150;
  spec.n_test = 30;
  spec.seed = 2;
  fs::path data = run_gen(spec, root / "data");
  fs::remove(data / "adjacency.csv");
  run_train(data, root / "run", quick_config(2), vi::PriorSpec{});
  EvalOptions opts;
  opts.samples = 20;
  auto report = run_eval(root / "run", data, opts);
  CHECK_FALSE(report.auc_roc.has_value());
  CHECK_FALSE(report.auc_pr.has_value());
  REQUIRE(report.mse.has_value());
  save_metrics(root / "metrics.json", report);
  std::string text = io::read_text(root / "metrics.json");
  CHECK(text.find("auc_roc") == std::string::npos);
  CHECK(text.find("mse") != std::string::npos);
  fs::remove_all(root);
}
