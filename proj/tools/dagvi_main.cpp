// Command-line front end: dataset generation, training, evaluation, the
// sampler benchmark, and full experiment suites.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "dagvi/harness.hpp"
#include "dagvi/io.hpp"
#include "dagvi/version.hpp"

namespace {

using namespace dagvi;
namespace fs = std::filesystem;

struct GenArgs {
  sem::GenSpec spec;
  std::string graph = "er", mech = "linear", out;
  double edges = -1.0;
};

void setup_gen(CLI::App* sub, GenArgs& a) {
  sub->add_option("--graph", a.graph, "graph family: er or sf")
      ->check(CLI::IsMember({"er", "sf"}));
  sub->add_option("--d", a.spec.d, "number of nodes")
      ->check(CLI::Range(std::size_t{2}, std::size_t{100000}));
  sub->add_option("--edges", a.edges, "expected edge count (er; default d)");
  sub->add_option("--attach", a.spec.attachment, "edges per arriving node (sf)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--sem", a.mech, "mechanism: linear or gp")
      ->check(CLI::IsMember({"linear", "gp"}));
  sub->add_option("--n", a.spec.n, "training-pool rows (split 80/20 train/val)");
  sub->add_option("--n-test", a.spec.n_test, "held-out test rows");
  sub->add_option("--seed", a.spec.seed, "generation seed");
  sub->add_option("--out", a.out, "output dataset directory")->required();
  sub->callback([&a]() {
    a.spec.family = sem::graph_family_from_string(a.graph);
    a.spec.mechanism = sem::mechanism_from_string(a.mech);
    a.spec.expected_edges = a.edges < 0.0 ? static_cast<double>(a.spec.d) : a.edges;
    harness::run_gen(a.spec, a.out);
    std::cout << "dataset written to " << a.out << "\n";
  });
}

struct TrainArgs {
  std::string data, out, config;
  vi::TrainConfig cfg;
  vi::PriorSpec prior;
  std::string mechanism = "linear";
  CLI::App* sub = nullptr;
};

void setup_train(CLI::App* sub, TrainArgs& a) {
  a.sub = sub;
  sub->add_option("--data", a.data, "dataset directory")->required();
  sub->add_option("--out", a.out, "run directory")->required();
  sub->add_option("--config", a.config, "flat key-value JSON config (CLI flags override)");
  sub->add_option("--lr", a.cfg.lr, "learning rate");
  sub->add_option("--t", a.cfg.topo_temp, "topological temperature");
  sub->add_option("--tau", a.cfg.gumbel_temp, "edge Gumbel-Softmax temperature");
  sub->add_option("--lambda1", a.cfg.kl_edge_weight, "edge-KL weight");
  sub->add_option("--lambda2", a.cfg.kl_score_weight, "score-KL weight");
  sub->add_option("--batch", a.cfg.batch_size, "batch size");
  sub->add_option("--epochs", a.cfg.max_epochs, "maximum epochs");
  sub->add_option("--check-every", a.cfg.val_check_period, "validation check period");
  sub->add_option("--patience", a.cfg.patience, "early-stop patience in checks");
  sub->add_option("--val-samples", a.cfg.val_samples, "posterior samples per validation check");
  sub->add_option("--elbo-samples", a.cfg.elbo_samples, "posterior samples per batch step");
  sub->add_option("--wd", a.cfg.weight_decay, "decoupled weight decay");
  sub->add_option("--seed", a.cfg.seed, "training seed");
  sub->add_option("--mechanism", a.mechanism, "functional model: linear or mlp")
      ->check(CLI::IsMember({"linear", "mlp"}));
  sub->add_option("--hidden", a.cfg.hidden, "hidden width for the mlp mechanism");
  sub->add_flag("--per-dim-scale", a.cfg.per_dim_scale, "per-dimension score scale");
  sub->add_option("--budget-seconds", a.cfg.time_budget_seconds,
                  "wall-clock budget (0 = unlimited)");
  sub->add_option("--init-edge-logit", a.cfg.init_edge_logit, "starting edge logit");
  sub->add_option("--init-score-scale", a.cfg.init_score_scale,
                  "starting scale of the score posterior");
  sub->add_option("--prior-edge-prob", a.prior.edge_prob, "prior edge probability");
  sub->add_option("--prior-score-scale", a.prior.score_scale, "prior score scale");
  sub->callback([&a]() {
    vi::TrainConfig cfg;
    vi::PriorSpec prior;
    if (!a.config.empty()) std::tie(cfg, prior) = harness::load_train_config(a.config);
    // CLI flags passed explicitly override the file.
    auto passed = [&](const std::string& flag) { return a.sub->count(flag) > 0; };
    if (passed("--lr")) cfg.lr = a.cfg.lr;
    if (passed("--t")) cfg.topo_temp = a.cfg.topo_temp;
    if (passed("--tau")) cfg.gumbel_temp = a.cfg.gumbel_temp;
    if (passed("--lambda1")) cfg.kl_edge_weight = a.cfg.kl_edge_weight;
    if (passed("--lambda2")) cfg.kl_score_weight = a.cfg.kl_score_weight;
    if (passed("--batch")) cfg.batch_size = a.cfg.batch_size;
    if (passed("--epochs")) cfg.max_epochs = a.cfg.max_epochs;
    if (passed("--check-every")) cfg.val_check_period = a.cfg.val_check_period;
    if (passed("--patience")) cfg.patience = a.cfg.patience;
    if (passed("--val-samples")) cfg.val_samples = a.cfg.val_samples;
    if (passed("--elbo-samples")) cfg.elbo_samples = a.cfg.elbo_samples;
    if (passed("--wd")) cfg.weight_decay = a.cfg.weight_decay;
    if (passed("--seed")) cfg.seed = a.cfg.seed;
    if (passed("--mechanism")) cfg.mechanism = vi::mechanism_kind_from_string(a.mechanism);
    if (passed("--hidden")) cfg.hidden = a.cfg.hidden;
    if (passed("--per-dim-scale")) cfg.per_dim_scale = a.cfg.per_dim_scale;
    if (passed("--budget-seconds")) cfg.time_budget_seconds = a.cfg.time_budget_seconds;
    if (passed("--init-edge-logit")) cfg.init_edge_logit = a.cfg.init_edge_logit;
    if (passed("--init-score-scale")) cfg.init_score_scale = a.cfg.init_score_scale;
    if (passed("--prior-edge-prob")) prior.edge_prob = a.prior.edge_prob;
    if (passed("--prior-score-scale")) prior.score_scale = a.prior.score_scale;
    auto outcome = harness::run_train(a.data, a.out, cfg, prior);
    std::cout << "run written to " << a.out << " (stopped at epoch " << outcome.stop_epoch
              << ", " << io::format_double(outcome.wall_seconds) << " s)\n";
    if (outcome.hit_time_budget) std::cout << "note: wall-clock budget reached\n";
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(dagvi::kArtifactVersion) +
               " - Bayesian causal discovery with constraint-free DAG sampling"};
  app.require_subcommand(1);

  GenArgs gen_args;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  setup_gen(gen, gen_args);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "fit the variational model to a dataset");
  setup_train(train, train_args);

  auto* eval = app.add_subcommand("eval", "compute metrics for a trained run");
  std::string eval_run, eval_data, eval_out, eval_mode = "sampled";
  harness::EvalOptions eopts;
  eval->add_option("--run", eval_run, "run directory")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--samples", eopts.samples, "posterior samples M")->check(CLI::PositiveNumber);
  eval->add_option("--seed", eopts.seed, "evaluation seed");
  eval->add_option("--mode", eval_mode, "mse mode: sampled or mode")
      ->check(CLI::IsMember({"sampled", "mode"}));
  eval->add_flag("--scores", eopts.dump_scores, "also write scores.csv");
  eval->add_option("--out", eval_out, "metrics path (default RUN/metrics.json)");
  eval->callback([&]() {
    eopts.mode_graph = eval_mode == "mode";
    auto report = harness::run_eval(eval_run, eval_data, eopts);
    fs::path out = eval_out.empty() ? fs::path(eval_run) / "metrics.json" : fs::path(eval_out);
    harness::save_metrics(out, report);
    std::cout << "metrics written to " << out.string() << "\n";
    if (report.auc_roc) std::cout << "auc_roc " << dagvi::io::format_double(*report.auc_roc) << "\n";
    if (report.auc_pr) std::cout << "auc_pr " << dagvi::io::format_double(*report.auc_pr) << "\n";
    if (report.mse) std::cout << "mse " << dagvi::io::format_double(*report.mse) << "\n";
  });

  auto* bench = app.add_subcommand("bench-sampler", "time DAG samplers across dimensions");
  harness::BenchOptions bopts;
  std::string bench_out = "bench.csv";
  std::vector<std::string> dim_strs;
  bench->add_option("--dims", dim_strs, "comma-separated dimensions")->delimiter(',');
  bench->add_option("--reps", bopts.reps, "repetitions per (sampler, d)")
      ->check(CLI::Range(5, 1000000));
  bench->add_option("--samplers", bopts.samplers, "subset of proposed,sinkhorn,topk")
      ->delimiter(',');
  bench->add_option("--seed", bopts.seed, "benchmark seed");
  bench->add_option("--out", bench_out, "CSV output path");
  bench->callback([&]() {
    if (!dim_strs.empty()) {
      bopts.dims.clear();
      for (const auto& s : dim_strs) bopts.dims.push_back(std::stoul(s));
    }
    auto result = harness::run_bench(bopts, bench_out);
    std::string summary = harness::bench_summary_text(result);
    std::cout << summary;
    dagvi::io::write_text(fs::path(bench_out).replace_extension(".summary.txt"), summary);
    std::cout << "rows written to " << bench_out << "\n";
  });

  auto* rep = app.add_subcommand("reproduce", "run a full experiment suite");
  std::string suite_id, rep_out = "runs";
  harness::SuiteOptions sopts;
  double rep_lr = -1.0;
  std::string sachs_data, sachs_edges;
  rep->add_option("--suite", suite_id, "suite id (e.g. linear-er-d10, sachs)")->required();
  rep->add_option("--seeds", sopts.seeds, "number of seeds (0 = suite default)");
  rep->add_option("--jobs", sopts.jobs, "parallel runs")->check(CLI::PositiveNumber);
  rep->add_option("--out", rep_out, "work directory");
  rep->add_option("--lr", rep_lr, "override learning rate for every run");
  rep->add_option("--sachs-data", sachs_data, "853x11 observational CSV (sachs suite)");
  rep->add_option("--sachs-edges", sachs_edges, "consensus edge list CSV (sachs suite)");
  rep->callback([&]() {
    if (rep_lr > 0.0) sopts.lr = rep_lr;
    sopts.sachs_data = sachs_data;
    sopts.sachs_edges = sachs_edges;
    auto result = harness::run_suite(suite_id, rep_out, sopts);
    for (const auto& run : result.runs)
      if (!run.ok)
        std::cerr << "seed " << run.seed << " FAILED: " << run.error << "\n";
    fs::path csv = fs::path(rep_out) / suite_id / "aggregate.csv";
    harness::write_suite_csv(csv, result);
    for (const auto& [metric, mean, stddev] : result.aggregate)
      std::cout << suite_id << " " << metric << " " << dagvi::io::format_double(mean)
                << " +/- " << dagvi::io::format_double(stddev) << "\n";
    std::cout << "aggregate written to " << csv.string() << "\n";
    if (!result.complete)
      throw std::runtime_error("suite incomplete: at least one seed failed");
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
