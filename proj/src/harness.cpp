#include "dagvi/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dagvi/io.hpp"
#include "dagvi/version.hpp"

namespace dagvi::harness {

using nlohmann::ordered_json;

namespace {

ordered_json param_to_json(const Parameter& p) {
  ordered_json j;
  j["shape"] = p.shape;
  j["values"] = p.value;
  return j;
}

Parameter param_from_json(const std::string& name, const ordered_json& j) {
  Parameter p;
  p.name = name;
  p.shape = j.at("shape").get<Shape>();
  p.value = j.at("values").get<std::vector<double>>();
  if (shape_numel(p.shape) != p.value.size())
    throw std::runtime_error("params file: '" + name + "' shape does not match value count");
  return p;
}

std::string iso_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_params(const fs::path& path, const vi::VariationalParams& vp,
                 const vi::FunctionalModels& models) {
  ordered_json j;
  j["d"] = models.d;
  j["mechanism"] = vi::to_string(models.kind);
  j["hidden"] = models.hidden;
  j["phi"] = param_to_json(vp.phi);
  j["mu"] = param_to_json(vp.mu);
  j["log_scale"] = param_to_json(vp.log_scale);
  ordered_json theta = ordered_json::array();
  std::size_t per = models.kind == vi::MechanismKind::Linear ? 2 : 4;
  for (std::size_t i = 0; i < models.d; ++i) {
    ordered_json node = ordered_json::array();
    for (std::size_t s = 0; s < per; ++s)
      node.push_back(param_to_json(models.node_param(i, s)));
    theta.push_back(std::move(node));
  }
  j["theta"] = std::move(theta);
  io::write_text(path, j.dump() + "\n");
}

std::pair<vi::VariationalParams, vi::FunctionalModels> load_params(const fs::path& path) {
  auto j = ordered_json::parse(io::read_text(path));
  vi::VariationalParams vp;
  vp.phi = param_from_json("phi", j.at("phi"));
  vp.mu = param_from_json("mu", j.at("mu"));
  vp.log_scale = param_from_json("log_scale", j.at("log_scale"));
  vi::FunctionalModels models;
  models.d = j.at("d").get<std::size_t>();
  models.kind = vi::mechanism_kind_from_string(j.at("mechanism").get<std::string>());
  models.hidden = j.at("hidden").get<std::size_t>();
  std::size_t per = models.kind == vi::MechanismKind::Linear ? 2 : 4;
  const auto& theta = j.at("theta");
  if (theta.size() != models.d)
    throw std::runtime_error(path.string() + ": theta has " + std::to_string(theta.size()) +
                             " nodes, expected " + std::to_string(models.d));
  static const char* linear_slots[] = {".coef", ".bias"};
  static const char* mlp_slots[] = {".w1", ".b1", ".w2", ".b2"};
  for (std::size_t i = 0; i < models.d; ++i) {
    const auto& node = theta.at(i);
    if (node.size() != per)
      throw std::runtime_error(path.string() + ": theta node " + std::to_string(i) +
                               " has wrong arity");
    for (std::size_t s = 0; s < per; ++s) {
      std::string name = "theta" + std::to_string(i) +
                         (models.kind == vi::MechanismKind::Linear ? linear_slots[s]
                                                                   : mlp_slots[s]);
      models.store.push_back(param_from_json(name, node.at(s)));
    }
  }
  return {std::move(vp), std::move(models)};
}

void save_trajectory(const fs::path& path, const std::vector<vi::EpochStats>& traj) {
  std::ostringstream out;
  out << "epoch,train_elbo,val_elbo,recon,kl_edges,kl_scores\n";
  for (const auto& e : traj) {
    out << e.epoch << ',' << io::format_double(e.train_elbo) << ',';
    if (e.val_elbo) out << io::format_double(*e.val_elbo);
    out << ',' << io::format_double(e.recon) << ',' << io::format_double(e.kl_edges) << ','
        << io::format_double(e.kl_scores) << '\n';
  }
  io::write_text(path, out.str());
}

void save_train_config(const fs::path& path, const vi::TrainConfig& cfg,
                       const vi::PriorSpec& prior) {
  ordered_json j;
  j["lr"] = cfg.lr;
  j["t"] = cfg.topo_temp;
  j["tau"] = cfg.gumbel_temp;
  j["lambda1"] = cfg.kl_edge_weight;
  j["lambda2"] = cfg.kl_score_weight;
  j["batch"] = cfg.batch_size;
  j["epochs"] = cfg.max_epochs;
  j["check-every"] = cfg.val_check_period;
  j["patience"] = cfg.patience;
  j["val-samples"] = cfg.val_samples;
  j["elbo-samples"] = cfg.elbo_samples;
  j["wd"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["mechanism"] = vi::to_string(cfg.mechanism);
  j["hidden"] = cfg.hidden;
  j["per-dim-scale"] = cfg.per_dim_scale;
  j["budget-seconds"] = cfg.time_budget_seconds;
  j["init-edge-logit"] = cfg.init_edge_logit;
  j["init-score-scale"] = cfg.init_score_scale;
  j["prior-edge-prob"] = prior.edge_prob;
  j["prior-score-scale"] = prior.score_scale;
  io::write_text(path, j.dump(2) + "\n");
}

std::pair<vi::TrainConfig, vi::PriorSpec> load_train_config(const fs::path& path) {
  auto j = ordered_json::parse(io::read_text(path));
  vi::TrainConfig cfg;
  vi::PriorSpec prior;
  cfg.lr = j.value("lr", cfg.lr);
  cfg.topo_temp = j.value("t", cfg.topo_temp);
  cfg.gumbel_temp = j.value("tau", cfg.gumbel_temp);
  cfg.kl_edge_weight = j.value("lambda1", cfg.kl_edge_weight);
  cfg.kl_score_weight = j.value("lambda2", cfg.kl_score_weight);
  cfg.batch_size = j.value("batch", cfg.batch_size);
  cfg.max_epochs = j.value("epochs", cfg.max_epochs);
  cfg.val_check_period = j.value("check-every", cfg.val_check_period);
  cfg.patience = j.value("patience", cfg.patience);
  cfg.val_samples = j.value("val-samples", cfg.val_samples);
  cfg.elbo_samples = j.value("elbo-samples", cfg.elbo_samples);
  cfg.weight_decay = j.value("wd", cfg.weight_decay);
  cfg.seed = j.value("seed", cfg.seed);
  if (j.contains("mechanism"))
    cfg.mechanism = vi::mechanism_kind_from_string(j["mechanism"].get<std::string>());
  cfg.hidden = j.value("hidden", cfg.hidden);
  cfg.per_dim_scale = j.value("per-dim-scale", cfg.per_dim_scale);
  cfg.time_budget_seconds = j.value("budget-seconds", cfg.time_budget_seconds);
  cfg.init_edge_logit = j.value("init-edge-logit", cfg.init_edge_logit);
  cfg.init_score_scale = j.value("init-score-scale", cfg.init_score_scale);
  prior.edge_prob = j.value("prior-edge-prob", prior.edge_prob);
  prior.score_scale = j.value("prior-score-scale", prior.score_scale);
  return {cfg, prior};
}

fs::path run_gen(const sem::GenSpec& spec, const fs::path& out_dir) {
  if (spec.d < 2) throw std::invalid_argument("gen: d must be >= 2");
  sem::Dataset ds = sem::generate_dataset(spec);
  sem::save_dataset(ds, out_dir);
  return out_dir;
}

TrainOutcome run_train(const fs::path& data_dir, const fs::path& run_dir,
                       const vi::TrainConfig& cfg, const vi::PriorSpec& prior) {
  sem::Dataset ds = sem::load_dataset(data_dir);
  fs::create_directories(run_dir);
  std::string started = iso_timestamp();
  vi::TrainResult result;
  try {
    result = vi::train(ds, cfg, prior);
  } catch (const vi::TrainDivergence& e) {
    save_trajectory(run_dir / "trajectory.csv", e.trajectory);
    throw;
  }
  save_params(run_dir / "params.json", result.params, result.models);
  save_trajectory(run_dir / "trajectory.csv", result.trajectory);
  save_train_config(run_dir / "config.json", cfg, prior);

  ordered_json manifest;
  manifest["run_dir"] = run_dir.filename().string();
  manifest["config"] = "config.json";
  manifest["dataset"] = data_dir.string();
  manifest["dataset_fingerprint"] = hex64(io::fingerprint_dir(data_dir));
  manifest["artifact_version"] = kArtifactVersion;
  manifest["started"] = started;
  manifest["finished"] = iso_timestamp();
  manifest["stop_epoch"] = result.stop_epoch;
  manifest["wall_seconds"] = result.wall_seconds;
  manifest["hit_time_budget"] = result.hit_time_budget;
  io::write_text(run_dir / "manifest.json", manifest.dump(2) + "\n");

  TrainOutcome out;
  out.run_dir = run_dir;
  out.stop_epoch = result.stop_epoch;
  out.wall_seconds = result.wall_seconds;
  out.best_val_elbo = result.best_val_elbo;
  out.hit_time_budget = result.hit_time_budget;
  return out;
}

metrics::MetricsReport run_eval(const fs::path& run_dir, const fs::path& data_dir,
                                const EvalOptions& opts) {
  auto [vp, models] = load_params(run_dir / "params.json");
  auto [cfg, prior] = load_train_config(run_dir / "config.json");
  sem::Dataset ds = sem::load_dataset(data_dir);
  if (ds.x.cols != models.d)
    throw std::runtime_error("eval: dataset width " + std::to_string(ds.x.cols) +
                             " does not match trained models (d=" +
                             std::to_string(models.d) + ")");
  sampler::PosteriorParams pp = vp.snapshot();

  metrics::MetricsReport report;
  report.m = opts.samples;
  report.seed = opts.seed;
  report.dataset_id =
      data_dir.filename().string() + ":" + hex64(io::fingerprint_dir(data_dir));

  Rng rng(opts.seed);
  Rng score_rng = rng.fork(1);
  Rng mse_rng = rng.fork(2);
  metrics::ScoreMatrix s = metrics::mean_edge_probs(pp, cfg.topo_temp, cfg.gumbel_temp,
                                                    opts.samples, score_rng);
  if (ds.truth) {
    report.auc_roc = metrics::auc_roc(s.s, *ds.truth);
    report.auc_pr = metrics::auc_pr(s.s, *ds.truth);
  }
  if (!ds.splits.test.empty()) {
    Mat x_test = ds.test();
    report.mse = metrics::heldout_mse(models, pp, cfg.topo_temp, cfg.gumbel_temp, x_test,
                                      opts.samples, mse_rng, opts.mode_graph);
  }
  if (opts.dump_scores) {
    io::write_csv(run_dir / "scores.csv", {}, s.s);
  }
  return report;
}

void save_metrics(const fs::path& path, const metrics::MetricsReport& report) {
  ordered_json j;
  if (report.auc_roc) j["auc_roc"] = *report.auc_roc;
  if (report.auc_pr) j["auc_pr"] = *report.auc_pr;
  if (report.mse) j["mse"] = *report.mse;
  j["M"] = report.m;
  j["seed"] = report.seed;
  j["dataset_id"] = report.dataset_id;
  io::write_text(path, j.dump(2) + "\n");
}

sampler::BenchResult run_bench(const BenchOptions& opts, const fs::path& csv_path) {
  sampler::BenchResult result =
      sampler::bench_sampling(opts.dims, opts.reps, opts.samplers, opts.seed);
  std::ostringstream out;
  out << "sampler,d,rep,seconds\n";
  for (const auto& r : result.rows)
    out << r.sampler << ',' << r.d << ',' << r.rep << ',' << io::format_double(r.seconds)
        << '\n';
  io::write_text(csv_path, out.str());
  return result;
}

std::string bench_summary_text(const sampler::BenchResult& result) {
  std::ostringstream out;
  out << "note: " << result.note << "\n";
  out << "median seconds per sample:\n";
  for (const auto& st : result.stats)
    out << "  " << st.sampler << " d=" << st.d << ": " << io::format_double(st.median)
        << " (iqr " << io::format_double(st.iqr) << ")\n";
  out << "log-log slopes:\n";
  for (const auto& [name, slope] : result.slopes)
    out << "  " << name << ": " << io::format_double(slope) << "\n";
  return out.str();
}

// --- suites ---

namespace {

std::vector<SuiteSpec> make_suites() {
  std::vector<SuiteSpec> out;
  struct Row {
    const char* id;
    sem::GraphFamily family;
    std::size_t d;
    sem::MechanismKind sem_kind;
    vi::MechanismKind train_kind;
    double budget;
  };
  const Row rows[] = {
      {"linear-er-d10", sem::GraphFamily::Er, 10, sem::MechanismKind::Linear,
       vi::MechanismKind::Linear, 0.0},
      {"linear-sf-d10", sem::GraphFamily::Sf, 10, sem::MechanismKind::Linear,
       vi::MechanismKind::Linear, 0.0},
      {"linear-er-d50", sem::GraphFamily::Er, 50, sem::MechanismKind::Linear,
       vi::MechanismKind::Linear, 0.0},
      {"linear-sf-d50", sem::GraphFamily::Sf, 50, sem::MechanismKind::Linear,
       vi::MechanismKind::Linear, 0.0},
      {"nonlinear-er-d10", sem::GraphFamily::Er, 10, sem::MechanismKind::GpNonlinear,
       vi::MechanismKind::Mlp, 0.0},
      {"nonlinear-sf-d10", sem::GraphFamily::Sf, 10, sem::MechanismKind::GpNonlinear,
       vi::MechanismKind::Mlp, 0.0},
      {"nonlinear-er-d50", sem::GraphFamily::Er, 50, sem::MechanismKind::GpNonlinear,
       vi::MechanismKind::Mlp, 0.0},
      {"nonlinear-sf-d50", sem::GraphFamily::Sf, 50, sem::MechanismKind::GpNonlinear,
       vi::MechanismKind::Mlp, 0.0},
      {"linear-d100", sem::GraphFamily::Er, 100, sem::MechanismKind::Linear,
       vi::MechanismKind::Linear, 3600.0},
      {"nonlinear-d100", sem::GraphFamily::Er, 100, sem::MechanismKind::GpNonlinear,
       vi::MechanismKind::Mlp, 3600.0},
  };
  for (const Row& r : rows) {
    SuiteSpec s;
    s.id = r.id;
    s.gen.family = r.family;
    s.gen.mechanism = r.sem_kind;
    s.gen.d = r.d;
    s.gen.expected_edges = static_cast<double>(r.d);
    s.gen.attachment = 1;
    s.gen.n = 1000;
    s.gen.n_test = 100;
    s.train.mechanism = r.train_kind;
    // Learning rates from the documented grid search; linear mechanisms take
    // larger steps than the smaller-signal nonlinear fits.
    s.train.lr = r.train_kind == vi::MechanismKind::Linear ? 0.02 : 0.01;
    s.train.time_budget_seconds = r.budget;
    s.default_seeds = 10;
    out.push_back(std::move(s));
  }
  SuiteSpec sachs;
  sachs.id = "sachs";
  sachs.is_sachs = true;
  sachs.train.mechanism = vi::MechanismKind::Mlp;
  sachs.train.lr = 0.01;
  sachs.default_seeds = 10;
  out.push_back(std::move(sachs));
  return out;
}

}  // namespace

const std::vector<SuiteSpec>& suite_table() {
  static const std::vector<SuiteSpec> table = make_suites();
  return table;
}

const SuiteSpec* find_suite(const std::string& id) {
  for (const auto& s : suite_table())
    if (s.id == id) return &s;
  return nullptr;
}

SuiteResult run_suite(const std::string& suite_id, const fs::path& workdir,
                      const SuiteOptions& opts) {
  const SuiteSpec* spec = find_suite(suite_id);
  if (!spec) throw std::invalid_argument("unknown suite '" + suite_id + "'");
  std::size_t n_seeds = opts.seeds ? opts.seeds : spec->default_seeds;
  fs::path suite_dir = workdir / suite_id;
  fs::create_directories(suite_dir);

  // Sachs data is user-supplied; stage it once as a dataset directory.
  fs::path sachs_dir;
  if (spec->is_sachs) {
    if (opts.sachs_data.empty() || !fs::exists(opts.sachs_data))
      throw std::runtime_error(
          "suite 'sachs' needs user-supplied data: pass --sachs-data (853x11 CSV) and "
          "--sachs-edges (consensus edge list)");
    sem::Dataset ds = sem::load_sachs(opts.sachs_data, opts.sachs_edges);
    sachs_dir = suite_dir / "data";
    sem::save_dataset(ds, sachs_dir);
  }

  SuiteResult result;
  result.suite = suite_id;
  result.runs.assign(n_seeds, SuiteRun{});

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t k = next.fetch_add(1);
      if (k >= n_seeds) return;
      SuiteRun& run = result.runs[k];
      run.seed = k + 1;
      try {
        fs::path data_dir;
        if (spec->is_sachs) {
          data_dir = sachs_dir;
        } else {
          sem::GenSpec gen = spec->gen;
          gen.seed = run.seed;
          data_dir = suite_dir / ("data_seed" + std::to_string(run.seed));
          run_gen(gen, data_dir);
        }
        vi::TrainConfig cfg = spec->train;
        cfg.seed = run.seed;
        if (opts.lr) cfg.lr = *opts.lr;
        fs::path run_dir = suite_dir / ("run_seed" + std::to_string(run.seed));
        TrainOutcome t = run_train(data_dir, run_dir, cfg, vi::PriorSpec{});
        run.train_seconds = t.wall_seconds;
        EvalOptions eopts;
        eopts.samples = 100;
        eopts.seed = run.seed;
        run.report = run_eval(run_dir, data_dir, eopts);
        save_metrics(run_dir / "metrics.json", run.report);
        run.ok = true;
      } catch (const std::exception& e) {
        run.ok = false;
        run.error = e.what();
      }
    }
  };

  std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, n_seeds));
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  result.complete = true;
  for (const auto& r : result.runs)
    if (!r.ok) result.complete = false;

  auto aggregate_metric = [&](const std::string& name, auto getter) {
    std::vector<double> vals;
    for (const auto& r : result.runs)
      if (r.ok) {
        auto v = getter(r.report);
        if (v) vals.push_back(*v);
      }
    if (vals.empty()) return;
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    double stddev = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1)) : 0.0;
    result.aggregate.emplace_back(name, mean, stddev);
  };
  aggregate_metric("auc_roc", [](const metrics::MetricsReport& r) { return r.auc_roc; });
  aggregate_metric("auc_pr", [](const metrics::MetricsReport& r) { return r.auc_pr; });
  aggregate_metric("mse", [](const metrics::MetricsReport& r) { return r.mse; });
  return result;
}

void write_suite_csv(const fs::path& path, const SuiteResult& result) {
  std::ostringstream out;
  out << "suite,metric,mean,std\n";
  for (const auto& [metric, mean, stddev] : result.aggregate)
    out << result.suite << ',' << metric << ',' << io::format_double(mean) << ','
        << io::format_double(stddev) << '\n';
  io::write_text(path, out.str());
}

}  // namespace dagvi::harness
