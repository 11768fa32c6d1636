#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dagvi/metrics.hpp"
#include "dagvi/sampler.hpp"
#include "dagvi/sem.hpp"
#include "dagvi/vi.hpp"

namespace dagvi::harness {

namespace fs = std::filesystem;

// --- run artifacts ---

void save_params(const fs::path& path, const vi::VariationalParams& vp,
                 const vi::FunctionalModels& models);
std::pair<vi::VariationalParams, vi::FunctionalModels> load_params(const fs::path& path);

void save_trajectory(const fs::path& path, const std::vector<vi::EpochStats>& traj);

// Flat key-value JSON mirroring the CLI flags; CLI overrides file values.
void save_train_config(const fs::path& path, const vi::TrainConfig& cfg,
                       const vi::PriorSpec& prior);
std::pair<vi::TrainConfig, vi::PriorSpec> load_train_config(const fs::path& path);

// --- commands (library-level; the CLI wraps these) ---

fs::path run_gen(const sem::GenSpec& spec, const fs::path& out_dir);

struct TrainOutcome {
  fs::path run_dir;
  std::size_t stop_epoch = 0;
  double wall_seconds = 0.0;
  double best_val_elbo = 0.0;
  bool hit_time_budget = false;
};
TrainOutcome run_train(const fs::path& data_dir, const fs::path& run_dir,
                       const vi::TrainConfig& cfg, const vi::PriorSpec& prior);

struct EvalOptions {
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  bool mode_graph = false;
  bool dump_scores = false;
};
metrics::MetricsReport run_eval(const fs::path& run_dir, const fs::path& data_dir,
                                const EvalOptions& opts);
void save_metrics(const fs::path& path, const metrics::MetricsReport& report);

struct BenchOptions {
  std::vector<std::size_t> dims = {250, 500, 1000, 2000};
  int reps = 20;
  std::vector<std::string> samplers;  // empty = all
  std::uint64_t seed = 1;
};
sampler::BenchResult run_bench(const BenchOptions& opts, const fs::path& csv_path);
std::string bench_summary_text(const sampler::BenchResult& result);

// --- suites ---

struct SuiteSpec {
  std::string id;
  sem::GenSpec gen;          // ignored for sachs
  vi::TrainConfig train;
  bool is_sachs = false;
  std::size_t default_seeds = 10;
};

const std::vector<SuiteSpec>& suite_table();
const SuiteSpec* find_suite(const std::string& id);

struct SuiteRun {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  metrics::MetricsReport report;
  double train_seconds = 0.0;
};

struct SuiteResult {
  std::string suite;
  std::vector<SuiteRun> runs;
  bool complete = false;
  // aggregate rows: (metric, mean, std) over the successful runs
  std::vector<std::tuple<std::string, double, double>> aggregate;
};

struct SuiteOptions {
  std::size_t seeds = 0;  // 0 = suite default
  std::size_t jobs = 1;
  std::optional<double> lr;  // override
  fs::path sachs_data;
  fs::path sachs_edges;
};

SuiteResult run_suite(const std::string& suite_id, const fs::path& workdir,
                      const SuiteOptions& opts);
void write_suite_csv(const fs::path& path, const SuiteResult& result);

}  // namespace dagvi::harness
