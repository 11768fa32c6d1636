#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dagvi/matrix.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/sampler.hpp"
#include "dagvi/vi.hpp"

namespace dagvi::metrics {

// Edge frequencies over M posterior DAG draws.
struct ScoreMatrix {
  Mat s;                    // d x d in [0,1], zero diagonal
  std::size_t samples = 0;  // M
};

ScoreMatrix mean_edge_probs(const sampler::PosteriorParams& params, double topo_temp,
                            double gumbel_temp, std::size_t m, Rng& rng);

// Mann-Whitney rank statistic with midrank ties over off-diagonal entries;
// equals the trapezoidal ROC area. Absent when labels are one-class.
std::optional<double> auc_roc(const Mat& scores, const BinMat& truth);

// Average precision (step interpolation, ties grouped). Absent without any
// positive label.
std::optional<double> auc_pr(const Mat& scores, const BinMat& truth);

// Mean squared residual per entry of x_test, averaged over M posterior DAG
// draws. mode_graph replaces sampling with the single S > 0.5 graph.
double heldout_mse(const vi::FunctionalModels& models,
                   const sampler::PosteriorParams& params, double topo_temp,
                   double gumbel_temp, const Mat& x_test, std::size_t m, Rng& rng,
                   bool mode_graph = false);

struct MetricsReport {
  std::optional<double> auc_roc;
  std::optional<double> auc_pr;
  std::optional<double> mse;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::string dataset_id;
};

}  // namespace dagvi::metrics
