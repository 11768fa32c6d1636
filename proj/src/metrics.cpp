#include "dagvi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dagvi::metrics {

ScoreMatrix mean_edge_probs(const sampler::PosteriorParams& params, double topo_temp,
                            double gumbel_temp, std::size_t m, Rng& rng) {
  if (m < 1) throw std::invalid_argument("mean_edge_probs: need at least one sample");
  params.validate();
  std::size_t d = params.dim();
  ScoreMatrix out;
  out.samples = m;
  out.s = Mat(d, d);
  for (std::size_t k = 0; k < m; ++k) {
    sampler::AdjacencySample a = sampler::sample_dag(params, topo_temp, gumbel_temp, rng);
    for (std::size_t i = 0; i < d * d; ++i) out.s.data[i] += a.hard.data[i];
  }
  double inv = 1.0 / static_cast<double>(m);
  for (auto& v : out.s.data) v *= inv;
  return out;
}

namespace {

struct ScoredLabel {
  double score;
  bool positive;
};

std::vector<ScoredLabel> offdiag_pairs(const Mat& scores, const BinMat& truth) {
  if (scores.rows != truth.rows || scores.cols != truth.cols || scores.rows != scores.cols)
    throw std::invalid_argument("metrics: scores and truth must be square and equal-sized");
  std::vector<ScoredLabel> out;
  out.reserve(scores.rows * (scores.cols - 1));
  for (std::size_t i = 0; i < scores.rows; ++i)
    for (std::size_t j = 0; j < scores.cols; ++j) {
      if (i == j) continue;
      out.push_back({scores(i, j), truth(i, j) != 0});
    }
  return out;
}

}  // namespace

std::optional<double> auc_roc(const Mat& scores, const BinMat& truth) {
  auto pairs = offdiag_pairs(scores, truth);
  std::size_t pos = 0;
  for (const auto& p : pairs) pos += p.positive;
  std::size_t neg = pairs.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score < b.score; });
  // Midranks over tie groups; AUC = (R_pos - P(P+1)/2) / (P*N).
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].score == pairs[i].score) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (pairs[k].positive) rank_sum_pos += midrank;
    i = j;
  }
  double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n);
}

std::optional<double> auc_pr(const Mat& scores, const BinMat& truth) {
  auto pairs = offdiag_pairs(scores, truth);
  std::size_t pos = 0;
  for (const auto& p : pairs) pos += p.positive;
  if (pos == 0) return std::nullopt;

  std::sort(pairs.begin(), pairs.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  // Average precision with threshold groups at distinct scores.
  double ap = 0.0;
  double tp = 0.0, fp = 0.0, prev_recall = 0.0;
  std::size_t i = 0;
  while (i < pairs.size()) {
    std::size_t j = i;
    while (j < pairs.size() && pairs[j].score == pairs[i].score) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (pairs[k].positive)
        tp += 1.0;
      else
        fp += 1.0;
    }
    double recall = tp / static_cast<double>(pos);
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

double heldout_mse(const vi::FunctionalModels& models,
                   const sampler::PosteriorParams& params, double topo_temp,
                   double gumbel_temp, const Mat& x_test, std::size_t m, Rng& rng,
                   bool mode_graph) {
  if (x_test.rows == 0) throw std::invalid_argument("heldout_mse: empty test data");
  double denom = static_cast<double>(x_test.rows * x_test.cols);
  if (mode_graph) {
    ScoreMatrix s = mean_edge_probs(params, topo_temp, gumbel_temp, m, rng);
    BinMat a(s.s.rows, s.s.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = s.s.data[i] > 0.5 ? 1 : 0;
    Mat xhat = vi::reconstruct(models, x_test, a);
    return vi::recon_loss(x_test, xhat) / denom;
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    sampler::AdjacencySample a = sampler::sample_dag(params, topo_temp, gumbel_temp, rng);
    Mat xhat = vi::reconstruct(models, x_test, a.hard);
    acc += vi::recon_loss(x_test, xhat) / denom;
  }
  return acc / static_cast<double>(m);
}

}  // namespace dagvi::metrics
