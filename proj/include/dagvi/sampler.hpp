#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dagvi/matrix.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/tensor.hpp"

namespace dagvi::sampler {

// Variational parameters of the DAG distribution: edge logits plus the
// Gaussian over priority scores (isotropic by default, per-dimension scale
// available for ablation).
struct PosteriorParams {
  Mat edge_logits;                // d x d, diagonal ignored
  std::vector<double> score_mean;  // d
  std::vector<double> score_log_scale;  // length 1 (shared) or d (per-dim)

  std::size_t dim() const { return score_mean.size(); }
  double sigma(std::size_t i) const;
  void validate() const;  // finite entries, d >= 2
};

struct PriorityScores {
  std::vector<double> p;
};

// Complete-DAG adjacency induced by priority scores: soft tempered-sigmoid
// values plus the hard thresholded matrix.
struct TopoMatrix {
  Mat soft;       // sigmoid of pairwise score differences over temperature
  BinMat hard;    // hard_ij = 1 iff p_j > p_i (ties jittered), zero diagonal
  double temperature = 0.0;
};

// One relaxed Bernoulli edge-matrix draw (two-class Gumbel-Softmax).
struct EdgeSample {
  BinMat hard;    // argmax class per entry, zero diagonal
  Mat soft;       // tempered "present" probability, zero diagonal
  double temperature = 0.0;
};

struct AdjacencySample {
  BinMat hard;          // guaranteed acyclic
  Mat soft;             // backward-path relaxation, zero diagonal
  PriorityScores scores;  // provenance
  BinMat edges;           // provenance (the W that was drawn)
};

// Pre-drawn reparameterization noise for one DAG sample. Draw order is fixed:
// d normals, then a Gumbel pair per off-diagonal entry in row-major order.
struct DagNoise {
  std::vector<double> normal;  // d
  Mat gumbel_present;          // d x d, diagonal unused
  Mat gumbel_absent;           // d x d, diagonal unused
};
DagNoise draw_dag_noise(std::size_t d, Rng& rng);

// --- core operations (raw, no tape) ---

Mat grad_matrix(const PriorityScores& p);
TopoMatrix topological_matrix(const PriorityScores& p, double t);
PriorityScores sample_priority(const PosteriorParams& params,
                               std::span<const double> noise);
EdgeSample sample_edges(const PosteriorParams& params, double tau,
                        const Mat& gumbel_present, const Mat& gumbel_absent);
EdgeSample sample_edges(const PosteriorParams& params, double tau, Rng& rng);
AdjacencySample compose_dag(const EdgeSample& edges, const TopoMatrix& topo);
AdjacencySample sample_dag(const PosteriorParams& params, double t, double tau,
                           Rng& rng);

// Hard adjacency only, into reusable buffers: same draw order and the same
// acceptance event as sample_dag, without materializing the soft relaxation.
// Agrees with sample_dag's hard output on an identical RNG stream (the edge
// test is the exact two-Gumbel argmax, rearranged to skip the sigmoid).
// Pass params_changed = false to reuse the cached exp(-phi) table.
struct HardDagWorkspace {
  std::vector<double> scores;
  std::vector<double> jittered;
  std::vector<double> edge_accept;  // exp(-phi), refreshed when params change
  BinMat adj;
};
const BinMat& sample_dag_hard(const PosteriorParams& params, double t, double tau,
                              Rng& rng, HardDagWorkspace& ws,
                              bool params_changed = true);

// Inverse construction: a priority vector from any topological order of A,
// with W = A; composing back at small t reproduces A exactly.
std::pair<BinMat, PriorityScores> construct_from_dag(const BinMat& a);

// True iff iterative removal of zero-in-degree nodes consumes all nodes.
bool is_acyclic(const BinMat& a);

// --- differentiable path (tape ops) ---

// Tape-side DAG sample for training. Forward emits the hard binary adjacency
// through a straight-through node when hard_forward is set; gradients always
// follow the soft relaxation. Hard/soft values match the raw path bit for bit
// given the same noise.
struct TapeSample {
  Tensor adj;       // use in downstream ops (binary forward if hard_forward)
  Tensor soft_adj;  // pure soft relaxation, zero diagonal
  BinMat hard;      // the binary adjacency that was emitted
  BinMat edges;     // hard W provenance
  std::vector<double> scores;  // p values
};
TapeSample sample_dag_on_tape(Tape& tape, const Tensor& phi, const Tensor& mu,
                              const Tensor& log_scale, double t, double tau,
                              const DagNoise& noise, bool hard_forward);

// --- permutation-matrix baselines for the runtime comparison ---

struct PermutationSample {
  Mat relaxed;                    // soft permutation-like matrix
  std::vector<std::size_t> perm;  // perm[i] = column assigned to row i
  BinMat dag;                     // Pi^T U Pi with strictly-upper all-ones U
};

// Gumbel-Sinkhorn with a fixed iteration count; hardening is greedy
// row-argmax with used-column exclusion (not the Hungarian algorithm).
PermutationSample baseline_sinkhorn_sample(const Mat& logits, int iterations,
                                           double tau, Rng& rng);

// Gumbel-Top-k with a soft-sort relaxation; hardened by argsort.
PermutationSample baseline_topk_sample(std::span<const double> scores, double tau,
                                       Rng& rng);

// --- benchmark ---

struct BenchRow {
  std::string sampler;
  std::size_t d = 0;
  int rep = 0;
  double seconds = 0.0;
};

struct BenchStat {
  std::string sampler;
  std::size_t d = 0;
  double median = 0.0;
  double iqr = 0.0;
};

struct BenchResult {
  std::vector<BenchRow> rows;
  std::vector<BenchStat> stats;
  // Least-squares slope of log(median seconds) vs log(d), per sampler with
  // at least two measured dimensions.
  std::vector<std::pair<std::string, double>> slopes;
  std::string note;  // hardening caveat, printed with every summary
};

inline constexpr const char* kSamplerNames[] = {"proposed", "sinkhorn", "topk"};

// Median wall-clock of one full sample per (sampler, d). `samplers` filters by
// name; empty means all three. Runs single-threaded.
BenchResult bench_sampling(std::span<const std::size_t> dims, int reps,
                           std::span<const std::string> samplers,
                           std::uint64_t seed);

double median_of(std::vector<double> v);

}  // namespace dagvi::sampler
