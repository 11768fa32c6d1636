#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "dagvi/matrix.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/sampler.hpp"
#include "dagvi/sem.hpp"
#include "dagvi/tensor.hpp"

namespace dagvi::vi {

enum class MechanismKind { Linear, Mlp };

std::string to_string(MechanismKind k);
MechanismKind mechanism_kind_from_string(const std::string& s);

struct PriorSpec {
  double edge_prob = 0.01;   // prior Bernoulli probability per edge
  double score_scale = 0.1;  // prior over scores is N(0, score_scale^2 I)
};

struct TrainConfig {
  double lr = 1e-2;
  double topo_temp = 0.3;
  double gumbel_temp = 1.0;
  double kl_edge_weight = 1.0;
  double kl_score_weight = 1.0;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 500;
  std::size_t val_check_period = 10;
  std::size_t patience = 5;
  std::size_t val_samples = 8;
  std::size_t elbo_samples = 1;  // posterior samples per batch step
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  MechanismKind mechanism = MechanismKind::Linear;
  std::size_t hidden = 32;
  bool per_dim_scale = false;
  double time_budget_seconds = 0.0;  // 0 = unlimited
  double init_edge_logit = -1.0;     // starting phi
  // A wide starting scale keeps the node ordering exploratory early on; the
  // score KL anneals it toward the prior scale over training.
  double init_score_scale = 1.0;

  void validate() const;
};

// Variational parameters as trainable Parameter objects.
struct VariationalParams {
  Parameter phi;        // (d,d) edge logits, diagonal inert
  Parameter mu;         // (d) score mean
  Parameter log_scale;  // (1) shared or (d) per-dimension log sigma

  static VariationalParams init(std::size_t d, bool per_dim_scale, Rng& rng,
                                double init_edge_logit = -1.0,
                                double init_score_scale = 1.0);
  sampler::PosteriorParams snapshot() const;
  std::vector<Parameter*> param_list();
};

// Per-node mechanism parameters. Linear: coef (d) + bias (1) per node.
// Mlp: w1 (d,h) + b1 (h) + w2 (h) + b2 (1) per node, ReLU hidden layer.
struct FunctionalModels {
  MechanismKind kind = MechanismKind::Linear;
  std::size_t d = 0;
  std::size_t hidden = 0;
  std::vector<Parameter> store;

  static FunctionalModels init(std::size_t d, MechanismKind kind, std::size_t hidden,
                               Rng& rng);
  std::vector<Parameter*> param_list();
  std::size_t per_node() const { return kind == MechanismKind::Linear ? 2 : 4; }
  const Parameter& node_param(std::size_t node, std::size_t slot) const {
    return store[node * per_node() + slot];
  }
  Parameter& node_param(std::size_t node, std::size_t slot) {
    return store[node * per_node() + slot];
  }
};

// Raw (tape-free) reconstruction: Xhat_i = f_i(col_i(adj) masked X).
Mat reconstruct(const FunctionalModels& models, const Mat& x, const BinMat& adj);

// Sum of squared residuals over the batch.
double recon_loss(const Mat& x, const Mat& xhat);

// Closed-form KL terms (off-diagonal Bernoulli sum; Gaussian sum over dims).
double kl_edges(const Mat& edge_logits, double prior_prob);
double kl_scores(const std::vector<double>& mu, const std::vector<double>& log_scale,
                 double prior_scale);

// --- tape-side ELBO assembly ---

struct BoundModels {
  MechanismKind kind;
  std::size_t d = 0, hidden = 0;
  std::vector<Tensor> tensors;  // aligned with FunctionalModels::store
};

struct BoundParams {
  Tensor phi, mu, log_scale;
  BoundModels models;
};

BoundParams bind_all(Tape& tape, VariationalParams& vp, FunctionalModels& models);

Tensor reconstruction_loss_on_tape(Tape& tape, const BoundModels& models, const Mat& x_batch,
                                   const Tensor& adj);
Tensor kl_edges_on_tape(Tape& tape, const Tensor& phi, double prior_prob);
Tensor kl_scores_on_tape(Tape& tape, const Tensor& mu, const Tensor& log_scale,
                         double prior_scale, std::size_t d);

struct ElboParts {
  double elbo = 0.0;
  double recon = 0.0;      // sum of squared residuals
  double kl_edges = 0.0;
  double kl_scores = 0.0;
};

struct ElboBuild {
  Tensor loss;      // scalar to minimize: -(ELBO)
  ElboParts parts;  // forward values of the components
  BinMat hard_adj;  // the binary DAG emitted in the forward pass
};

// One-sample ELBO: loss = [recon + l1*KL_W + l2*KL_p] / d. With hard_forward
// the adjacency goes through the straight-through estimator; otherwise the
// pure soft relaxation is used (the surrogate the gradient checks probe).
ElboBuild build_elbo(Tape& tape, const BoundParams& bound, const Mat& x_batch,
                     const PriorSpec& prior, const TrainConfig& cfg,
                     const sampler::DagNoise& noise, bool hard_forward);

// --- training ---

struct EpochStats {
  std::size_t epoch = 0;
  double train_elbo = 0.0;
  double recon = 0.0;
  double kl_edges = 0.0;
  double kl_scores = 0.0;
  std::optional<double> val_elbo;
};

struct TrainResult {
  VariationalParams params;  // best-validation snapshot
  FunctionalModels models;
  std::vector<EpochStats> trajectory;
  std::size_t stop_epoch = 0;
  double best_val_elbo = 0.0;
  double wall_seconds = 0.0;
  bool hit_time_budget = false;
};

struct TrainDivergence : std::runtime_error {
  explicit TrainDivergence(const std::string& what, std::vector<EpochStats> traj)
      : std::runtime_error(what), trajectory(std::move(traj)) {}
  std::vector<EpochStats> trajectory;
};

TrainResult train(const sem::Dataset& dataset, const TrainConfig& cfg,
                  const PriorSpec& prior);

}  // namespace dagvi::vi
