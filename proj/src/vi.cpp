#include "dagvi/vi.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "dagvi/adam.hpp"

namespace dagvi::vi {

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

std::string to_string(MechanismKind k) {
  return k == MechanismKind::Linear ? "linear" : "mlp";
}

MechanismKind mechanism_kind_from_string(const std::string& s) {
  if (s == "linear") return MechanismKind::Linear;
  if (s == "mlp") return MechanismKind::Mlp;
  throw std::invalid_argument("unknown mechanism kind '" + s + "' (expected linear or mlp)");
}

void TrainConfig::validate() const {
  if (!(topo_temp > 0.0) || !(gumbel_temp > 0.0))
    throw std::invalid_argument("TrainConfig: temperatures must be > 0");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (kl_edge_weight < 0.0 || kl_score_weight < 0.0)
    throw std::invalid_argument("TrainConfig: KL weights must be >= 0");
  if (mechanism == MechanismKind::Mlp && hidden < 1)
    throw std::invalid_argument("TrainConfig: hidden width must be >= 1 for mlp");
  if (elbo_samples < 1) throw std::invalid_argument("TrainConfig: elbo_samples must be >= 1");
}

VariationalParams VariationalParams::init(std::size_t d, bool per_dim_scale, Rng& rng,
                                          double init_edge_logit,
                                          double init_score_scale) {
  VariationalParams vp;
  vp.phi = Parameter("phi", {d, d}, init_edge_logit);
  vp.mu = Parameter("mu", {d});
  for (auto& v : vp.mu.value) v = 0.1 * rng.normal();
  vp.log_scale = Parameter("log_scale", per_dim_scale ? Shape{d} : Shape{1},
                           std::log(init_score_scale));
  return vp;
}

sampler::PosteriorParams VariationalParams::snapshot() const {
  sampler::PosteriorParams p;
  std::size_t d = mu.size();
  p.edge_logits = Mat(d, d);
  p.edge_logits.data = phi.value;
  p.score_mean = mu.value;
  p.score_log_scale = log_scale.value;
  return p;
}

std::vector<Parameter*> VariationalParams::param_list() {
  return {&phi, &mu, &log_scale};
}

FunctionalModels FunctionalModels::init(std::size_t d, MechanismKind kind,
                                        std::size_t hidden, Rng& rng) {
  FunctionalModels m;
  m.kind = kind;
  m.d = d;
  m.hidden = kind == MechanismKind::Linear ? 0 : hidden;
  double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < d; ++i) {
    std::string tag = "theta" + std::to_string(i);
    if (kind == MechanismKind::Linear) {
      Parameter coef(tag + ".coef", {d});
      for (auto& v : coef.value) v = rng.uniform(-in_scale, in_scale);
      m.store.push_back(std::move(coef));
      m.store.emplace_back(tag + ".bias", Shape{1});
    } else {
      double h_scale = 1.0 / std::sqrt(static_cast<double>(hidden));
      Parameter w1(tag + ".w1", {d, hidden});
      for (auto& v : w1.value) v = rng.uniform(-in_scale, in_scale);
      m.store.push_back(std::move(w1));
      m.store.emplace_back(tag + ".b1", Shape{hidden});
      Parameter w2(tag + ".w2", {hidden});
      for (auto& v : w2.value) v = rng.uniform(-h_scale, h_scale);
      m.store.push_back(std::move(w2));
      m.store.emplace_back(tag + ".b2", Shape{1});
    }
  }
  return m;
}

std::vector<Parameter*> FunctionalModels::param_list() {
  std::vector<Parameter*> out;
  out.reserve(store.size());
  for (auto& p : store) out.push_back(&p);
  return out;
}

Mat reconstruct(const FunctionalModels& models, const Mat& x, const BinMat& adj) {
  std::size_t n = x.rows, d = x.cols;
  if (adj.rows != d || adj.cols != d)
    throw std::invalid_argument("reconstruct: adjacency does not match data width");
  Mat xhat(n, d);
  for (std::size_t i = 0; i < d; ++i) {
    if (models.kind == MechanismKind::Linear) {
      const auto& coef = models.node_param(i, 0).value;
      double bias = models.node_param(i, 1).value[0];
      for (std::size_t r = 0; r < n; ++r) {
        double v = bias;
        for (std::size_t j = 0; j < d; ++j)
          if (adj(j, i)) v += coef[j] * x(r, j);
        xhat(r, i) = v;
      }
    } else {
      std::size_t h = models.hidden;
      const auto& w1 = models.node_param(i, 0).value;  // (d,h) row-major
      const auto& b1 = models.node_param(i, 1).value;
      const auto& w2 = models.node_param(i, 2).value;
      double b2 = models.node_param(i, 3).value[0];
      std::vector<double> hid(h);
      for (std::size_t r = 0; r < n; ++r) {
        std::fill(hid.begin(), hid.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
          if (!adj(j, i)) continue;
          double xj = x(r, j);
          const double* w1row = w1.data() + j * h;
          for (std::size_t k = 0; k < h; ++k) hid[k] += xj * w1row[k];
        }
        double v = b2;
        for (std::size_t k = 0; k < h; ++k) {
          double a = hid[k] + b1[k];
          if (a > 0.0) v += w2[k] * a;
        }
        xhat(r, i) = v;
      }
    }
  }
  return xhat;
}

double recon_loss(const Mat& x, const Mat& xhat) {
  if (x.rows != xhat.rows || x.cols != xhat.cols)
    throw std::invalid_argument("recon_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    double r = x.data[i] - xhat.data[i];
    s += r * r;
  }
  return s;
}

double kl_edges(const Mat& edge_logits, double prior_prob) {
  std::size_t d = edge_logits.rows;
  double log_rho = std::log(prior_prob);
  double log_1m_rho = std::log1p(-prior_prob);
  double total = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (i == j) continue;
      double phi = edge_logits(i, j);
      double theta = stable_sigmoid(phi);
      total += (theta * phi - stable_softplus(phi)) -
               (theta * log_rho + (1.0 - theta) * log_1m_rho);
    }
  return total;
}

double kl_scores(const std::vector<double>& mu, const std::vector<double>& log_scale,
                 double prior_scale) {
  if (!(prior_scale > 0.0)) throw std::invalid_argument("kl_scores: prior scale must be > 0");
  double log_s = std::log(prior_scale);
  double inv_2s2 = 1.0 / (2.0 * prior_scale * prior_scale);
  double total = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    double ls = log_scale.size() == 1 ? log_scale[0] : log_scale[i];
    double sig2 = std::exp(2.0 * ls);
    total += (log_s - ls) + (sig2 + mu[i] * mu[i]) * inv_2s2 - 0.5;
  }
  return total;
}

BoundParams bind_all(Tape& tape, VariationalParams& vp, FunctionalModels& models) {
  BoundParams b;
  b.phi = tape.param(vp.phi);
  b.mu = tape.param(vp.mu);
  b.log_scale = tape.param(vp.log_scale);
  b.models.kind = models.kind;
  b.models.d = models.d;
  b.models.hidden = models.hidden;
  for (auto& p : models.store) b.models.tensors.push_back(tape.param(p));
  return b;
}

Tensor reconstruction_loss_on_tape(Tape& tape, const BoundModels& models,
                                   const Mat& x_batch, const Tensor& adj) {
  std::size_t d = models.d;
  if (x_batch.cols != d)
    throw std::invalid_argument("reconstruction_loss: batch width does not match models");
  Tensor x = tape.constant({x_batch.rows, d}, x_batch.data);
  std::size_t per = models.kind == MechanismKind::Linear ? 2 : 4;
  Tensor total;
  bool first = true;
  for (std::size_t i = 0; i < d; ++i) {
    Tensor mask_col = tape.col(adj, i);
    Tensor masked = tape.mul(x, mask_col);
    Tensor pred;
    if (models.kind == MechanismKind::Linear) {
      pred = tape.add(tape.matmul(masked, models.tensors[i * per + 0]),
                      models.tensors[i * per + 1]);
    } else {
      Tensor h = tape.relu(tape.add(tape.matmul(masked, models.tensors[i * per + 0]),
                                    models.tensors[i * per + 1]));
      pred = tape.add(tape.matmul(h, models.tensors[i * per + 2]),
                      models.tensors[i * per + 3]);
    }
    Tensor resid = tape.sub(tape.col(x, i), pred);
    Tensor term = tape.sum(tape.square(resid));
    total = first ? term : tape.add(total, term);
    first = false;
  }
  return total;
}

Tensor kl_edges_on_tape(Tape& tape, const Tensor& phi, double prior_prob) {
  std::size_t d = phi.shape()[0];
  Tensor theta = tape.sigmoid(phi);
  Tensor entropyish = tape.sub(tape.mul(theta, phi), tape.softplus(phi));
  Tensor cross = tape.add(tape.scale(theta, std::log(prior_prob)),
                          tape.scale(tape.add_const(tape.scale(theta, -1.0), 1.0),
                                     std::log1p(-prior_prob)));
  std::vector<double> offdiag(d * d, 1.0);
  for (std::size_t i = 0; i < d; ++i) offdiag[i * d + i] = 0.0;
  return tape.sum(tape.mask(tape.sub(entropyish, cross), offdiag));
}

Tensor kl_scores_on_tape(Tape& tape, const Tensor& mu, const Tensor& log_scale,
                         double prior_scale, std::size_t d) {
  if (!(prior_scale > 0.0))
    throw std::invalid_argument("kl_scores_on_tape: prior scale must be > 0");
  double dd = static_cast<double>(d);
  double k = log_scale.numel() == 1 ? dd : 1.0;  // shared scale counts d times
  Tensor mu2 = tape.sum(tape.square(mu));
  Tensor sig2 = tape.sum(tape.exp(tape.scale(log_scale, 2.0)));
  Tensor quad = tape.scale(tape.add(tape.scale(sig2, k), mu2),
                           1.0 / (2.0 * prior_scale * prior_scale));
  Tensor logterm = tape.scale(tape.sum(log_scale), -k);
  return tape.add_const(tape.add(quad, logterm),
                        dd * std::log(prior_scale) - 0.5 * dd);
}

ElboBuild build_elbo(Tape& tape, const BoundParams& bound, const Mat& x_batch,
                     const PriorSpec& prior, const TrainConfig& cfg,
                     const sampler::DagNoise& noise, bool hard_forward) {
  std::size_t d = bound.models.d;
  sampler::TapeSample s =
      sampler::sample_dag_on_tape(tape, bound.phi, bound.mu, bound.log_scale,
                                  cfg.topo_temp, cfg.gumbel_temp, noise, hard_forward);
  Tensor recon = reconstruction_loss_on_tape(tape, bound.models, x_batch, s.adj);
  Tensor klw = kl_edges_on_tape(tape, bound.phi, prior.edge_prob);
  Tensor klp = kl_scores_on_tape(tape, bound.mu, bound.log_scale, prior.score_scale, d);
  Tensor penal = tape.add(tape.scale(klw, cfg.kl_edge_weight),
                          tape.scale(klp, cfg.kl_score_weight));
  Tensor loss = tape.scale(tape.add(recon, penal), 1.0 / static_cast<double>(d));

  ElboBuild out;
  out.loss = loss;
  out.hard_adj = s.hard;
  out.parts.recon = recon.scalar();
  out.parts.kl_edges = klw.scalar();
  out.parts.kl_scores = klp.scalar();
  out.parts.elbo = -loss.scalar();
  return out;
}

namespace {

ElboParts eval_elbo_raw(const VariationalParams& vp, const FunctionalModels& models,
                        const Mat& x, const PriorSpec& prior, const TrainConfig& cfg,
                        const std::vector<sampler::DagNoise>& noises) {
  sampler::PosteriorParams pp = vp.snapshot();
  std::size_t d = pp.dim();
  ElboParts acc;
  for (const auto& noise : noises) {
    sampler::PriorityScores p = sampler::sample_priority(pp, noise.normal);
    sampler::EdgeSample w =
        sampler::sample_edges(pp, cfg.gumbel_temp, noise.gumbel_present, noise.gumbel_absent);
    sampler::TopoMatrix topo = sampler::topological_matrix(p, cfg.topo_temp);
    sampler::AdjacencySample a = sampler::compose_dag(w, topo);
    Mat xhat = reconstruct(models, x, a.hard);
    acc.recon += recon_loss(x, xhat);
  }
  double m = static_cast<double>(noises.size());
  acc.recon /= m;
  acc.kl_edges = kl_edges(pp.edge_logits, prior.edge_prob);
  acc.kl_scores = kl_scores(pp.score_mean, pp.score_log_scale, prior.score_scale);
  acc.elbo = -(acc.recon + cfg.kl_edge_weight * acc.kl_edges +
               cfg.kl_score_weight * acc.kl_scores) /
             static_cast<double>(d);
  return acc;
}

}  // namespace

TrainResult train(const sem::Dataset& dataset, const TrainConfig& cfg,
                  const PriorSpec& prior) {
  cfg.validate();
  if (dataset.splits.train.empty())
    throw std::invalid_argument("train: dataset has no training split");
  auto t0 = std::chrono::steady_clock::now();

  std::size_t d = dataset.x.cols;
  Mat x_train = dataset.train();
  Mat x_val = dataset.val();

  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  Rng noise_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  Rng val_rng = root.fork(3);

  VariationalParams vp = VariationalParams::init(d, cfg.per_dim_scale, init_rng,
                                                 cfg.init_edge_logit, cfg.init_score_scale);
  FunctionalModels models = FunctionalModels::init(d, cfg.mechanism, cfg.hidden, init_rng);

  std::vector<Parameter*> all_params = vp.param_list();
  for (Parameter* p : models.param_list()) all_params.push_back(p);
  AdamOptimizer opt({.lr = cfg.lr, .weight_decay = cfg.weight_decay}, all_params);

  // Fixed validation noise: common random numbers across checks.
  std::vector<sampler::DagNoise> val_noise;
  if (!dataset.splits.val.empty())
    for (std::size_t m = 0; m < cfg.val_samples; ++m)
      val_noise.push_back(sampler::draw_dag_noise(d, val_rng));

  TrainResult result;
  double best_val = -std::numeric_limits<double>::infinity();
  VariationalParams best_vp = vp;
  FunctionalModels best_models = models;
  std::size_t bad_checks = 0;
  std::size_t epoch = 0;

  std::vector<std::size_t> idx(x_train.rows);
  std::iota(idx.begin(), idx.end(), 0);

  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(idx);
    ElboParts epoch_acc;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
      std::size_t stop = std::min(idx.size(), start + cfg.batch_size);
      Mat xb(stop - start, d);
      for (std::size_t r = start; r < stop; ++r)
        for (std::size_t j = 0; j < d; ++j) xb(r - start, j) = x_train(idx[r], j);

      Tape tape;
      BoundParams bound = bind_all(tape, vp, models);
      Tensor loss;
      ElboParts parts;
      for (std::size_t m = 0; m < cfg.elbo_samples; ++m) {
        sampler::DagNoise noise = sampler::draw_dag_noise(d, noise_rng);
        ElboBuild b = build_elbo(tape, bound, xb, prior, cfg, noise, true);
        assert(sampler::is_acyclic(b.hard_adj));
        loss = m == 0 ? b.loss : tape.add(loss, b.loss);
        parts.elbo += b.parts.elbo;
        parts.recon += b.parts.recon;
        parts.kl_edges += b.parts.kl_edges;
        parts.kl_scores += b.parts.kl_scores;
      }
      if (cfg.elbo_samples > 1)
        loss = tape.scale(loss, 1.0 / static_cast<double>(cfg.elbo_samples));
      tape.backward(loss);
      opt.step(tape);

      double ms = static_cast<double>(cfg.elbo_samples);
      epoch_acc.elbo += parts.elbo / ms;
      epoch_acc.recon += parts.recon / ms;
      epoch_acc.kl_edges += parts.kl_edges / ms;
      epoch_acc.kl_scores += parts.kl_scores / ms;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    double nb = static_cast<double>(batches);
    stats.train_elbo = epoch_acc.elbo / nb;
    stats.recon = epoch_acc.recon / nb;
    stats.kl_edges = epoch_acc.kl_edges / nb;
    stats.kl_scores = epoch_acc.kl_scores / nb;

    bool checked = !val_noise.empty() && epoch % cfg.val_check_period == 0;
    if (checked) {
      ElboParts v = eval_elbo_raw(vp, models, x_val, prior, cfg, val_noise);
      stats.val_elbo = v.elbo;
      if (!std::isfinite(v.elbo)) {
        result.trajectory.push_back(stats);
        throw TrainDivergence("train: validation ELBO diverged (non-finite) at epoch " +
                                  std::to_string(epoch),
                              result.trajectory);
      }
      if (v.elbo > best_val) {
        best_val = v.elbo;
        best_vp = vp;
        best_models = models;
        bad_checks = 0;
      } else {
        ++bad_checks;
      }
    }
    result.trajectory.push_back(stats);
    if (checked && bad_checks >= cfg.patience) break;
    if (cfg.time_budget_seconds > 0.0) {
      double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (elapsed > cfg.time_budget_seconds) {
        result.hit_time_budget = true;
        break;
      }
    }
  }

  result.stop_epoch = std::min(epoch, cfg.max_epochs);
  if (std::isfinite(best_val)) {
    result.params = best_vp;
    result.models = best_models;
    result.best_val_elbo = best_val;
  } else {
    result.params = vp;
    result.models = models;
    result.best_val_elbo = std::numeric_limits<double>::quiet_NaN();
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace dagvi::vi
