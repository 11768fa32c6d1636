#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "dagvi/adam.hpp"
#include "dagvi/gradcheck.hpp"
#include "dagvi/metrics.hpp"
#include "dagvi/rng.hpp"
#include "dagvi/vi.hpp"

using namespace dagvi;
using namespace dagvi::vi;

namespace {

FunctionalModels zero_linear_models(std::size_t d) {
  FunctionalModels m;
  m.kind = MechanismKind::Linear;
  m.d = d;
  for (std::size_t i = 0; i < d; ++i) {
    m.store.emplace_back("theta" + std::to_string(i) + ".coef", Shape{d});
    m.store.emplace_back("theta" + std::to_string(i) + ".bias", Shape{1});
  }
  return m;
}

sem::Dataset make_linear_dataset(const BinMat& adjacency, const Mat& weights,
                                 std::size_t n, std::size_t n_test, std::uint64_t seed) {
  sem::GroundTruthGraph g;
  g.adjacency = adjacency;
  sem::Mechanism mech;
  mech.linear_weights = weights;
  Rng rng(seed);
  sem::Dataset ds;
  ds.x = sem::simulate_linear(g, mech, n + n_test, rng);
  std::size_t n_train = n * 8 / 10;
  for (std::size_t i = 0; i < n_train; ++i) ds.splits.train.push_back(i);
  for (std::size_t i = n_train; i < n; ++i) ds.splits.val.push_back(i);
  for (std::size_t i = n; i < n + n_test; ++i) ds.splits.test.push_back(i);
  ds.truth = adjacency;
  ds.meta.d = adjacency.rows;
  ds.meta.n = n;
  return ds;
}

}  // namespace

TEST_CASE("reconstruct: empty mask with zero models gives zeros") {
  FunctionalModels m = zero_linear_models(3);
  Mat x(4, 3, 1.7);
  BinMat empty(3, 3);
  Mat xhat = reconstruct(m, x, empty);
  for (double v : xhat.data) CHECK(v == 0.0);
}

TEST_CASE("reconstruct: chain with one coefficient") {
  FunctionalModels m = zero_linear_models(2);
  m.node_param(1, 0).value[0] = 1.5;  // child reads parent with weight 1.5
  m.node_param(1, 1).value[0] = 0.25;
  BinMat adj(2, 2);
  adj(0, 1) = 1;
  Mat x(3, 2);
  x(0, 0) = 1.0;
  x(1, 0) = -2.0;
  x(2, 0) = 0.5;
  Mat xhat = reconstruct(m, x, adj);
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(xhat(r, 1) == doctest::Approx(1.5 * x(r, 0) + 0.25));
}

TEST_CASE("reconstruct: masked-out inputs get zero gradient under the hard mask") {
  Rng rng(5);
  const std::size_t d = 3;
  FunctionalModels m = FunctionalModels::init(d, MechanismKind::Linear, 0, rng);
  Mat x(8, d);
  for (auto& v : x.data) v = rng.normal();
  // A(0,2) = 0: node 2 must not see node 0.
  std::vector<double> adj = {0, 1, 0, 0, 0, 1, 0, 0, 0};

  Tape tape;
  BoundModels bound;
  bound.kind = m.kind;
  bound.d = d;
  bound.hidden = 0;
  for (auto& p : m.store) bound.tensors.push_back(tape.param(p));
  Tensor adj_t = tape.constant({d, d}, adj);
  Tensor loss = reconstruction_loss_on_tape(tape, bound, x, adj_t);
  tape.backward(loss);
  const auto* g2 = tape.grad_of(m.node_param(2, 0));
  REQUIRE(g2 != nullptr);
  CHECK((*g2)[0] == 0.0);        // masked-out parent
  CHECK((*g2)[1] != 0.0);        // active parent
  CHECK((*g2)[2] == 0.0);        // self-input always masked
}

TEST_CASE("recon_loss: examples and independent two-loop oracle") {
  Mat x(2, 2, 1.0);
  CHECK(recon_loss(x, x) == 0.0);
  Mat y = x;
  y(0, 1) += 2.0;
  CHECK(recon_loss(x, y) == 4.0);

  Rng rng(6);
  Mat a(5, 3), b(5, 3);
  for (auto& v : a.data) v = rng.normal();
  for (auto& v : b.data) v = rng.normal();
  double oracle = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double r = a(i, j) - b(i, j);
      oracle += r * r;
    }
  CHECK(recon_loss(a, b) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("kl_edges: zero at the prior, frozen closed-form value, nonnegative") {
  double logit_rho = std::log(0.01 / 0.99);
  Mat phi(3, 3, logit_rho);
  CHECK(kl_edges(phi, 0.01) == doctest::Approx(0.0).epsilon(1e-12));

  // One off-diagonal entry at theta = 0.5, the other at the prior.
  Mat phi2(2, 2, logit_rho);
  phi2(0, 1) = 0.0;
  CHECK(kl_edges(phi2, 0.01) == doctest::Approx(1.614463080360851).epsilon(1e-12));

  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    Mat p(4, 4);
    for (auto& v : p.data) v = rng.uniform(-4.0, 4.0);
    CHECK(kl_edges(p, rng.uniform(0.01, 0.5)) >= 0.0);
  }
}

TEST_CASE("kl_edges: Monte-Carlo oracle") {
  Rng rng(8);
  Mat phi(3, 3);
  for (auto& v : phi.data) v = rng.uniform(-2.0, 2.0);
  double rho = 0.05;
  double closed = kl_edges(phi, rho);

  const int n = 200000;
  double mc = 0.0, var_acc = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      double theta = 1.0 / (1.0 + std::exp(-phi(i, j)));
      double lr1 = std::log(theta / rho);
      double lr0 = std::log((1.0 - theta) / (1.0 - rho));
      double mean_entry = 0.0;
      for (int k = 0; k < n / 10; ++k)
        mean_entry += (rng.uniform() < theta) ? lr1 : lr0;
      mean_entry /= (n / 10);
      mc += mean_entry;
      double mu = theta * lr1 + (1.0 - theta) * lr0;
      double second = theta * lr1 * lr1 + (1.0 - theta) * lr0 * lr0;
      var_acc += (second - mu * mu) / (n / 10);
    }
  CHECK(std::abs(mc - closed) < 3.0 * std::sqrt(var_acc));
}

TEST_CASE("kl_scores: zero at the prior and frozen one-dimensional value") {
  CHECK(kl_scores({0.0, 0.0}, {std::log(0.1)}, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(kl_scores({0.1}, {std::log(0.1)}, 0.1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(kl_scores({0.0}, {0.0}, 0.0), std::invalid_argument);
}

TEST_CASE("kl_scores: Monte-Carlo oracle for random parameters") {
  Rng rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> mu = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                              rng.uniform(-1.0, 1.0)};
    double ls = rng.uniform(-3.0, 0.0);
    double s = rng.uniform(0.05, 0.5);
    double closed = kl_scores(mu, {ls}, s);

    double sigma = std::exp(ls);
    const int n = 100000;
    double acc = 0.0, acc2 = 0.0;
    for (int k = 0; k < n; ++k) {
      double ratio = 0.0;
      for (double m : mu) {
        double p = m + sigma * rng.normal();
        double logq = -0.5 * std::pow((p - m) / sigma, 2) - std::log(sigma);
        double logprior = -0.5 * std::pow(p / s, 2) - std::log(s);
        ratio += logq - logprior;
      }
      acc += ratio;
      acc2 += ratio * ratio;
    }
    double mean = acc / n;
    double se = std::sqrt((acc2 / n - mean * mean) / n);
    CHECK(std::abs(mean - closed) < 3.0 * se + 1e-9);
  }
}

TEST_CASE("tape KL terms agree with the closed forms") {
  Rng rng(10);
  const std::size_t d = 5;
  Parameter phi("phi", {d, d});
  for (auto& v : phi.value) v = rng.uniform(-3.0, 3.0);
  Parameter mu("mu", {d});
  for (auto& v : mu.value) v = rng.normal();
  Parameter ls("log_scale", {1}, std::log(0.23));

  Tape tape;
  Tensor klw = kl_edges_on_tape(tape, tape.param(phi), 0.01);
  Tensor klp = kl_scores_on_tape(tape, tape.param(mu), tape.param(ls), 0.1, d);
  Mat phim(d, d);
  phim.data = phi.value;
  CHECK(klw.scalar() == doctest::Approx(kl_edges(phim, 0.01)).epsilon(1e-12));
  CHECK(klp.scalar() ==
        doctest::Approx(kl_scores(mu.value, ls.value, 0.1)).epsilon(1e-12));
}

TEST_CASE("elbo: perfect reconstruction at the prior gives zero") {
  const std::size_t d = 3;
  VariationalParams vp;
  vp.phi = Parameter("phi", {d, d}, std::log(0.01 / 0.99));
  vp.mu = Parameter("mu", {d}, 0.0);
  vp.log_scale = Parameter("log_scale", {1}, std::log(0.1));
  FunctionalModels models = zero_linear_models(d);

  Mat x(6, d, 0.0);  // all-zero data reconstructed exactly by zero models
  TrainConfig cfg;
  cfg.topo_temp = 0.3;
  Rng rng(11);
  sampler::DagNoise noise = sampler::draw_dag_noise(d, rng);

  Tape tape;
  BoundParams bound = bind_all(tape, vp, models);
  ElboBuild b = build_elbo(tape, bound, x, PriorSpec{}, cfg, noise, true);
  CHECK(b.parts.recon == 0.0);
  CHECK(b.parts.kl_edges == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b.parts.kl_scores == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b.parts.elbo == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("elbo: zero KL weights reduce the loss to recon/d") {
  Rng rng(12);
  const std::size_t d = 4;
  VariationalParams vp = VariationalParams::init(d, false, rng);
  FunctionalModels models = FunctionalModels::init(d, MechanismKind::Linear, 0, rng);
  Mat x(10, d);
  for (auto& v : x.data) v = rng.normal();
  TrainConfig cfg;
  cfg.kl_edge_weight = 0.0;
  cfg.kl_score_weight = 0.0;
  sampler::DagNoise noise = sampler::draw_dag_noise(d, rng);

  Tape tape;
  BoundParams bound = bind_all(tape, vp, models);
  ElboBuild b = build_elbo(tape, bound, x, PriorSpec{}, cfg, noise, true);
  CHECK(b.loss.scalar() == doctest::Approx(b.parts.recon / d).epsilon(1e-12));
  CHECK(b.parts.elbo == doctest::Approx(-b.parts.recon / d).epsilon(1e-12));
}

TEST_CASE("elbo surrogate gradient matches finite differences (soft path)") {
  Rng rng(13);
  const std::size_t d = 4;
  for (MechanismKind kind : {MechanismKind::Linear, MechanismKind::Mlp}) {
    VariationalParams vp = VariationalParams::init(d, false, rng);
    FunctionalModels models = FunctionalModels::init(d, kind, 8, rng);
    Mat x(6, d);
    for (auto& v : x.data) v = rng.normal();
    TrainConfig cfg;
    cfg.mechanism = kind;
    cfg.hidden = 8;
    sampler::DagNoise noise = sampler::draw_dag_noise(d, rng);

    auto make_loss = [&](Tape& tape) {
      BoundParams bound = bind_all(tape, vp, models);
      return build_elbo(tape, bound, x, PriorSpec{}, cfg, noise, false).loss;
    };
    std::vector<Parameter*> params = vp.param_list();
    for (Parameter* p : models.param_list()) params.push_back(p);
    auto report = finite_difference_check(make_loss, params, 1e-5, 1e-4);
    INFO("kind " << static_cast<int>(kind) << " worst " << report.worst.param << "["
                 << report.worst.index << "]: analytic " << report.worst.analytic
                 << " numeric " << report.worst.numeric);
    CHECK(report.passed);
  }
}

TEST_CASE("fixed full-support mask with zero KL reduces to least squares") {
  // Ordinary least squares oracle via normal equations, solved by Gaussian
  // elimination, regressing each node on the other two plus an intercept.
  Rng rng(14);
  BinMat adj(3, 3);
  adj(0, 1) = 1;
  adj(1, 2) = 1;
  Mat w(3, 3);
  w(0, 1) = 1.3;
  w(1, 2) = -0.9;
  sem::Dataset ds = make_linear_dataset(adj, w, 1000, 0, 77);
  Mat x = ds.train();
  const std::size_t n = x.rows, d = 3;

  FunctionalModels models = FunctionalModels::init(d, MechanismKind::Linear, 0, rng);
  std::vector<Parameter*> params = models.param_list();
  AdamOptimizer opt({.lr = 0.05}, params);
  std::vector<double> full(d * d, 1.0);
  for (std::size_t i = 0; i < d; ++i) full[i * d + i] = 0.0;
  for (int step = 0; step < 3000; ++step) {
    Tape tape;
    BoundModels bound;
    bound.kind = MechanismKind::Linear;
    bound.d = d;
    bound.hidden = 0;
    for (auto& p : models.store) bound.tensors.push_back(tape.param(p));
    Tensor loss = reconstruction_loss_on_tape(tape, bound, x, tape.constant({d, d}, full));
    tape.backward(loss);
    opt.step(tape);
  }

  for (std::size_t node = 0; node < d; ++node) {
    // Build the 3x3 normal equations for [coef_a, coef_b, intercept].
    std::size_t a = node == 0 ? 1 : 0;
    std::size_t b = node == 2 ? 1 : 2;
    double saa = 0, sab = 0, sbb = 0, sa = 0, sb = 0, say = 0, sby = 0, sy = 0;
    for (std::size_t r = 0; r < n; ++r) {
      double xa = x(r, a), xb = x(r, b), y = x(r, node);
      saa += xa * xa;
      sab += xa * xb;
      sbb += xb * xb;
      sa += xa;
      sb += xb;
      say += xa * y;
      sby += xb * y;
      sy += y;
    }
    double m[3][4] = {{saa, sab, sa, say},
                      {sab, sbb, sb, sby},
                      {sa, sb, static_cast<double>(n), sy}};
    for (int col = 0; col < 3; ++col) {
      int piv = col;
      for (int r2 = col + 1; r2 < 3; ++r2)
        if (std::abs(m[r2][col]) > std::abs(m[piv][col])) piv = r2;
      std::swap(m[col], m[piv]);
      for (int r2 = 0; r2 < 3; ++r2) {
        if (r2 == col) continue;
        double f = m[r2][col] / m[col][col];
        for (int c2 = col; c2 < 4; ++c2) m[r2][c2] -= f * m[col][c2];
      }
    }
    double ols_a = m[0][3] / m[0][0];
    double ols_b = m[1][3] / m[1][1];
    double ols_bias = m[2][3] / m[2][2];
    const auto& coef = models.node_param(node, 0).value;
    CHECK(std::abs(coef[a] - ols_a) < 1e-2);
    CHECK(std::abs(coef[b] - ols_b) < 1e-2);
    CHECK(std::abs(models.node_param(node, 1).value[0] - ols_bias) < 1e-2);
  }
}

TEST_CASE("train: two-node edge is recovered with the right direction") {
  BinMat adj(2, 2);
  adj(0, 1) = 1;
  Mat w(2, 2);
  w(0, 1) = 1.5;
  sem::Dataset ds = make_linear_dataset(adj, w, 1000, 100, 2024);

  TrainConfig cfg;
  cfg.seed = 1;
  cfg.val_samples = 16;  // tighter early-stop estimator for this tiny graph
  TrainResult result = train(ds, cfg, PriorSpec{});

  Rng rng(55);
  metrics::ScoreMatrix s = metrics::mean_edge_probs(result.params.snapshot(), cfg.topo_temp,
                                                    cfg.gumbel_temp, 1000, rng);
  CHECK(s.s(0, 1) > 0.9);
  CHECK(s.s(1, 0) < 0.1);
}

TEST_CASE("train: empty-graph data keeps posterior edge probabilities low") {
  BinMat adj(3, 3);
  Mat w(3, 3);
  sem::Dataset ds = make_linear_dataset(adj, w, 600, 0, 31);
  TrainConfig cfg;
  cfg.seed = 2;
  cfg.max_epochs = 200;
  TrainResult result = train(ds, cfg, PriorSpec{});

  Rng rng(56);
  metrics::ScoreMatrix s = metrics::mean_edge_probs(result.params.snapshot(), cfg.topo_temp,
                                                    cfg.gumbel_temp, 200, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (i != j) CHECK(s.s(i, j) < 0.2);
}

TEST_CASE("train: identical seeds give bit-identical results") {
  BinMat adj(3, 3);
  adj(0, 1) = 1;
  Mat w(3, 3);
  w(0, 1) = 1.0;
  sem::Dataset ds = make_linear_dataset(adj, w, 200, 20, 5);
  TrainConfig cfg;
  cfg.seed = 9;
  cfg.max_epochs = 30;
  cfg.batch_size = 64;
  TrainResult a = train(ds, cfg, PriorSpec{});
  TrainResult b = train(ds, cfg, PriorSpec{});
  CHECK(a.params.phi.value == b.params.phi.value);
  CHECK(a.params.mu.value == b.params.mu.value);
  CHECK(a.params.log_scale.value == b.params.log_scale.value);
  REQUIRE(a.trajectory.size() == b.trajectory.size());
  for (std::size_t i = 0; i < a.trajectory.size(); ++i) {
    CHECK(a.trajectory[i].train_elbo == b.trajectory[i].train_elbo);
    CHECK(a.trajectory[i].recon == b.trajectory[i].recon);
  }
  for (std::size_t i = 0; i < a.models.store.size(); ++i)
    CHECK(a.models.store[i].value == b.models.store[i].value);
}

TEST_CASE("train: best-so-far validation ELBO is monotone across checks") {
  BinMat adj(3, 3);
  adj(0, 1) = 1;
  adj(1, 2) = 1;
  Mat w(3, 3);
  w(0, 1) = 1.2;
  w(1, 2) = 0.8;
  sem::Dataset ds = make_linear_dataset(adj, w, 400, 0, 8);
  TrainConfig cfg;
  cfg.seed = 3;
  cfg.max_epochs = 120;
  TrainResult result = train(ds, cfg, PriorSpec{});
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& e : result.trajectory)
    if (e.val_elbo) {
      double cur_best = std::max(best, *e.val_elbo);
      CHECK(cur_best >= best);
      best = cur_best;
    }
  CHECK(result.best_val_elbo == doctest::Approx(best));
  CHECK(result.stop_epoch <= cfg.max_epochs);
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.topo_temp = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = TrainConfig{};
  cfg.kl_edge_weight = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
