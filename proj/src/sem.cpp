#include "dagvi/sem.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "dagvi/io.hpp"
#include "dagvi/sampler.hpp"

namespace dagvi::sem {

using nlohmann::ordered_json;

std::string to_string(GraphFamily f) { return f == GraphFamily::Er ? "er" : "sf"; }

std::string to_string(MechanismKind k) {
  return k == MechanismKind::Linear ? "linear" : "gp";
}

GraphFamily graph_family_from_string(const std::string& s) {
  if (s == "er") return GraphFamily::Er;
  if (s == "sf") return GraphFamily::Sf;
  throw std::invalid_argument("unknown graph family '" + s + "' (expected er or sf)");
}

MechanismKind mechanism_from_string(const std::string& s) {
  if (s == "linear") return MechanismKind::Linear;
  if (s == "gp") return MechanismKind::GpNonlinear;
  throw std::invalid_argument("unknown mechanism '" + s + "' (expected linear or gp)");
}

Mat Dataset::rows(const std::vector<std::size_t>& idx) const {
  Mat out(idx.size(), x.cols);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) = x(idx[i], j);
  return out;
}

GroundTruthGraph gen_er_dag(std::size_t d, double expected_edges, Rng& rng) {
  if (d < 2) throw std::invalid_argument("gen_er_dag: d must be >= 2");
  double max_edges = static_cast<double>(d) * static_cast<double>(d - 1) / 2.0;
  if (expected_edges < 0.0 || expected_edges > max_edges)
    throw std::invalid_argument("gen_er_dag: expected_edges must be in [0, d(d-1)/2]");
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  double q = expected_edges / max_edges;
  GroundTruthGraph g;
  g.family = GraphFamily::Er;
  g.adjacency = BinMat(d, d);
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a + 1; b < d; ++b)
      if (rng.uniform() < q) g.adjacency(order[a], order[b]) = 1;
  return g;
}

GroundTruthGraph gen_sf_dag(std::size_t d, std::size_t attachment, Rng& rng) {
  if (d < 2) throw std::invalid_argument("gen_sf_dag: d must be >= 2");
  if (attachment < 1) throw std::invalid_argument("gen_sf_dag: attachment must be >= 1");
  GroundTruthGraph g;
  g.family = GraphFamily::Sf;
  g.adjacency = BinMat(d, d);
  std::vector<double> degree(d, 0.0);
  for (std::size_t k = 1; k < d; ++k) {
    std::size_t m = std::min(attachment, k);
    std::vector<double> w(k);
    for (std::size_t j = 0; j < k; ++j) w[j] = degree[j] + 1.0;
    for (std::size_t pick = 0; pick < m; ++pick) {
      double total = std::accumulate(w.begin(), w.end(), 0.0);
      double r = rng.uniform() * total;
      std::size_t j = 0;
      for (; j + 1 < k; ++j) {
        if (r < w[j]) break;
        r -= w[j];
      }
      while (w[j] == 0.0 && j > 0) --j;  // guard against float edge at the boundary
      g.adjacency(j, k) = 1;
      w[j] = 0.0;  // without replacement
      degree[j] += 1.0;
      degree[k] += 1.0;
    }
  }
  return g;
}

Mechanism gen_linear_mechanism(const GroundTruthGraph& graph, Rng& rng) {
  if (!sampler::is_acyclic(graph.adjacency))
    throw std::invalid_argument("gen_linear_mechanism: graph has a cycle");
  std::size_t d = graph.adjacency.rows;
  Mechanism m;
  m.kind = MechanismKind::Linear;
  m.linear_weights = Mat(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (graph.adjacency(i, j)) {
        double mag = rng.uniform(0.5, 2.0);
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        m.linear_weights(i, j) = sign * mag;
      }
  return m;
}

namespace {

std::vector<std::size_t> topo_order(const BinMat& a) {
  auto [w, p] = sampler::construct_from_dag(a);
  std::vector<std::size_t> order(a.rows);
  for (std::size_t v = 0; v < a.rows; ++v)
    order[static_cast<std::size_t>(p.p[v])] = v;
  return order;
}

}  // namespace

Mat simulate_linear(const GroundTruthGraph& graph, const Mechanism& mech, std::size_t n,
                    Rng& rng) {
  std::size_t d = graph.adjacency.rows;
  if (mech.linear_weights.rows != d || mech.linear_weights.cols != d)
    throw std::invalid_argument("simulate_linear: weight matrix does not match graph");
  std::vector<std::size_t> order = topo_order(graph.adjacency);
  Mat x(n, d);
  double sd = std::sqrt(mech.noise_variance);
  for (std::size_t i : order) {
    std::vector<std::size_t> parents;
    for (std::size_t j = 0; j < d; ++j)
      if (graph.adjacency(j, i)) parents.push_back(j);
    for (std::size_t r = 0; r < n; ++r) {
      double v = 0.0;
      for (std::size_t j : parents) v += mech.linear_weights(j, i) * x(r, j);
      x(r, i) = v + sd * rng.normal();
    }
  }
  return x;
}

std::vector<double> gp_function_draw(const Mat& inputs, Rng& rng) {
  std::size_t n = inputs.rows;
  Eigen::MatrixXd kernel(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t a = 0; a < n; ++a) {
    kernel(a, a) = 1.0;
    for (std::size_t b = a + 1; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < inputs.cols; ++j) {
        double diff = inputs(a, j) - inputs(b, j);
        sq += diff * diff;
      }
      double k = std::exp(-0.5 * sq);
      kernel(a, b) = k;
      kernel(b, a) = k;
    }
  }
  std::vector<double> z(n);
  for (auto& v : z) v = rng.normal();
  Eigen::LLT<Eigen::MatrixXd> llt;
  bool ok = false;
  for (double jitter = 1e-6; jitter <= 1e-3 * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd shifted = kernel;
    shifted.diagonal().array() += jitter;
    llt.compute(shifted);
    if (llt.info() == Eigen::Success) {
      ok = true;
      break;
    }
  }
  if (!ok)
    throw std::runtime_error("gp_function_draw: kernel factorization failed (" +
                             std::to_string(inputs.cols) + " inputs, n=" + std::to_string(n) +
                             ") even with jitter up to 1e-3");
  Eigen::VectorXd f =
      llt.matrixL() * Eigen::Map<const Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(n));
  std::vector<double> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = f(static_cast<Eigen::Index>(r));
  return out;
}

Mat simulate_gp(const GroundTruthGraph& graph, std::size_t n, Rng& rng) {
  std::size_t d = graph.adjacency.rows;
  std::vector<std::size_t> order = topo_order(graph.adjacency);
  Mat x(n, d);
  for (std::size_t i : order) {
    std::vector<std::size_t> parents;
    for (std::size_t j = 0; j < d; ++j)
      if (graph.adjacency(j, i)) parents.push_back(j);
    if (parents.empty()) {
      for (std::size_t r = 0; r < n; ++r) x(r, i) = rng.normal();
      continue;
    }
    Mat pa(n, parents.size());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < parents.size(); ++k) pa(r, k) = x(r, parents[k]);
    std::vector<double> f = gp_function_draw(pa, rng);
    for (std::size_t r = 0; r < n; ++r) x(r, i) = f[r] + rng.normal();
  }
  return x;
}

Dataset generate_dataset(const GenSpec& spec) {
  Rng root(spec.seed);
  Rng graph_rng = root.fork(1);
  Rng mech_rng = root.fork(2);
  Rng data_rng = root.fork(3);

  GroundTruthGraph graph = spec.family == GraphFamily::Er
                               ? gen_er_dag(spec.d, spec.expected_edges, graph_rng)
                               : gen_sf_dag(spec.d, spec.attachment, graph_rng);
  graph.seed = spec.seed;

  Dataset ds;
  std::size_t total = spec.n + spec.n_test;
  if (spec.mechanism == MechanismKind::Linear) {
    Mechanism mech = gen_linear_mechanism(graph, mech_rng);
    ds.x = simulate_linear(graph, mech, total, data_rng);
  } else {
    ds.x = simulate_gp(graph, total, data_rng);
  }
  std::size_t n_train = spec.n * 8 / 10;
  for (std::size_t i = 0; i < n_train; ++i) ds.splits.train.push_back(i);
  for (std::size_t i = n_train; i < spec.n; ++i) ds.splits.val.push_back(i);
  for (std::size_t i = spec.n; i < total; ++i) ds.splits.test.push_back(i);
  ds.truth = graph.adjacency;
  ds.meta.seed = spec.seed;
  ds.meta.d = spec.d;
  ds.meta.n = spec.n;
  ds.meta.graph_family = to_string(spec.family);
  ds.meta.expected_edges = spec.family == GraphFamily::Er
                               ? spec.expected_edges
                               : static_cast<double>(spec.attachment * (spec.d - 1));
  ds.meta.mechanism = to_string(spec.mechanism);
  ds.meta.noise_variance = 1.0;
  return ds;
}

namespace {

std::vector<std::string> column_names(std::size_t d) {
  std::vector<std::string> h(d);
  for (std::size_t j = 0; j < d; ++j) h[j] = "x" + std::to_string(j);
  return h;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto header = column_names(ds.x.cols);
  io::write_csv(dir / "X_train.csv", header, ds.train());
  io::write_csv(dir / "X_val.csv", header, ds.val());
  io::write_csv(dir / "X_test.csv", header, ds.test());
  if (ds.truth) io::write_adjacency(dir / "adjacency.csv", *ds.truth);
  ordered_json meta;
  meta["seed"] = ds.meta.seed;
  meta["d"] = ds.meta.d;
  meta["n"] = ds.meta.n;
  meta["graph_family"] = ds.meta.graph_family;
  meta["expected_edges"] = ds.meta.expected_edges;
  meta["mechanism"] = ds.meta.mechanism;
  meta["noise_variance"] = ds.meta.noise_variance;
  io::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  io::Csv train = io::read_csv(dir / "X_train.csv");
  io::Csv val = io::read_csv(dir / "X_val.csv");
  io::Csv test = io::read_csv(dir / "X_test.csv");
  std::size_t d = train.values.cols;
  auto expect_header = column_names(d);
  for (const auto* part : {&train, &val, &test}) {
    if (part->values.rows > 0 && part->values.cols != d)
      throw std::runtime_error(dir.string() + ": split files disagree on column count");
    if (!part->header.empty() && part->header != expect_header &&
        part->header.size() != d)
      throw std::runtime_error(dir.string() + ": unexpected CSV header");
  }
  Dataset ds;
  std::size_t total = train.values.rows + val.values.rows + test.values.rows;
  ds.x = Mat(total, d);
  std::size_t row = 0;
  for (const auto* part : {&train, &val, &test})
    for (std::size_t i = 0; i < part->values.rows; ++i, ++row)
      for (std::size_t j = 0; j < d; ++j) ds.x(row, j) = part->values(i, j);
  for (std::size_t i = 0; i < train.values.rows; ++i) ds.splits.train.push_back(i);
  for (std::size_t i = 0; i < val.values.rows; ++i)
    ds.splits.val.push_back(train.values.rows + i);
  for (std::size_t i = 0; i < test.values.rows; ++i)
    ds.splits.test.push_back(train.values.rows + val.values.rows + i);

  if (std::filesystem::exists(dir / "adjacency.csv")) {
    BinMat a = io::read_adjacency(dir / "adjacency.csv");
    if (a.rows != d)
      throw std::runtime_error(dir.string() + ": adjacency is " + std::to_string(a.rows) +
                               "x" + std::to_string(a.cols) + " but data has " +
                               std::to_string(d) + " columns");
    ds.truth = std::move(a);
  }

  auto meta_path = dir / "meta.json";
  if (std::filesystem::exists(meta_path)) {
    auto j = ordered_json::parse(io::read_text(meta_path));
    ds.meta.seed = j.value("seed", std::uint64_t{0});
    ds.meta.d = j.value("d", d);
    ds.meta.n = j.value("n", train.values.rows + val.values.rows);
    ds.meta.graph_family = j.value("graph_family", std::string("unknown"));
    ds.meta.expected_edges = j.value("expected_edges", 0.0);
    ds.meta.mechanism = j.value("mechanism", std::string("unknown"));
    ds.meta.noise_variance = j.value("noise_variance", 1.0);
  } else {
    ds.meta.d = d;
    ds.meta.n = train.values.rows + val.values.rows;
  }
  return ds;
}

Dataset load_sachs(const std::filesystem::path& data_csv,
                   const std::filesystem::path& edges_csv) {
  io::Csv data = io::read_csv(data_csv);
  if (data.values.rows != 853 || data.values.cols != 11)
    throw std::runtime_error(data_csv.string() + ": expected 853x11 observational data, got " +
                             std::to_string(data.values.rows) + "x" +
                             std::to_string(data.values.cols));
  std::size_t n = data.values.rows, d = data.values.cols;

  // Standardize columns to zero mean, unit (population) variance.
  Mat x = data.values;
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x(i, j);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double c = x(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n);
    double sd = std::sqrt(var);
    if (sd == 0.0)
      throw std::runtime_error(data_csv.string() + ": column " + std::to_string(j) +
                               " is constant, cannot standardize");
    for (std::size_t i = 0; i < n; ++i) x(i, j) = (x(i, j) - mean) / sd;
  }

  // Resolve edge endpoints against the (lowercased) header or as indices.
  auto lower = [](std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  };
  std::vector<std::string> names;
  for (const auto& h : data.header) names.push_back(lower(h));
  auto resolve = [&](const std::string& tok) -> std::size_t {
    std::string t = lower(tok);
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == t) return j;
    try {
      std::size_t idx = std::stoul(t);
      if (idx < d) return idx;
    } catch (...) {
    }
    throw std::runtime_error(edges_csv.string() + ": unknown node '" + tok + "'");
  };

  BinMat truth(d, d);
  std::string text = io::read_text(edges_csv);
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error(edges_csv.string() + ": malformed line '" + line + "'");
    std::string a = line.substr(0, comma), b = line.substr(comma + 1);
    if (first && (lower(a) == "src" || lower(a) == "source")) {
      first = false;
      continue;  // header row
    }
    first = false;
    truth(resolve(a), resolve(b)) = 1;
  }

  Dataset ds;
  ds.x = std::move(x);
  // Every 5th row held out for early-stopping validation; no test split.
  for (std::size_t i = 0; i < n; ++i)
    (i % 5 == 4 ? ds.splits.val : ds.splits.train).push_back(i);
  ds.truth = std::move(truth);
  ds.meta.seed = 0;
  ds.meta.d = d;
  ds.meta.n = n;
  ds.meta.graph_family = "real";
  ds.meta.expected_edges = static_cast<double>(ds.truth->count_ones());
  ds.meta.mechanism = "real";
  ds.meta.noise_variance = 1.0;
  return ds;
}

}  // namespace dagvi::sem
