#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dagvi/matrix.hpp"
#include "dagvi/rng.hpp"

namespace dagvi::sem {

enum class GraphFamily { Er, Sf };
enum class MechanismKind { Linear, GpNonlinear };

std::string to_string(GraphFamily f);
std::string to_string(MechanismKind k);
GraphFamily graph_family_from_string(const std::string& s);
MechanismKind mechanism_from_string(const std::string& s);

struct GroundTruthGraph {
  BinMat adjacency;  // acyclic, zero diagonal
  GraphFamily family = GraphFamily::Er;
  std::uint64_t seed = 0;
};

struct Mechanism {
  MechanismKind kind = MechanismKind::Linear;
  Mat linear_weights;  // supported on the adjacency; unused for GP
  double noise_variance = 1.0;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

struct DatasetMeta {
  std::uint64_t seed = 0;
  std::size_t d = 0;
  std::size_t n = 0;  // training-pool rows (train + validation)
  std::string graph_family;
  double expected_edges = 0.0;
  std::string mechanism;
  double noise_variance = 1.0;
};

struct Dataset {
  Mat x;  // all rows: train, then validation, then test
  SplitIndices splits;
  std::optional<BinMat> truth;
  DatasetMeta meta;

  Mat rows(const std::vector<std::size_t>& idx) const;
  Mat train() const { return rows(splits.train); }
  Mat val() const { return rows(splits.val); }
  Mat test() const { return rows(splits.test); }
};

// Erdos-Renyi DAG: uniform random ordering, each order-respecting pair kept
// independently with probability expected_edges / (d(d-1)/2).
GroundTruthGraph gen_er_dag(std::size_t d, double expected_edges, Rng& rng);

// Scale-free DAG: preferential attachment with probability proportional to
// degree + 1, edges oriented from earlier to later node.
GroundTruthGraph gen_sf_dag(std::size_t d, std::size_t attachment, Rng& rng);

// Edge weights uniform on [-2,-0.5] u [0.5,2]; non-edges zero.
Mechanism gen_linear_mechanism(const GroundTruthGraph& graph, Rng& rng);

// X_i = sum_{j in pa(i)} w_ji X_j + eps_i, nodes in topological order.
Mat simulate_linear(const GroundTruthGraph& graph, const Mechanism& mech, std::size_t n,
                    Rng& rng);

// One GP function draw over the given input rows: f ~ N(0, K) with
// K_ab = exp(-|x_a - x_b|^2 / 2) plus escalating diagonal jitter.
std::vector<double> gp_function_draw(const Mat& inputs, Rng& rng);

// X_i = f_i(parents) + eps_i with f_i one draw from a GP with unit-lengthscale
// RBF kernel over the realized parent rows.
Mat simulate_gp(const GroundTruthGraph& graph, std::size_t n, Rng& rng);

struct GenSpec {
  GraphFamily family = GraphFamily::Er;
  MechanismKind mechanism = MechanismKind::Linear;
  std::size_t d = 10;
  double expected_edges = 10.0;  // ER; ignored for SF
  std::size_t attachment = 1;    // SF; ignored for ER
  std::size_t n = 1000;          // training pool, split 80/20 into train/val
  std::size_t n_test = 100;
  std::uint64_t seed = 0;
};

// Full generation protocol: one graph, one mechanism, n + n_test rows drawn
// jointly (one GP function draw covers every row), contiguous splits.
Dataset generate_dataset(const GenSpec& spec);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// Sachs protein-signaling data: 853 x 11 observation CSV plus a consensus
// edge list ("src,dst" per line, names or 0-based indices). Columns are
// standardized to zero mean, unit variance; all rows land in the train split
// except a held-out tail used as validation for early stopping.
Dataset load_sachs(const std::filesystem::path& data_csv,
                   const std::filesystem::path& edges_csv);

}  // namespace dagvi::sem
