#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dagvi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// A named parameter living outside any tape. The trainer owns Parameters
// across iterations; each tape run binds them as gradient leaves.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;

  Parameter() = default;
  Parameter(std::string n, Shape s, double fill = 0.0)
      : name(std::move(n)), shape(std::move(s)), value(shape_numel(shape), fill) {}

  std::size_t size() const { return value.size(); }
};

namespace detail {
struct Node {
  int id = -1;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  const Parameter* param = nullptr;
  std::size_t numel() const { return value.size(); }
};
}  // namespace detail

// Handle to a node on a Tape. Cheap to copy; values live on the tape node.
class Tensor {
 public:
  Tensor() = default;

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  std::span<const double> value() const { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }

  double scalar() const;  // requires numel() == 1
  double operator[](std::size_t i) const { return node_->value[i]; }
  double operator()(std::size_t i, std::size_t j) const {
    return node_->value[i * node_->shape[1] + j];
  }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// For tests: which node ids fed which output, in recording order.
struct OpInfo {
  std::string name;
  std::vector<int> inputs;
  int output;
};

// Define-by-run reverse-mode tape over dense 64-bit tensors. Rebuilt every
// iteration; single-threaded within one tape. Every forward op validates
// shapes and rejects non-finite outputs.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // --- leaves ---
  Tensor constant(Shape shape, std::vector<double> values);
  Tensor scalar(double v);
  Tensor param(Parameter& p);  // gradient leaf bound to p (one binding per tape)

  // --- elementwise, with broadcasting: same shape, scalar b, or b a length-c
  //     vector broadcast across the rows of a (r x c) ---
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double k);
  Tensor add_const(const Tensor& a, double k);

  // --- linear algebra ---
  Tensor matmul(const Tensor& a, const Tensor& b);  // (r,k)x(k,c) or (r,k)x(k)
  Tensor transpose(const Tensor& a);

  // --- nonlinearities ---
  Tensor sigmoid(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor softplus(const Tensor& a);
  Tensor square(const Tensor& a);
  Tensor softmax_rows(const Tensor& a);  // 1-D treated as a single row

  // --- reductions ---
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

  // --- structure ops ---
  // Elementwise multiply by a fixed mask (row/column masking, diagonal kill).
  Tensor mask(const Tensor& a, const std::vector<double>& m);
  // Column j of a 2-D tensor as a vector.
  Tensor col(const Tensor& a, std::size_t j);
  // out_ij = v_j - v_i for a vector v of length d; antisymmetric, zero diagonal.
  Tensor pairwise_diff(const Tensor& v);
  // Forward takes `hard`, backward passes gradients to `soft` unchanged.
  Tensor straight_through(const Tensor& soft, std::vector<double> hard);

  // Reverse pass. `loss` must be scalar. Visits each recorded op exactly once,
  // in reverse recording order, which is a reverse topological order.
  void backward(const Tensor& loss);

  // Gradient of a bound parameter after backward(); zeros if the parameter
  // never reached the loss. Null if the parameter was never bound.
  const std::vector<double>* grad_of(const Parameter& p) const;

  const std::vector<OpInfo>& ops() const { return ops_; }
  std::size_t num_nodes() const { return next_id_; }

 private:
  struct Record {
    std::shared_ptr<detail::Node> out;
    std::function<void()> backprop;
  };

  std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> value,
                                          bool requires_grad);
  void record(const char* name, std::initializer_list<const Tensor*> inputs,
              const std::shared_ptr<detail::Node>& out, std::function<void()> fn);
  void check_finite(const char* op, const detail::Node& n) const;
  static void ensure_grad(detail::Node& n);

  std::vector<Record> records_;
  std::vector<OpInfo> ops_;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<std::pair<const Parameter*, std::shared_ptr<detail::Node>>> bound_;
  int next_id_ = 0;
};

}  // namespace dagvi
