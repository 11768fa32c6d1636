#include "dagvi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace dagvi {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

double Tensor::scalar() const {
  if (node_->numel() != 1)
    throw std::invalid_argument("scalar(): tensor has shape " + shape_str(node_->shape));
  return node_->value[0];
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

// Broadcast classes supported by the elementwise ops.
enum class Bcast { Same, ScalarB, RowVecB };

Bcast classify(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (shape_numel(b) == 1) return Bcast::ScalarB;
  if (a.size() == 2 && b.size() == 1 && b[0] == a[1]) return Bcast::RowVecB;
  shape_error(op, a, b);
}

}  // namespace

std::shared_ptr<detail::Node> Tape::make_node(Shape shape, std::vector<double> value,
                                              bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->id = next_id_++;
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  nodes_.push_back(n);
  return n;
}

void Tape::ensure_grad(detail::Node& n) {
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

void Tape::check_finite(const char* op, const detail::Node& n) const {
  for (double v : n.value)
    if (!std::isfinite(v))
      throw std::runtime_error(std::string(op) + ": non-finite value in output of shape " +
                               shape_str(n.shape));
}

void Tape::record(const char* name, std::initializer_list<const Tensor*> inputs,
                  const std::shared_ptr<detail::Node>& out, std::function<void()> fn) {
  check_finite(name, *out);
  OpInfo info;
  info.name = name;
  info.output = out->id;
  for (const Tensor* t : inputs) info.inputs.push_back(t->node_->id);
  ops_.push_back(std::move(info));
  if (out->requires_grad) records_.push_back({out, std::move(fn)});
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (shape_numel(shape) != values.size())
    throw std::invalid_argument("constant: shape " + shape_str(shape) + " expects " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(values.size()));
  auto n = make_node(std::move(shape), std::move(values), false);
  check_finite("constant", *n);
  return Tensor(n);
}

Tensor Tape::scalar(double v) { return constant({1}, {v}); }

Tensor Tape::param(Parameter& p) {
  for (auto& [bp, node] : bound_)
    if (bp == &p)
      throw std::invalid_argument("param: '" + p.name + "' already bound to this tape");
  auto n = make_node(p.shape, p.value, true);
  n->param = &p;
  check_finite("param", *n);
  bound_.emplace_back(&p, n);
  return Tensor(n);
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  Bcast bc = classify("add", a.shape(), b.shape());
  auto out = make_node(a.shape(), std::vector<double>(a.numel()),
                       a.requires_grad() || b.requires_grad());
  const auto& av = a.node_->value;
  const auto& bv = b.node_->value;
  auto& ov = out->value;
  std::size_t cols = bc == Bcast::RowVecB ? a.shape()[1] : 0;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    double bval = bc == Bcast::Same ? bv[i] : bc == Bcast::ScalarB ? bv[0] : bv[i % cols];
    ov[i] = av[i] + bval;
  }
  auto an = a.node_, bn = b.node_;
  record("add", {&a, &b}, out, [out, an, bn, bc, cols]() {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        std::size_t j = bc == Bcast::Same ? i : bc == Bcast::ScalarB ? 0 : i % cols;
        bn->grad[j] += out->grad[i];
      }
    }
  });
  return Tensor(out);
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  Bcast bc = classify("sub", a.shape(), b.shape());
  auto out = make_node(a.shape(), std::vector<double>(a.numel()),
                       a.requires_grad() || b.requires_grad());
  const auto& av = a.node_->value;
  const auto& bv = b.node_->value;
  auto& ov = out->value;
  std::size_t cols = bc == Bcast::RowVecB ? a.shape()[1] : 0;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    double bval = bc == Bcast::Same ? bv[i] : bc == Bcast::ScalarB ? bv[0] : bv[i % cols];
    ov[i] = av[i] - bval;
  }
  auto an = a.node_, bn = b.node_;
  record("sub", {&a, &b}, out, [out, an, bn, bc, cols]() {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        std::size_t j = bc == Bcast::Same ? i : bc == Bcast::ScalarB ? 0 : i % cols;
        bn->grad[j] -= out->grad[i];
      }
    }
  });
  return Tensor(out);
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  Bcast bc = classify("mul", a.shape(), b.shape());
  auto out = make_node(a.shape(), std::vector<double>(a.numel()),
                       a.requires_grad() || b.requires_grad());
  const auto& av = a.node_->value;
  const auto& bv = b.node_->value;
  auto& ov = out->value;
  std::size_t cols = bc == Bcast::RowVecB ? a.shape()[1] : 0;
  for (std::size_t i = 0; i < ov.size(); ++i) {
    double bval = bc == Bcast::Same ? bv[i] : bc == Bcast::ScalarB ? bv[0] : bv[i % cols];
    ov[i] = av[i] * bval;
  }
  auto an = a.node_, bn = b.node_;
  record("mul", {&a, &b}, out, [out, an, bn, bc, cols]() {
    const auto& av = an->value;
    const auto& bv = bn->value;
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        double bval = bc == Bcast::Same ? bv[i] : bc == Bcast::ScalarB ? bv[0] : bv[i % cols];
        an->grad[i] += out->grad[i] * bval;
      }
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < out->grad.size(); ++i) {
        std::size_t j = bc == Bcast::Same ? i : bc == Bcast::ScalarB ? 0 : i % cols;
        bn->grad[j] += out->grad[i] * av[i];
      }
    }
  });
  return Tensor(out);
}

Tensor Tape::scale(const Tensor& a, double k) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.node_->value[i] * k;
  auto an = a.node_;
  record("scale", {&a}, out, [out, an, k]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i] * k;
  });
  return Tensor(out);
}

Tensor Tape::add_const(const Tensor& a, double k) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.node_->value[i] + k;
  auto an = a.node_;
  record("add_const", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i];
  });
  return Tensor(out);
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool vec_out = false;
  std::size_t r, k, c;
  if (sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0]) {
    r = sa[0], k = sa[1], c = sb[1];
  } else if (sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0]) {
    r = sa[0], k = sa[1], c = 1;
    vec_out = true;
  } else {
    shape_error("matmul", sa, sb);
  }
  Shape os = vec_out ? Shape{r} : Shape{r, c};
  auto out = make_node(os, std::vector<double>(r * c, 0.0),
                       a.requires_grad() || b.requires_grad());
  const double* A = a.node_->value.data();
  const double* B = b.node_->value.data();
  double* O = out->value.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      double aik = A[i * k + kk];
      for (std::size_t j = 0; j < c; ++j) O[i * c + j] += aik * B[kk * c + j];
    }
  auto an = a.node_, bn = b.node_;
  record("matmul", {&a, &b}, out, [out, an, bn, r, k, c]() {
    const double* G = out->grad.data();
    if (an->requires_grad) {
      ensure_grad(*an);
      const double* B = bn->value.data();
      double* dA = an->grad.data();
      // dA = G * B^T
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
          double g = G[i * c + j];
          for (std::size_t kk = 0; kk < k; ++kk) dA[i * k + kk] += g * B[kk * c + j];
        }
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      const double* A = an->value.data();
      double* dB = bn->grad.data();
      // dB = A^T * G
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
          double aik = A[i * k + kk];
          for (std::size_t j = 0; j < c; ++j) dB[kk * c + j] += aik * G[i * c + j];
        }
    }
  });
  return Tensor(out);
}

Tensor Tape::transpose(const Tensor& a) {
  if (a.shape().size() != 2) shape_error("transpose", a.shape(), {});
  std::size_t r = a.shape()[0], c = a.shape()[1];
  auto out = make_node({c, r}, std::vector<double>(r * c), a.requires_grad());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out->value[j * r + i] = a.node_->value[i * c + j];
  auto an = a.node_;
  record("transpose", {&a}, out, [out, an, r, c]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += out->grad[j * r + i];
  });
  return Tensor(out);
}

Tensor Tape::sigmoid(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = stable_sigmoid(a.node_->value[i]);
  auto an = a.node_;
  record("sigmoid", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i) {
      double y = out->value[i];
      an->grad[i] += out->grad[i] * y * (1.0 - y);
    }
  });
  return Tensor(out);
}

Tensor Tape::relu(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.node_->value[i] > 0.0 ? a.node_->value[i] : 0.0;
  auto an = a.node_;
  record("relu", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      if (an->value[i] > 0.0) an->grad[i] += out->grad[i];
  });
  return Tensor(out);
}

Tensor Tape::exp(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::exp(a.node_->value[i]);
  auto an = a.node_;
  record("exp", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      an->grad[i] += out->grad[i] * out->value[i];
  });
  return Tensor(out);
}

Tensor Tape::log(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = std::log(a.node_->value[i]);
  auto an = a.node_;
  record("log", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      an->grad[i] += out->grad[i] / an->value[i];
  });
  return Tensor(out);
}

Tensor Tape::softplus(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = stable_softplus(a.node_->value[i]);
  auto an = a.node_;
  record("softplus", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      an->grad[i] += out->grad[i] * stable_sigmoid(an->value[i]);
  });
  return Tensor(out);
}

Tensor Tape::square(const Tensor& a) {
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    double v = a.node_->value[i];
    out->value[i] = v * v;
  }
  auto an = a.node_;
  record("square", {&a}, out, [out, an]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      an->grad[i] += out->grad[i] * 2.0 * an->value[i];
  });
  return Tensor(out);
}

Tensor Tape::softmax_rows(const Tensor& a) {
  std::size_t rows, cols;
  if (a.shape().size() == 1) {
    rows = 1;
    cols = a.shape()[0];
  } else if (a.shape().size() == 2) {
    rows = a.shape()[0];
    cols = a.shape()[1];
  } else {
    shape_error("softmax_rows", a.shape(), {});
  }
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* x = a.node_->value.data() + i * cols;
    double* y = out->value.data() + i * cols;
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      s += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= s;
  }
  auto an = a.node_;
  record("softmax_rows", {&a}, out, [out, an, rows, cols]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < rows; ++i) {
      const double* y = out->value.data() + i * cols;
      const double* g = out->grad.data() + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
      double* dx = an->grad.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  });
  return Tensor(out);
}

Tensor Tape::sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.node_->value) s += v;
  auto out = make_node({1}, {s}, a.requires_grad());
  auto an = a.node_;
  record("sum", {&a}, out, [out, an]() {
    ensure_grad(*an);
    double g = out->grad[0];
    for (auto& dv : an->grad) dv += g;
  });
  return Tensor(out);
}

Tensor Tape::mean(const Tensor& a) {
  double s = 0.0;
  for (double v : a.node_->value) s += v;
  double n = static_cast<double>(a.numel());
  auto out = make_node({1}, {s / n}, a.requires_grad());
  auto an = a.node_;
  record("mean", {&a}, out, [out, an, n]() {
    ensure_grad(*an);
    double g = out->grad[0] / n;
    for (auto& dv : an->grad) dv += g;
  });
  return Tensor(out);
}

Tensor Tape::mask(const Tensor& a, const std::vector<double>& m) {
  if (m.size() != a.numel())
    throw std::invalid_argument("mask: mask size " + std::to_string(m.size()) +
                                " vs tensor " + shape_str(a.shape()));
  auto out = make_node(a.shape(), std::vector<double>(a.numel()), a.requires_grad());
  for (std::size_t i = 0; i < out->value.size(); ++i)
    out->value[i] = a.node_->value[i] * m[i];
  auto an = a.node_;
  record("mask", {&a}, out, [out, an, m]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < out->grad.size(); ++i) an->grad[i] += out->grad[i] * m[i];
  });
  return Tensor(out);
}

Tensor Tape::col(const Tensor& a, std::size_t j) {
  if (a.shape().size() != 2 || j >= a.shape()[1])
    throw std::invalid_argument("col: column " + std::to_string(j) + " of " +
                                shape_str(a.shape()));
  std::size_t r = a.shape()[0], c = a.shape()[1];
  auto out = make_node({r}, std::vector<double>(r), a.requires_grad());
  for (std::size_t i = 0; i < r; ++i) out->value[i] = a.node_->value[i * c + j];
  auto an = a.node_;
  record("col", {&a}, out, [out, an, j, r, c]() {
    ensure_grad(*an);
    for (std::size_t i = 0; i < r; ++i) an->grad[i * c + j] += out->grad[i];
  });
  return Tensor(out);
}

Tensor Tape::pairwise_diff(const Tensor& v) {
  if (v.shape().size() != 1) shape_error("pairwise_diff", v.shape(), {});
  std::size_t d = v.shape()[0];
  auto out = make_node({d, d}, std::vector<double>(d * d), v.requires_grad());
  const auto& pv = v.node_->value;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) out->value[i * d + j] = pv[j] - pv[i];
  auto vn = v.node_;
  record("pairwise_diff", {&v}, out, [out, vn, d]() {
    ensure_grad(*vn);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double g = out->grad[i * d + j];
        vn->grad[j] += g;
        vn->grad[i] -= g;
      }
  });
  return Tensor(out);
}

Tensor Tape::straight_through(const Tensor& soft, std::vector<double> hard) {
  if (hard.size() != soft.numel())
    throw std::invalid_argument("straight_through: hard size " +
                                std::to_string(hard.size()) + " vs soft " +
                                shape_str(soft.shape()));
  auto out = make_node(soft.shape(), std::move(hard), soft.requires_grad());
  auto sn = soft.node_;
  record("straight_through", {&soft}, out, [out, sn]() {
    ensure_grad(*sn);
    for (std::size_t i = 0; i < out->grad.size(); ++i) sn->grad[i] += out->grad[i];
  });
  return Tensor(out);
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                shape_str(loss.shape()));
  for (auto& n : nodes_) n->grad.assign(n->value.size(), 0.0);
  loss.node_->grad[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->backprop();
}

const std::vector<double>* Tape::grad_of(const Parameter& p) const {
  for (const auto& [bp, node] : bound_)
    if (bp == &p) return &node->grad;
  return nullptr;
}

}  // namespace dagvi
