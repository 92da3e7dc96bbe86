#include "sparsehead/tensor.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "sparsehead/errors.hpp"

namespace sparsehead {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void ensure_finite(const std::vector<double>& values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

[[noreturn]] void shape_error(const char* op) {
  throw DimensionError(std::string(op) + ": operand shapes do not match");
}

}  // namespace

// -- Tensor -------------------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor: shape does not match data length");
  }
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  t.node_->requires_grad = requires_grad;
  if (requires_grad) t.node_->grad.assign(t.node_->data.size(), 0.0);
  return t;
}

const std::vector<std::size_t>& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::rank() const { return node_->shape.size(); }
std::size_t Tensor::numel() const { return node_->data.size(); }

std::size_t Tensor::rows() const { return rank() == 2 ? node_->shape[0] : 1; }

std::size_t Tensor::cols() const {
  if (rank() == 2) return node_->shape[1];
  if (rank() == 1) return node_->shape[0];
  return 1;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::vector<double>& Tensor::data() { return node_->data; }
const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::grad() {
  if (!node_->requires_grad) throw ContractError("Tensor: grad on a non-gradient tensor");
  return node_->grad;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_->requires_grad) throw ContractError("Tensor: grad on a non-gradient tensor");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_->requires_grad) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
  if (numel() != 1) throw ContractError("Tensor: value() on a non-scalar tensor");
  return node_->data[0];
}

double& Tensor::at(std::size_t i, std::size_t j) { return node_->data[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return node_->data[i * cols() + j]; }
double& Tensor::at(std::size_t i) { return node_->data[i]; }
double Tensor::at(std::size_t i) const { return node_->data[i]; }

Tensor Tensor::clone() const { return from_data(node_->shape, node_->data, false); }

// -- Tape ---------------------------------------------------------------------

void Tape::record(Tensor output, std::function<void()> backward_rule) {
  ops_.push_back({std::move(output), std::move(backward_rule)});
}

void Tape::clear() { ops_.clear(); }

namespace {

/// Output of a recorded op: requires a gradient iff any input does.
Tensor op_output(std::vector<std::size_t> shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

}  // namespace

// -- operations ---------------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) shape_error("matmul");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor c = op_output({n, m}, a.requires_grad() || b.requires_grad());

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = pa[i * k + t];
      for (std::size_t j = 0; j < m; ++j) pc[i * m + j] += av * pb[t * m + j];
    }
  }
  ensure_finite(c.data(), "matmul");

  if (c.requires_grad()) {
    tape.record(c, [a, b, c, n, k, m]() {
      const double* g = c.grad().data();
      if (a.requires_grad()) {
        double* ga = const_cast<Tensor&>(a).grad().data();
        const double* pb = b.data().data();
        // dL/da = g . b^T
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += gv * pb[t * m + j];
          }
      }
      if (b.requires_grad()) {
        double* gb = const_cast<Tensor&>(b).grad().data();
        const double* pa = a.data().data();
        // dL/db = a^T . g
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            for (std::size_t j = 0; j < m; ++j) gb[t * m + j] += av * g[i * m + j];
          }
      }
    });
  }
  return c;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) shape_error("matmul_nt");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  Tensor c = op_output({n, m}, a.requires_grad() || b.requires_grad());

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += pa[i * k + t] * pb[j * k + t];
      pc[i * m + j] = s;
    }
  ensure_finite(c.data(), "matmul_nt");

  if (c.requires_grad()) {
    tape.record(c, [a, b, c, n, k, m]() {
      const double* g = c.grad().data();
      if (a.requires_grad()) {
        double* ga = const_cast<Tensor&>(a).grad().data();
        const double* pb = b.data().data();
        // dL/da = g . b
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            for (std::size_t t = 0; t < k; ++t) ga[i * k + t] += gv * pb[j * k + t];
          }
      }
      if (b.requires_grad()) {
        double* gb = const_cast<Tensor&>(b).grad().data();
        const double* pa = a.data().data();
        // dL/db = g^T . a
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g[i * m + j];
            for (std::size_t t = 0; t < k; ++t) gb[j * k + t] += gv * pa[i * k + t];
          }
      }
    });
  }
  return c;
}

namespace {

enum class Broadcast { none, row, scalar };

Broadcast binary_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::none;
  if (b.numel() == 1 && b.rank() == 0) return Broadcast::scalar;
  if (a.rank() == 2 && b.rank() == 1 && b.cols() == a.cols()) return Broadcast::row;
  shape_error(op);
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast(a, b, "add");
  const std::size_t n = a.numel(), m = a.cols();
  Tensor c = op_output(a.shape(), a.requires_grad() || b.requires_grad());

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i];
      break;
    case Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[i % m];
      break;
    case Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] + pb[0];
      break;
  }
  ensure_finite(c.data(), "add");

  if (c.requires_grad()) {
    tape.record(c, [a, b, c, bc, n, m]() {
      const double* g = c.grad().data();
      if (a.requires_grad()) {
        double* ga = const_cast<Tensor&>(a).grad().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = const_cast<Tensor&>(b).grad().data();
        switch (bc) {
          case Broadcast::none:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
            break;
          case Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i];
            break;
          case Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) gb[0] += g[i];
            break;
        }
      }
    });
  }
  return c;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast(a, b, "sub");
  const std::size_t n = a.numel(), m = a.cols();
  Tensor c = op_output(a.shape(), a.requires_grad() || b.requires_grad());

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i];
      break;
    case Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[i % m];
      break;
    case Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] - pb[0];
      break;
  }
  ensure_finite(c.data(), "sub");

  if (c.requires_grad()) {
    tape.record(c, [a, b, c, bc, n, m]() {
      const double* g = c.grad().data();
      if (a.requires_grad()) {
        double* ga = const_cast<Tensor&>(a).grad().data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = const_cast<Tensor&>(b).grad().data();
        switch (bc) {
          case Broadcast::none:
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
            break;
          case Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] -= g[i];
            break;
          case Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) gb[0] -= g[i];
            break;
        }
      }
    });
  }
  return c;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const Broadcast bc = binary_broadcast(a, b, "mul");
  const std::size_t n = a.numel(), m = a.cols();
  Tensor c = op_output(a.shape(), a.requires_grad() || b.requires_grad());

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = c.data().data();
  switch (bc) {
    case Broadcast::none:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i];
      break;
    case Broadcast::row:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[i % m];
      break;
    case Broadcast::scalar:
      for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * pb[0];
      break;
  }
  ensure_finite(c.data(), "mul");

  if (c.requires_grad()) {
    tape.record(c, [a, b, c, bc, n, m]() {
      const double* g = c.grad().data();
      const double* pa = a.data().data();
      const double* pb = b.data().data();
      if (a.requires_grad()) {
        double* ga = const_cast<Tensor&>(a).grad().data();
        switch (bc) {
          case Broadcast::none:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
            break;
          case Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i % m];
            break;
          case Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[0];
            break;
        }
      }
      if (b.requires_grad()) {
        double* gb = const_cast<Tensor&>(b).grad().data();
        switch (bc) {
          case Broadcast::none:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
            break;
          case Broadcast::row:
            for (std::size_t i = 0; i < n; ++i) gb[i % m] += g[i] * pa[i];
            break;
          case Broadcast::scalar:
            for (std::size_t i = 0; i < n; ++i) gb[0] += g[i] * pa[i];
            break;
        }
      }
    });
  }
  return c;
}

Tensor relu(Tape& tape, const Tensor& a) {
  const std::size_t n = a.numel();
  Tensor c = op_output(a.shape(), a.requires_grad());
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  ensure_finite(c.data(), "relu");

  if (c.requires_grad()) {
    tape.record(c, [a, c, n]() {
      const double* g = c.grad().data();
      const double* pa = a.data().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      // subgradient 0 at 0
      for (std::size_t i = 0; i < n; ++i) ga[i] += pa[i] > 0.0 ? g[i] : 0.0;
    });
  }
  return c;
}

Tensor exp(Tape& tape, const Tensor& a) {
  const std::size_t n = a.numel();
  Tensor c = op_output(a.shape(), a.requires_grad());
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) pc[i] = std::exp(pa[i]);
  ensure_finite(c.data(), "exp");

  if (c.requires_grad()) {
    tape.record(c, [a, c, n]() {
      const double* g = c.grad().data();
      const double* pc = c.data().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pc[i];
    });
  }
  return c;
}

Tensor log(Tape& tape, const Tensor& a) {
  const std::size_t n = a.numel();
  Tensor c = op_output(a.shape(), a.requires_grad());
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    if (pa[i] <= 0.0) throw DomainError("log: nonpositive input");
    pc[i] = std::log(pa[i]);
  }
  ensure_finite(c.data(), "log");

  if (c.requires_grad()) {
    tape.record(c, [a, c, n]() {
      const double* g = c.grad().data();
      const double* pa = a.data().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] / pa[i];
    });
  }
  return c;
}

Tensor scale(Tape& tape, const Tensor& a, double k) {
  const std::size_t n = a.numel();
  Tensor c = op_output(a.shape(), a.requires_grad());
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) pc[i] = pa[i] * k;
  ensure_finite(c.data(), "scale");

  if (c.requires_grad()) {
    tape.record(c, [a, c, k, n]() {
      const double* g = c.grad().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * k;
    });
  }
  return c;
}

Tensor row_normalize(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) shape_error("row_normalize");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor c = op_output({n, m}, a.requires_grad());

  auto norms = std::make_shared<std::vector<double>>(n, 0.0);
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += pa[i * m + j] * pa[i * m + j];
    const double norm = std::sqrt(s);
    if (norm <= 1e-12) throw DegenerateInputError("row_normalize: zero-norm row");
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < m; ++j) pc[i * m + j] = pa[i * m + j] / norm;
  }
  ensure_finite(c.data(), "row_normalize");

  if (c.requires_grad()) {
    tape.record(c, [a, c, norms, n, m]() {
      const double* g = c.grad().data();
      const double* pc = c.data().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      // d(y_i)/d(a_i) = (I - y_i y_i^T) / |a_i|
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * pc[i * m + j];
        const double inv = 1.0 / (*norms)[i];
        for (std::size_t j = 0; j < m; ++j)
          ga[i * m + j] += (g[i * m + j] - dot * pc[i * m + j]) * inv;
      }
    });
  }
  return c;
}

Tensor row_sum(Tape& tape, const Tensor& a) {
  if (a.rank() != 2) shape_error("row_sum");
  const std::size_t n = a.rows(), m = a.cols();
  Tensor c = op_output({n}, a.requires_grad());
  const double* pa = a.data().data();
  double* pc = c.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += pa[i * m + j];
    pc[i] = s;
  }
  ensure_finite(c.data(), "row_sum");

  if (c.requires_grad()) {
    tape.record(c, [a, c, n, m]() {
      const double* g = c.grad().data();
      double* ga = const_cast<Tensor&>(a).grad().data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) ga[i * m + j] += g[i];
    });
  }
  return c;
}

Tensor sum(Tape& tape, const Tensor& a) {
  const std::size_t n = a.numel();
  Tensor c = op_output({}, a.requires_grad());
  const double* pa = a.data().data();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += pa[i];
  c.data()[0] = s;
  ensure_finite(c.data(), "sum");

  if (c.requires_grad()) {
    tape.record(c, [a, c, n]() {
      const double g = c.grad()[0];
      double* ga = const_cast<Tensor&>(a).grad().data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return c;
}

Tensor cosine_matrix(Tape& tape, const Tensor& z) {
  if (z.rank() != 2) shape_error("cosine_matrix");
  Tensor unit = row_normalize(tape, z);
  return matmul_nt(tape, unit, unit);
}

void backward(const Tensor& loss, Tape& tape) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) return;  // no gradient-requiring leaves upstream

  // Intermediate (op output) gradients are transient per pass; only leaf
  // gradients accumulate across calls.
  for (auto& op : tape.ops_) op.output.zero_grad();
  const_cast<Tensor&>(loss).grad()[0] += 1.0;
  for (auto it = tape.ops_.rbegin(); it != tape.ops_.rend(); ++it) it->backward_rule();
}

}  // namespace sparsehead
