#include "madmil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "madmil/error.hpp"

namespace madmil::ad {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

double sigm(double x) {
  // Split on sign so exp never overflows.
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }
const Tensor& Var::grad() const { return tape->grad(*this); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = Op::leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::push(Op op, std::vector<std::size_t> inputs, Tensor value, std::size_t arg,
               Tensor aux) {
  Node node;
  node.op = op;
  node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                   [this](std::size_t i) { return nodes_[i].requires_grad; });
  node.inputs = std::move(inputs);
  node.arg = arg;
  node.value = std::move(value);
  node.aux = std::move(aux);
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

void Tape::check_owner(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
}

const Tensor& Tape::grad(Var v) const {
  check_owner(v);
  const Node& node = nodes_[v.id];
  if (node.grad.same_shape(node.value)) return node.grad;
  empty_grad_ = Tensor(node.value.rows(), node.value.cols());
  return empty_grad_;
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad.same_shape(node.value)) node.grad = Tensor(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(Var root) {
  check_owner(root);
  const Tensor& root_value = nodes_[root.id].value;
  if (root_value.rows() != 1 || root_value.cols() != 1) {
    throw DimensionError("backward: root must be a 1x1 scalar, got " + root_value.shape_string());
  }
  for (Node& node : nodes_) node.grad = Tensor();
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root.id)[0] = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (nodes_[id].requires_grad && !nodes_[id].grad.empty()) propagate(id);
  }
  // Tracked leaves the root does not depend on still get a (zero) gradient.
  for (std::size_t id = 0; id < nodes_.size(); ++id)
    if (nodes_[id].op == Op::leaf && nodes_[id].requires_grad) grad_buffer(id);
}

// Pushes node `id`'s gradient into its tracked inputs.
void Tape::propagate(std::size_t id) {
  const Node& node = nodes_[id];
  const Tensor& g = node.grad;
  const auto tracked = [&](std::size_t k) { return nodes_[node.inputs[k]].requires_grad; };
  const auto input = [&](std::size_t k) -> const Tensor& { return nodes_[node.inputs[k]].value; };
  const auto input_grad = [&](std::size_t k) -> Tensor& { return grad_buffer(node.inputs[k]); };

  switch (node.op) {
    case Op::leaf:
      break;
    case Op::matmul:
      if (tracked(0)) kernels::matmul_nt(g, input(1), input_grad(0), true);
      if (tracked(1)) kernels::matmul_tn(input(0), g, input_grad(1), true);
      break;
    case Op::matmul_nt:
      if (tracked(0)) kernels::matmul(g, input(1), input_grad(0), true);
      if (tracked(1)) kernels::matmul_tn(g, input(0), input_grad(1), true);
      break;
    case Op::transpose:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dst(c, r) += g(r, c);
      }
      break;
    case Op::add:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!tracked(k)) continue;
        Tensor& dst = input_grad(k);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      break;
    case Op::mul:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        const Tensor& other = input(1);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
      }
      if (tracked(1)) {
        Tensor& dst = input_grad(1);
        const Tensor& other = input(0);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i] * other[i];
      }
      break;
    case Op::add_row:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (tracked(1)) {
        Tensor& dst = input_grad(1);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += g(r, c);
      }
      break;
    case Op::add_scalar:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
      }
      if (tracked(1)) input_grad(1)[0] += g.sum();
      break;
    case Op::tanh:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = node.value[i];
          dst[i] += g[i] * (1.0 - y * y);
        }
      }
      break;
    case Op::sigmoid:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = node.value[i];
          dst[i] += g[i] * y * (1.0 - y);
        }
      }
      break;
    case Op::relu:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        const Tensor& x = input(0);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) dst[i] += g[i];
      }
      break;
    case Op::softmax_instances:
      if (tracked(0)) {
        const Tensor& y = node.value;
        double dot = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * g[i];
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < y.size(); ++i) dst[i] += y[i] * (g[i] - dot);
      }
      break;
    case Op::concat_columns: {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const std::size_t width = input(k).cols();
        if (tracked(k)) {
          Tensor& dst = input_grad(k);
          for (std::size_t c = 0; c < width; ++c) dst[c] += g[offset + c];
        }
        offset += width;
      }
      break;
    }
    case Op::slice_columns:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) dst(r, node.arg + c) += g(r, c);
      }
      break;
    case Op::pad_columns:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t r = 0; r < dst.rows(); ++r)
          for (std::size_t c = 0; c < dst.cols(); ++c) dst(r, c) += g(r, c);
      }
      break;
    case Op::mean_rows:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        const double scale = 1.0 / static_cast<double>(dst.rows());
        for (std::size_t r = 0; r < dst.rows(); ++r)
          for (std::size_t c = 0; c < dst.cols(); ++c) dst(r, c) += g[c] * scale;
      }
      break;
    case Op::max_rows:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t c = 0; c < g.cols(); ++c) {
          dst(static_cast<std::size_t>(node.aux[c]), c) += g[c];
        }
      }
      break;
    case Op::sum:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[0];
      }
      break;
    case Op::cross_entropy:
      if (tracked(0)) {
        Tensor& dst = input_grad(0);
        const Tensor& probs = node.aux;
        for (std::size_t c = 0; c < probs.size(); ++c) {
          const double target = c == node.arg ? 1.0 : 0.0;
          dst[c] += g[0] * (probs[c] - target);
        }
      }
      break;
  }
}

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  t.check_owner(b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.rows(), y.cols());
  kernels::matmul(x, y, out);
  return t.push(Op::matmul, {a.id, b.id}, std::move(out));
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape;
  t.check_owner(b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.rows(), y.rows());
  kernels::matmul_nt(x, y, out);
  return t.push(Op::matmul_nt, {a.id, b.id}, std::move(out));
}

Var transpose(Var a) {
  return a.tape->push(Op::transpose, {a.id}, a.value().transposed());
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  t.check_owner(b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  return t.push(Op::add, {a.id, b.id}, std::move(out));
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  t.check_owner(b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return t.push(Op::mul, {a.id, b.id}, std::move(out));
}

Var add_row(Var x, Var bias) {
  Tape& t = *x.tape;
  t.check_owner(bias);
  const Tensor& b = bias.value();
  if (b.rows() != 1 || b.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + b.shape_string() + " does not fit " +
                         x.value().shape_string());
  }
  Tensor out = x.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b[c];
  return t.push(Op::add_row, {x.id, bias.id}, std::move(out));
}

Var add_scalar(Var x, Var s) {
  Tape& t = *x.tape;
  t.check_owner(s);
  if (s.value().size() != 1) {
    throw DimensionError("add_scalar: expected a 1x1 operand, got " + s.value().shape_string());
  }
  Tensor out = x.value();
  const double shift = s.value()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += shift;
  return t.push(Op::add_scalar, {x.id, s.id}, std::move(out));
}

Var tanh(Var x) {
  return x.tape->push(Op::tanh, {x.id}, map(x.value(), [](double v) { return std::tanh(v); }));
}

Var sigmoid(Var x) { return x.tape->push(Op::sigmoid, {x.id}, map(x.value(), sigm)); }

Var relu(Var x) {
  return x.tape->push(Op::relu, {x.id},
                      map(x.value(), [](double v) { return v > 0.0 || std::isnan(v) ? v : 0.0; }));
}

Var softmax_over_instances(Var scores) {
  const Tensor& s = scores.value();
  if (s.rows() == 0) throw EmptyBagError("softmax_over_instances: bag has no instances");
  if (s.cols() != 1) {
    throw DimensionError("softmax_over_instances: expected an Nx1 column, got " + s.shape_string());
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < s.size(); ++i) peak = std::max(peak, s[i]);
  Tensor out(s.rows(), 1);
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s[i] - peak);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return scores.tape->push(Op::softmax_instances, {scores.id}, std::move(out));
}

Var concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_columns: no parts given");
  Tape& t = *parts.front().tape;
  std::vector<std::size_t> ids;
  std::size_t width = 0;
  for (const Var& p : parts) {
    t.check_owner(p);
    if (p.value().rows() != 1) {
      throw DimensionError("concat_columns: parts must have one row, got " +
                           p.value().shape_string());
    }
    ids.push_back(p.id);
    width += p.value().cols();
  }
  Tensor out(1, width);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    std::copy_n(v.values().begin(), v.cols(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.cols();
  }
  return t.push(Op::concat_columns, std::move(ids), std::move(out));
}

Var slice_columns(Var x, std::size_t begin, std::size_t end) {
  return x.tape->push(Op::slice_columns, {x.id}, x.value().slice_columns(begin, end), begin);
}

Var pad_columns(Var x, std::size_t width) {
  const Tensor& v = x.value();
  if (width < v.cols()) {
    throw DimensionError("pad_columns: target width " + std::to_string(width) +
                         " is narrower than " + v.shape_string());
  }
  Tensor out(v.rows(), width);
  for (std::size_t r = 0; r < v.rows(); ++r)
    std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin());
  return x.tape->push(Op::pad_columns, {x.id}, std::move(out), v.cols());
}

Var mean_rows(Var x) {
  const Tensor& v = x.value();
  if (v.rows() == 0) throw EmptyBagError("mean_rows: bag has no instances");
  Tensor out(1, v.cols());
  for (std::size_t r = 0; r < v.rows(); ++r)
    for (std::size_t c = 0; c < v.cols(); ++c) out[c] += v(r, c);
  for (std::size_t c = 0; c < v.cols(); ++c) out[c] /= static_cast<double>(v.rows());
  return x.tape->push(Op::mean_rows, {x.id}, std::move(out));
}

Var max_rows(Var x) {
  const Tensor& v = x.value();
  if (v.rows() == 0) throw EmptyBagError("max_rows: bag has no instances");
  Tensor out(1, v.cols());
  Tensor argmax(1, v.cols());
  for (std::size_t c = 0; c < v.cols(); ++c) {
    std::size_t best = 0;
    for (std::size_t r = 1; r < v.rows(); ++r)
      if (v(r, c) > v(best, c)) best = r;  // strict: earliest row wins ties
    out[c] = v(best, c);
    argmax[c] = static_cast<double>(best);
  }
  return x.tape->push(Op::max_rows, {x.id}, std::move(out), 0, std::move(argmax));
}

Var sum(Var x) {
  return x.tape->push(Op::sum, {x.id}, Tensor(1, 1, x.value().sum()));
}

Var cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = logits.value();
  if (z.rows() != 1 || z.cols() == 0) {
    throw DimensionError("cross_entropy: expected 1xC logits, got " + z.shape_string());
  }
  if (label >= z.cols()) {
    throw DimensionError("cross_entropy: label " + std::to_string(label) + " out of range for " +
                         std::to_string(z.cols()) + " classes");
  }
  double peak = z[0];
  for (std::size_t c = 1; c < z.cols(); ++c) peak = std::max(peak, z[c]);
  double total = 0.0;
  for (std::size_t c = 0; c < z.cols(); ++c) total += std::exp(z[c] - peak);
  const double log_norm = peak + std::log(total);
  Tensor probs(1, z.cols());
  for (std::size_t c = 0; c < z.cols(); ++c) probs[c] = std::exp(z[c] - log_norm);
  const double loss = log_norm - z[label];
  return logits.tape->push(Op::cross_entropy, {logits.id}, Tensor(1, 1, loss), label,
                           std::move(probs));
}

}  // namespace madmil::ad
