#include "salign/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "salign/error.hpp"

namespace salign::ad {

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw ContractError("operation on an invalid variable");
  return *a.tape;
}

void same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) {
    throw ContractError(std::string(op) + ": operands live on different tapes");
  }
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " +
                   b.str());
}

Node make(Op op, std::initializer_list<Var> inputs) {
  Node n;
  n.op = op;
  std::size_t k = 0;
  for (Var v : inputs) {
    n.in[k++] = v.id;
    n.requires_grad = n.requires_grad || v.tape->node(v.id).requires_grad;
  }
  return n;
}

Var unary(Var a, Op op, double (*f)(double)) {
  Tape& t = tape_of(a);
  Node n = make(op, {a});
  const Tensor& x = a.value();
  n.value = Tensor(x.shape());
  auto out = n.value.data();
  auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return t.record(std::move(n));
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_matrix(const char* op, const Shape& s) {
  if (s.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + s.str());
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  same_tape(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.rank() != 2 || (sa.rank() != 1 && sa.rank() != 2)) shape_mismatch("matmul", sa, sb);
  const std::size_t m = sa.rank() == 1 ? 1 : sa[0];
  const std::size_t k = sa.last();
  if (k != sb[0]) shape_mismatch("matmul", sa, sb);
  const std::size_t n = sb[1];
  Node node = make(Op::MatMul, {a, b});
  node.value = Tensor(sa.rank() == 1 ? Shape{n} : Shape{m, n});
  kernels::gemm_nn(node.value.data().data(), a.value().data().data(),
                   b.value().data().data(), m, k, n);
  return t.record(std::move(node));
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  require_matrix("transpose", s);
  Node n = make(Op::Transpose, {a});
  n.value = Tensor(Shape{s[1], s[0]});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < s[0]; ++i)
    for (std::size_t j = 0; j < s[1]; ++j) n.value.at(j, i) = x.at(i, j);
  return t.record(std::move(n));
}

namespace {

template <class F>
Var elementwise(Var a, Var b, Op op, const char* name, F f) {
  Tape& t = tape_of(a);
  same_tape(a, b, name);
  if (!(a.shape() == b.shape())) shape_mismatch(name, a.shape(), b.shape());
  Node n = make(op, {a, b});
  n.value = Tensor(a.shape());
  auto x = a.value().data();
  auto y = b.value().data();
  auto out = n.value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i]);
  return t.record(std::move(n));
}

template <class F>
Var rowwise(Var a, Var r, Op op, const char* name, F f) {
  Tape& t = tape_of(a);
  same_tape(a, r, name);
  const Shape& sa = a.shape();
  const Shape& sr = r.shape();
  if (sr.rank() != 1 || sa.rank() < 1 || sa.last() != sr[0]) shape_mismatch(name, sa, sr);
  Node n = make(op, {a, r});
  n.value = Tensor(sa);
  const std::size_t cols = sr[0];
  auto x = a.value().data();
  auto y = r.value().data();
  auto out = n.value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i], y[i % cols]);
  return t.record(std::move(n));
}

}  // namespace

Var add(Var a, Var b) {
  return elementwise(a, b, Op::Add, "add", [](double x, double y) { return x + y; });
}
Var sub(Var a, Var b) {
  return elementwise(a, b, Op::Sub, "sub", [](double x, double y) { return x - y; });
}
Var mul(Var a, Var b) {
  return elementwise(a, b, Op::Mul, "mul", [](double x, double y) { return x * y; });
}
Var add_row(Var a, Var r) {
  return rowwise(a, r, Op::AddRow, "add_row", [](double x, double y) { return x + y; });
}
Var mul_row(Var a, Var r) {
  return rowwise(a, r, Op::MulRow, "mul_row", [](double x, double y) { return x * y; });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Node n = make(Op::Scale, {a});
  n.factor = factor;
  n.value = a.value();
  for (double& v : n.value.data()) v *= factor;
  return t.record(std::move(n));
}

Var tanh(Var a) { return unary(a, Op::Tanh, [](double x) { return std::tanh(x); }); }
Var sigmoid(Var a) { return unary(a, Op::Sigmoid, sigmoid_scalar); }
Var exp(Var a) { return unary(a, Op::Exp, [](double x) { return std::exp(x); }); }
Var log(Var a) { return unary(a, Op::Log, [](double x) { return std::log(x); }); }
Var relu(Var a) { return unary(a, Op::Relu, [](double x) { return x > 0.0 ? x : 0.0; }); }

namespace {

Var softmax_impl(Var a, Op op) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (s.rank() == 0) throw ShapeError(std::string(op_name(op)) + ": scalar input");
  Node n = make(op, {a});
  n.value = Tensor(s);
  const std::size_t cols = s.last();
  const std::size_t rows = s.numel() / std::max<std::size_t>(cols, 1);
  auto x = a.value().data();
  auto y = n.value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    if (op == Op::Softmax) {
      for (std::size_t j = 0; j < cols; ++j) yr[j] /= total;
    } else {
      const double lse = std::log(total);
      for (std::size_t j = 0; j < cols; ++j) yr[j] = xr[j] - mx - lse;
    }
  }
  return t.record(std::move(n));
}

}  // namespace

Var softmax(Var a) { return softmax_impl(a, Op::Softmax); }
Var log_softmax(Var a) { return softmax_impl(a, Op::LogSoftmax); }

Var layer_norm(Var a) {
  constexpr double kEps = 1e-5;
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (s.rank() == 0) throw ShapeError("layer_norm: scalar input");
  Node n = make(Op::LayerNorm, {a});
  n.value = Tensor(s);
  const std::size_t cols = s.last();
  const std::size_t rows = s.numel() / cols;
  n.saved.resize(rows);
  auto x = a.value().data();
  auto y = n.value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + kEps);
    n.saved[r] = inv;
    for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * inv;
  }
  return t.record(std::move(n));
}

Var row_lookup(Var table, std::size_t r) {
  Tape& t = tape_of(table);
  const Shape& s = table.shape();
  require_matrix("row_lookup", s);
  if (r >= s[0]) {
    throw ShapeError("row_lookup: row " + std::to_string(r) + " out of range for " + s.str());
  }
  Node n = make(Op::Gather, {table});
  n.index = {r};
  n.squeeze = true;
  const auto src = table.value().data().subspan(r * s[1], s[1]);
  n.value = Tensor(Shape{s[1]}, std::vector<double>(src.begin(), src.end()));
  return t.record(std::move(n));
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  Tape& t = tape_of(table);
  const Shape& s = table.shape();
  require_matrix("gather_rows", s);
  Node n = make(Op::Gather, {table});
  n.index.assign(ids.begin(), ids.end());
  n.value = Tensor(Shape{ids.size(), s[1]});
  auto src = table.value().data();
  auto out = n.value.data();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= s[0]) {
      throw ShapeError("gather_rows: row " + std::to_string(ids[k]) + " out of range for " +
                       s.str());
    }
    std::copy_n(src.begin() + ids[k] * s[1], s[1], out.begin() + k * s[1]);
  }
  return t.record(std::move(n));
}

Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].shape().last();
  std::size_t rows = 0;
  Node n;
  n.op = Op::StackRows;
  for (Var p : parts) {
    same_tape(parts[0], p, "stack_rows");
    const Shape& s = p.shape();
    if (s.rank() < 1 || s.rank() > 2 || s.last() != cols) {
      shape_mismatch("stack_rows", parts[0].shape(), s);
    }
    rows += s.rows();
    n.many.push_back(p.id);
    n.requires_grad = n.requires_grad || t.node(p.id).requires_grad;
  }
  n.value = Tensor(Shape{rows, cols});
  auto out = n.value.data().begin();
  for (Var p : parts) out = std::copy(p.value().data().begin(), p.value().data().end(), out);
  return t.record(std::move(n));
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& t = tape_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  if (s0.rank() < 1 || s0.rank() > 2) throw ShapeError("concat: unsupported shape " + s0.str());
  const std::size_t rows = s0.rows();
  std::size_t cols = 0;
  Node n;
  n.op = Op::Concat;
  for (Var p : parts) {
    same_tape(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (s.rank() != s0.rank() || s.rows() != rows) shape_mismatch("concat", s0, s);
    cols += s.last();
    n.many.push_back(p.id);
    n.requires_grad = n.requires_grad || t.node(p.id).requires_grad;
  }
  n.value = Tensor(s0.rank() == 1 ? Shape{cols} : Shape{rows, cols});
  auto out = n.value.data();
  std::size_t offset = 0;
  for (Var p : parts) {
    const std::size_t w = p.shape().last();
    auto in = p.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(in.begin() + r * w, w, out.begin() + r * cols + offset);
    }
    offset += w;
  }
  return t.record(std::move(n));
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  require_matrix("slice_rows", s);
  if (begin > end || end > s[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + s.str());
  }
  Node n = make(Op::SliceRows, {a});
  n.begin = begin;
  n.end = end;
  auto in = a.value().data();
  n.value = Tensor(Shape{end - begin, s[1]},
                   std::vector<double>(in.begin() + begin * s[1], in.begin() + end * s[1]));
  return t.record(std::move(n));
}

Var row(Var a, std::size_t i) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  require_matrix("row", s);
  if (i >= s[0]) throw ShapeError("row: index " + std::to_string(i) + " out of range for " + s.str());
  Node n = make(Op::SliceRows, {a});
  n.begin = i;
  n.end = i + 1;
  n.squeeze = true;
  auto in = a.value().data();
  n.value = Tensor(Shape{s[1]},
                   std::vector<double>(in.begin() + i * s[1], in.begin() + (i + 1) * s[1]));
  return t.record(std::move(n));
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (s.rank() < 1 || s.rank() > 2 || begin > end || end > s.last()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for " + s.str());
  }
  Node n = make(Op::SliceCols, {a});
  n.begin = begin;
  n.end = end;
  const std::size_t rows = s.rows();
  const std::size_t w = end - begin;
  n.value = Tensor(s.rank() == 1 ? Shape{w} : Shape{rows, w});
  auto in = a.value().data();
  auto out = n.value.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(in.begin() + r * s.last() + begin, w, out.begin() + r * w);
  }
  return t.record(std::move(n));
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  if (shape.numel() != a.value().size()) shape_mismatch("reshape", a.shape(), shape);
  Node n = make(Op::Reshape, {a});
  n.value = a.value();
  n.value.reshape(shape);
  return t.record(std::move(n));
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Node n = make(Op::Sum, {a});
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  n.value = Tensor::scalar(s);
  return t.record(std::move(n));
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const std::size_t count = a.value().size();
  if (count == 0) throw ShapeError("mean: empty input");
  Node n = make(Op::Mean, {a});
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(count));
  return t.record(std::move(n));
}

Var mean_rows(Var a) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  require_matrix("mean_rows", s);
  if (s[0] == 0) throw ShapeError("mean_rows: no rows");
  Node n = make(Op::MeanRows, {a});
  n.value = Tensor(Shape{s[1]});
  const Tensor& x = a.value();
  for (std::size_t r = 0; r < s[0]; ++r)
    for (std::size_t j = 0; j < s[1]; ++j) n.value[j] += x.at(r, j);
  for (double& v : n.value.data()) v /= static_cast<double>(s[0]);
  return t.record(std::move(n));
}

Var pick(Var a, std::size_t flat_index) {
  Tape& t = tape_of(a);
  if (flat_index >= a.value().size()) {
    throw ShapeError("pick: index " + std::to_string(flat_index) + " out of range for " +
                     a.shape().str());
  }
  Node n = make(Op::Pick, {a});
  n.begin = flat_index;
  n.value = Tensor::scalar(a.value()[flat_index]);
  return t.record(std::move(n));
}

}  // namespace salign::ad
