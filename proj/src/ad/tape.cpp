#include "salign/ad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "salign/error.hpp"

namespace salign::ad {

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::Scale: return "scale";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::Gather: return "gather";
    case Op::StackRows: return "stack_rows";
    case Op::Concat: return "concat";
    case Op::SliceRows: return "slice_rows";
    case Op::SliceCols: return "slice_cols";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::MeanRows: return "mean_rows";
    case Op::Pick: return "pick";
    case Op::Transpose: return "transpose";
    case Op::Reshape: return "reshape";
    case Op::LayerNorm: return "layer_norm";
  }
  return "unknown";
}

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("value() of an invalid variable");
  return tape->value(id);
}

Var Tape::record(Node node) {
  if (!node.result().all_finite()) {
    throw NumericError(std::string("numeric overflow: non-finite output from ") +
                       op_name(node.op) + " with shape " + node.result().shape().str());
  }
  const auto id = static_cast<NodeId>(nodes_.size());
  if (node.op == Op::Leaf) leaves_.push_back(id);
  nodes_.push_back(std::move(node));
  return Var{this, id};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::leaf_ref(const Tensor& value) {
  Node n;
  n.op = Op::Leaf;
  n.requires_grad = true;
  n.borrowed = &value;
  return record(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  return record(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.op = Op::Constant;
  n.borrowed = &value;
  return record(std::move(n));
}

const Tensor& GradientStore::operator[](NodeId leaf) const {
  auto it = grads_.find(leaf);
  if (it == grads_.end()) {
    throw ContractError("no gradient recorded for node " + std::to_string(leaf));
  }
  return it->second;
}

namespace {

// Lazily allocated adjoint buffers, one per node.
class Adjoints {
 public:
  Adjoints(const Tape& tape, std::size_t count) : tape_(tape), bufs_(count) {}

  bool has(NodeId id) const { return !bufs_[id].empty(); }
  std::vector<double>& get(NodeId id) { return bufs_[id]; }

  // Returns nullptr when the input does not need a gradient.
  double* into(NodeId id) {
    const Node& n = tape_.node(id);
    if (!n.requires_grad) return nullptr;
    auto& b = bufs_[id];
    if (b.empty()) b.assign(n.result().size(), 0.0);
    return b.data();
  }

 private:
  const Tape& tape_;
  std::vector<std::vector<double>> bufs_;
};

void propagate(const Tape& tape, const Node& n, const double* g, Adjoints& adj) {
  const Tensor& y = n.result();
  const std::size_t count = y.size();
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return;
    case Op::MatMul: {
      const Tensor& a = tape.value(n.in[0]);
      const Tensor& b = tape.value(n.in[1]);
      const std::size_t m = a.shape().rank() == 1 ? 1 : a.shape()[0];
      const std::size_t k = a.shape().last();
      const std::size_t cols = b.shape()[1];
      if (double* da = adj.into(n.in[0])) kernels::gemm_nt(da, g, b.data().data(), m, cols, k);
      if (double* db = adj.into(n.in[1])) kernels::gemm_tn(db, a.data().data(), g, m, k, cols);
      return;
    }
    case Op::Transpose: {
      if (double* da = adj.into(n.in[0])) {
        const std::size_t r = y.shape()[0], c = y.shape()[1];
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) da[j * r + i] += g[i * c + j];
      }
      return;
    }
    case Op::Add:
    case Op::Sub: {
      if (double* da = adj.into(n.in[0]))
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i];
      const double sign = n.op == Op::Add ? 1.0 : -1.0;
      if (double* db = adj.into(n.in[1]))
        for (std::size_t i = 0; i < count; ++i) db[i] += sign * g[i];
      return;
    }
    case Op::Mul: {
      auto a = tape.value(n.in[0]).data();
      auto b = tape.value(n.in[1]).data();
      if (double* da = adj.into(n.in[0]))
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i] * b[i];
      if (double* db = adj.into(n.in[1]))
        for (std::size_t i = 0; i < count; ++i) db[i] += g[i] * a[i];
      return;
    }
    case Op::AddRow:
    case Op::MulRow: {
      auto a = tape.value(n.in[0]).data();
      auto r = tape.value(n.in[1]).data();
      const std::size_t cols = r.size();
      const bool is_mul = n.op == Op::MulRow;
      if (double* da = adj.into(n.in[0]))
        for (std::size_t i = 0; i < count; ++i) da[i] += is_mul ? g[i] * r[i % cols] : g[i];
      if (double* dr = adj.into(n.in[1]))
        for (std::size_t i = 0; i < count; ++i) dr[i % cols] += is_mul ? g[i] * a[i] : g[i];
      return;
    }
    case Op::Scale: {
      if (double* da = adj.into(n.in[0]))
        for (std::size_t i = 0; i < count; ++i) da[i] += n.factor * g[i];
      return;
    }
    case Op::Tanh:
    case Op::Sigmoid:
    case Op::Exp:
    case Op::Log:
    case Op::Relu: {
      double* da = adj.into(n.in[0]);
      if (!da) return;
      auto x = tape.value(n.in[0]).data();
      auto v = y.data();
      for (std::size_t i = 0; i < count; ++i) {
        double d = 0.0;
        switch (n.op) {
          case Op::Tanh: d = 1.0 - v[i] * v[i]; break;
          case Op::Sigmoid: d = v[i] * (1.0 - v[i]); break;
          case Op::Exp: d = v[i]; break;
          case Op::Log: d = 1.0 / x[i]; break;
          default: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        }
        da[i] += g[i] * d;
      }
      return;
    }
    case Op::Softmax:
    case Op::LogSoftmax: {
      double* da = adj.into(n.in[0]);
      if (!da) return;
      const std::size_t cols = y.shape().last();
      const std::size_t rows = count / cols;
      auto v = y.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* vr = v.data() + r * cols;
        const double* gr = g + r * cols;
        double* dr = da + r * cols;
        if (n.op == Op::Softmax) {
          double dot = 0.0;
          for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * vr[j];
          for (std::size_t j = 0; j < cols; ++j) dr[j] += vr[j] * (gr[j] - dot);
        } else {
          double total = 0.0;
          for (std::size_t j = 0; j < cols; ++j) total += gr[j];
          for (std::size_t j = 0; j < cols; ++j) dr[j] += gr[j] - std::exp(vr[j]) * total;
        }
      }
      return;
    }
    case Op::LayerNorm: {
      double* da = adj.into(n.in[0]);
      if (!da) return;
      const std::size_t cols = y.shape().last();
      const std::size_t rows = count / cols;
      auto v = y.data();
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* vr = v.data() + r * cols;
        const double* gr = g + r * cols;
        double g_mean = 0.0, gy_mean = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          g_mean += gr[j];
          gy_mean += gr[j] * vr[j];
        }
        g_mean *= inv_n;
        gy_mean *= inv_n;
        const double inv = n.saved[r];
        for (std::size_t j = 0; j < cols; ++j)
          da[r * cols + j] += inv * (gr[j] - g_mean - vr[j] * gy_mean);
      }
      return;
    }
    case Op::Gather: {
      double* dt = adj.into(n.in[0]);
      if (!dt) return;
      const std::size_t width = tape.value(n.in[0]).shape()[1];
      for (std::size_t k = 0; k < n.index.size(); ++k) {
        double* dst = dt + n.index[k] * width;
        const double* src = g + k * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
      }
      return;
    }
    case Op::StackRows: {
      std::size_t offset = 0;
      for (NodeId p : n.many) {
        const std::size_t len = tape.value(p).size();
        if (double* dp = adj.into(p))
          for (std::size_t i = 0; i < len; ++i) dp[i] += g[offset + i];
        offset += len;
      }
      return;
    }
    case Op::Concat: {
      const std::size_t cols = y.shape().last();
      const std::size_t rows = y.shape().rows();
      std::size_t offset = 0;
      for (NodeId p : n.many) {
        const std::size_t w = tape.value(p).shape().last();
        if (double* dp = adj.into(p)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) dp[r * w + j] += g[r * cols + offset + j];
        }
        offset += w;
      }
      return;
    }
    case Op::SliceRows: {
      if (double* da = adj.into(n.in[0])) {
        const std::size_t width = tape.value(n.in[0]).shape()[1];
        double* dst = da + n.begin * width;
        for (std::size_t i = 0; i < count; ++i) dst[i] += g[i];
      }
      return;
    }
    case Op::SliceCols: {
      if (double* da = adj.into(n.in[0])) {
        const std::size_t full = tape.value(n.in[0]).shape().last();
        const std::size_t w = n.end - n.begin;
        const std::size_t rows = w == 0 ? 0 : count / w;
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) da[r * full + n.begin + j] += g[r * w + j];
      }
      return;
    }
    case Op::Reshape: {
      if (double* da = adj.into(n.in[0]))
        for (std::size_t i = 0; i < count; ++i) da[i] += g[i];
      return;
    }
    case Op::Sum:
    case Op::Mean: {
      if (double* da = adj.into(n.in[0])) {
        const std::size_t len = tape.value(n.in[0]).size();
        const double d = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(len);
        for (std::size_t i = 0; i < len; ++i) da[i] += d;
      }
      return;
    }
    case Op::MeanRows: {
      if (double* da = adj.into(n.in[0])) {
        const Shape& s = tape.value(n.in[0]).shape();
        const double inv = 1.0 / static_cast<double>(s[0]);
        for (std::size_t r = 0; r < s[0]; ++r)
          for (std::size_t j = 0; j < s[1]; ++j) da[r * s[1] + j] += g[j] * inv;
      }
      return;
    }
    case Op::Pick: {
      if (double* da = adj.into(n.in[0])) da[n.begin] += g[0];
      return;
    }
  }
}

}  // namespace

GradientStore backward(const Tape& tape, Var output, std::span<const Var> wrt) {
  GradientStore store;
  if (tape.empty()) return store;
  if (!output.valid() || output.tape != &tape) {
    throw ContractError("backward: output does not belong to this tape");
  }
  const Tensor& out = tape.value(output.id);
  if (out.size() != 1 || out.shape().rank() > 1) {
    throw ContractError("backward: output must be a scalar, got shape " + out.shape().str());
  }

  Adjoints adj(tape, static_cast<std::size_t>(output.id) + 1);
  if (tape.node(output.id).requires_grad) adj.get(output.id).assign(1, 1.0);
  for (std::size_t i = output.id + 1; i-- > 0;) {
    const auto id = static_cast<NodeId>(i);
    if (!adj.has(id)) continue;
    const std::vector<double>& g = adj.get(id);
    propagate(tape, tape.node(id), g.data(), adj);
  }

  auto report = [&](NodeId leaf) {
    if (store.contains(leaf)) return;
    const Tensor& v = tape.value(leaf);
    if (leaf <= output.id && adj.has(leaf)) {
      store.grads_.insert_or_assign(leaf, Tensor(v.shape(), std::move(adj.get(leaf))));
    } else {
      store.grads_.insert_or_assign(leaf, Tensor(v.shape()));
    }
  };
  if (wrt.empty()) {
    for (NodeId leaf : tape.leaves()) report(leaf);
  } else {
    for (Var v : wrt) {
      if (v.tape != &tape || tape.node(v.id).op != Op::Leaf) {
        throw ContractError("backward: requested gradient of a non-leaf node");
      }
      report(v.id);
    }
  }
  return store;
}

}  // namespace salign::ad
