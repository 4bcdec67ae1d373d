#pragma once
// Dense 2-D tensors and a reverse-mode tape.
//
// A Graph records operations in execution order; backward() replays the tape
// in reverse and accumulates gradients into every bound leaf whose tensor has
// requires_grad set. Values are row-major matrices; vectors are n x 1 columns
// and scalars 1 x 1. Graphs are cheap, per-example objects: build, run
// backward once, discard. Tensors without gradient state are immutable after
// construction and may be shared across threads; a Graph itself is
// single-threaded.

#include <functional>
#include <string>
#include <vector>

#include "mrc/common.hpp"

namespace mrc {

template <class Real>
struct TensorT {
  int rows = 0;
  int cols = 0;
  std::vector<Real> v;  // row-major values, size rows*cols
  std::vector<Real> g;  // gradient accumulator; same size as v when requires_grad
  bool requires_grad = false;

  TensorT() = default;
  TensorT(int r, int c, bool grad = false) : rows(r), cols(c), v(size_t(r) * c, Real(0)), requires_grad(grad) {
    if (grad) g.assign(v.size(), Real(0));
  }
  TensorT(int r, int c, std::vector<Real> data, bool grad = false)
      : rows(r), cols(c), v(std::move(data)), requires_grad(grad) {
    if (v.size() != size_t(r) * c) throw DimensionError("tensor data length does not match shape " + shape_str());
    if (grad) g.assign(v.size(), Real(0));
  }
  TensorT(int r, int c, std::initializer_list<Real> data, bool grad = false)
      : TensorT(r, c, std::vector<Real>(data), grad) {}

  int size() const { return rows * cols; }
  Real& at(int r, int c) { return v[size_t(r) * cols + c]; }
  Real at(int r, int c) const { return v[size_t(r) * cols + c]; }

  void ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), Real(0));
  }
  void zero_grad() { g.assign(v.size(), Real(0)); }
  void fill(Real x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const { return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]"; }
};

template <class Real>
class GraphT;

// Handle to a node on a graph's tape.
template <class Real>
struct VarT {
  GraphT<Real>* graph = nullptr;
  int ix = -1;

  int rows() const;
  int cols() const;
  const std::vector<Real>& value() const;
  const std::vector<Real>& grad() const;  // empty unless the node needs a gradient
  Real scalar() const;                    // value of a 1x1 node
  Real value_at(int r, int c) const;
};

template <class Real>
class GraphT {
 public:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<Real> val;                      // owned storage (unused for borrowing leaves)
    const std::vector<Real>* borrowed = nullptr;  // leaf value storage lives in the bound tensor
    std::vector<Real> grad;                     // allocated iff needs_grad
    bool needs_grad = false;
    std::function<void(GraphT&, Node&)> back;   // pushes this node's grad to its parents
  };

  GraphT() = default;
  GraphT(const GraphT&) = delete;
  GraphT& operator=(const GraphT&) = delete;

  // Binds persistent storage as a leaf. The tensor must outlive the graph;
  // backward() accumulates into t.g when t.requires_grad.
  VarT<Real> leaf(TensorT<Real>& t);
  // Owned constant input (never differentiated).
  VarT<Real> input(int r, int c, std::vector<Real> data);
  VarT<Real> zeros(int r, int c);

  // Gathers table rows as columns: column t of the result is row ids[t] of the
  // table, transposed; columns at t >= ids.size() are zero padding. Gradients
  // flow back into table.g rows when the table is trainable.
  VarT<Real> embed_cols(TensorT<Real>& table, const std::vector<int>& ids, int pad_to = 0);

  VarT<Real> matmul(VarT<Real> a, VarT<Real> b);
  VarT<Real> transpose(VarT<Real> a);
  VarT<Real> add(VarT<Real> a, VarT<Real> b);
  // m + broadcast of column vector b over every column of m
  VarT<Real> add_bias(VarT<Real> m, VarT<Real> b);
  VarT<Real> hadamard(VarT<Real> a, VarT<Real> b);
  // alpha * a + beta, elementwise
  VarT<Real> affine(VarT<Real> a, Real alpha, Real beta);
  VarT<Real> concat(const std::vector<VarT<Real>>& parts, int axis);
  VarT<Real> slice_rows(VarT<Real> a, int r0, int r1);
  VarT<Real> slice_cols(VarT<Real> a, int c0, int c1);
  VarT<Real> relu(VarT<Real> a);
  VarT<Real> sigmoid(VarT<Real> a);
  VarT<Real> tanh(VarT<Real> a);
  VarT<Real> exp(VarT<Real> a);
  VarT<Real> log(VarT<Real> a);  // requires strictly positive input
  // log of input clamped to [1e-12, 1 - 1e-12]; the loss-side fusion that
  // keeps log() away from 0 and 1
  VarT<Real> log_clamped(VarT<Real> a);
  VarT<Real> sum_all(VarT<Real> a);
  VarT<Real> pick(VarT<Real> a, int r, int c);

  // Row softmax over columns [0, valid_cols); everything outside the valid
  // block (including rows >= valid_rows) gets exactly zero mass. -1 means the
  // full extent. A row whose valid entries are all -inf yields all zeros.
  VarT<Real> softmax_rows(VarT<Real> a, int valid_cols = -1, int valid_rows = -1);
  // Column softmax over rows [0, valid_rows); symmetric contract.
  VarT<Real> softmax_cols(VarT<Real> a, int valid_rows = -1, int valid_cols = -1);

  // Square input; diagonal forced to -inf so a following softmax assigns it
  // exactly zero mass.
  VarT<Real> mask_diagonal(VarT<Real> a);

  // Inverted dropout: zero with probability rate, survivors scaled by
  // 1/(1-rate). Identity in eval mode and at rate 0.
  VarT<Real> dropout(VarT<Real> a, double rate, bool training, Rng& rng);

  // Reverse pass from a scalar root. Callable once per graph.
  void backward(VarT<Real> root);

  int size() const { return int(nodes_.size()); }
  const Node& node(int ix) const { return nodes_[ix]; }
  const std::vector<Real>& value_of(int ix) const {
    const Node& n = nodes_[ix];
    return n.borrowed ? *n.borrowed : n.val;
  }
  std::vector<Real>* grad_of(int ix) { return nodes_[ix].needs_grad ? &nodes_[ix].grad : nullptr; }

  // Test-only negative control: scales the named op's gradient contribution so
  // finite-difference checks must flag it.
  void set_backward_fault(const std::string& op_name) { fault_op_ = op_name; }
  Real fault_factor(const char* op_name) const {
    return fault_op_ == op_name ? Real(1.01) : Real(1);
  }

 private:
  VarT<Real> make_node(int r, int c, const std::vector<int>& parents);
  void check_same_graph(VarT<Real> a) const;

  std::vector<Node> nodes_;
  std::string fault_op_;
  bool backward_done_ = false;
};

// ---- free-function surface ------------------------------------------------

template <class Real>
VarT<Real> matmul(VarT<Real> a, VarT<Real> b) { return a.graph->matmul(a, b); }
template <class Real>
VarT<Real> transpose(VarT<Real> a) { return a.graph->transpose(a); }
template <class Real>
VarT<Real> add(VarT<Real> a, VarT<Real> b) { return a.graph->add(a, b); }
template <class Real>
VarT<Real> add_bias(VarT<Real> m, VarT<Real> b) { return m.graph->add_bias(m, b); }
template <class Real>
VarT<Real> hadamard(VarT<Real> a, VarT<Real> b) { return a.graph->hadamard(a, b); }
template <class Real>
VarT<Real> affine(VarT<Real> a, Real alpha, Real beta) { return a.graph->affine(a, alpha, beta); }
template <class Real>
VarT<Real> concat(const std::vector<VarT<Real>>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  return parts[0].graph->concat(parts, axis);
}
template <class Real>
VarT<Real> slice_rows(VarT<Real> a, int r0, int r1) { return a.graph->slice_rows(a, r0, r1); }
template <class Real>
VarT<Real> slice_cols(VarT<Real> a, int c0, int c1) { return a.graph->slice_cols(a, c0, c1); }
template <class Real>
VarT<Real> relu(VarT<Real> a) { return a.graph->relu(a); }
template <class Real>
VarT<Real> sigmoid(VarT<Real> a) { return a.graph->sigmoid(a); }
template <class Real>
VarT<Real> tanh(VarT<Real> a) { return a.graph->tanh(a); }
template <class Real>
VarT<Real> exp(VarT<Real> a) { return a.graph->exp(a); }
template <class Real>
VarT<Real> log(VarT<Real> a) { return a.graph->log(a); }
template <class Real>
VarT<Real> log_clamped(VarT<Real> a) { return a.graph->log_clamped(a); }
template <class Real>
VarT<Real> sum_all(VarT<Real> a) { return a.graph->sum_all(a); }
template <class Real>
VarT<Real> pick(VarT<Real> a, int r, int c) { return a.graph->pick(a, r, c); }
template <class Real>
VarT<Real> softmax_rows(VarT<Real> a, int valid_cols = -1, int valid_rows = -1) {
  return a.graph->softmax_rows(a, valid_cols, valid_rows);
}
template <class Real>
VarT<Real> softmax_cols(VarT<Real> a, int valid_rows = -1, int valid_cols = -1) {
  return a.graph->softmax_cols(a, valid_rows, valid_cols);
}
template <class Real>
VarT<Real> mask_diagonal(VarT<Real> a) { return a.graph->mask_diagonal(a); }
template <class Real>
VarT<Real> dropout(VarT<Real> a, double rate, bool training, Rng& rng) {
  return a.graph->dropout(a, rate, training, rng);
}

template <class Real>
int VarT<Real>::rows() const { return graph->node(ix).rows; }
template <class Real>
int VarT<Real>::cols() const { return graph->node(ix).cols; }
template <class Real>
const std::vector<Real>& VarT<Real>::value() const { return graph->value_of(ix); }
template <class Real>
const std::vector<Real>& VarT<Real>::grad() const { return graph->node(ix).grad; }
template <class Real>
Real VarT<Real>::scalar() const {
  if (rows() != 1 || cols() != 1)
    throw UsageError("scalar() on non-scalar node [" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]");
  return value()[0];
}
template <class Real>
Real VarT<Real>::value_at(int r, int c) const { return value()[size_t(r) * cols() + c]; }

using Tensor = TensorT<double>;
using Graph = GraphT<double>;
using Var = VarT<double>;

extern template struct TensorT<float>;
extern template struct TensorT<double>;
extern template class GraphT<float>;
extern template class GraphT<double>;

}  // namespace mrc
