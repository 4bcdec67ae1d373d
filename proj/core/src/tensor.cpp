#include "mrc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

namespace mrc {

namespace {

template <class Real>
using MatMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class Real>
ConstMatMap<Real> cmap(const std::vector<Real>& v, int r, int c) {
  return ConstMatMap<Real>(v.data(), r, c);
}
template <class Real>
MatMap<Real> mmap(std::vector<Real>& v, int r, int c) {
  return MatMap<Real>(v.data(), r, c);
}

template <class Real>
Real neg_inf() {
  return -std::numeric_limits<Real>::infinity();
}

}  // namespace

template <class Real>
VarT<Real> GraphT<Real>::make_node(int r, int c, const std::vector<int>& parents) {
  Node n;
  n.rows = r;
  n.cols = c;
  n.val.assign(size_t(r) * c, Real(0));
  for (int p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  if (n.needs_grad) n.grad.assign(n.val.size(), Real(0));
  nodes_.push_back(std::move(n));
  return VarT<Real>{this, int(nodes_.size()) - 1};
}

template <class Real>
void GraphT<Real>::check_same_graph(VarT<Real> a) const {
  if (a.graph != this) throw UsageError("operands belong to different graphs");
}

template <class Real>
VarT<Real> GraphT<Real>::leaf(TensorT<Real>& t) {
  Node n;
  n.rows = t.rows;
  n.cols = t.cols;
  n.borrowed = &t.v;
  n.needs_grad = t.requires_grad;
  if (t.requires_grad) {
    t.ensure_grad();
    n.grad.assign(t.v.size(), Real(0));
    TensorT<Real>* tp = &t;
    n.back = [tp](GraphT&, Node& self) {
      for (size_t i = 0; i < self.grad.size(); ++i) tp->g[i] += self.grad[i];
    };
  }
  nodes_.push_back(std::move(n));
  return VarT<Real>{this, int(nodes_.size()) - 1};
}

template <class Real>
VarT<Real> GraphT<Real>::input(int r, int c, std::vector<Real> data) {
  if (data.size() != size_t(r) * c)
    throw DimensionError("input data length " + std::to_string(data.size()) + " does not match [" +
                         std::to_string(r) + "x" + std::to_string(c) + "]");
  Node n;
  n.rows = r;
  n.cols = c;
  n.val = std::move(data);
  nodes_.push_back(std::move(n));
  return VarT<Real>{this, int(nodes_.size()) - 1};
}

template <class Real>
VarT<Real> GraphT<Real>::zeros(int r, int c) {
  return input(r, c, std::vector<Real>(size_t(r) * c, Real(0)));
}

template <class Real>
VarT<Real> GraphT<Real>::embed_cols(TensorT<Real>& table, const std::vector<int>& ids, int pad_to) {
  const int dim = table.cols;
  const int L = std::max<int>(int(ids.size()), pad_to);
  for (int id : ids)
    if (id < 0 || id >= table.rows)
      throw Error("embedding id " + std::to_string(id) + " out of table range " + table.shape_str());
  Node n;
  n.rows = dim;
  n.cols = L;
  n.val.assign(size_t(dim) * L, Real(0));
  for (size_t t = 0; t < ids.size(); ++t)
    for (int r = 0; r < dim; ++r) n.val[size_t(r) * L + t] = table.v[size_t(ids[t]) * dim + r];
  n.needs_grad = table.requires_grad;
  if (n.needs_grad) {
    n.grad.assign(n.val.size(), Real(0));
    table.ensure_grad();
    TensorT<Real>* tp = &table;
    std::vector<int> idv = ids;
    n.back = [tp, idv, dim, L](GraphT&, Node& self) {
      for (size_t t = 0; t < idv.size(); ++t)
        for (int r = 0; r < dim; ++r) tp->g[size_t(idv[t]) * dim + r] += self.grad[size_t(r) * L + t];
    };
  }
  nodes_.push_back(std::move(n));
  return VarT<Real>{this, int(nodes_.size()) - 1};
}

template <class Real>
VarT<Real> GraphT<Real>::matmul(VarT<Real> a, VarT<Real> b) {
  check_same_graph(a);
  check_same_graph(b);
  const Node& na = nodes_[a.ix];
  const Node& nb = nodes_[b.ix];
  if (na.cols != nb.rows)
    throw DimensionError("matmul: inner dimensions disagree: [" + std::to_string(na.rows) + "x" +
                         std::to_string(na.cols) + "] x [" + std::to_string(nb.rows) + "x" +
                         std::to_string(nb.cols) + "]");
  const int r = na.rows, k = na.cols, c = nb.cols;
  VarT<Real> out = make_node(r, c, {a.ix, b.ix});
  Node& no = nodes_[out.ix];
  mmap(no.val, r, c).noalias() = cmap(value_of(a.ix), r, k) * cmap(value_of(b.ix), k, c);
  if (no.needs_grad) {
    const int ai = a.ix, bi = b.ix;
    const Real fault = fault_factor("matmul");
    no.back = [ai, bi, r, k, c, fault](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        mmap(*ga, r, k).noalias() += fault * cmap(self.grad, r, c) * cmap(g.value_of(bi), k, c).transpose();
      if (auto* gb = g.grad_of(bi))
        mmap(*gb, k, c).noalias() += fault * cmap(g.value_of(ai), r, k).transpose() * cmap(self.grad, r, c);
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::transpose(VarT<Real> a) {
  check_same_graph(a);
  const int r = nodes_[a.ix].rows, c = nodes_[a.ix].cols;
  VarT<Real> out = make_node(c, r, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) no.val[size_t(j) * r + i] = av[size_t(i) * c + j];
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, r, c](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < c; ++j) (*ga)[size_t(i) * c + j] += self.grad[size_t(j) * r + i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::add(VarT<Real> a, VarT<Real> b) {
  check_same_graph(a);
  check_same_graph(b);
  const Node& na = nodes_[a.ix];
  const Node& nb = nodes_[b.ix];
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("add: shapes disagree: [" + std::to_string(na.rows) + "x" + std::to_string(na.cols) +
                         "] vs [" + std::to_string(nb.rows) + "x" + std::to_string(nb.cols) + "]");
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix, b.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  const std::vector<Real>& bv = value_of(b.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = av[i] + bv[i];
  if (no.needs_grad) {
    const int ai = a.ix, bi = b.ix;
    no.back = [ai, bi](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
      if (auto* gb = g.grad_of(bi))
        for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::add_bias(VarT<Real> m, VarT<Real> b) {
  check_same_graph(m);
  check_same_graph(b);
  const Node& nm = nodes_[m.ix];
  const Node& nb = nodes_[b.ix];
  if (nb.cols != 1 || nb.rows != nm.rows)
    throw DimensionError("add_bias: bias [" + std::to_string(nb.rows) + "x" + std::to_string(nb.cols) +
                         "] does not broadcast over [" + std::to_string(nm.rows) + "x" + std::to_string(nm.cols) +
                         "]");
  const int R = nm.rows, C = nm.cols;
  VarT<Real> out = make_node(R, C, {m.ix, b.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& mv = value_of(m.ix);
  const std::vector<Real>& bv = value_of(b.ix);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) no.val[size_t(r) * C + c] = mv[size_t(r) * C + c] + bv[r];
  if (no.needs_grad) {
    const int mi = m.ix, bi = b.ix;
    no.back = [mi, bi, R, C](GraphT& g, Node& self) {
      if (auto* gm = g.grad_of(mi))
        for (size_t i = 0; i < self.grad.size(); ++i) (*gm)[i] += self.grad[i];
      if (auto* gb = g.grad_of(bi))
        for (int r = 0; r < R; ++r) {
          Real s = 0;
          for (int c = 0; c < C; ++c) s += self.grad[size_t(r) * C + c];
          (*gb)[r] += s;
        }
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::hadamard(VarT<Real> a, VarT<Real> b) {
  check_same_graph(a);
  check_same_graph(b);
  const Node& na = nodes_[a.ix];
  const Node& nb = nodes_[b.ix];
  if (na.rows != nb.rows || na.cols != nb.cols)
    throw DimensionError("hadamard: shapes disagree: [" + std::to_string(na.rows) + "x" + std::to_string(na.cols) +
                         "] vs [" + std::to_string(nb.rows) + "x" + std::to_string(nb.cols) + "]");
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix, b.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  const std::vector<Real>& bv = value_of(b.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = av[i] * bv[i];
  if (no.needs_grad) {
    const int ai = a.ix, bi = b.ix;
    no.back = [ai, bi](GraphT& g, Node& self) {
      const std::vector<Real>& av2 = g.value_of(ai);
      const std::vector<Real>& bv2 = g.value_of(bi);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * bv2[i];
      if (auto* gb = g.grad_of(bi))
        for (size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * av2[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::affine(VarT<Real> a, Real alpha, Real beta) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = alpha * av[i] + beta;
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, alpha](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += alpha * self.grad[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::concat(const std::vector<VarT<Real>>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw UsageError("concat axis must be 0 or 1");
  std::vector<int> pix;
  pix.reserve(parts.size());
  int rows = nodes_[parts[0].ix].rows, cols = nodes_[parts[0].ix].cols;
  int total = 0;
  for (const auto& p : parts) {
    check_same_graph(p);
    const Node& np = nodes_[p.ix];
    if (axis == 0) {
      if (np.cols != cols)
        throw DimensionError("concat axis 0: column counts disagree: [" + std::to_string(np.rows) + "x" +
                             std::to_string(np.cols) + "] vs expected " + std::to_string(cols) + " columns");
      total += np.rows;
    } else {
      if (np.rows != rows)
        throw DimensionError("concat axis 1: row counts disagree: [" + std::to_string(np.rows) + "x" +
                             std::to_string(np.cols) + "] vs expected " + std::to_string(rows) + " rows");
      total += np.cols;
    }
    pix.push_back(p.ix);
  }
  const int R = axis == 0 ? total : rows;
  const int C = axis == 0 ? cols : total;
  VarT<Real> out = make_node(R, C, pix);
  Node& no = nodes_[out.ix];
  int offset = 0;
  for (int p : pix) {
    const Node& np = nodes_[p];
    const std::vector<Real>& pv = value_of(p);
    if (axis == 0) {
      std::copy(pv.begin(), pv.end(), no.val.begin() + size_t(offset) * C);
      offset += np.rows;
    } else {
      for (int r = 0; r < R; ++r)
        std::copy(pv.begin() + size_t(r) * np.cols, pv.begin() + size_t(r + 1) * np.cols,
                  no.val.begin() + size_t(r) * C + offset);
      offset += np.cols;
    }
  }
  if (no.needs_grad) {
    no.back = [pix, axis, R, C](GraphT& g, Node& self) {
      int off = 0;
      for (int p : pix) {
        const typename GraphT<Real>::Node& np = g.node(p);
        auto* gp = g.grad_of(p);
        if (axis == 0) {
          if (gp)
            for (size_t i = 0; i < gp->size(); ++i) (*gp)[i] += self.grad[size_t(off) * C + i];
          off += np.rows;
        } else {
          if (gp)
            for (int r = 0; r < R; ++r)
              for (int c = 0; c < np.cols; ++c)
                (*gp)[size_t(r) * np.cols + c] += self.grad[size_t(r) * C + off + c];
          off += np.cols;
        }
      }
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::slice_rows(VarT<Real> a, int r0, int r1) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  if (r0 < 0 || r1 > na.rows || r0 >= r1)
    throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " +
                         std::to_string(na.rows) + " rows");
  const int C = na.cols;
  VarT<Real> out = make_node(r1 - r0, C, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  std::copy(av.begin() + size_t(r0) * C, av.begin() + size_t(r1) * C, no.val.begin());
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, r0, C](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[size_t(r0) * C + i] += self.grad[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::slice_cols(VarT<Real> a, int c0, int c1) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  if (c0 < 0 || c1 > na.cols || c0 >= c1)
    throw DimensionError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " +
                         std::to_string(na.cols) + " columns");
  const int R = na.rows, C = na.cols, W = c1 - c0;
  VarT<Real> out = make_node(R, W, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (int r = 0; r < R; ++r)
    std::copy(av.begin() + size_t(r) * C + c0, av.begin() + size_t(r) * C + c1, no.val.begin() + size_t(r) * W);
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, c0, R, C, W](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < W; ++c) (*ga)[size_t(r) * C + c0 + c] += self.grad[size_t(r) * W + c];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::relu(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = av[i] > Real(0) ? av[i] : Real(0);
  if (no.needs_grad) {
    const int ai = a.ix;
    const Real fault = fault_factor("relu");
    no.back = [ai, fault](GraphT& g, Node& self) {
      const std::vector<Real>& av2 = g.value_of(ai);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (av2[i] > Real(0)) (*ga)[i] += fault * self.grad[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::sigmoid(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) {
    const Real x = av[i];
    // branch keeps exp() argument non-positive for stability at large |x|
    no.val[i] = x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x));
  }
  if (no.needs_grad) {
    const int ai = a.ix, oi = out.ix;
    no.back = [ai, oi](GraphT& g, Node& self) {
      const std::vector<Real>& y = g.value_of(oi);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * y[i] * (Real(1) - y[i]);
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::tanh(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = std::tanh(av[i]);
  if (no.needs_grad) {
    const int ai = a.ix, oi = out.ix;
    no.back = [ai, oi](GraphT& g, Node& self) {
      const std::vector<Real>& y = g.value_of(oi);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * (Real(1) - y[i] * y[i]);
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::exp(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = std::exp(av[i]);
  if (no.needs_grad) {
    const int ai = a.ix, oi = out.ix;
    no.back = [ai, oi](GraphT& g, Node& self) {
      const std::vector<Real>& y = g.value_of(oi);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * y[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::log(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < av.size(); ++i)
    if (!(av[i] > Real(0))) throw NumericError("log of non-positive value " + std::to_string(double(av[i])));
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av2 = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = std::log(av2[i]);
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai](GraphT& g, Node& self) {
      const std::vector<Real>& x = g.value_of(ai);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] / x[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::log_clamped(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  const Real lo = Real(1e-12), hi = Real(1) - Real(1e-12);
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (size_t i = 0; i < no.val.size(); ++i) no.val[i] = std::log(std::clamp(av[i], lo, hi));
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, lo, hi](GraphT& g, Node& self) {
      const std::vector<Real>& x = g.value_of(ai);
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i)
          if (x[i] > lo && x[i] < hi) (*ga)[i] += self.grad[i] / x[i];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::sum_all(VarT<Real> a) {
  check_same_graph(a);
  VarT<Real> out = make_node(1, 1, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  Real s = 0;
  for (Real x : av) s += x;
  no.val[0] = s;
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[0];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::pick(VarT<Real> a, int r, int c) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  if (r < 0 || r >= na.rows || c < 0 || c >= na.cols)
    throw DimensionError("pick (" + std::to_string(r) + "," + std::to_string(c) + ") outside [" +
                         std::to_string(na.rows) + "x" + std::to_string(na.cols) + "]");
  const int C = na.cols;
  VarT<Real> out = make_node(1, 1, {a.ix});
  Node& no = nodes_[out.ix];
  no.val[0] = value_of(a.ix)[size_t(r) * C + c];
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, r, c, C](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai)) (*ga)[size_t(r) * C + c] += self.grad[0];
    };
  }
  return out;
}

namespace {

// Softmax along contiguous strided slots. Writes y over the valid span;
// callers pre-zero everything else. An all -inf span yields all zeros.
template <class Real>
void softmax_span(const Real* x, Real* y, int count, int stride) {
  Real mx = neg_inf<Real>();
  for (int i = 0; i < count; ++i) {
    const Real v = x[size_t(i) * stride];
    if (std::isnan(v)) throw NumericError("softmax over NaN input");
    mx = std::max(mx, v);
  }
  if (count > 0 && mx == neg_inf<Real>()) {
    for (int i = 0; i < count; ++i) y[size_t(i) * stride] = Real(0);
    return;
  }
  Real z = 0;
  for (int i = 0; i < count; ++i) {
    const Real e = std::exp(x[size_t(i) * stride] - mx);
    y[size_t(i) * stride] = e;
    z += e;
  }
  for (int i = 0; i < count; ++i) y[size_t(i) * stride] /= z;
}

// dx_j += y_j * (dy_j - sum_k dy_k y_k), over the same span
template <class Real>
void softmax_span_back(const Real* y, const Real* dy, Real* dx, int count, int stride, Real fault) {
  Real dot = 0;
  for (int i = 0; i < count; ++i) dot += dy[size_t(i) * stride] * y[size_t(i) * stride];
  for (int i = 0; i < count; ++i)
    dx[size_t(i) * stride] += fault * y[size_t(i) * stride] * (dy[size_t(i) * stride] - dot);
}

}  // namespace

template <class Real>
VarT<Real> GraphT<Real>::softmax_rows(VarT<Real> a, int valid_cols, int valid_rows) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  const int R = na.rows, C = na.cols;
  const int vc = valid_cols < 0 ? C : valid_cols;
  const int vr = valid_rows < 0 ? R : valid_rows;
  if (vc > C || vr > R) throw DimensionError("softmax_rows: valid extent exceeds " + std::to_string(R) + "x" + std::to_string(C));
  VarT<Real> out = make_node(R, C, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (int r = 0; r < vr; ++r) softmax_span(av.data() + size_t(r) * C, no.val.data() + size_t(r) * C, vc, 1);
  if (no.needs_grad) {
    const int ai = a.ix, oi = out.ix;
    const Real fault = fault_factor("softmax_rows");
    no.back = [ai, oi, vr, vc, C, fault](GraphT& g, Node& self) {
      const std::vector<Real>& y = g.value_of(oi);
      if (auto* ga = g.grad_of(ai))
        for (int r = 0; r < vr; ++r)
          softmax_span_back(y.data() + size_t(r) * C, self.grad.data() + size_t(r) * C,
                            ga->data() + size_t(r) * C, vc, 1, fault);
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::softmax_cols(VarT<Real> a, int valid_rows, int valid_cols) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  const int R = na.rows, C = na.cols;
  const int vr = valid_rows < 0 ? R : valid_rows;
  const int vc = valid_cols < 0 ? C : valid_cols;
  if (vc > C || vr > R) throw DimensionError("softmax_cols: valid extent exceeds " + std::to_string(R) + "x" + std::to_string(C));
  VarT<Real> out = make_node(R, C, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  for (int c = 0; c < vc; ++c) softmax_span(av.data() + c, no.val.data() + c, vr, C);
  if (no.needs_grad) {
    const int ai = a.ix, oi = out.ix;
    const Real fault = fault_factor("softmax_cols");
    no.back = [ai, oi, vr, vc, C, fault](GraphT& g, Node& self) {
      const std::vector<Real>& y = g.value_of(oi);
      if (auto* ga = g.grad_of(ai))
        for (int c = 0; c < vc; ++c)
          softmax_span_back(y.data() + c, self.grad.data() + c, ga->data() + c, vr, C, fault);
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::mask_diagonal(VarT<Real> a) {
  check_same_graph(a);
  const Node& na = nodes_[a.ix];
  if (na.rows != na.cols)
    throw DimensionError("mask_diagonal requires a square input, got [" + std::to_string(na.rows) + "x" +
                         std::to_string(na.cols) + "]");
  const int N = na.rows;
  VarT<Real> out = make_node(N, N, {a.ix});
  Node& no = nodes_[out.ix];
  no.val = value_of(a.ix);
  for (int i = 0; i < N; ++i) no.val[size_t(i) * N + i] = neg_inf<Real>();
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, N](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (int r = 0; r < N; ++r)
          for (int c = 0; c < N; ++c)
            if (r != c) (*ga)[size_t(r) * N + c] += self.grad[size_t(r) * N + c];
    };
  }
  return out;
}

template <class Real>
VarT<Real> GraphT<Real>::dropout(VarT<Real> a, double rate, bool training, Rng& rng) {
  check_same_graph(a);
  if (rate < 0 || rate >= 1) throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0) return a;  // exact identity
  const Node& na = nodes_[a.ix];
  VarT<Real> out = make_node(na.rows, na.cols, {a.ix});
  Node& no = nodes_[out.ix];
  const std::vector<Real>& av = value_of(a.ix);
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<Real>>(no.val.size());
  for (size_t i = 0; i < no.val.size(); ++i) {
    (*mask)[i] = rng.bernoulli(rate) ? Real(0) : keep_scale;
    no.val[i] = av[i] * (*mask)[i];
  }
  if (no.needs_grad) {
    const int ai = a.ix;
    no.back = [ai, mask](GraphT& g, Node& self) {
      if (auto* ga = g.grad_of(ai))
        for (size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * (*mask)[i];
    };
  }
  return out;
}

template <class Real>
void GraphT<Real>::backward(VarT<Real> root) {
  check_same_graph(root);
  const Node& nr = nodes_[root.ix];
  if (nr.rows != 1 || nr.cols != 1)
    throw UsageError("backward root must be scalar, got [" + std::to_string(nr.rows) + "x" +
                     std::to_string(nr.cols) + "]");
  if (backward_done_) throw UsageError("backward already executed on this graph");
  backward_done_ = true;
  if (!nr.needs_grad) return;  // nothing reachable requires a gradient
  nodes_[root.ix].grad[0] = Real(1);
  for (int i = root.ix; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.back) n.back(*this, n);
  }
}

template struct TensorT<float>;
template struct TensorT<double>;
template class GraphT<float>;
template class GraphT<double>;

}  // namespace mrc
